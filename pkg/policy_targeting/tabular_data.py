"""
Tabular Data
------------
Dataset model, CSV ingestion and export, deterministic train/eval splitting,
and the seed-derivation helpers every other module draws randomness from.
"""

import logging
import math
import os
import re
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from policy_targeting.errors import DegenerateSplitError, RowParseError, SchemaError

logger = logging.getLogger("PolicyTargeting.data")

SEED_MASK = (1 << 64) - 1
MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "null", "NULL", "None"})
MAX_SPLIT_ATTEMPTS = 100


class SeedPurpose(IntEnum):
    """Per-purpose constants XORed into a master seed."""

    SPLIT = 0x5B1D_0000_0000_0001
    FOLDS = 0x5B1D_0000_0000_0002
    OUTCOME_CONTROL = 0x5B1D_0000_0000_0003
    OUTCOME_TREATED = 0x5B1D_0000_0000_0004
    PROPENSITY = 0x5B1D_0000_0000_0005
    RISK = 0x5B1D_0000_0000_0006
    CATE = 0x5B1D_0000_0000_0007
    CONFOUNDING = 0x5B1D_0000_0000_0008
    TIE_BREAK = 0x5B1D_0000_0000_0009
    RANDOM_POLICY = 0x5B1D_0000_0000_000A
    BOOTSTRAP = 0x5B1D_0000_0000_000B
    SYNTHETIC = 0x5B1D_0000_0000_000C


def derive_seed(seed: int, purpose: SeedPurpose, *indices: int) -> int:
    """
    Derive a 64-bit seed for one purpose (and optionally one cell of a grid).

    The base stream is ``seed XOR purpose``. Extra indices (fold number, k index,
    bootstrap replicate, ...) are mixed in through ``numpy.random.SeedSequence``
    so every cell gets an independent stream no matter which thread runs it.

    Args:
        seed: Master seed (any non-negative integer, reduced modulo 2**64)
        purpose: What the stream is used for
        *indices: Optional non-negative grid coordinates

    Returns:
        int: Derived unsigned 64-bit seed
    """
    base = (int(seed) ^ int(purpose)) & SEED_MASK
    if not indices:
        return base
    state = np.random.SeedSequence([base, *[int(i) for i in indices]]).generate_state(1, np.uint64)
    return int(state[0])


def make_rng(seed: int, purpose: SeedPurpose, *indices: int) -> np.random.Generator:
    """Generator seeded from :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(seed, purpose, *indices))


def ceil_count(fraction: float, n: int) -> int:
    """``ceil(fraction * n)`` robust to products like 0.1 * 30 = 3.0000000000000004."""
    return int(math.ceil(round(fraction * n, 9)))


class OutcomeDirection(str, Enum):
    HIGHER_IS_BETTER = "higher_is_better"
    LOWER_IS_BETTER = "lower_is_better"


@dataclass(frozen=True)
class Dataset:
    """
    An RCT-shaped table: features X, binary treatment W and outcome Y.

    Arrays are copied and made read-only on construction, so a Dataset can be
    shared freely between threads.
    """

    name: str
    X: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    known_propensity: Optional[float] = None
    outcome_direction: OutcomeDirection = OutcomeDirection.HIGHER_IS_BETTER
    feature_names: Tuple[str, ...] = ()
    row_index: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        W = np.array(self.W)
        Y = np.array(self.Y, dtype=np.float64).reshape(-1)
        n = X.shape[0]

        if n < 1:
            raise SchemaError(f"Dataset '{self.name}' has no rows")
        if W.shape != (n,) or Y.shape != (n,):
            raise SchemaError(
                f"Dataset '{self.name}': X has {n} rows but W has {W.shape[0]} and Y has {Y.shape[0]}"
            )
        if not np.all((W == 0) | (W == 1)):
            bad = np.flatnonzero((W != 0) & (W != 1))
            raise RowParseError("W", bad.tolist(), "treatment must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise RowParseError("X", np.flatnonzero(~np.isfinite(X).all(axis=1)).tolist(),
                                "non-finite feature value")
        if not np.all(np.isfinite(Y)):
            raise RowParseError("Y", np.flatnonzero(~np.isfinite(Y)).tolist(),
                                "non-finite outcome")
        if self.known_propensity is not None and not 0.0 < self.known_propensity < 1.0:
            raise SchemaError(f"known_propensity must lie in (0,1), got {self.known_propensity}")

        row_index = (np.arange(n, dtype=np.int64) if self.row_index is None
                     else np.array(self.row_index, dtype=np.int64).reshape(-1))
        if row_index.shape != (n,):
            raise SchemaError(f"row_index length {row_index.shape[0]} does not match {n} rows")

        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SchemaError(f"{len(names)} feature names for {X.shape[1]} feature columns")

        W = W.astype(np.int8)
        for arr in (X, W, Y, row_index):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "row_index", row_index)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "outcome_direction", OutcomeDirection(self.outcome_direction))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.W.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def has_both_arms(self) -> bool:
        return 0 < self.n_treated < self.n

    def subset(self, indices: Union[Sequence[int], np.ndarray], name: Optional[str] = None) -> "Dataset":
        """Rows at the given positions, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            name=name or self.name,
            X=self.X[idx],
            W=self.W[idx],
            Y=self.Y[idx],
            known_propensity=self.known_propensity,
            outcome_direction=self.outcome_direction,
            feature_names=self.feature_names,
            row_index=self.row_index[idx],
        )

    def with_outcomes(self, Y: np.ndarray, name: Optional[str] = None) -> "Dataset":
        """Same rows with a replaced outcome vector."""
        return Dataset(
            name=name or self.name,
            X=self.X,
            W=self.W,
            Y=Y,
            known_propensity=self.known_propensity,
            outcome_direction=self.outcome_direction,
            feature_names=self.feature_names,
            row_index=self.row_index,
        )

    def to_frame(self, treatment_column: str = "W", outcome_column: str = "Y") -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=list(self.feature_names))
        frame[treatment_column] = self.W.astype(np.int64)
        frame[outcome_column] = self.Y
        return frame


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    eval: Dataset
    seed: int


@dataclass(frozen=True)
class CsvSchema:
    """
    Column mapping for :func:`load_csv`.

    Args:
        feature_columns: Feature column names, in the order they become columns of X
        treatment_column: Column holding 0/1 treatment
        outcome_column: Column holding the outcome
        categorical_columns: Feature columns to one-hot encode. ``None`` means
            auto-detect: a column is categorical when any non-missing cell is not numeric.
        delimiter: Field separator
    """

    feature_columns: Tuple[str, ...]
    treatment_column: str
    outcome_column: str
    categorical_columns: Optional[Tuple[str, ...]] = None
    delimiter: str = ","

    def to_dict(self) -> Dict[str, object]:
        return {
            "feature_columns": list(self.feature_columns),
            "treatment_column": self.treatment_column,
            "outcome_column": self.outcome_column,
            "categorical_columns": (None if self.categorical_columns is None
                                    else list(self.categorical_columns)),
            "delimiter": self.delimiter,
        }


def _missing_rows(values: pd.Series) -> List[int]:
    return values.index[values.isin(MISSING_TOKENS)].tolist()


def _parse_numeric(values: pd.Series, column: str, path: str) -> np.ndarray:
    """Parse a string column to float64, listing every offending row on failure."""
    missing = _missing_rows(values)
    if missing:
        raise RowParseError(column, missing, "missing value", path)
    try:
        parsed = np.array(values.tolist(), dtype=np.float64)
    except ValueError:
        bad = []
        for i, cell in values.items():
            try:
                float(cell)
            except ValueError:
                bad.append(int(i))
        raise RowParseError(column, bad, "value is not numeric", path)
    non_finite = np.flatnonzero(~np.isfinite(parsed))
    if non_finite.size:
        raise RowParseError(column, non_finite.tolist(), "non-finite value", path)
    return parsed


def _is_numeric_column(values: pd.Series) -> bool:
    for cell in values:
        if cell in MISSING_TOKENS:
            continue
        try:
            float(cell)
        except ValueError:
            return False
    return True


def _one_hot(values: pd.Series, column: str, path: str) -> Tuple[np.ndarray, List[str]]:
    missing = _missing_rows(values)
    if missing:
        raise RowParseError(column, missing, "missing value", path)
    # first-appearance order
    categories = list(dict.fromkeys(values.tolist()))
    encoded = np.zeros((len(values), len(categories)), dtype=np.float64)
    lookup = {cat: j for j, cat in enumerate(categories)}
    for i, cell in enumerate(values.tolist()):
        encoded[i, lookup[cell]] = 1.0
    return encoded, [f"{column}={cat}" for cat in categories]


def _read_table(path: str, delimiter: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                           na_filter=False, encoding="utf-8")
    except UnicodeDecodeError as e:
        raise SchemaError(f"{path}: not valid UTF-8 (byte {e.start}: {e.reason})") from e
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"{path}: file is empty or has no header row") from e
    except pd.errors.ParserError as e:
        # pandas counts file lines from 1 with the header on line 1
        match = re.search(r"line (\d+)", str(e))
        if match is None:
            raise SchemaError(f"{path}: {e}") from e
        raise RowParseError("(record)", [int(match.group(1)) - 2], str(e).strip(), path) from e


def load_csv(path: Union[str, os.PathLike], schema: CsvSchema,
             outcome_direction: Union[OutcomeDirection, str] = OutcomeDirection.HIGHER_IS_BETTER,
             known_propensity: Optional[float] = None,
             name: Optional[str] = None) -> Dataset:
    """
    Load an RCT table from CSV.

    Rows keep file order. Categorical feature columns are one-hot encoded with
    categories in first-appearance order. No imputation is performed: a missing or
    unparseable cell aborts ingestion with a :class:`RowParseError` naming the rows.

    Args:
        path: CSV file (UTF-8, header row required)
        schema: Column mapping
        outcome_direction: Whether larger outcomes are better or worse
        known_propensity: Design treatment probability, if known
        name: Dataset name (defaults to the file stem)

    Returns:
        Dataset: The parsed table
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Input file not found: {path}")

    frame = _read_table(path, schema.delimiter)
    required = list(schema.feature_columns) + [schema.treatment_column, schema.outcome_column]
    absent = [c for c in required if c not in frame.columns]
    if absent:
        raise SchemaError(f"{path}: missing column(s) {', '.join(absent)}; "
                          f"available: {', '.join(frame.columns)}")
    if frame.empty:
        raise SchemaError(f"{path}: no data rows")

    explicit = set(schema.categorical_columns or ())
    unknown = explicit - set(schema.feature_columns)
    if unknown:
        raise SchemaError(f"categorical column(s) {', '.join(sorted(unknown))} are not feature columns")

    blocks: List[np.ndarray] = []
    names: List[str] = []
    for column in schema.feature_columns:
        values = frame[column].str.strip()
        categorical = (column in explicit if schema.categorical_columns is not None
                       else not _is_numeric_column(values))
        if categorical:
            encoded, encoded_names = _one_hot(values, column, path)
            blocks.append(encoded)
            names.extend(encoded_names)
            logger.debug(f"One-hot encoded '{column}' into {len(encoded_names)} columns")
        else:
            blocks.append(_parse_numeric(values, column, path).reshape(-1, 1))
            names.append(column)

    W = _parse_numeric(frame[schema.treatment_column].str.strip(), schema.treatment_column, path)
    bad_w = np.flatnonzero((W != 0.0) & (W != 1.0))
    if bad_w.size:
        raise RowParseError(schema.treatment_column, bad_w.tolist(), "treatment must be 0 or 1", path)
    Y = _parse_numeric(frame[schema.outcome_column].str.strip(), schema.outcome_column, path)

    X = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))
    dataset = Dataset(
        name=name or os.path.splitext(os.path.basename(path))[0],
        X=X,
        W=W.astype(np.int8),
        Y=Y,
        known_propensity=known_propensity,
        outcome_direction=OutcomeDirection(outcome_direction),
        feature_names=tuple(names),
    )
    logger.info(f"Loaded {dataset.n} rows x {dataset.d} features from {path} "
                f"({dataset.n_treated} treated, {dataset.n_control} control)")
    return dataset


def write_csv(dataset: Dataset, path: Union[str, os.PathLike],
              treatment_column: str = "W", outcome_column: str = "Y",
              delimiter: str = ",") -> str:
    """
    Write a Dataset so that :func:`load_csv` reproduces X, W and Y bit-for-bit.

    Returns:
        str: The written path
    """
    path = os.fspath(path)
    frame = dataset.to_frame(treatment_column, outcome_column)
    frame.to_csv(path, sep=delimiter, index=False, float_format="%.17g", lineterminator="\n")
    return path


def split_dataset(ds: Dataset, train_fraction: float, seed: int) -> SplitPair:
    """
    Split a dataset into a training and an evaluation part.

    The permutation is a pure function of ``seed`` (and the attempt number);
    it is redrawn up to 100 times until both parts hold treated and control rows.
    Rows inside each part keep their original relative order.

    Args:
        ds: Dataset to split (n >= 4)
        train_fraction: Share of rows in the training part, in (0, 1)
        seed: Master seed

    Returns:
        SplitPair: The two parts
    """
    if not 0.0 < train_fraction < 1.0:
        raise SchemaError(f"train_fraction must lie in (0,1), got {train_fraction}")
    if ds.n < 4:
        raise DegenerateSplitError(f"Need at least 4 rows to split, dataset '{ds.name}' has {ds.n}")

    n_train = int(math.floor(train_fraction * ds.n + 0.5))
    if not 1 <= n_train <= ds.n - 1:
        raise DegenerateSplitError(f"train_fraction {train_fraction} leaves an empty split of {ds.n} rows")

    for attempt in range(MAX_SPLIT_ATTEMPTS):
        perm = make_rng(seed, SeedPurpose.SPLIT, attempt).permutation(ds.n)
        train_idx = np.sort(perm[:n_train])
        eval_idx = np.sort(perm[n_train:])
        w_train, w_eval = ds.W[train_idx], ds.W[eval_idx]
        if 0 < w_train.sum() < w_train.size and 0 < w_eval.sum() < w_eval.size:
            if attempt:
                logger.debug(f"Split needed {attempt + 1} draws to keep both arms")
            logger.info(f"Split '{ds.name}' into {train_idx.size} train / {eval_idx.size} eval rows")
            return SplitPair(
                train=ds.subset(train_idx, name=f"{ds.name}[train]"),
                eval=ds.subset(eval_idx, name=f"{ds.name}[eval]"),
                seed=seed,
            )

    raise DegenerateSplitError(
        f"Could not split '{ds.name}' with both arms on both sides after {MAX_SPLIT_ATTEMPTS} draws "
        f"({ds.n_treated} treated, {ds.n_control} control)"
    )


def concat_datasets(parts: Sequence[Dataset], name: Optional[str] = None) -> Dataset:
    """Stack datasets with identical feature layout."""
    first = parts[0]
    return Dataset(
        name=name or first.name,
        X=np.vstack([p.X for p in parts]),
        W=np.concatenate([p.W for p in parts]),
        Y=np.concatenate([p.Y for p in parts]),
        known_propensity=first.known_propensity,
        outcome_direction=first.outcome_direction,
        feature_names=first.feature_names,
        row_index=np.concatenate([p.row_index for p in parts]),
    )
