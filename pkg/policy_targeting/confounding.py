"""
Confounding by systematic removal.

A biased "observational" copy of a trial is built by dropping, for a fraction k,
the treated rows whose treatment went best (largest benefit) and the control rows
whose lack of treatment went worst (smallest benefit).
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from policy_targeting.errors import ConfigError, InfeasibleConfoundingError, ShapeError
from policy_targeting.tabular_data import Dataset, SeedPurpose, ceil_count, make_rng

logger = logging.getLogger("PolicyTargeting.confounding")


@dataclass(frozen=True)
class ConfoundingSpec:
    k: float
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.k < 1.0:
            raise ConfigError(f"k must lie in [0,1), got {self.k}")


def removal_counts(n_treated: int, n_control: int, k: float) -> Tuple[int, int]:
    """Rows dropped per arm: ``ceil(k * n_t)`` and ``ceil(k * n_c)``."""
    return ceil_count(k, n_treated), ceil_count(k, n_control)


def _ranked(positions: np.ndarray, benefit: np.ndarray, descending: bool,
            rng: np.random.Generator) -> np.ndarray:
    # shuffle first so ties are broken by the seed, then a stable sort
    shuffled = positions[rng.permutation(positions.size)]
    key = -benefit[shuffled] if descending else benefit[shuffled]
    return shuffled[np.argsort(key, kind="stable")]


def remove_confounded(ds: Dataset, benefit: np.ndarray, spec: ConfoundingSpec) -> Dataset:
    """
    Drop the top-k treated and bottom-k control rows by benefit.

    Args:
        ds: The unconfounded trial
        benefit: Effect-signed pseudo-outcome difference per row of ``ds``
        spec: Removal fraction and tie-breaking seed

    Returns:
        Dataset: Remaining rows in their original order
    """
    spec.validate()
    benefit = np.asarray(benefit, dtype=np.float64).reshape(-1)
    if benefit.size != ds.n:
        raise ShapeError(f"benefit has {benefit.size} values for {ds.n} rows")
    treated = np.flatnonzero(ds.W == 1)
    control = np.flatnonzero(ds.W == 0)
    if treated.size == 0 or control.size == 0:
        raise InfeasibleConfoundingError(f"'{ds.name}' needs both arms to introduce confounding")

    drop_t, drop_c = removal_counts(treated.size, control.size, spec.k)
    if drop_t >= treated.size or drop_c >= control.size:
        raise InfeasibleConfoundingError(
            f"k={spec.k} would remove {drop_t}/{treated.size} treated and "
            f"{drop_c}/{control.size} control rows from '{ds.name}'"
        )

    rng = make_rng(spec.seed, SeedPurpose.CONFOUNDING)
    keep = np.ones(ds.n, dtype=bool)
    keep[_ranked(treated, benefit, descending=True, rng=rng)[:drop_t]] = False
    keep[_ranked(control, benefit, descending=False, rng=rng)[:drop_c]] = False

    logger.debug(f"k={spec.k}: removed {drop_t} treated and {drop_c} control rows from '{ds.name}'")
    return ds.subset(np.flatnonzero(keep), name=f"{ds.name}[k={spec.k:g}]" if spec.k else ds.name)
