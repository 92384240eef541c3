"""
Cross-fitted nuisance estimation and doubly-robust pseudo-outcomes.

For a unit with covariates x, treatment W and outcome Y the pseudo-outcome of arm A is::

    chi(A) = mu(x, A) + 1[W = A] * (Y - mu(x, A)) / (A * pi(x) + (1 - A) * (1 - pi(x)))

Outcome models are fit per arm (mu0 on control rows, mu1 on treated rows) and the
propensity model on all rows of the complementary folds.
"""

import concurrent.futures
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from policy_targeting.errors import CrossFitError, InvariantViolation, ShapeError
from policy_targeting.learners import (
    FittedModel,
    LearnerSpec,
    fit_propensity,
    fit_regressor,
    predict,
)
from policy_targeting.risk_model import effect_sign_for
from policy_targeting.tabular_data import Dataset, SeedPurpose, derive_seed, make_rng

logger = logging.getLogger("PolicyTargeting.nuisance")

DEFAULT_CLIP_BOUNDS = (0.02, 0.98)
MAX_FOLD_ATTEMPTS = 100


class PropensityMode(str, Enum):
    ESTIMATED_CLIPPED = "estimated_clipped"
    UNIFORM = "uniform"


class PseudoOutcomeMode(str, Enum):
    WITHIN_FOLD = "within_fold"
    ENSEMBLE_MEAN = "ensemble_mean"


@dataclass(frozen=True)
class FoldNuisance:
    """Models trained on every training row outside ``index``."""

    index: np.ndarray
    mu0: FittedModel
    mu1: FittedModel
    propensity: Optional[FittedModel]


@dataclass(frozen=True)
class CrossFitNuisances:
    folds: Tuple[FoldNuisance, ...]
    propensity_mode: PropensityMode
    clip_bounds: Tuple[float, float]
    train_row_index: np.ndarray
    uniform_propensity: Optional[float] = None

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def propensity(self, X: np.ndarray, fold: int) -> np.ndarray:
        """pi-hat of one fold's model as it enters the pseudo-outcome denominator."""
        X = np.asarray(X, dtype=np.float64)
        if self.propensity_mode == PropensityMode.UNIFORM:
            return np.full(X.shape[0], float(self.uniform_propensity))
        lo, hi = self.clip_bounds
        return np.clip(predict(self.folds[fold].propensity, X), lo, hi)

    def fold_of(self, row_index: np.ndarray) -> np.ndarray:
        """Fold number of each training row, looked up by row index."""
        lookup = np.empty(self.train_row_index.size, dtype=np.int64)
        for f, fold in enumerate(self.folds):
            lookup[fold.index] = f
        series = pd.Series(lookup, index=self.train_row_index)
        found = series.reindex(np.asarray(row_index))
        if found.isna().any():
            missing = np.asarray(row_index)[found.isna().to_numpy()]
            raise ShapeError(
                f"within_fold pseudo-outcomes need training rows; {missing.size} row(s) "
                f"were not part of the cross-fit (first: {missing[:5].tolist()})"
            )
        return found.to_numpy(dtype=np.int64)


@dataclass(frozen=True)
class PseudoOutcomes:
    chi0: np.ndarray
    chi1: np.ndarray
    diff: np.ndarray
    benefit: np.ndarray
    row_index: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.diff.size

    def to_frame(self) -> pd.DataFrame:
        row_index = self.row_index if self.row_index is not None else np.arange(self.m)
        return pd.DataFrame({
            "row_index": row_index,
            "chi0": self.chi0,
            "chi1": self.chi1,
            "diff": self.diff,
            "benefit": self.benefit,
        })


def _draw_folds(train: Dataset, n_folds: int, seed: int) -> List[np.ndarray]:
    for attempt in range(MAX_FOLD_ATTEMPTS):
        perm = make_rng(seed, SeedPurpose.FOLDS, attempt).permutation(train.n)
        folds = [np.sort(part) for part in np.array_split(perm, n_folds)]
        ok = True
        for part in folds:
            rest = np.setdiff1d(np.arange(train.n), part, assume_unique=True)
            w_rest = train.W[rest]
            if not 0 < w_rest.sum() < w_rest.size:
                ok = False
                break
        if ok:
            if attempt:
                logger.debug(f"Fold assignment needed {attempt + 1} draws to keep both arms")
            return folds
    raise CrossFitError(
        f"Could not form {n_folds} folds whose complements hold both arms after "
        f"{MAX_FOLD_ATTEMPTS} draws ({train.n_treated} treated, {train.n_control} control)"
    )


def _fit_fold(train: Dataset, fold: int, index: np.ndarray, outcome_spec: LearnerSpec,
              propensity_spec: LearnerSpec, propensity_mode: PropensityMode,
              seed: int) -> FoldNuisance:
    rest = np.setdiff1d(np.arange(train.n), index, assume_unique=True)
    X, W, Y = train.X[rest], train.W[rest], train.Y[rest]
    control, treated = W == 0, W == 1

    mu0 = fit_regressor(X[control], Y[control],
                        outcome_spec.with_seed(derive_seed(seed, SeedPurpose.OUTCOME_CONTROL, fold)))
    mu1 = fit_regressor(X[treated], Y[treated],
                        outcome_spec.with_seed(derive_seed(seed, SeedPurpose.OUTCOME_TREATED, fold)))
    propensity = None
    if propensity_mode == PropensityMode.ESTIMATED_CLIPPED:
        propensity = fit_propensity(X, W, propensity_spec.with_seed(
            derive_seed(seed, SeedPurpose.PROPENSITY, fold)))
    logger.debug(f"Fold {fold}: fitted nuisances on {rest.size} rows "
                 f"({int(treated.sum())} treated, {int(control.sum())} control)")
    return FoldNuisance(index=index, mu0=mu0, mu1=mu1, propensity=propensity)


def fit_crossfit(train: Dataset,
                 outcome_spec: LearnerSpec,
                 propensity_spec: LearnerSpec,
                 n_folds: int = 2,
                 propensity_mode: PropensityMode = PropensityMode.ESTIMATED_CLIPPED,
                 seed: int = 0,
                 clip_bounds: Tuple[float, float] = DEFAULT_CLIP_BOUNDS,
                 max_workers: int = 1) -> CrossFitNuisances:
    """
    Fit outcome and propensity nuisances with K-fold cross-fitting.

    Args:
        train: Training rows
        outcome_spec: Learner for mu0 and mu1
        propensity_spec: Learner for pi (ignored in uniform mode)
        n_folds: Number of folds, at least 2
        propensity_mode: ``estimated_clipped`` or ``uniform`` (treated share of ``train``)
        seed: Master seed; fold assignment and every model seed derive from it
        clip_bounds: Bounds applied to estimated propensities
        max_workers: Folds fitted concurrently

    Returns:
        CrossFitNuisances: One model set per fold
    """
    propensity_mode = PropensityMode(propensity_mode)
    if n_folds < 2:
        raise CrossFitError(f"n_folds must be at least 2, got {n_folds}")
    if train.n < n_folds:
        raise CrossFitError(f"Cannot form {n_folds} folds from {train.n} rows")
    lo, hi = clip_bounds
    if not 0.0 < lo < hi < 1.0:
        raise CrossFitError(f"clip_bounds must satisfy 0 < lo < hi < 1, got {clip_bounds}")

    indices = _draw_folds(train, n_folds, seed)
    logger.info(f"Cross-fitting {n_folds} folds on '{train.name}' ({train.n} rows, "
                f"propensity={propensity_mode.value})")

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        futures = [
            executor.submit(_fit_fold, train, f, idx, outcome_spec, propensity_spec,
                            propensity_mode, seed)
            for f, idx in enumerate(indices)
        ]
        # gathered in fold order, not completion order
        folds = tuple(future.result() for future in futures)

    uniform = None
    if propensity_mode == PropensityMode.UNIFORM:
        uniform = train.n_treated / train.n

    return CrossFitNuisances(
        folds=folds,
        propensity_mode=propensity_mode,
        clip_bounds=(float(lo), float(hi)),
        train_row_index=train.row_index,
        uniform_propensity=uniform,
    )


def _chi(W: np.ndarray, Y: np.ndarray, mu0: np.ndarray, mu1: np.ndarray,
         pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    treated = W == 1
    chi1 = mu1 + np.where(treated, (Y - mu1) / pi, 0.0)
    chi0 = mu0 + np.where(~treated, (Y - mu0) / (1.0 - pi), 0.0)
    return chi0, chi1


def _fold_chi(target: Dataset, nuis: CrossFitNuisances, fold: int,
              rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = target.X[rows]
    models = nuis.folds[fold]
    return _chi(target.W[rows], target.Y[rows], predict(models.mu0, X), predict(models.mu1, X),
                nuis.propensity(X, fold))


def pseudo_outcomes(target: Dataset,
                    nuis: CrossFitNuisances,
                    mode: PseudoOutcomeMode = PseudoOutcomeMode.ENSEMBLE_MEAN,
                    effect_sign: Optional[int] = None) -> PseudoOutcomes:
    """
    Doubly-robust pseudo-outcomes for the rows of ``target``.

    ``within_fold`` scores each training row with the models of the fold holding it
    out; ``ensemble_mean`` averages the pseudo-outcomes produced by every fold's models
    and is meant for held-out rows.

    Args:
        target: Rows to score
        nuis: Output of :func:`fit_crossfit`
        mode: ``within_fold`` or ``ensemble_mean``
        effect_sign: Benefit sign; defaults to the target's outcome direction

    Returns:
        PseudoOutcomes: chi0, chi1, their difference and the signed benefit
    """
    mode = PseudoOutcomeMode(mode)
    sign = effect_sign_for(target.outcome_direction) if effect_sign is None else int(effect_sign)

    if mode == PseudoOutcomeMode.WITHIN_FOLD:
        fold_ids = nuis.fold_of(target.row_index)
        chi0 = np.empty(target.n)
        chi1 = np.empty(target.n)
        for f in range(nuis.n_folds):
            rows = np.flatnonzero(fold_ids == f)
            if rows.size:
                chi0[rows], chi1[rows] = _fold_chi(target, nuis, f, rows)
    else:
        all_rows = np.arange(target.n)
        per_fold = [_fold_chi(target, nuis, f, all_rows) for f in range(nuis.n_folds)]
        chi0 = np.mean(np.stack([c0 for c0, _ in per_fold]), axis=0)
        chi1 = np.mean(np.stack([c1 for _, c1 in per_fold]), axis=0)

    diff = chi1 - chi0
    if not (np.all(np.isfinite(chi0)) and np.all(np.isfinite(chi1))):
        raise InvariantViolation(f"Non-finite pseudo-outcome for '{target.name}' despite clipping")
    return PseudoOutcomes(chi0=chi0, chi1=chi1, diff=diff, benefit=sign * diff,
                          row_index=target.row_index)


def ate_estimate(po: PseudoOutcomes) -> float:
    """Average treatment effect: the mean pseudo-outcome difference."""
    if po.m < 1:
        raise ShapeError("ate_estimate needs at least one pseudo-outcome")
    return float(np.mean(po.diff))
