###############
##  Part 1   ##
###############

"""
Targeting policies, welfare functionals and the confounding sweep.

A policy treats the ``ceil(budget * m)`` evaluation rows with the highest score:
baseline risk for the risk policy, estimated (or pseudo-outcome) benefit for the
treatment-effect policy, and seeded uniform noise for the random policy. Every
policy is scored against the unconfounded evaluation pseudo-outcomes.
"""

import concurrent.futures
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax

from policy_targeting.cate_curve import fit_cate
from policy_targeting.confounding import ConfoundingSpec, remove_confounded
from policy_targeting.errors import (
    ConfigError,
    EmptyAssignmentError,
    InvariantViolation,
    ShapeError,
)
from policy_targeting.learners import LearnerKind, LearnerSpec
from policy_targeting.nuisance_dr import (
    DEFAULT_CLIP_BOUNDS,
    CrossFitNuisances,
    PropensityMode,
    PseudoOutcomeMode,
    PseudoOutcomes,
    fit_crossfit,
    pseudo_outcomes,
)
from policy_targeting.risk_model import (
    RiskScores,
    effect_sign_for,
    fit_risk_model,
    percentile_scores,
    score_risk,
)
from policy_targeting.tabular_data import (
    Dataset,
    SeedPurpose,
    ceil_count,
    concat_datasets,
    derive_seed,
    make_rng,
    split_dataset,
)

logger = logging.getLogger("PolicyTargeting.targeting")

# a 75th/25th percentile weight ratio of 100
ALPHA_CAP = 2.0 * math.log(100.0)
ALPHA_STEP = 0.25
DEFAULT_BUDGET = 0.2
DEFAULT_BOOTSTRAP_REPS = 1000
DEFAULT_K_VALUES = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)
BOOTSTRAP_CHUNK = 250
CI_PERCENTILES = (2.5, 97.5)

ProgressCallback = Callable[[float, str], None]


class PolicyKind(str, Enum):
    RISK = "risk"
    TREATMENT_EFFECT = "treatment_effect"
    RANDOM = "random"


class TeMode(str, Enum):
    PREDICTED = "predicted"
    ORACLE_PSEUDO = "oracle_pseudo"


class WelfareKind(str, Enum):
    UTILITARIAN = "utilitarian"
    WEIGHTED_UTILITARIAN = "weighted_utilitarian"
    NASH = "nash"


class NashFloor(str, Enum):
    ADDITIVE_SHIFT = "additive_shift"
    MULTIPLICATIVE_SCALE = "multiplicative_scale"


@dataclass(frozen=True)
class Assignment:
    a: np.ndarray
    budget: float
    policy_kind: PolicyKind
    te_mode: Optional[TeMode] = None

    @property
    def m(self) -> int:
        return self.a.size

    @property
    def n_selected(self) -> int:
        return int(self.a.sum())


@dataclass(frozen=True)
class WelfareSpec:
    """
    One welfare functional.

    Args:
        kind: utilitarian, weighted_utilitarian or nash
        alpha: Risk-weighting exponent (weighted_utilitarian only)
    """

    kind: WelfareKind = WelfareKind.UTILITARIAN
    alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WelfareKind(self.kind))

    def validate(self) -> None:
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ConfigError(f"alpha must be a finite value >= 0, got {self.alpha}")
        if self.kind != WelfareKind.WEIGHTED_UTILITARIAN and self.alpha != 0:
            raise ConfigError(f"alpha only applies to weighted_utilitarian, not {self.kind.value}")

    @property
    def label(self) -> str:
        if self.kind == WelfareKind.WEIGHTED_UTILITARIAN:
            return f"{self.kind.value}(alpha={self.alpha:g})"
        return self.kind.value

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WelfareSpec":
        unknown = set(data) - {"kind", "alpha"}
        if unknown:
            raise ConfigError(f"Unknown welfare key(s): {', '.join(sorted(unknown))}")
        spec = cls(kind=data.get("kind", WelfareKind.UTILITARIAN.value),
                   alpha=float(data.get("alpha", 0.0)))
        spec.validate()
        return spec


def _check_budget(budget: float) -> None:
    if not 0.0 < budget < 1.0:
        raise ConfigError(f"budget must lie in (0,1), got {budget}")


def assign_top(scores: np.ndarray, budget: float, seed: int,
               policy_kind: PolicyKind = PolicyKind.RISK,
               te_mode: Optional[TeMode] = None) -> Assignment:
    """
    Treat the ``ceil(budget * m)`` rows with the largest scores.

    Ties are broken by a permutation drawn from ``seed``: the rows are shuffled
    first and then stably sorted by descending score.

    Args:
        scores: One score per evaluation row
        budget: Share of rows to treat, in (0,1)
        seed: Master seed for tie-breaking
        policy_kind: Recorded on the assignment
        te_mode: Recorded on the assignment

    Returns:
        Assignment: 0/1 vector with exactly ``ceil(budget * m)`` ones
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    _check_budget(budget)
    m = scores.size
    if m < 1:
        raise ShapeError("assign_top needs at least one row")
    if not np.all(np.isfinite(scores)):
        raise ShapeError(f"{int((~np.isfinite(scores)).sum())} non-finite score(s)")

    count = ceil_count(budget, m)
    perm = make_rng(seed, SeedPurpose.TIE_BREAK).permutation(m)
    order = perm[np.argsort(-scores[perm], kind="stable")]
    a = np.zeros(m, dtype=np.int8)
    a[order[:count]] = 1
    return Assignment(a=a, budget=float(budget), policy_kind=PolicyKind(policy_kind), te_mode=te_mode)


def random_assignment(m: int, budget: float, seed: int) -> Assignment:
    """Random policy: :func:`assign_top` over seeded uniform scores."""
    scores = make_rng(seed, SeedPurpose.RANDOM_POLICY).random(m)
    return assign_top(scores, budget, seed, policy_kind=PolicyKind.RANDOM)


def policy_value(assign: Assignment, benefit: np.ndarray,
                 weights: Optional[np.ndarray] = None) -> float:
    """
    Mean (optionally weighted) benefit over the treated rows.

    ``sum(a * w * benefit) / sum(a * w)``; with unit weights this is the plain
    average pseudo-outcome difference among the rows the policy treats.
    """
    a = np.asarray(assign.a, dtype=np.float64)
    benefit = np.asarray(benefit, dtype=np.float64).reshape(-1)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if benefit.size != a.size or w.size != a.size:
        raise ShapeError(f"assignment has {a.size} rows, benefit {benefit.size}, weights {w.size}")
    if not a.any():
        raise EmptyAssignmentError("Policy value is undefined for an empty assignment")
    aw = a * w
    return float(np.sum(aw * benefit) / np.sum(aw))


def welfare_weights(b_prime: np.ndarray, alpha: float) -> np.ndarray:
    """
    Risk-based welfare weights ``m * softmax(alpha * b_prime)``; they sum to m.

    The ratio of weights between percentiles p + delta and p is ``exp(alpha * delta)``.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    b_prime = np.asarray(b_prime, dtype=np.float64).reshape(-1)
    if alpha > ALPHA_CAP:
        logger.warning(f"alpha={alpha:g} exceeds {ALPHA_CAP:.4f}: the 75th/25th percentile "
                       f"weight ratio is above 100")
    return b_prime.size * softmax(alpha * b_prime)


def alpha_grid(step: float = ALPHA_STEP, cap: float = ALPHA_CAP) -> np.ndarray:
    """0, step, 2*step, ... up to and including the last multiple not above ``cap``."""
    if step <= 0:
        raise ConfigError(f"alpha grid step must be positive, got {step}")
    count = int(math.floor(round(cap / step, 9))) + 1
    return np.round(np.arange(count) * step, 12)


def alpha_threshold(benefit: np.ndarray, b: np.ndarray, b_prime: np.ndarray,
                    te_scores: np.ndarray, budget: float, seed: int = 0,
                    grid: Optional[np.ndarray] = None) -> Optional[float]:
    """
    Smallest grid alpha at which risk targeting's weighted value reaches treatment-effect targeting's.

    Both assignments are fixed (they do not depend on alpha); only the welfare
    weights change along the grid.

    Args:
        benefit: Evaluation ground-truth benefit per row
        b: Baseline risk per row (risk policy scores)
        b_prime: Risk percentiles per row
        te_scores: Treatment-effect policy scores
        budget: Share of rows treated
        seed: Tie-breaking seed, shared by both policies
        grid: Alpha values to try, ascending; defaults to :func:`alpha_grid`

    Returns:
        Optional[float]: The threshold, or None when no grid value qualifies
    """
    grid = alpha_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    risk = assign_top(b, budget, seed, policy_kind=PolicyKind.RISK)
    te = assign_top(te_scores, budget, seed, policy_kind=PolicyKind.TREATMENT_EFFECT)
    for alpha in grid:
        w = welfare_weights(b_prime, float(alpha))
        if policy_value(risk, benefit, w) >= policy_value(te, benefit, w):
            return float(alpha)
    return None


###############
##  Part 2   ##
###############


@dataclass(frozen=True)
class PipelineLearners:
    outcome: LearnerSpec = field(default_factory=lambda: LearnerSpec(kind=LearnerKind.RANDOM_FOREST))
    propensity: LearnerSpec = field(default_factory=lambda: LearnerSpec(kind=LearnerKind.LOGISTIC))
    risk: LearnerSpec = field(default_factory=lambda: LearnerSpec(kind=LearnerKind.RANDOM_FOREST))
    cate: LearnerSpec = field(default_factory=lambda: LearnerSpec(kind=LearnerKind.RANDOM_FOREST))

    def validate(self) -> None:
        for spec in (self.outcome, self.propensity, self.risk, self.cate):
            spec.validate()
        for name, spec in (("outcome", self.outcome), ("risk", self.risk), ("cate", self.cate)):
            if spec.kind == LearnerKind.LOGISTIC:
                raise ConfigError(f"The {name} learner must be a regressor, not logistic")
        if self.propensity.kind == LearnerKind.RIDGE_LINEAR:
            raise ConfigError("The propensity learner must be random_forest or logistic")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "outcome": self.outcome.to_dict(),
            "propensity": self.propensity.to_dict(),
            "risk": self.risk.to_dict(),
            "cate": self.cate.to_dict(),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything a targeting experiment needs besides the data.

    Args:
        k_values: Confounding fractions to sweep
        policies: Policies to evaluate
        welfare: Welfare functionals to score them with
        budget: Share of evaluation rows treated
        te_mode: ``predicted`` (second-stage CATE) or ``oracle_pseudo`` (rank by pseudo-outcomes)
        bootstrap_reps: Bootstrap replicates per cell (0 disables the intervals)
        seed: Master seed
        train_fraction: Share of rows used to fit nuisances and policies
        n_folds: Cross-fitting folds
        propensity_mode: Estimated and clipped, or the treated share
        clip_bounds: Propensity clipping bounds
        two_way: Also run with the splits swapped and pool both evaluation halves
        nash_floor: How outcomes are floored at 1 before the log
        alpha_step: Spacing of the alpha threshold grid
        alpha_max: Upper end of the alpha threshold grid
        curve_window: Neighbourhood size of the treatment-effect curve
        learners: Learner for each model
    """

    k_values: Tuple[float, ...] = DEFAULT_K_VALUES
    policies: Tuple[PolicyKind, ...] = (PolicyKind.RISK, PolicyKind.TREATMENT_EFFECT,
                                        PolicyKind.RANDOM)
    welfare: Tuple[WelfareSpec, ...] = (WelfareSpec(),)
    budget: float = DEFAULT_BUDGET
    te_mode: TeMode = TeMode.PREDICTED
    bootstrap_reps: int = DEFAULT_BOOTSTRAP_REPS
    seed: int = 0
    train_fraction: float = 0.5
    n_folds: int = 2
    propensity_mode: PropensityMode = PropensityMode.ESTIMATED_CLIPPED
    clip_bounds: Tuple[float, float] = DEFAULT_CLIP_BOUNDS
    two_way: bool = False
    nash_floor: NashFloor = NashFloor.ADDITIVE_SHIFT
    alpha_step: float = ALPHA_STEP
    alpha_max: float = ALPHA_CAP
    curve_window: int = 200
    learners: PipelineLearners = field(default_factory=PipelineLearners)

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(float(k) for k in self.k_values))
        object.__setattr__(self, "policies", tuple(PolicyKind(p) for p in self.policies))
        object.__setattr__(self, "welfare", tuple(self.welfare))
        object.__setattr__(self, "te_mode", TeMode(self.te_mode))
        object.__setattr__(self, "propensity_mode", PropensityMode(self.propensity_mode))
        object.__setattr__(self, "nash_floor", NashFloor(self.nash_floor))
        object.__setattr__(self, "clip_bounds", tuple(float(c) for c in self.clip_bounds))

    def validate(self) -> None:
        if not self.k_values:
            raise ConfigError("k_values must not be empty")
        for k in self.k_values:
            ConfoundingSpec(k=k).validate()
        if len(set(self.k_values)) != len(self.k_values):
            raise ConfigError("k_values must not repeat")
        if not self.policies:
            raise ConfigError("At least one policy is required")
        if len(set(self.policies)) != len(self.policies):
            raise ConfigError("Policies must not repeat")
        if not self.welfare:
            raise ConfigError("At least one welfare spec is required")
        for spec in self.welfare:
            spec.validate()
        if len({spec.label for spec in self.welfare}) != len(self.welfare):
            raise ConfigError("Welfare specs must not repeat")
        _check_budget(self.budget)
        if self.bootstrap_reps < 0:
            raise ConfigError(f"bootstrap_reps must be >= 0, got {self.bootstrap_reps}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0,1), got {self.train_fraction}")
        if self.n_folds < 2:
            raise ConfigError(f"n_folds must be at least 2, got {self.n_folds}")
        lo, hi = self.clip_bounds
        if not 0.0 < lo < hi < 1.0:
            raise ConfigError(f"clip_bounds must satisfy 0 < lo < hi < 1, got {self.clip_bounds}")
        if self.alpha_step <= 0:
            raise ConfigError(f"alpha_step must be positive, got {self.alpha_step}")
        if not 0.0 <= self.alpha_max <= ALPHA_CAP + 1e-12:
            raise ConfigError(f"alpha_max must lie in [0, {ALPHA_CAP:.4f}], got {self.alpha_max}")
        if self.curve_window < 2:
            raise ConfigError(f"curve_window must be at least 2, got {self.curve_window}")
        self.learners.validate()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k_values": list(self.k_values),
            "policies": [p.value for p in self.policies],
            "welfare": [spec.to_dict() for spec in self.welfare],
            "budget": self.budget,
            "te_mode": self.te_mode.value,
            "bootstrap_reps": self.bootstrap_reps,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "n_folds": self.n_folds,
            "propensity_mode": self.propensity_mode.value,
            "clip_bounds": list(self.clip_bounds),
            "two_way": self.two_way,
            "nash_floor": self.nash_floor.value,
            "alpha_step": self.alpha_step,
            "alpha_max": self.alpha_max,
            "curve_window": self.curve_window,
        }


@dataclass(frozen=True)
class EvaluationHalf:
    """One direction of the split: models fit on ``train``, scored on ``eval``."""

    index: int
    seed: int
    train: Dataset
    eval: Dataset
    nuisances: CrossFitNuisances
    train_pseudo: PseudoOutcomes
    eval_pseudo: PseudoOutcomes
    risk: RiskScores


@dataclass(frozen=True)
class EvaluationContext:
    """
    Pooled evaluation rows with their unconfounded ground truth and risk scores.

    ``evaluation`` stacks the evaluation halves in order, so row j of every array
    here is row j of ``evaluation``.

    ``b_prime`` is recomputed on the pooled risk values, so with two halves the
    percentiles span both evaluation sets.
    """

    halves: Tuple[EvaluationHalf, ...]
    config: ExperimentConfig
    benefit: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    effect_sign: int
    evaluation: Dataset

    @property
    def m(self) -> int:
        return self.benefit.size

    @property
    def row_index(self) -> np.ndarray:
        return self.evaluation.row_index


def _half_seed(seed: int, half: int) -> int:
    return seed if half == 0 else derive_seed(seed, SeedPurpose.SPLIT, half)


def _fit_half(index: int, train: Dataset, eval_ds: Dataset, config: ExperimentConfig,
              max_workers: int) -> EvaluationHalf:
    seed = _half_seed(config.seed, index)
    learners = config.learners
    nuisances = fit_crossfit(train, learners.outcome, learners.propensity, n_folds=config.n_folds,
                             propensity_mode=config.propensity_mode, seed=seed,
                             clip_bounds=config.clip_bounds, max_workers=max_workers)
    risk_model = fit_risk_model(train, learners.risk.with_seed(derive_seed(seed, SeedPurpose.RISK)))
    return EvaluationHalf(
        index=index,
        seed=seed,
        train=train,
        eval=eval_ds,
        nuisances=nuisances,
        train_pseudo=pseudo_outcomes(train, nuisances, PseudoOutcomeMode.WITHIN_FOLD),
        eval_pseudo=pseudo_outcomes(eval_ds, nuisances, PseudoOutcomeMode.ENSEMBLE_MEAN),
        risk=score_risk(eval_ds, risk_model),
    )


def build_context(ds: Dataset, config: ExperimentConfig, max_workers: int = 1) -> EvaluationContext:
    """
    Split the data, fit nuisances and the risk model, and score the evaluation rows.

    Args:
        ds: The trial
        config: Experiment settings
        max_workers: Threads used for fold fitting

    Returns:
        EvaluationContext: Ground truth and risk scores for the (pooled) evaluation rows
    """
    config.validate()
    split = split_dataset(ds, config.train_fraction, config.seed)
    directions = [(split.train, split.eval)]
    if config.two_way:
        directions.append((split.eval, split.train))
    halves = tuple(_fit_half(h, train, eval_ds, config, max_workers)
                   for h, (train, eval_ds) in enumerate(directions))

    b = np.concatenate([half.risk.b for half in halves])
    context = EvaluationContext(
        halves=halves,
        config=config,
        benefit=np.concatenate([half.eval_pseudo.benefit for half in halves]),
        b=b,
        b_prime=percentile_scores(b),
        effect_sign=effect_sign_for(ds.outcome_direction),
        evaluation=concat_datasets([half.eval for half in halves], name=f"{ds.name}[eval]"),
    )
    logger.info(f"Evaluation context for '{ds.name}': {context.m} evaluation rows over "
                f"{len(halves)} half/halves")
    return context


def te_scores_at(context: EvaluationContext, k: float) -> np.ndarray:
    """
    Treatment-effect policy scores on the evaluation rows after confounding the training data.

    In ``predicted`` mode a CATE model is fit on the confounded training rows; in
    ``oracle_pseudo`` mode the evaluation rows are ranked by their pseudo-outcome
    benefit under nuisances refit on the confounded training rows. At k = 0 the
    original nuisances are reused.
    """
    config = context.config
    learners = config.learners
    scores: List[np.ndarray] = []
    for half in context.halves:
        confounded = remove_confounded(half.train, half.train_pseudo.benefit,
                                       ConfoundingSpec(k=k, seed=half.seed))
        if k == 0:
            nuisances = half.nuisances
        else:
            nuisances = fit_crossfit(confounded, learners.outcome, learners.propensity,
                                     n_folds=config.n_folds, propensity_mode=config.propensity_mode,
                                     seed=half.seed, clip_bounds=config.clip_bounds)
        if config.te_mode == TeMode.ORACLE_PSEUDO:
            if k == 0:
                scores.append(half.eval_pseudo.benefit)
            else:
                scores.append(pseudo_outcomes(half.eval, nuisances,
                                              PseudoOutcomeMode.ENSEMBLE_MEAN).benefit)
            continue
        train_pseudo = (half.train_pseudo if k == 0
                        else pseudo_outcomes(confounded, nuisances, PseudoOutcomeMode.WITHIN_FOLD))
        cate = fit_cate(confounded.X, train_pseudo,
                        learners.cate.with_seed(derive_seed(half.seed, SeedPurpose.CATE)),
                        provenance={"half": half.index, "k": k, "train": confounded.name})
        scores.append(context.effect_sign * cate.predict(half.eval.X))
    return np.concatenate(scores)


def _log_transform(Y: np.ndarray, y_min: float, floor: NashFloor) -> np.ndarray:
    if floor == NashFloor.ADDITIVE_SHIFT:
        shifted = Y + max(0.0, 1.0 - y_min)
    else:
        if y_min <= 0:
            raise ConfigError(f"multiplicative_scale needs strictly positive outcomes, min is {y_min:g}")
        shifted = Y * max(1.0, 1.0 / y_min)
    if np.any(shifted <= 0):
        raise InvariantViolation("Outcome floor left non-positive values before the log")
    return np.log(shifted)


def nash_benefit(ds: Dataset, context: EvaluationContext) -> np.ndarray:
    """
    Evaluation benefit on the log-utility scale.

    Outcomes are floored at 1 using the minimum over ``ds``, log-transformed, and the
    nuisance / pseudo-outcome pipeline is rerun with the same splits and seeds.
    """
    config = context.config
    learners = config.learners
    y_min = float(ds.Y.min())
    benefits = []
    for half in context.halves:
        train = half.train.with_outcomes(_log_transform(half.train.Y, y_min, config.nash_floor))
        eval_ds = half.eval.with_outcomes(_log_transform(half.eval.Y, y_min, config.nash_floor))
        nuisances = fit_crossfit(train, learners.outcome, learners.propensity,
                                 n_folds=config.n_folds, propensity_mode=config.propensity_mode,
                                 seed=half.seed, clip_bounds=config.clip_bounds)
        benefits.append(pseudo_outcomes(eval_ds, nuisances, PseudoOutcomeMode.ENSEMBLE_MEAN).benefit)
    return np.concatenate(benefits)


def nash_policy_value(ds: Dataset, context: EvaluationContext, assign: Assignment,
                      benefit: Optional[np.ndarray] = None) -> float:
    """
    Nash welfare of an assignment, evaluated in log space.

    Args:
        ds: The full trial (sets the outcome floor)
        context: Evaluation context the assignment was formed on
        assign: Assignment over the context's evaluation rows
        benefit: Precomputed :func:`nash_benefit`, to avoid refitting

    Returns:
        float: Unweighted policy value of the log-scale benefit
    """
    if assign.m != context.m:
        raise ShapeError(f"assignment has {assign.m} rows, evaluation context {context.m}")
    if benefit is None:
        benefit = nash_benefit(ds, context)
    return policy_value(assign, benefit)


###############
##  Part 3   ##
###############


@dataclass(frozen=True)
class CellResult:
    k: float
    policy: PolicyKind
    welfare: str
    value: float
    ci_lo: float
    ci_hi: float
    se: float
    n_selected: int
    reps: int
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "se": self.se,
            "n_selected": self.n_selected,
            "bootstrap_reps": self.reps,
            "seed": self.seed,
        }


def bootstrap_counts(m: int, seed: int, k_index: int, start: int, stop: int) -> np.ndarray:
    """Resampling counts for replicates ``start..stop-1``; one derived stream per replicate."""
    counts = np.empty((stop - start, m), dtype=np.float64)
    for row, rep in enumerate(range(start, stop)):
        rng = make_rng(seed, SeedPurpose.BOOTSTRAP, k_index, rep)
        counts[row] = np.bincount(rng.integers(0, m, size=m), minlength=m)
    return counts


def bootstrap_ratios(numerators: np.ndarray, denominators: np.ndarray, reps: int, seed: int,
                     k_index: int) -> np.ndarray:
    """
    Bootstrap the ratio ``sum(num) / sum(den)`` for several statistics at once.

    Args:
        numerators: p x m per-row numerator terms
        denominators: p x m per-row denominator terms
        reps: Number of replicates
        seed: Master seed
        k_index: Grid cell, mixed into the replicate seeds

    Returns:
        np.ndarray: reps x p replicate values (NaN where a replicate selected no row)
    """
    m = numerators.shape[1]
    values = np.empty((reps, numerators.shape[0]))
    for start in range(0, reps, BOOTSTRAP_CHUNK):
        stop = min(start + BOOTSTRAP_CHUNK, reps)
        counts = bootstrap_counts(m, seed, k_index, start, stop)
        num = counts @ numerators.T
        den = counts @ denominators.T
        with np.errstate(invalid="ignore", divide="ignore"):
            values[start:stop] = np.where(den > 0, num / den, np.nan)
    return values


def percentile_interval(value: float, replicates: np.ndarray) -> Tuple[float, float, float]:
    """95% percentile interval widened to contain ``value``, and the bootstrap SE."""
    finite = replicates[np.isfinite(replicates)]
    if finite.size == 0:
        return value, value, 0.0
    lo, hi = np.percentile(finite, CI_PERCENTILES)
    se = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
    return float(min(lo, value)), float(max(hi, value)), se


###############
##  Part 4   ##
###############


@dataclass(frozen=True)
class ExperimentResult:
    dataset: str
    budget: float
    te_mode: TeMode
    bootstrap_reps: int
    seed: int
    k_values: Tuple[float, ...]
    cells: Tuple[CellResult, ...]
    eval_rows: int

    def cell(self, welfare: str, policy: PolicyKind, k: float) -> CellResult:
        for cell in self.cells:
            if cell.welfare == welfare and cell.policy == PolicyKind(policy) and cell.k == k:
                return cell
        raise KeyError(f"No cell for welfare={welfare}, policy={policy}, k={k}")

    def series(self, welfare: str, policy: PolicyKind) -> List[CellResult]:
        return [c for c in self.cells if c.welfare == welfare and c.policy == PolicyKind(policy)]

    @property
    def welfare_labels(self) -> List[str]:
        return list(dict.fromkeys(c.welfare for c in self.cells))

    @property
    def policies(self) -> List[PolicyKind]:
        return list(dict.fromkeys(c.policy for c in self.cells))

    def to_dict(self) -> Dict[str, Any]:
        """Nested welfare -> policy -> k."""
        results: Dict[str, Dict[str, Dict[str, Any]]] = {}
        for cell in self.cells:
            by_policy = results.setdefault(cell.welfare, {})
            by_policy.setdefault(cell.policy.value, {})[f"{cell.k:g}"] = cell.to_dict()
        return {
            "dataset": self.dataset,
            "budget": self.budget,
            "te_mode": self.te_mode.value,
            "bootstrap_reps": self.bootstrap_reps,
            "seed": self.seed,
            "eval_rows": self.eval_rows,
            "k_values": list(self.k_values),
            "results": results,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(c.welfare, c.policy.value, c.k, c.value, c.ci_lo, c.ci_hi, c.se) for c in self.cells],
            columns=["welfare", "policy", "k", "value", "ci_lo", "ci_hi", "se"],
        )


@dataclass(frozen=True)
class AlphaTable:
    dataset: str
    budget: float
    te_mode: TeMode
    k_values: Tuple[float, ...]
    thresholds: Tuple[Optional[float], ...]

    @staticmethod
    def k_label(k: float) -> str:
        return f"{round(100 * k, 9):g}%"

    def to_frame(self) -> pd.DataFrame:
        row: Dict[str, Any] = {"dataset": self.dataset}
        for k, alpha in zip(self.k_values, self.thresholds):
            row[self.k_label(k)] = "na" if alpha is None else f"{alpha:g}"
        return pd.DataFrame([row])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset": self.dataset,
            "budget": self.budget,
            "te_mode": self.te_mode.value,
            "thresholds": {f"{k:g}": alpha for k, alpha in zip(self.k_values, self.thresholds)},
        }


class TargetingExperiment:
    """
    Runs the confounding sweep and the alpha-threshold table on one dataset.

    The evaluation context (split, nuisances, risk scores) is built once and shared
    by every k. k cells run on a thread pool and are gathered in k order, so the
    result does not depend on ``max_workers``.
    """

    def __init__(self, dataset: Dataset, config: ExperimentConfig, max_workers: int = 1):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.max_workers = max(1, int(max_workers))
        self._context: Optional[EvaluationContext] = None
        self._nash_benefit: Optional[np.ndarray] = None
        logger.info(f"TargetingExperiment on '{dataset.name}' ({dataset.n} rows, "
                    f"te_mode={config.te_mode.value}, budget={config.budget:g})")

    def prepare(self) -> EvaluationContext:
        if self._context is None:
            self._context = build_context(self.dataset, self.config, self.max_workers)
        return self._context

    def _weights_and_benefit(self, spec: WelfareSpec) -> Tuple[np.ndarray, np.ndarray]:
        context = self.prepare()
        if spec.kind == WelfareKind.NASH:
            if self._nash_benefit is None:
                self._nash_benefit = nash_benefit(self.dataset, context)
            return np.ones(context.m), self._nash_benefit
        if spec.kind == WelfareKind.WEIGHTED_UTILITARIAN:
            return welfare_weights(context.b_prime, spec.alpha), context.benefit
        return np.ones(context.m), context.benefit

    def _assignments(self, te_scores: np.ndarray, risk: Assignment,
                     random: Assignment) -> Dict[PolicyKind, Assignment]:
        assignments = {}
        for policy in self.config.policies:
            if policy == PolicyKind.RISK:
                assignments[policy] = risk
            elif policy == PolicyKind.RANDOM:
                assignments[policy] = random
            else:
                assignments[policy] = assign_top(te_scores, self.config.budget, self.config.seed,
                                                 policy_kind=PolicyKind.TREATMENT_EFFECT,
                                                 te_mode=self.config.te_mode)
        return assignments

    def _run_cell(self, k_index: int, k: float, risk: Assignment, random: Assignment,
                  welfare: Sequence[Tuple[WelfareSpec, np.ndarray, np.ndarray]]) -> List[CellResult]:
        config = self.config
        context = self.prepare()
        te_scores = (te_scores_at(context, k) if PolicyKind.TREATMENT_EFFECT in config.policies
                     else np.zeros(context.m))
        assignments = self._assignments(te_scores, risk, random)

        keys = []
        numerators = []
        denominators = []
        values = []
        for spec, w, benefit in welfare:
            for policy, assign in assignments.items():
                aw = assign.a * w
                keys.append((spec, policy, assign))
                numerators.append(aw * benefit)
                denominators.append(aw)
                values.append(policy_value(assign, benefit, w))

        if config.bootstrap_reps:
            replicates = bootstrap_ratios(np.vstack(numerators), np.vstack(denominators),
                                          config.bootstrap_reps, config.seed, k_index)
            dropped = int((~np.isfinite(replicates)).sum())
            if dropped:
                logger.warning(f"k={k:g}: {dropped} bootstrap value(s) had no selected rows and "
                               f"were left out of the intervals")
        else:
            replicates = np.empty((0, len(keys)))

        cells = []
        for j, ((spec, policy, assign), value) in enumerate(zip(keys, values)):
            lo, hi, se = percentile_interval(value, replicates[:, j])
            cells.append(CellResult(k=k, policy=policy, welfare=spec.label, value=value, ci_lo=lo,
                                    ci_hi=hi, se=se, n_selected=assign.n_selected,
                                    reps=config.bootstrap_reps, seed=config.seed))
        logger.debug(f"k={k:g}: scored {len(cells)} cell(s)")
        return cells

    def run_sweep(self, callback: Optional[ProgressCallback] = None) -> ExperimentResult:
        """
        Evaluate every policy under every welfare spec for each k.

        Args:
            callback: Optional ``callback(fraction, message)`` progress hook

        Returns:
            ExperimentResult: Point estimates with bootstrap intervals
        """
        start_time = time.time()
        config = self.config
        context = self.prepare()
        risk = assign_top(context.b, config.budget, config.seed, policy_kind=PolicyKind.RISK)
        random = random_assignment(context.m, config.budget, config.seed)
        welfare = [(spec,) + self._weights_and_benefit(spec) for spec in config.welfare]

        cells: List[CellResult] = []
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(self._run_cell, i, k, risk, random, welfare)
                       for i, k in enumerate(config.k_values)]
            for i, future in enumerate(futures):
                cells.extend(future.result())
                if callback:
                    callback((i + 1) / len(futures), f"k={config.k_values[i]:g} done")

        # order: welfare, policy, k
        welfare_order = {spec.label: i for i, spec in enumerate(config.welfare)}
        policy_order = {p: i for i, p in enumerate(config.policies)}
        cells.sort(key=lambda c: (welfare_order[c.welfare], policy_order[c.policy],
                                  config.k_values.index(c.k)))
        elapsed = time.time() - start_time
        logger.info(f"Sweep over {len(config.k_values)} k value(s) finished in {elapsed:.2f} seconds")
        return ExperimentResult(dataset=self.dataset.name, budget=config.budget,
                                te_mode=config.te_mode, bootstrap_reps=config.bootstrap_reps,
                                seed=config.seed, k_values=config.k_values, cells=tuple(cells),
                                eval_rows=context.m)

    def run_alpha_table(self, callback: Optional[ProgressCallback] = None) -> AlphaTable:
        """alpha threshold per k, or None where risk targeting never catches up on the grid."""
        config = self.config
        context = self.prepare()
        grid = alpha_grid(config.alpha_step, config.alpha_max)

        def threshold(k: float) -> Optional[float]:
            return alpha_threshold(context.benefit, context.b, context.b_prime,
                                   te_scores_at(context, k), config.budget, config.seed, grid)

        thresholds: List[Optional[float]] = []
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(threshold, k) for k in config.k_values]
            for i, future in enumerate(futures):
                thresholds.append(future.result())
                if callback:
                    callback((i + 1) / len(futures), f"k={config.k_values[i]:g} done")
        return AlphaTable(dataset=self.dataset.name, budget=config.budget, te_mode=config.te_mode,
                          k_values=config.k_values, thresholds=tuple(thresholds))


def sweep(ds: Dataset, config: ExperimentConfig, callback: Optional[ProgressCallback] = None,
          max_workers: int = 1) -> ExperimentResult:
    return TargetingExperiment(ds, config, max_workers).run_sweep(callback)


def alpha_table(ds: Dataset, config: ExperimentConfig, callback: Optional[ProgressCallback] = None,
                max_workers: int = 1) -> AlphaTable:
    return TargetingExperiment(ds, config, max_workers).run_alpha_table(callback)
