"""
Learners
--------
The regression / classification contract shared by every nuisance and
second-stage model: bagged CART forests, ridge regression and ridge-penalised
logistic regression, all backed by scikit-learn.
"""

import logging
import warnings
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LinearRegression, LogisticRegression, Ridge
from typing_extensions import Self

from policy_targeting.errors import (
    DegenerateLabelsError,
    InsufficientDataError,
    LearnerSpecError,
    ShapeError,
)

logger = logging.getLogger("PolicyTargeting.learners")

PROBABILITY_CLIP = 1e-6
LOGISTIC_TOL = 1e-8
LOGISTIC_MAX_ITER = 500
DEFAULT_FOREST_MTRY = 1.0 / 3.0


class LearnerKind(str, Enum):
    RANDOM_FOREST = "random_forest"
    RIDGE_LINEAR = "ridge_linear"
    LOGISTIC = "logistic"


class ModelTask(str, Enum):
    REGRESSION = "regression"
    PROPENSITY = "propensity"


@dataclass(frozen=True)
class LearnerSpec:
    """
    Hyperparameters for one learner.

    Args:
        kind: Learner family
        n_trees: Trees per forest
        max_depth: Maximum tree depth, ``None`` for unlimited
        min_leaf: Minimum rows per leaf
        mtry_fraction: Share of features tried per split; ``None`` means 1/3 for forests
        ridge_lambda: L2 penalty for ridge and logistic models
        seed: Random seed
        n_jobs: Worker threads for forest fitting (does not change the fitted model)
    """

    kind: LearnerKind = LearnerKind.RANDOM_FOREST
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_leaf: int = 5
    mtry_fraction: Optional[float] = None
    ridge_lambda: float = 1e-3
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", LearnerKind(self.kind))

    def validate(self) -> None:
        if self.n_trees < 1:
            raise LearnerSpecError(f"n_trees must be positive, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise LearnerSpecError(f"max_depth must be positive or None, got {self.max_depth}")
        if self.min_leaf < 1:
            raise LearnerSpecError(f"min_leaf must be positive, got {self.min_leaf}")
        if self.mtry_fraction is not None and not 0.0 < self.mtry_fraction <= 1.0:
            raise LearnerSpecError(f"mtry_fraction must lie in (0,1], got {self.mtry_fraction}")
        if self.ridge_lambda < 0:
            raise LearnerSpecError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if self.n_jobs < 1:
            raise LearnerSpecError(f"n_jobs must be positive, got {self.n_jobs}")
        if self.seed < 0:
            raise LearnerSpecError(f"seed must be non-negative, got {self.seed}")

    def with_seed(self, seed: int) -> Self:
        return replace(self, seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LearnerSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise LearnerSpecError(f"Unknown learner key(s): {', '.join(sorted(unknown))}")
        spec = cls(**data)
        spec.validate()
        return spec


@dataclass(frozen=True)
class FittedModel:
    """A fitted learner; immutable after construction and safe to share across threads."""

    kind: LearnerKind
    task: ModelTask
    d: int
    estimator: BaseEstimator

    def predict(self, X_new: np.ndarray) -> np.ndarray:
        return predict(self, X_new)


def _as_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"Expected a 2-D feature matrix, got shape {X.shape}")
    return X


def _check_training_inputs(X: np.ndarray, y: np.ndarray, spec: LearnerSpec) -> None:
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but target has {y.shape[0]}")
    if X.shape[0] < 2 * spec.min_leaf:
        raise InsufficientDataError(
            f"{spec.kind.value} needs at least {2 * spec.min_leaf} rows (2 x min_leaf), got {X.shape[0]}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ShapeError("Training inputs contain non-finite values")


def sklearn_seed(seed: int) -> int:
    """Fold a 64-bit derived seed into the 32-bit range scikit-learn accepts."""
    return int(np.random.SeedSequence(int(seed)).generate_state(1, np.uint32)[0])


def _forest_kwargs(spec: LearnerSpec) -> Dict[str, Any]:
    return dict(
        n_estimators=spec.n_trees,
        max_depth=spec.max_depth,
        min_samples_leaf=spec.min_leaf,
        max_features=spec.mtry_fraction or DEFAULT_FOREST_MTRY,
        bootstrap=True,
        random_state=sklearn_seed(spec.seed),
        n_jobs=spec.n_jobs,
    )


def _sequential_predictions(estimator: BaseEstimator) -> None:
    # threaded predict sums tree outputs in completion order
    if isinstance(estimator, (RandomForestRegressor, RandomForestClassifier)):
        estimator.set_params(n_jobs=1)


def fit_regressor(X: np.ndarray, y: np.ndarray, spec: LearnerSpec) -> FittedModel:
    """
    Fit a regression model.

    Args:
        X: n x d feature matrix
        y: Length-n target
        spec: Learner hyperparameters (``random_forest`` or ``ridge_linear``)

    Returns:
        FittedModel: Deterministic given ``spec.seed``
    """
    spec.validate()
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    _check_training_inputs(X, y, spec)

    if spec.kind == LearnerKind.RANDOM_FOREST:
        estimator = RandomForestRegressor(**_forest_kwargs(spec))
    elif spec.kind == LearnerKind.RIDGE_LINEAR:
        # lambda = 0 is plain least squares
        estimator = Ridge(alpha=spec.ridge_lambda) if spec.ridge_lambda > 0 else LinearRegression()
    else:
        raise LearnerSpecError(f"{spec.kind.value} cannot be used as a regressor")

    estimator.fit(X, y)
    _sequential_predictions(estimator)
    logger.debug(f"Fitted {spec.kind.value} regressor on {X.shape[0]} rows x {X.shape[1]} features")
    return FittedModel(kind=spec.kind, task=ModelTask.REGRESSION, d=X.shape[1], estimator=estimator)


def fit_propensity(X: np.ndarray, w: np.ndarray, spec: LearnerSpec) -> FittedModel:
    """
    Fit a treatment-probability model.

    Predictions are probabilities of ``w == 1`` clipped into [1e-6, 1 - 1e-6].
    Logistic non-convergence is logged as a warning; the fitted state is still returned.
    """
    spec.validate()
    X = _as_matrix(X)
    w = np.asarray(w).reshape(-1)
    _check_training_inputs(X, w.astype(np.float64), spec)
    classes = np.unique(w)
    if classes.size < 2:
        raise DegenerateLabelsError(f"Propensity model needs both classes, got only {classes.tolist()}")
    if not set(classes.tolist()) <= {0, 1}:
        raise DegenerateLabelsError(f"Treatment labels must be 0/1, got {classes.tolist()}")

    if spec.kind == LearnerKind.RANDOM_FOREST:
        estimator = RandomForestClassifier(**_forest_kwargs(spec))
        estimator.fit(X, w)
        _sequential_predictions(estimator)
    elif spec.kind == LearnerKind.LOGISTIC:
        if spec.ridge_lambda > 0:
            estimator = LogisticRegression(C=1.0 / spec.ridge_lambda, tol=LOGISTIC_TOL,
                                           max_iter=LOGISTIC_MAX_ITER)
        else:
            estimator = LogisticRegression(penalty=None, tol=LOGISTIC_TOL, max_iter=LOGISTIC_MAX_ITER)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            estimator.fit(X, w)
        if any(issubclass(c.category, ConvergenceWarning) for c in caught):
            logger.warning(f"Logistic propensity model did not converge within {LOGISTIC_MAX_ITER} "
                           f"iterations (tol={LOGISTIC_TOL}); using last iterate")
    else:
        raise LearnerSpecError(f"{spec.kind.value} cannot be used as a propensity model")

    logger.debug(f"Fitted {spec.kind.value} propensity model on {X.shape[0]} rows")
    return FittedModel(kind=spec.kind, task=ModelTask.PROPENSITY, d=X.shape[1], estimator=estimator)


def predict(model: FittedModel, X_new: np.ndarray) -> np.ndarray:
    """
    Predict with a fitted model.

    Args:
        model: Output of :func:`fit_regressor` or :func:`fit_propensity`
        X_new: m x d matrix (m may be 0)

    Returns:
        np.ndarray: Length-m predictions (probabilities for propensity models)
    """
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim == 2 and X_new.shape[0] == 0:
        if X_new.shape[1] not in (0, model.d):
            raise ShapeError(f"Model expects {model.d} features, got {X_new.shape[1]}")
        return np.empty(0, dtype=np.float64)
    X_new = _as_matrix(X_new)
    if X_new.shape[1] != model.d:
        raise ShapeError(f"Model expects {model.d} features, got {X_new.shape[1]}")

    if model.task == ModelTask.PROPENSITY:
        positive = int(np.flatnonzero(model.estimator.classes_ == 1)[0])
        proba = model.estimator.predict_proba(X_new)[:, positive]
        return np.clip(proba, PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP)
    return np.asarray(model.estimator.predict(X_new), dtype=np.float64)
