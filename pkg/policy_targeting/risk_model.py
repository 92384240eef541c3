"""
Baseline-risk scoring.

The risk model predicts E[Y(0)|X] from control rows only. Its sign is then
fixed so that larger ``b`` always means worse off, and the benefit sign is fixed
so that larger benefit always means the treatment helped. Every downstream module
consumes those two conventions and never looks at ``outcome_direction`` again.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from policy_targeting.errors import DegenerateLabelsError
from policy_targeting.learners import FittedModel, LearnerSpec, fit_regressor, predict
from policy_targeting.tabular_data import Dataset, OutcomeDirection

logger = logging.getLogger("PolicyTargeting.risk")


def effect_sign_for(direction: OutcomeDirection) -> int:
    """+1 when higher outcomes are better, -1 otherwise (pain, headache severity)."""
    return 1 if OutcomeDirection(direction) == OutcomeDirection.HIGHER_IS_BETTER else -1


@dataclass(frozen=True)
class RiskScores:
    b: np.ndarray
    b_prime: np.ndarray
    effect_sign: int
    row_index: Optional[np.ndarray] = None

    def to_frame(self) -> pd.DataFrame:
        row_index = self.row_index if self.row_index is not None else np.arange(self.b.size)
        return pd.DataFrame({"row_index": row_index, "b": self.b, "b_prime": self.b_prime})


def percentile_scores(b: np.ndarray) -> np.ndarray:
    """
    Rank percentiles ``(rank - 1) / (n - 1)`` with average ranks for ties.

    The highest value maps to 1 and the lowest to 0; a single row maps to 0.5.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.size == 0:
        return np.empty(0)
    if b.size == 1:
        return np.array([0.5])
    return (rankdata(b, method="average") - 1.0) / (b.size - 1.0)


def fit_risk_model(train: Dataset, spec: LearnerSpec) -> FittedModel:
    """
    Fit the status-quo outcome model on the control rows of ``train``.

    Treated rows are never looked at.
    """
    control = train.W == 0
    if not control.any():
        raise DegenerateLabelsError(f"Dataset '{train.name}' has no control rows to fit a risk model on")
    logger.info(f"Fitting risk model on {int(control.sum())} control rows of '{train.name}'")
    return fit_regressor(train.X[control], train.Y[control], spec)


def score_risk(ds: Dataset, model: FittedModel) -> RiskScores:
    """
    Score baseline risk for every row of ``ds``.

    Args:
        ds: Rows to score
        model: Output of :func:`fit_risk_model`

    Returns:
        RiskScores: ``b`` (higher = worse off), percentile scores and the effect sign
    """
    prediction = predict(model, ds.X)
    sign = effect_sign_for(ds.outcome_direction)
    # low predicted income is high risk; high predicted pain is high risk
    b = -prediction if sign > 0 else prediction
    return RiskScores(b=b, b_prime=percentile_scores(b), effect_sign=sign, row_index=ds.row_index)
