"""
Second-stage CATE model and the treatment-effect-vs-risk curve.

The curve is a Nadaraya-Watson smoother with a Gaussian kernel
``K(u) = exp(-u^2 / 2)`` and a per-point adaptive bandwidth: half the spread of
the risk values inside a window of ``window`` sorted neighbours. Pointwise 95%
bands use the kernel-weighted variance of the pseudo-outcome differences.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from policy_targeting.errors import InsufficientDataError, ShapeError
from policy_targeting.learners import FittedModel, LearnerSpec, fit_regressor, predict
from policy_targeting.nuisance_dr import PseudoOutcomes

logger = logging.getLogger("PolicyTargeting.curve")

Z_95 = 1.96
DEFAULT_WINDOW = 200
CHUNK_ROWS = 512


@dataclass(frozen=True)
class CateModel:
    model: FittedModel
    provenance: Dict[str, Any] = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self.model, X)


@dataclass(frozen=True)
class CurveEstimate:
    b: np.ndarray
    tau_hat: np.ndarray
    sigma: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    order: Optional[np.ndarray] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "b": self.b,
            "tau_hat": self.tau_hat,
            "sigma": self.sigma,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
        })


@dataclass(frozen=True)
class CurveSummary:
    significant_fraction: float
    significant_negative_fraction: float
    spearman_trend: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "significant_fraction": self.significant_fraction,
            "significant_negative_fraction": self.significant_negative_fraction,
            "spearman_trend": self.spearman_trend,
        }


def fit_cate(X: np.ndarray, po: PseudoOutcomes, spec: LearnerSpec,
             provenance: Optional[Dict[str, Any]] = None) -> CateModel:
    """
    Regress the pseudo-outcome difference on the features.

    Rows are put into a canonical order (lexicographic on features, then target)
    before fitting, so the fitted model does not depend on how the rows were ordered.

    Args:
        X: Features of the rows the pseudo-outcomes belong to
        po: Pseudo-outcomes; the target is ``po.diff``, never raw Y
        spec: Second-stage learner
        provenance: Free-form record of which nuisances / split produced ``po``

    Returns:
        CateModel: The fitted second stage
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != po.m:
        raise ShapeError(f"fit_cate: X has shape {X.shape} but there are {po.m} pseudo-outcomes")
    keys = (po.diff,) + tuple(X[:, j] for j in reversed(range(X.shape[1])))
    order = np.lexsort(keys)
    model = fit_regressor(X[order], po.diff[order], spec)
    record = dict(provenance or {})
    record.setdefault("n_rows", int(po.m))
    record.setdefault("target", "pseudo_outcome_difference")
    return CateModel(model=model, provenance=record)


def window_offsets(window: int) -> Tuple[int, int]:
    """(forward, backward) index offsets; (100, 99) for the default window of 200."""
    forward = int(math.ceil(window / 2))
    return forward, forward - 1


def adaptive_bandwidths(b_sorted: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """``sigma_i = (b[i + fwd] - b[i - back]) / 2`` with indices clamped to the array."""
    if window < 2:
        raise InsufficientDataError(f"window must be at least 2, got {window}")
    n = b_sorted.size
    forward, backward = window_offsets(window)
    i = np.arange(n)
    upper = b_sorted[np.minimum(i + forward, n - 1)]
    lower = b_sorted[np.maximum(i - backward, 0)]
    return 0.5 * (upper - lower)


def _estimate_block(b: np.ndarray, tau: np.ndarray, at: np.ndarray,
                    sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    tau_hat = np.empty(at.size)
    variance = np.empty(at.size)
    positive = sigma > 0
    if positive.any():
        u = (b[None, :] - at[positive, None]) / sigma[positive, None]
        K = np.exp(-0.5 * u * u)
        total = K.sum(axis=1)
        est = (K @ tau) / total
        resid = tau[None, :] - est[:, None]
        tau_hat[positive] = est
        variance[positive] = (K * resid * resid).sum(axis=1) / (total * total)
    for i in np.flatnonzero(~positive):
        # zero bandwidth: plain mean over rows tied with this point
        tied = tau[b == at[i]]
        if tied.size == 0:
            tied = tau[np.argmin(np.abs(b - at[i]))][None]
        mean = tied.mean()
        tau_hat[i] = mean
        variance[i] = ((tied - mean) ** 2).sum() / tied.size ** 2
    return tau_hat, variance


def kernel_estimate(b: np.ndarray, tau: np.ndarray, at: np.ndarray, sigma: np.ndarray,
                    max_workers: int = 1) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Evaluate the kernel smoother at arbitrary points with given bandwidths.

    Args:
        b: Risk values of the data rows
        tau: Pseudo-outcome differences of the data rows
        at: Evaluation points
        sigma: Bandwidth per evaluation point
        max_workers: Evaluation chunks processed concurrently

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: tau_hat, ci_lo, ci_hi
    """
    b = np.asarray(b, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    at = np.asarray(at, dtype=np.float64).reshape(-1)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), at.shape)
    if b.shape != tau.shape:
        raise ShapeError(f"b has {b.size} values but tau has {tau.size}")

    starts = list(range(0, at.size, CHUNK_ROWS))
    tau_hat = np.empty(at.size)
    variance = np.empty(at.size)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        futures = {
            start: executor.submit(_estimate_block, b, tau, at[start:start + CHUNK_ROWS],
                                   sigma[start:start + CHUNK_ROWS])
            for start in starts
        }
        for start, future in futures.items():
            block_hat, block_var = future.result()
            tau_hat[start:start + block_hat.size] = block_hat
            variance[start:start + block_var.size] = block_var

    half_width = Z_95 * np.sqrt(np.maximum(variance, 0.0))
    return tau_hat, tau_hat - half_width, tau_hat + half_width


def kernel_curve(b: np.ndarray, tau_j: np.ndarray, window: int = DEFAULT_WINDOW,
                 max_workers: int = 1) -> CurveEstimate:
    """
    Smoothed treatment effect as a function of baseline risk.

    The curve is evaluated at every data point. Rows are sorted ascending by ``b``;
    ties keep their original order.

    Args:
        b: Baseline risk per row
        tau_j: Pseudo-outcome difference (benefit) per row
        window: Neighbourhood size for the adaptive bandwidth
        max_workers: Evaluation chunks processed concurrently

    Returns:
        CurveEstimate: Sorted risk values, estimates, bandwidths and 95% bounds
    """
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    tau_j = np.asarray(tau_j, dtype=np.float64).reshape(-1)
    if b.size != tau_j.size:
        raise ShapeError(f"b has {b.size} values but tau has {tau_j.size}")
    if b.size < 2:
        raise InsufficientDataError(f"kernel_curve needs at least 2 rows, got {b.size}")
    if window < 2:
        raise InsufficientDataError(f"window must be at least 2, got {window}")

    order = np.argsort(b, kind="stable")
    b_sorted, tau_sorted = b[order], tau_j[order]
    sigma = adaptive_bandwidths(b_sorted, window)
    tau_hat, ci_lo, ci_hi = kernel_estimate(b_sorted, tau_sorted, b_sorted, sigma, max_workers)
    logger.info(f"Kernel curve over {b.size} points (window={window}, "
                f"{int((sigma == 0).sum())} zero-bandwidth points)")
    return CurveEstimate(b=b_sorted, tau_hat=tau_hat, sigma=sigma, ci_lo=ci_lo, ci_hi=ci_hi,
                         order=order)


def curve_significance_summary(curve: CurveEstimate) -> CurveSummary:
    """Share of the curve significantly above / below zero and the Spearman trend of the estimate."""
    tau_hat = curve.tau_hat
    flat = np.allclose(tau_hat, tau_hat[0], rtol=1e-12, atol=1e-12)
    if flat or np.ptp(curve.b) == 0:
        trend = 0.0
    else:
        trend = float(spearmanr(curve.b, tau_hat)[0])
    return CurveSummary(
        significant_fraction=float(np.mean(curve.ci_lo > 0)),
        significant_negative_fraction=float(np.mean(curve.ci_hi < 0)),
        spearman_trend=trend,
    )
