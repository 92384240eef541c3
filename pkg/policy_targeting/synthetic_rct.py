"""
Synthetic RCT Generator
-----------------------
Randomised-trial tables with fully known potential outcomes, so every estimator in
the package can be checked against ground truth.

Data generating process (d features, seed-determined)::

    X    ~ N(0, I_d)
    mu0  = X @ beta0                      beta0 = (1, 1/2, 0, ..., 0)
    tau  = te_scale * (rho * (-X @ beta0) / |beta0| + sqrt(1 - rho^2) * X @ beta1 / |beta1|)
                                          beta1 = (0, 0, 1, 1/2, 0, ..., 0)
    W    ~ Bernoulli(treat_fraction), independent of everything
    Y    = mu0 + W * tau + eps,           eps ~ N(0, noise_sd^2)

With rho > 0 low-mu0 (high-risk) units have larger effects on average; with rho = 0
the effect is independent of baseline risk.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import pandas as pd

from policy_targeting.errors import ConfigError
from policy_targeting.tabular_data import Dataset, OutcomeDirection, SeedPurpose, make_rng

logger = logging.getLogger("PolicyTargeting.synthetic")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic trial."""

    n: int = 2000
    d: int = 6
    noise_sd: float = 1.0
    treat_fraction: float = 0.5
    risk_te_alignment: float = 0.5
    te_scale: float = 1.0
    seed: int = 0
    baseline_offset: float = 0.0
    name: str = field(default="synthetic")

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.d < 2:
            raise ConfigError(f"d must be at least 2, got {self.d}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0.0 < self.treat_fraction < 1.0:
            raise ConfigError(f"treat_fraction must lie in (0,1), got {self.treat_fraction}")
        if not -1.0 <= self.risk_te_alignment <= 1.0:
            raise ConfigError(f"risk_te_alignment must lie in [-1,1], got {self.risk_te_alignment}")
        if self.te_scale < 0:
            raise ConfigError(f"te_scale must be >= 0, got {self.te_scale}")
        if self.d < 4 and abs(self.risk_te_alignment) != 1.0:
            raise ConfigError(
                f"d={self.d} is too small: the risk-orthogonal effect direction uses features 3-4, "
                f"so d >= 4 is required unless risk_te_alignment is -1 or 1"
            )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "noise_sd": self.noise_sd,
            "treat_fraction": self.treat_fraction,
            "risk_te_alignment": self.risk_te_alignment,
            "te_scale": self.te_scale,
            "seed": self.seed,
            "baseline_offset": self.baseline_offset,
            "name": self.name,
        }


@dataclass(frozen=True)
class GroundTruth:
    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "row_index": np.arange(self.tau.size, dtype=np.int64),
            "mu0": self.mu0,
            "mu1": self.mu1,
            "tau": self.tau,
        })


def baseline_coefficients(d: int) -> np.ndarray:
    beta0 = np.zeros(d)
    beta0[:2] = (1.0, 0.5)
    return beta0


def effect_coefficients(d: int) -> np.ndarray:
    beta1 = np.zeros(d)
    if d >= 4:
        beta1[2:4] = (1.0, 0.5)
    return beta1


def generate(spec: SyntheticSpec) -> Tuple[Dataset, GroundTruth]:
    """
    Draw a synthetic trial.

    Args:
        spec: Generator parameters

    Returns:
        Tuple[Dataset, GroundTruth]: The observed table and its true potential-outcome means
    """
    spec.validate()
    rng = make_rng(spec.seed, SeedPurpose.SYNTHETIC)

    X = rng.standard_normal((spec.n, spec.d))
    W = (rng.random(spec.n) < spec.treat_fraction).astype(np.int8)
    eps = rng.standard_normal(spec.n) * spec.noise_sd

    beta0 = baseline_coefficients(spec.d)
    baseline = X @ beta0
    rho = spec.risk_te_alignment
    tau = rho * (-baseline) / np.linalg.norm(beta0)
    if abs(rho) < 1.0:
        beta1 = effect_coefficients(spec.d)
        tau = tau + math.sqrt(1.0 - rho * rho) * (X @ beta1) / np.linalg.norm(beta1)
    tau = spec.te_scale * tau

    mu0 = baseline + spec.baseline_offset
    mu1 = mu0 + tau
    # recomputed so that tau == mu1 - mu0 holds bit-for-bit
    tau = mu1 - mu0
    Y = mu0 + W * tau + eps

    dataset = Dataset(
        name=spec.name,
        X=X,
        W=W,
        Y=Y,
        known_propensity=spec.treat_fraction,
        outcome_direction=OutcomeDirection.HIGHER_IS_BETTER,
        feature_names=tuple(f"x{j}" for j in range(spec.d)),
    )
    logger.info(f"Generated synthetic trial: n={spec.n}, d={spec.d}, rho={rho}, "
                f"te_scale={spec.te_scale}, {dataset.n_treated} treated")
    return dataset, GroundTruth(mu0=mu0, mu1=mu1, tau=tau)
