"""
SVG charts for the treatment-effect curve and the confounding sweep.
"""

import logging
import os
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from policy_targeting.cate_curve import CurveEstimate  # noqa: E402
from policy_targeting.targeting_welfare import ExperimentResult, PolicyKind  # noqa: E402

logger = logging.getLogger("PolicyTargeting.report")

POLICY_COLORS = {
    PolicyKind.RISK: "#fb923c",  # Orange
    PolicyKind.TREATMENT_EFFECT: "#3b82f6",  # Blue
    PolicyKind.RANDOM: "#10b981",  # Green
}
CURVE_COLOR = "#a855f7"

# byte-stable SVG output
SVG_PARAMS = {
    "svg.hashsalt": "policy-targeting",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: Union[str, os.PathLike]) -> str:
    path = os.fspath(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug(f"Wrote chart {path}")
    return path


def plot_curve(curve: CurveEstimate, path: Union[str, os.PathLike], title: str = "") -> str:
    """Smoothed treatment effect against baseline risk with its shaded 95% band."""
    with plt.rc_context(SVG_PARAMS):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.fill_between(curve.b, curve.ci_lo, curve.ci_hi, color=CURVE_COLOR, alpha=0.25,
                        linewidth=0, label="95% band")
        ax.plot(curve.b, curve.tau_hat, color=CURVE_COLOR, linewidth=1.5, label="estimated effect")
        ax.axhline(0.0, color="#525252", linewidth=0.8, linestyle="--")
        ax.set_xlabel("baseline risk b")
        ax.set_ylabel("treatment effect")
        ax.set_title(title or "Treatment effect vs baseline risk")
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_sweep(result: ExperimentResult, welfare: str, path: Union[str, os.PathLike]) -> str:
    """
    Policy value against the share of data removed, one series per policy.

    Args:
        result: Sweep output
        welfare: Welfare label to plot
        path: Target .svg file

    Returns:
        str: The written path
    """
    with plt.rc_context(SVG_PARAMS):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for policy in result.policies:
            cells = result.series(welfare, policy)
            if not cells:
                continue
            x = [100.0 * c.k for c in cells]
            color = POLICY_COLORS.get(policy, "#525252")
            ax.fill_between(x, [c.ci_lo for c in cells], [c.ci_hi for c in cells], color=color,
                            alpha=0.2, linewidth=0)
            ax.plot(x, [c.value for c in cells], color=color, marker="o", markersize=3,
                    linewidth=1.5, label=policy.value)
        ax.set_xlabel("data removed k (%)")
        ax.set_ylabel("policy value")
        ax.set_title(f"{result.dataset}: {welfare}, budget {100 * result.budget:g}%")
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)
