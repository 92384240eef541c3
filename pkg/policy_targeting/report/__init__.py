"""
Report emitters: SVG charts and the CSV / JSON / Markdown run artifacts.
"""

from policy_targeting.report.charts import plot_curve, plot_sweep
from policy_targeting.report.writers import RunReporter

__all__ = ["plot_curve", "plot_sweep", "RunReporter"]
