"""
Policy Targeting
----------------
Risk-based versus treatment-effect-based targeting of a treatment under a budget,
evaluated with cross-fitted doubly-robust pseudo-outcomes.
"""

from policy_targeting.errors import PolicyTargetingError
from policy_targeting.tabular_data import Dataset, load_csv, split_dataset, write_csv

__version__ = "1.0.0"

__all__ = ["Dataset", "PolicyTargetingError", "load_csv", "split_dataset", "write_csv"]
