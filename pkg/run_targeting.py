#!/usr/bin/env python3
"""
Policy Targeting
----------------
Run the command line from a source checkout:

    python run_targeting.py sweep --config configs/example_sweep.json --out ./results
"""

import sys

from policy_targeting.main import main

if __name__ == "__main__":
    sys.exit(main())
