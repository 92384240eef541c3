#!/usr/bin/env python3
"""
Policy Targeting - Command Line
-------------------------------
Synthetic trial generation, treatment-effect-vs-risk curves, confounding sweeps
and alpha-threshold tables, each written as CSV / JSON / SVG plus a run report.
"""

import argparse
import logging
import os
import re
import sys
import time
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from concurrent_log_handler import ConcurrentRotatingFileHandler

from policy_targeting.cate_curve import curve_significance_summary, kernel_curve
from policy_targeting.config import (
    RunConfig,
    apply_overrides,
    load_config,
    load_dataset,
    write_effective_config,
)
from policy_targeting.errors import ConfigError, InsufficientDataError, PolicyTargetingError
from policy_targeting.report import RunReporter, plot_curve, plot_sweep
from policy_targeting.report.writers import markdown_table
from policy_targeting.risk_model import RiskScores
from policy_targeting.tabular_data import Dataset
from policy_targeting.targeting_welfare import TargetingExperiment, build_context

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE_NAME = "policy_targeting.log"
LOG_MAX_BYTES = 5 * 1024 * 1024

logger = logging.getLogger("PolicyTargeting")


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--out", "-o", help="Output directory (overrides output.out_dir)")
    common.add_argument("--seed", type=int, help="Master seed (overrides the experiment and synthetic seeds)")
    common.add_argument("--threads", type=int, help="Worker threads (results do not depend on it)")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")
    common.add_argument("--quiet", "-q", action="store_true", help="No log output on the console")

    parser = argparse.ArgumentParser(
        prog="policy-targeting",
        description="Compare risk-based and treatment-effect-based targeting on trial data.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="Write a synthetic trial and its ground truth")
    sub.add_parser("curve", parents=[common], help="Treatment effect as a function of baseline risk")
    sub.add_parser("sweep", parents=[common], help="Policy values across confounding levels")
    sub.add_parser("alpha", parents=[common], help="Welfare-weight thresholds per confounding level")
    return parser.parse_args(argv)


def setup_logging(debug: bool = False, quiet: bool = False) -> logging.Logger:
    """Configure the package logger with a console handler."""
    log_level = logging.DEBUG if debug else logging.INFO
    close_logging()
    logger.setLevel(log_level)
    if quiet:
        logger.addHandler(logging.NullHandler())
    else:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    return logger


def attach_log_file(out_dir: str) -> str:
    """Add a rotating log file inside the output directory."""
    path = os.path.join(out_dir, LOG_FILE_NAME)
    handler = ConcurrentRotatingFileHandler(path, "a", maxBytes=LOG_MAX_BYTES, backupCount=3,
                                            encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    return path


def close_logging() -> None:
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def _progress(fraction: float, message: str) -> None:
    logger.info(f"[{fraction * 100:5.1f}%] {message}")


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _start(config: RunConfig, command: str) -> RunReporter:
    reporter = RunReporter(config.out_dir, command)
    attach_log_file(reporter.out_dir)
    reporter.add(write_effective_config(config, reporter.out_dir))
    return reporter


def cmd_synth(config: RunConfig) -> RunReporter:
    """Write the synthetic trial and its potential-outcome ground truth."""
    if config.data.source != "synthetic":
        raise ConfigError("synth needs data.source = 'synthetic'")
    dataset, truth = load_dataset(config.data)
    reporter = _start(config, "synth")
    reporter.write_dataset(dataset, "dataset.csv")
    reporter.write_frame(truth.to_frame(), "ground_truth.csv")

    spec = config.data.synthetic
    reporter.write_report(
        f"Synthetic trial: {dataset.name}",
        [("Generator", markdown_table(_spec_frame(spec.to_dict())))],
        overview={
            "Rows": dataset.n,
            "Treated": dataset.n_treated,
            "Features": dataset.d,
            "True average effect": f"{float(np.mean(truth.tau)):.4f}",
        },
    )
    return reporter


def _spec_frame(values: Dict[str, object]) -> pd.DataFrame:
    return pd.DataFrame({"parameter": list(values), "value": [str(v) for v in values.values()]})


def _preflight(config: RunConfig) -> Dataset:
    dataset, _ = load_dataset(config.data)
    if dataset.n < 2:
        raise InsufficientDataError(f"'{dataset.name}' has {dataset.n} row(s); at least 2 are needed")
    return dataset


def cmd_curve(config: RunConfig) -> RunReporter:
    """Smoothed treatment effect against baseline risk on the evaluation rows."""
    dataset = _preflight(config)
    reporter = _start(config, "curve")
    experiment = config.experiment
    context = build_context(dataset, experiment, config.threads)
    curve = kernel_curve(context.b, context.benefit, window=experiment.curve_window,
                         max_workers=config.threads)
    summary = curve_significance_summary(curve)

    reporter.write_frame(curve.to_frame(), "curve.csv")
    reporter.add(plot_curve(curve, reporter.path("curve.svg"),
                            title=f"{dataset.name}: treatment effect vs baseline risk"))
    risk = RiskScores(b=context.b, b_prime=context.b_prime, effect_sign=context.effect_sign,
                      row_index=context.row_index)
    reporter.write_frame(risk.to_frame(), "risk_scores.csv")
    pseudo = pd.concat([half.eval_pseudo.to_frame() for half in context.halves], ignore_index=True)
    reporter.write_frame(pseudo, "pseudo_outcomes.csv")

    facts = summary.to_dict()
    facts.update({
        "dataset": dataset.name,
        "eval_rows": context.m,
        "ate_estimate": float(np.mean(pseudo["diff"])),
        "window": experiment.curve_window,
    })
    reporter.write_json(facts, "curve_summary.json")
    reporter.write_report(
        f"Treatment effect vs baseline risk: {dataset.name}",
        [("Curve", "![curve](./curve.svg)\n"),
         ("Summary", markdown_table(_spec_frame(facts)))],
        overview={"Evaluation rows": context.m,
                  "Significantly positive share": f"{summary.significant_fraction:.3f}",
                  "Spearman trend": f"{summary.spearman_trend:.3f}"},
    )
    return reporter


def cmd_sweep(config: RunConfig) -> RunReporter:
    """Policy values for every k, policy and welfare spec with bootstrap intervals."""
    dataset = _preflight(config)
    reporter = _start(config, "sweep")
    result = TargetingExperiment(dataset, config.experiment, config.threads).run_sweep(_progress)

    reporter.write_json(result.to_dict(), "sweep.json")
    reporter.write_frame(result.to_frame(), "sweep.csv")
    sections = []
    for welfare in result.welfare_labels:
        name = f"sweep_{_slug(welfare)}.svg"
        reporter.add(plot_sweep(result, welfare, reporter.path(name)))
        frame = result.to_frame()
        frame = frame[frame["welfare"] == welfare].drop(columns=["welfare"])
        sections.append((f"Welfare: {welfare}", f"![{welfare}](./{name})\n\n{markdown_table(frame)}"))
    reporter.write_report(
        f"Confounding sweep: {dataset.name}",
        sections,
        overview={"Evaluation rows": result.eval_rows, "Budget": f"{result.budget:g}",
                  "Treatment-effect scores": result.te_mode.value,
                  "Bootstrap replicates": result.bootstrap_reps},
    )
    return reporter


def cmd_alpha(config: RunConfig) -> RunReporter:
    """Smallest welfare weight exponent at which risk targeting catches up, per k."""
    dataset = _preflight(config)
    reporter = _start(config, "alpha")
    table = TargetingExperiment(dataset, config.experiment, config.threads).run_alpha_table(_progress)

    frame = table.to_frame()
    reporter.write_frame(frame, "alpha_table.csv")
    reporter.write_json(table.to_dict(), "alpha_table.json")
    reporter.write_report(
        f"Alpha thresholds: {dataset.name}",
        [("Thresholds", markdown_table(frame))],
        overview={"Budget": f"{table.budget:g}", "Treatment-effect scores": table.te_mode.value},
    )
    return reporter


COMMANDS: Dict[str, Callable[[RunConfig], RunReporter]] = {
    "synth": cmd_synth,
    "curve": cmd_curve,
    "sweep": cmd_sweep,
    "alpha": cmd_alpha,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to run a command."""
    args = parse_arguments(argv)
    setup_logging(args.debug, args.quiet)
    start_time = time.time()

    print("\n" + "=" * 80)
    print(f" POLICY TARGETING: {args.command.upper()} ".center(80, "="))
    print("=" * 80 + "\n")

    reporter = None
    try:
        config = load_config(args.config) if args.config else RunConfig()
        config = apply_overrides(config, seed=args.seed, out_dir=args.out, threads=args.threads)
        print(f"Output directory: {os.path.abspath(config.out_dir)}")
        print(f"Seed: {config.experiment.seed}   Threads: {config.threads}\n")
        reporter = COMMANDS[args.command](config)
    except (PolicyTargetingError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"ERROR: {e}")
        return 1
    finally:
        close_logging()

    elapsed_time = time.time() - start_time
    print(f"Completed in {elapsed_time:.2f} seconds\n")
    print("Files written:")
    for path in reporter.written:
        print(f"  - {path}")
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
