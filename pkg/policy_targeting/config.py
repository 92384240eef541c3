"""
Run configuration.

A run is described by one JSON document with four sections::

    {
      "data":       {"source": "synthetic", "synthetic": {...}}
                    or {"source": "csv", "csv": {"path": ..., "feature_columns": [...], ...}},
      "learners":   {"outcome": {...}, "propensity": {...}, "risk": {...}, "cate": {...}},
      "experiment": {"k_values": [...], "budget": 0.2, ...},
      "output":     {"out_dir": "./results", "threads": 1}
    }

Every section and key is optional; missing values take the defaults below.
Unknown keys are rejected. Command-line flags override the file.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple, Union

from policy_targeting.errors import ConfigError
from policy_targeting.learners import LearnerSpec
from policy_targeting.synthetic_rct import GroundTruth, SyntheticSpec, generate
from policy_targeting.tabular_data import CsvSchema, Dataset, OutcomeDirection, load_csv
from policy_targeting.targeting_welfare import ExperimentConfig, PipelineLearners, WelfareSpec

logger = logging.getLogger("PolicyTargeting.config")

RISK_TRAINING = "train_split_controls"
EFFECTIVE_CONFIG_NAME = "effective_config.json"


@dataclass(frozen=True)
class CsvSource:
    path: str
    schema: CsvSchema
    outcome_direction: OutcomeDirection = OutcomeDirection.HIGHER_IS_BETTER
    known_propensity: Optional[float] = None
    name: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {"path": self.path}
        data.update(self.schema.to_dict())
        data.update({
            "outcome_direction": OutcomeDirection(self.outcome_direction).value,
            "known_propensity": self.known_propensity,
            "name": self.name,
        })
        return data


@dataclass(frozen=True)
class DataSourceConfig:
    """Either a CSV file or a synthetic trial."""

    source: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    csv: Optional[CsvSource] = None

    def validate(self) -> None:
        if self.source == "synthetic":
            self.synthetic.validate()
        elif self.source == "csv":
            if self.csv is None:
                raise ConfigError("data.source is 'csv' but no data.csv section was given")
        else:
            raise ConfigError(f"data.source must be 'csv' or 'synthetic', got '{self.source}'")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"source": self.source}
        if self.source == "synthetic":
            data["synthetic"] = self.synthetic.to_dict()
        else:
            data["csv"] = self.csv.to_dict()
        return data


@dataclass(frozen=True)
class RunConfig:
    data: DataSourceConfig = field(default_factory=DataSourceConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    out_dir: str = "./results"
    threads: int = 1

    def validate(self) -> None:
        self.data.validate()
        self.experiment.validate()
        if self.threads < 1:
            raise ConfigError(f"threads must be positive, got {self.threads}")

    def to_dict(self) -> Dict[str, Any]:
        experiment = self.experiment.to_dict()
        experiment["risk_training"] = RISK_TRAINING
        return {
            "data": self.data.to_dict(),
            "learners": self.experiment.learners.to_dict(),
            "experiment": experiment,
            "output": {"out_dir": self.out_dir, "threads": self.threads},
        }


def _check_keys(section: str, data: Any, allowed) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be an object, got {type(data).__name__}")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{section}': {', '.join(sorted(unknown))}")
    return data


def _parse_csv_source(data: Dict[str, Any]) -> CsvSource:
    allowed = {"path", "feature_columns", "treatment_column", "outcome_column",
               "categorical_columns", "delimiter", "outcome_direction", "known_propensity", "name"}
    _check_keys("data.csv", data, allowed)
    for key in ("path", "feature_columns", "treatment_column", "outcome_column"):
        if key not in data:
            raise ConfigError(f"data.csv.{key} is required")
    categorical = data.get("categorical_columns")
    schema = CsvSchema(
        feature_columns=tuple(data["feature_columns"]),
        treatment_column=data["treatment_column"],
        outcome_column=data["outcome_column"],
        categorical_columns=None if categorical is None else tuple(categorical),
        delimiter=data.get("delimiter", ","),
    )
    try:
        direction = OutcomeDirection(data.get("outcome_direction",
                                              OutcomeDirection.HIGHER_IS_BETTER.value))
    except ValueError:
        raise ConfigError(f"Unknown outcome_direction '{data.get('outcome_direction')}'")
    return CsvSource(path=str(data["path"]), schema=schema, outcome_direction=direction,
                     known_propensity=data.get("known_propensity"), name=data.get("name"))


def _parse_data(data: Dict[str, Any]) -> DataSourceConfig:
    _check_keys("data", data, {"source", "synthetic", "csv"})
    synthetic = data.get("synthetic", {})
    _check_keys("data.synthetic", synthetic, {f.name for f in fields(SyntheticSpec)})
    csv = _parse_csv_source(data["csv"]) if data.get("csv") is not None else None
    source = data.get("source", "csv" if csv is not None else "synthetic")
    return DataSourceConfig(source=source, synthetic=SyntheticSpec(**synthetic), csv=csv)


def _parse_learners(data: Dict[str, Any]) -> PipelineLearners:
    _check_keys("learners", data, {"outcome", "propensity", "risk", "cate"})
    defaults = PipelineLearners()
    specs = {}
    for name in ("outcome", "propensity", "risk", "cate"):
        if name in data:
            try:
                specs[name] = LearnerSpec.from_dict(data[name])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"learners.{name}: {e}")
        else:
            specs[name] = getattr(defaults, name)
    return PipelineLearners(**specs)


def _parse_experiment(data: Dict[str, Any], learners: PipelineLearners) -> ExperimentConfig:
    allowed = {f.name for f in fields(ExperimentConfig)} - {"learners"} | {"risk_training"}
    _check_keys("experiment", data, allowed)
    values = dict(data)
    risk_training = values.pop("risk_training", RISK_TRAINING)
    if risk_training != RISK_TRAINING:
        raise ConfigError(f"experiment.risk_training only supports '{RISK_TRAINING}'")
    if "welfare" in values:
        values["welfare"] = tuple(WelfareSpec.from_dict(w) for w in values["welfare"])
    return ExperimentConfig(learners=learners, **values)


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON document."""
    _check_keys("config", data, {"data", "learners", "experiment", "output"})
    output = _check_keys("output", data.get("output", {}), {"out_dir", "threads"})
    try:
        learners = _parse_learners(data.get("learners", {}))
        config = RunConfig(
            data=_parse_data(data.get("data", {})),
            experiment=_parse_experiment(data.get("experiment", {}), learners),
            out_dir=str(output.get("out_dir", RunConfig.out_dir)),
            threads=int(output.get("threads", RunConfig.threads)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration value: {e}")
    config.validate()
    return config


def load_config(path: Union[str, os.PathLike]) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")
    logger.info(f"Loaded configuration from {path}")
    return config_from_dict(data)


def apply_overrides(config: RunConfig, seed: Optional[int] = None, out_dir: Optional[str] = None,
                    threads: Optional[int] = None) -> RunConfig:
    """
    Command-line overrides; they win over the config file.

    ``seed`` replaces both the experiment seed and the synthetic generator seed.
    """
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        config = replace(
            config,
            experiment=replace(config.experiment, seed=seed),
            data=replace(config.data, synthetic=replace(config.data.synthetic, seed=seed)),
        )
    if out_dir is not None:
        config = replace(config, out_dir=out_dir)
    if threads is not None:
        config = replace(config, threads=threads)
    config.validate()
    return config


def write_effective_config(config: RunConfig, out_dir: Union[str, os.PathLike]) -> str:
    """Write the fully resolved config; loading it back reproduces the run."""
    path = os.path.join(os.fspath(out_dir), EFFECTIVE_CONFIG_NAME)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(config.to_dict(), f, indent=2)
        f.write("\n")
    return path


def load_dataset(source: DataSourceConfig) -> Tuple[Dataset, Optional[GroundTruth]]:
    """Materialise the configured data; ground truth is only available for synthetic data."""
    source.validate()
    if source.source == "synthetic":
        return generate(source.synthetic)
    csv = source.csv
    dataset = load_csv(csv.path, csv.schema, outcome_direction=csv.outcome_direction,
                       known_propensity=csv.known_propensity, name=csv.name)
    return dataset, None

