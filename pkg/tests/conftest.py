import json

import numpy as np
import pytest

from policy_targeting.learners import LearnerKind, LearnerSpec
from policy_targeting.synthetic_rct import SyntheticSpec, generate
from policy_targeting.tabular_data import Dataset
from policy_targeting.targeting_welfare import ExperimentConfig, PipelineLearners


@pytest.fixture
def ridge():
    return LearnerSpec(kind=LearnerKind.RIDGE_LINEAR)


@pytest.fixture
def ols():
    return LearnerSpec(kind=LearnerKind.RIDGE_LINEAR, ridge_lambda=0.0)


@pytest.fixture
def logistic():
    return LearnerSpec(kind=LearnerKind.LOGISTIC)


@pytest.fixture
def fast_learners(ridge, logistic):
    return PipelineLearners(outcome=ridge, propensity=logistic, risk=ridge, cate=ridge)


@pytest.fixture
def make_trial():
    def _make(n=600, seed=0, **kwargs):
        return generate(SyntheticSpec(n=n, seed=seed, **kwargs))

    return _make


@pytest.fixture
def trial(make_trial):
    return make_trial()


@pytest.fixture
def fast_config(fast_learners):
    return ExperimentConfig(k_values=(0.0, 0.2), bootstrap_reps=50, learners=fast_learners)


@pytest.fixture
def tiny_dataset():
    """Ten rows, five per arm."""
    rng = np.random.default_rng(3)
    return Dataset(
        name="tiny",
        X=rng.standard_normal((10, 2)),
        W=np.array([0, 1] * 5),
        Y=rng.standard_normal(10),
    )


@pytest.fixture
def write_config(tmp_path):
    """Write a JSON run configuration and return its path."""

    def _write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def small_run_config():
    return {
        "data": {"source": "synthetic", "synthetic": {"n": 400, "seed": 3}},
        "learners": {
            "outcome": {"kind": "ridge_linear"},
            "propensity": {"kind": "logistic"},
            "risk": {"kind": "ridge_linear"},
            "cate": {"kind": "ridge_linear"},
        },
        "experiment": {
            "k_values": [0.0, 0.1, 0.2],
            "welfare": [{"kind": "utilitarian"}, {"kind": "weighted_utilitarian", "alpha": 1.0}],
            "bootstrap_reps": 60,
            "seed": 3,
            "curve_window": 50,
        },
    }
