import numpy as np
import pytest

from fedts.config import ExperimentConfig


def tiny_config(**overrides) -> ExperimentConfig:
    """A config small enough to run in well under a second."""
    raw = {
        "data": {"source": "synthetic",
                 "synthetic": {"n_features": 4, "n_classes": 3, "runs_per_class": 12,
                               "samples_per_run": 60, "fault_onset": 10}},
        "participants": 3,
        "rounds": 2,
        "model": {"hidden1": 6, "hidden2": 4},
        "train": {"batch_size": 64, "epochs": 1},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return ExperimentConfig.from_dict(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
