import numpy as np
import pytest

from fchc.components.graph import CellGraph, knn_graph
from fchc.components.synthetic import synth_cohort
from fchc.components.taxonomy import get_builtin_taxonomy, parse_taxonomy
from fchc.config.config_io import load_config
from fchc.config.schema import SynthConfig
from fchc.diffcore.tensor import set_debug

SMALL_COLLECTORS = [
    {"module_name": "hierarchical_metric_collector"},
    {"module_name": "class_recall_metric_collector"},
    {"module_name": "flat_metric_collector"},
    {"module_name": "violation_metric_collector"},
]


@pytest.fixture
def tiny():
    """1 -> 1.1 plus a second top-level class 2."""
    return parse_taxonomy("1,1_1,2")


@pytest.fixture
def chain():
    return parse_taxonomy("1,1_1")


@pytest.fixture
def deep():
    return get_builtin_taxonomy("fc-deep")


@pytest.fixture
def shallow():
    return get_builtin_taxonomy("fc-shallow")


@pytest.fixture
def by_name():
    """Build a 1 x C row from {class key: value}; other classes get `default`."""

    def _row(t, mapping, default=0.0):
        row = np.full(len(t), float(default))
        for key, value in mapping.items():
            row[t.resolve(key).index] = value
        return row[None, :]

    return _row


@pytest.fixture
def random_graph():
    def _graph(n_nodes=30, n_features=12, k=5, seed=0, labels=None):
        rng = np.random.default_rng(seed)
        features = rng.normal(size=(n_nodes, n_features))
        return CellGraph(f"g{seed}", features, knn_graph(features, k), labels)

    return _graph


@pytest.fixture
def small_cohort(deep):
    return synth_cohort(SynthConfig(patients=4, cells_per_patient=60, seed=0), deep)


@pytest.fixture
def small_cfg(tmp_path):
    return load_config(None, overrides={
        "network": {"hidden_dim": 4, "num_heads": 2, "out_heads": 1},
        "optimizer": {"learning_rate": 0.01, "epochs": 3},
        "seeds": [0],
        "folds": {"outer": 2, "inner": 2, "tune": False},
        "data": {"synth": {"patients": 4, "cells_per_patient": 60}},
        "metric_collectors": SMALL_COLLECTORS,
        "output_dir": str(tmp_path / "results"),
    })


@pytest.fixture(autouse=True)
def _reset_debug():
    yield
    set_debug(False)
