from pathlib import Path

import pytest

from fchc.config.config_io import config_hash, deep_merge, load_config
from fchc.config.schema import LossKind, ModelKind
from fchc.errors import ConfigError

SHIPPED = sorted((Path(__file__).parent.parent / "fchc" / "config" / "yaml").glob("*.yaml"))


def test_defaults():
    cfg = load_config(None)
    assert cfg.taxonomy.preset == "fc-deep"
    assert cfg.network.kind == ModelKind.GAT
    assert (cfg.network.nb_layers, cfg.network.hidden_dim, cfg.network.num_heads) == (2, 32, 2)
    assert cfg.network.attn_dropout == [0.4, 0.2]
    assert cfg.loss == LossKind.MCLOSS
    assert cfg.use_constraint_at_inference
    assert (cfg.graph.k, cfg.folds.outer, cfg.folds.inner) == (7, 7, 4)
    assert cfg.seeds == [0, 1, 2, 3]
    assert cfg.optimizer.learning_rate == 1e-3


@pytest.mark.parametrize("preset, kind", [("fchc-gcn", ModelKind.GCN), ("fchc-sage", ModelKind.SAGE),
                                          ("fchc-dnn", ModelKind.MLP), ("fchc-gat", ModelKind.GAT)])
def test_model_presets(preset, kind):
    assert load_config(None, preset=preset).network.kind == kind


@pytest.mark.parametrize("alias, preset", [("paper-gat", "fchc-gat"), ("paper-gcn", "fchc-gcn"),
                                           ("paper-sage", "fchc-sage"), ("paper-dnn", "fchc-dnn")])
def test_preset_aliases(alias, preset):
    assert load_config(None, preset=alias) == load_config(None, preset=preset)


def test_flat_preset():
    cfg = load_config(None, preset="flat-gat")
    assert cfg.loss == LossKind.BCE
    assert not cfg.use_constraint_at_inference


def test_file_then_overrides(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("network:\n  hidden_dim: 16\noptimizer:\n  epochs: 10\nseeds: [5]\n")
    cfg = load_config(str(path), overrides={"optimizer": {"epochs": 20}})
    assert cfg.network.hidden_dim == 16
    assert cfg.network.num_heads == 2
    assert cfg.optimizer.epochs == 20
    assert cfg.optimizer.learning_rate == 1e-3
    assert cfg.seeds == [5]


def test_environment_variables_are_expanded(tmp_path, monkeypatch):
    monkeypatch.setenv("FCHC_TEST_ROOT", "/data/runs")
    path = tmp_path / "exp.json"
    path.write_text('{"output_dir": "${FCHC_TEST_ROOT}/gat"}')
    assert load_config(str(path)).output_dir == "/data/runs/gat"


@pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    load_config(str(path))


@pytest.mark.parametrize("text", [
    "network:\n  hidden_units: 8\n",
    "loss_reduction: max\n",
    "loss: focal\n",
    "seeds: []\n",
    "folds:\n  inner: 1\n",
    "threshold: 1.5\n",
    "taxonomy:\n  preset: null\n",
    "started: 2024-01-01\n",
    "- a list\n",
    "network: [unclosed\n",
])
def test_invalid_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_missing_or_unsupported_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    path = tmp_path / "exp.toml"
    path.write_text("")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError):
        load_config(None, preset="fchc-transformer")


def test_deep_merge_replaces_lists():
    merged = deep_merge({"a": {"b": 1, "c": [1, 2]}, "d": 0}, {"a": {"c": [3]}})
    assert merged == {"a": {"b": 1, "c": [3]}, "d": 0}


def test_config_hash():
    base = load_config(None)
    digest = config_hash(base)
    assert len(digest) == 12
    int(digest, 16)
    assert config_hash(load_config(None)) == digest
    assert config_hash(load_config(None, overrides={"seeds": [9]})) != digest
