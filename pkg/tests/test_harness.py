import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fchc.components.checkpoint import load_checkpoint, save_checkpoint
from fchc.components.data_provider import MARKERS
from fchc.components.graph import CellGraph, build_patient_graphs, knn_graph
from fchc.components.loss import bce, mcloss
from fchc.components.metrics import per_class_recall, prediction_sets
from fchc.components.taxonomy import label_matrix, parse_taxonomy
from fchc.config.config_io import config_hash, load_config
from fchc.config.schema import ModelKind, NetworkConfig
from fchc.diffcore.tensor import parameter
from fchc.errors import SchemaMismatch, ShapeMismatch, TooFewPatients
from fchc.harness.ablation import ablate, variant_config, variant_name
from fchc.harness.analysis import export_embeddings, feature_importance, shuffle_column
from fchc.harness.benchmark import bench_constraint, constraint_overhead, fit_exponent, write_report
from fchc.harness.cross_validation import run_cv
from fchc.harness.records import RunEntry, RunRecord, to_jsonable
from fchc.harness.trainer import Adam, TrainHistory, evaluate, loss_and_grad, train, train_model
from fchc.utils.module_extractor import create_metric_collectors, create_model

from conftest import SMALL_COLLECTORS


@pytest.fixture
def small_graphs(small_cohort, deep):
    return build_patient_graphs(small_cohort, deep, k=7)


def separable_graph(taxonomy, n=200, seed=0):
    rng = np.random.default_rng(seed)
    leaves = taxonomy.leaf_indices
    labels = rng.choice(leaves, size=n)
    features = rng.normal(size=(n, 12)) + np.where(labels == leaves[0], 3.0, -3.0)[:, None]
    return CellGraph("separable", features, knn_graph(features, 7), labels)


def test_adam_first_step_moves_by_learning_rate():
    p = parameter([1.0, -2.0], name="w")
    p.grad = np.array([0.5, -4.0])
    opt = Adam({"w": p}, learning_rate=0.1)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)
    assert opt.t == 1

    # no gradient, no update
    p.grad = None
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)


def test_loss_and_grad_include_the_root_slot(deep):
    rng = np.random.default_rng(0)
    y = label_matrix(deep, rng.choice(deep.leaf_indices, size=4).tolist(), with_root=True)
    h = rng.uniform(0.05, 0.95, size=y.shape)
    value, grad = loss_and_grad(h, y, deep)
    assert value == pytest.approx(mcloss(h, y, deep.descendants_with_root).total)
    assert grad.shape == (4, 13)
    value, _ = loss_and_grad(h, y, deep, loss="bce")
    assert value == pytest.approx(bce(h, y).total)


def test_training_is_deterministic(small_graphs, small_cfg, deep):
    _, first = train_model(small_graphs, small_cfg, deep, seed=0)
    _, second = train_model(small_graphs, small_cfg, deep, seed=0)
    assert first.epochs == 3
    assert first.losses == second.losses
    _, other = train_model(small_graphs, small_cfg, deep, seed=1)
    assert other.losses != first.losses


def test_training_needs_graphs(small_cfg, deep):
    with pytest.raises(TooFewPatients):
        train_model([], small_cfg, deep)


def test_checkpoint_reload_is_bit_exact(tmp_path, small_graphs, small_cfg, deep):
    result = train(small_graphs, small_cfg, deep, checkpoint_path=tmp_path / "model.json")
    assert result.checkpoint.is_file()
    assert result.record.config_hash == config_hash(small_cfg)

    checkpoint = load_checkpoint(result.checkpoint)
    for name, tensor in result.model.parameters().items():
        assert np.array_equal(checkpoint.model.parameters()[name].data, tensor.data)
    g = small_graphs[0]
    np.testing.assert_array_equal(checkpoint.model.forward(g).values, result.model.forward(g).values)
    assert checkpoint.taxonomy == deep
    assert config_hash(checkpoint.config) == config_hash(small_cfg)


def test_checkpoint_format_is_checked(tmp_path, small_cfg, deep):
    path = save_checkpoint(tmp_path / "m.json", create_model(small_cfg.network, deep), small_cfg)
    envelope = json.loads(path.read_text())
    envelope["version"] = 99
    path.write_text(json.dumps(envelope))
    with pytest.raises(SchemaMismatch):
        load_checkpoint(path)
    path.write_text("{}")
    with pytest.raises(SchemaMismatch):
        load_checkpoint(path)


def test_separable_two_class_problem_is_learned():
    t = parse_taxonomy("1,2")
    cfg = load_config(None, overrides={
        "taxonomy": {"preset": None, "spec": "1,2"},
        "network": {"kind": "mlp", "hidden_dim": 8, "dropout": 0.0},
        "optimizer": {"learning_rate": 0.01, "epochs": 50},
    })
    g = separable_graph(t)
    model, history = train_model([g], cfg, t, seed=0)

    recall = per_class_recall(prediction_sets(model.forward(g), g.labels, t), t)
    assert recall.recall_pct.tolist() == [100.0, 100.0]
    assert history.non_increasing_share() >= 0.9
    assert history.final_loss < history.losses[0]


def test_train_history_share():
    assert TrainHistory([3.0, 2.0, 2.5, 1.0, 1.0]).non_increasing_share() == 0.75
    assert TrainHistory([1.0]).non_increasing_share() == 1.0


def test_evaluate_runs_the_collector_lifecycle(small_graphs, deep):
    model = create_model(NetworkConfig(hidden_dim=4), deep)
    collectors = create_metric_collectors(load_config(None, overrides={"metric_collectors": SMALL_COLLECTORS})
                                          .metric_collectors, deep)
    batches = evaluate(model, small_graphs[:2], collectors, threshold=0.5)
    assert len(batches) == 2
    results = {}
    for mc in collectors:
        assert not mc.collection_active
        results.update(mc.report_results())
    assert results["Violations"] == 0
    assert 0.0 <= results["hf"] <= 1.0
    assert set(results) >= {"hp", "hr", "hf", "Precision", "Recall", "F1 Score", "Recall NK cells (%)"}


def test_cross_validation_record(small_cohort, small_cfg, deep):
    record = run_cv(small_cohort, small_cfg, deep)
    assert len(record.entries) == 2
    assert sorted(e.fold for e in record.entries) == [0, 1]

    out_dir = Path(small_cfg.output_dir) / f"cv_{config_hash(small_cfg)}"
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert metrics["config_hash"] == config_hash(small_cfg)
    assert list(out_dir.glob("results_*.csv"))
    assert "timings" in json.loads((out_dir / "run_record.json").read_text())

    # aggregates can be recomputed from the per-run entries
    for name, stats in metrics["aggregate"].items():
        values = [r["metrics"][name] for r in metrics["runs"] if r["metrics"].get(name) is not None]
        assert stats["mean"] == pytest.approx(np.mean(values), abs=1e-9)
        assert stats["std"] == pytest.approx(np.std(values), abs=1e-9)
    assert "Average Latency (s)" not in metrics["aggregate"]


def test_cross_validation_is_reproducible(small_cohort, small_cfg, deep):
    out_dir = Path(small_cfg.output_dir) / f"cv_{config_hash(small_cfg)}"
    run_cv(small_cohort, small_cfg, deep)
    first = (out_dir / "metrics.json").read_text()
    run_cv(small_cohort, small_cfg, deep)
    assert (out_dir / "metrics.json").read_text() == first


def test_single_split_mode(small_cohort, small_cfg, deep):
    cfg = small_cfg.model_copy(update={"folds": small_cfg.folds.model_copy(update={"cv": False})})
    record = run_cv(small_cohort, cfg, deep)
    assert len(record.entries) == 1
    assert record.plan["evaluated_folds"] == [0]


def test_variant_configs(small_cfg):
    cfg = variant_config(small_cfg, "fc-shallow", ModelKind.MLP, constrained=False)
    assert (cfg.taxonomy.preset, cfg.network.kind, cfg.loss.value, cfg.use_constraint_at_inference) == \
           ("fc-shallow", ModelKind.MLP, "bce", False)
    assert cfg.network.hidden_dim == small_cfg.network.hidden_dim
    assert variant_name(ModelKind.MLP, True) == "FCHC-DNN"
    assert variant_name(ModelKind.GAT, False) == "GAT"


def test_ablation_tables(tmp_path, small_cfg):
    result = ablate(small_cfg, models=[ModelKind.MLP], output_dir=tmp_path)
    assert set(result.records) == {(t, v) for t in ("fc-deep", "fc-shallow") for v in ("FCHC-DNN", "DNN")}
    assert result.hierarchical.shape == (6, 4)
    assert result.flat.shape == (3, 4)
    assert result.class_recall.shape == (12 + 8, 2)
    assert set(result.gaps()) == {"fc-deep", "fc-shallow"}

    out_dir = tmp_path / f"ablation_{config_hash(small_cfg)}"
    for name in ("hierarchical_metrics.csv", "class_recall.csv", "flat_metrics.csv", "ablation_summary.json"):
        assert (out_dir / name).is_file()
    assert len(pd.read_csv(out_dir / "flat_metrics.csv", index_col=0)) == 3


def test_shuffle_column_keeps_the_graph(random_graph):
    g = random_graph()
    shuffled = shuffle_column(g, 3, np.random.default_rng(0))
    assert shuffled.neighborhoods is g.neighborhoods
    assert sorted(shuffled.features[:, 3]) == sorted(g.features[:, 3])
    np.testing.assert_array_equal(np.delete(shuffled.features, 3, axis=1), np.delete(g.features, 3, axis=1))


def test_export_embeddings(tmp_path, small_graphs, deep):
    model = create_model(NetworkConfig(hidden_dim=4, num_heads=2), deep)
    g = small_graphs[0]
    df = export_embeddings(model, g, tmp_path / "emb.csv")
    assert df.shape == (60, 8 + 1)
    assert list(df.columns[:2]) == ["emb_0", "emb_1"]
    assert set(df["label"]) <= {deep.display_name(i) for i in deep.leaf_indices}
    assert (tmp_path / "emb.csv").is_file()
    pd.testing.assert_frame_equal(df, export_embeddings(model, g))


def test_fit_exponent():
    assert fit_exponent([1, 10, 100], [2.0, 200.0, 20000.0]) == pytest.approx(2.0)
    assert np.isnan(fit_exponent([1], [1.0]))


def test_bench_table_layout(tmp_path):
    report = bench_constraint((5, 20), samples=50, repeats=1)
    assert len(report.table) == 4
    assert list(report.table.columns) == ["C", "shape", "pairs", "sparse_s", "dense_s"]
    assert json.loads(json.dumps(to_jsonable(report.to_json())))["rows"][0]["C"] == 5

    path = write_report(report, tmp_path / "bench")
    assert json.loads(path.read_text())["rows"][0]["C"] == 5
    assert len(pd.read_csv(tmp_path / "bench" / "constraint_timings.csv")) == 4


def test_run_record_aggregates():
    entries = tuple(RunEntry(seed=s, fold=f, metrics={"hf": v, "note": "x", "missing": None})
                    for f, s, v in [(0, 0, 1.0), (0, 1, 3.0), (1, 0, 2.0), (1, 1, 6.0)])
    stats = RunRecord("abc", entries).aggregate()
    assert set(stats) == {"hf"}
    assert stats["hf"]["mean"] == 3.0
    assert stats["hf"]["std"] == pytest.approx(np.sqrt(3.5))
    assert stats["hf"]["std_over_seeds"] == pytest.approx(1.5)
    assert stats["hf"]["std_over_folds"] == pytest.approx(1.0)
    assert stats["hf"]["n"] == 4


def test_to_jsonable():
    out = to_jsonable({"a": np.float64(np.nan), "b": np.int64(3), "c": np.array([1.5, np.inf]), 4: np.bool_(True)})
    assert out == {"a": None, "b": 3, "c": [1.5, None], "4": True}


def test_importance_report(tmp_path, small_graphs, deep):
    model = create_model(NetworkConfig(kind="mlp", hidden_dim=4), deep)
    report = feature_importance(model, small_graphs[:1], shuffles=2)
    assert list(report.importance) == list(MARKERS)
    values = report.vector()
    assert ((values >= 0.0) & (values <= 1.0)).all()
    assert values.max() in (0.0, 1.0)
    assert report == feature_importance(model, small_graphs[:1], shuffles=2)
    assert json.loads(report.dump(tmp_path / "imp.json").read_text())["ranking"] == report.ranking


def test_importance_needs_one_name_per_marker(small_graphs, deep):
    model = create_model(NetworkConfig(kind="mlp", hidden_dim=4), deep)
    with pytest.raises(ShapeMismatch):
        feature_importance(model, small_graphs[:1], markers=MARKERS[:5])


def test_duplicated_markers_get_equal_importance(deep):
    g = separable_graph(deep, seed=2)
    features = g.features.copy()
    features[:, 1] = features[:, 0]
    g = g.with_features(features)
    model = create_model(NetworkConfig(kind="mlp", hidden_dim=8), deep, seed=2)
    values = {k: t.data.copy() for k, t in model.parameters().items()}
    values["layer0.W"][1] = values["layer0.W"][0]
    values["layer0.W"][2:] = 0.0
    model.load_parameters(values)

    report = feature_importance(model, [g], shuffles=3)
    drops = list(report.raw_drop.values())
    assert drops[0] == pytest.approx(drops[1])
    assert drops[2:] == [0.0] * 10
    importance = report.vector()
    assert importance[0] == pytest.approx(importance[1])
    assert not importance[2:].any()


@pytest.mark.filterwarnings("error")
def test_null_model_importance_stays_zero(small_graphs, deep):
    model = create_model(NetworkConfig(hidden_dim=4), deep)
    model.load_parameters({k: np.zeros_like(t.data) for k, t in model.parameters().items()})
    report = feature_importance(model, small_graphs[:1], shuffles=2)
    assert report.vector().tolist() == [0.0] * 12
    assert list(report.raw_drop.values()) == [0.0] * 12
    assert report.ranking == list(MARKERS)


@pytest.mark.slow
def test_constraint_is_a_small_share_of_a_forward_pass():
    assert constraint_overhead(repeats=5) < 0.05


@pytest.mark.slow
def test_sparse_constraint_scales_linearly():
    report = bench_constraint((10, 100, 1000), samples=1000, repeats=5)
    assert 0.7 <= report.sparse_exponent <= 1.3
    assert report.dense_exponent > report.sparse_exponent
