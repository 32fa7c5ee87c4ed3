import numpy as np
import pytest

from fchc.components.constraint import find_violations
from fchc.components.graph import CellGraph, Neighborhoods, knn_graph
from fchc.config.schema import ModelKind, NetworkConfig
from fchc.diffcore import Tape, Tensor, grad_check, ops
from fchc.errors import DimensionMismatch, IsolatedNode, ShapeMismatch
from fchc.harness.trainer import loss_and_grad
from fchc.models.layers import (
    GatParams,
    attention_coefficients,
    gat_layer,
    gcn_coefficients,
    gcn_layer,
    mlp_layer,
    sage_layer,
)
from fchc.utils.module_extractor import available_models, create_model

PATH_LISTS = [[1, 0], [0, 2, 1], [1, 2]]


def leaky(v, slope=0.2):
    return v if v > 0 else slope * v


def test_equal_features_give_uniform_attention(random_graph):
    g = random_graph(n_nodes=20, n_features=4, k=4)
    z = Tensor(np.ones((20, 3)))
    a = Tensor(np.random.default_rng(0).normal(size=6))
    gamma = attention_coefficients(z, a, g.neighborhoods, 0.2).data
    np.testing.assert_allclose(gamma, 1.0 / g.neighborhoods.degree[g.neighborhoods.src], atol=1e-15)


def test_identity_configuration_returns_input():
    x = Tensor([[0.3, -1.2, 2.0]])
    p = GatParams([Tensor(np.eye(3))], [Tensor(np.zeros(6))])
    out = gat_layer(x, Neighborhoods.from_lists([[0]]), p)
    np.testing.assert_array_equal(out.data, x.data)


def test_path_graph_matches_hand_computation():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a = np.array([0.5, -1.0, 1.0, 0.25])
    p = GatParams([Tensor(np.eye(2))], [Tensor(a)])
    out = gat_layer(Tensor(x), Neighborhoods.from_lists(PATH_LISTS), p).data

    for i, neighbors in enumerate(PATH_LISTS):
        e = [leaky(a[0] * x[i, 0] + a[1] * x[i, 1] + a[2] * x[j, 0] + a[3] * x[j, 1]) for j in neighbors]
        w = np.exp(e) / np.exp(e).sum()
        expected = sum(wj * x[j] for wj, j in zip(w, neighbors))
        np.testing.assert_allclose(out[i], expected, atol=1e-12)


def test_head_modes_set_the_output_width(random_graph):
    g = random_graph()
    p = GatParams.init(np.random.default_rng(1), 12, 4, num_heads=3)
    x = Tensor(g.features)
    assert gat_layer(x, g.neighborhoods, p, mode="concat").shape == (30, 12)
    assert gat_layer(x, g.neighborhoods, p, mode="average").shape == (30, 4)
    with pytest.raises(ValueError):
        gat_layer(x, g.neighborhoods, p, mode="sum")


def test_attention_rows_sum_to_one(random_graph):
    g = random_graph(n_nodes=50, k=7, seed=3)
    rng = np.random.default_rng(3)
    z = Tensor(rng.normal(scale=5.0, size=(50, 6)))
    gamma = attention_coefficients(z, Tensor(rng.normal(size=12)), g.neighborhoods, 0.2).data
    np.testing.assert_allclose(np.bincount(g.neighborhoods.src, weights=gamma), 1.0, atol=1e-12)


def test_gat_params_validation():
    with pytest.raises(ShapeMismatch):
        GatParams([Tensor(np.eye(2))], [Tensor(np.zeros(3))])
    with pytest.raises(ValueError):
        GatParams([Tensor(np.eye(2))], [])


def test_gcn_on_two_node_clique_averages():
    x = Tensor([[1.0, 4.0], [3.0, 0.0]])
    adj = Neighborhoods.from_lists([[1, 0], [0, 1]])
    assert gcn_coefficients(adj).tolist() == [0.5] * 4
    out = gcn_layer(x, adj, Tensor(np.eye(2))).data
    np.testing.assert_allclose(out, [[2.0, 2.0], [2.0, 2.0]])


def test_gcn_on_single_node_is_affine():
    rng = np.random.default_rng(4)
    x, w, b = rng.normal(size=(1, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
    out = gcn_layer(Tensor(x), Neighborhoods.from_lists([[0]]), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(out, x @ w + b, atol=1e-14)


def test_sage_with_zero_neighbor_block_is_mlp(random_graph):
    g = random_graph(n_nodes=15, n_features=4, k=3)
    rng = np.random.default_rng(5)
    w_self, b = rng.normal(size=(4, 6)), rng.normal(size=6)
    w = Tensor(np.vstack([w_self, np.zeros((4, 6))]))
    x = Tensor(g.features)
    np.testing.assert_allclose(sage_layer(x, g.neighborhoods, w, Tensor(b)).data,
                               mlp_layer(x, Tensor(w_self), Tensor(b)).data, atol=1e-14)
    with pytest.raises(ShapeMismatch):
        sage_layer(x, g.neighborhoods, Tensor(w_self))


def test_empty_neighborhood_is_rejected():
    adj = Neighborhoods.from_lists([[0], []])
    x = Tensor(np.ones((2, 2)))
    with pytest.raises(IsolatedNode):
        gcn_layer(x, adj, Tensor(np.eye(2)))
    with pytest.raises(IsolatedNode):
        gat_layer(x, adj, GatParams([Tensor(np.eye(2))], [Tensor(np.zeros(4))]))
    with pytest.raises(ShapeMismatch):
        gcn_layer(Tensor(np.ones((3, 2))), adj, Tensor(np.eye(2)))


@pytest.mark.parametrize("mode", ["concat", "average"])
def test_gat_layer_gradient(mode):
    rng = np.random.default_rng(6)
    features = rng.normal(size=(10, 4))
    adj = knn_graph(features, 3)
    x = Tensor(features)
    a = [Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))]
    w_other = Tensor(rng.normal(size=(4, 3)))

    def f(w):
        out = gat_layer(x, adj, GatParams([w, w_other], a), mode=mode, activation=ops.sigmoid)
        return ops.sum(out)

    assert grad_check(f, Tensor(rng.normal(size=(4, 3)))) < 1e-5


def test_two_layer_network_gradient_through_mcloss(deep):
    rng = np.random.default_rng(8)
    features = rng.normal(size=(10, 12))
    adj = knn_graph(features, 3)
    x = Tensor(features)
    labels = rng.choice(deep.leaf_indices, size=10)
    y = CellGraph("toy", features, adj, labels).targets(deep, with_root=True)
    a0 = [Tensor(rng.normal(size=8))]
    out_layer = GatParams([Tensor(rng.normal(size=(4, 13)))], [Tensor(rng.normal(size=26))])

    def f(w):
        hidden = gat_layer(x, adj, GatParams([w], a0), activation=ops.relu)
        scores = ops.sigmoid(gat_layer(hidden, adj, out_layer, mode="average"))
        value, grad = loss_and_grad(scores.data, y, deep)
        return ops.objective(scores, value, grad)

    assert grad_check(f, Tensor(rng.normal(scale=0.5, size=(12, 4)))) < 1e-5


def test_registered_models():
    assert available_models() == ["gat", "gcn", "mlp", "sage"]


def test_model_widths(deep, random_graph):
    g = random_graph()
    gat = create_model(NetworkConfig(), deep)
    assert gat.scores(g).shape == (30, 13)
    assert gat.embeddings(g).shape == (30, 64)
    assert gat.forward(g).values.shape == (30, 12)
    assert create_model(NetworkConfig(kind="gcn"), deep).embeddings(g).shape == (30, 32)
    with pytest.raises(DimensionMismatch):
        create_model(NetworkConfig(output_dim=12), deep)
    with pytest.raises(ShapeMismatch):
        gat.scores(g.with_features(g.features[:, :11]))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_inference_output_never_violates(kind, deep, random_graph):
    g = random_graph(seed=2)
    for seed in range(3):
        model = create_model(NetworkConfig(kind=kind, hidden_dim=8), deep, seed=seed)
        out = model.forward(g, mode="infer")
        assert out.constrained
        assert find_violations(out, deep) == []
        assert ((out.values >= 0) & (out.values <= 1)).all()


@pytest.mark.parametrize("kind", list(ModelKind))
def test_relabeling_nodes_permutes_outputs(kind, deep, random_graph):
    g = random_graph(n_nodes=40, k=6, seed=5)
    perm = np.random.default_rng(5).permutation(g.n_nodes)
    relabeled = CellGraph(g.patient_id, g.features[perm], g.neighborhoods.permute(perm))
    model = create_model(NetworkConfig(kind=kind, hidden_dim=8), deep, seed=3)
    np.testing.assert_array_equal(model.scores(relabeled).data, model.scores(g).data[perm])
    np.testing.assert_array_equal(model.forward(relabeled).values, model.forward(g).values[perm])


def test_training_output_carries_violations(deep, random_graph):
    g = random_graph(seed=4)
    found = [len(find_violations(create_model(NetworkConfig(hidden_dim=8), deep, seed=s).forward(g, mode="train"), deep))
             for s in range(5)]
    assert all(n > 0 for n in found)


def test_model_gradient_matches_finite_differences(deep, random_graph):
    g = random_graph(n_nodes=10, k=3, seed=9, labels=np.random.default_rng(9).choice(deep.leaf_indices, size=10))
    y = g.targets(deep)
    model = create_model(NetworkConfig(hidden_dim=2, num_heads=2, out_heads=1), deep, seed=1)
    name = "layer0.W0"
    base = {k: t.data.copy() for k, t in model.parameters().items()}

    def loss_at(value):
        model.load_parameters({**base, name: value})
        return loss_and_grad(model.scores(g).data, y, deep)[0]

    model.zero_grad()
    with Tape() as tape:
        out = model.scores(g)
        value, grad = loss_and_grad(out.data, y, deep)
        objective = ops.objective(out, value, grad)
    tape.backward(objective)
    analytic = model.parameters()[name].grad.copy()

    numeric = np.zeros_like(analytic)
    for idx in np.ndindex(analytic.shape):
        up, down = base[name].copy(), base[name].copy()
        up[idx] += 1e-6
        down[idx] -= 1e-6
        numeric[idx] = (loss_at(up) - loss_at(down)) / 2e-6
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-3)
    assert np.max(np.abs(numeric - analytic) / denom) < 1e-5


def test_load_parameters_rejects_mismatches(deep):
    model = create_model(NetworkConfig(kind="mlp", hidden_dim=4), deep)
    values = {k: t.data for k, t in model.parameters().items()}
    with pytest.raises(ShapeMismatch):
        model.load_parameters({k: v for k, v in values.items() if k != "layer0.W"})
    with pytest.raises(ShapeMismatch):
        model.load_parameters({**values, "layer0.W": np.zeros((3, 3))})
    model.load_parameters({k: np.zeros_like(v) for k, v in values.items()})
    assert all(not t.data.any() for t in model.parameters().values())
