import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fchc.components.constraint import (
    ScoreMatrix,
    find_delegations,
    find_violations,
    mcm,
    mcm_argmax,
    mcm_values,
    read_score_csv,
    violation_counts,
    violation_report,
    write_score_csv,
)
from fchc.components.metrics import ancestor_close
from fchc.components.taxonomy import get_builtin_taxonomy, random_taxonomy
from fchc.errors import (
    ConfigError,
    DimensionMismatch,
    NonFiniteValue,
    SchemaMismatch,
    ScoreOutOfRange,
    TaxonomyMismatch,
)

DEEP = get_builtin_taxonomy("fc-deep")
unit_scores = arrays(np.float64, st.tuples(st.integers(1, 20), st.just(12)),
                     elements=st.floats(0.0, 1.0, allow_nan=False))
TREES = [DEEP, get_builtin_taxonomy("fc-shallow")] + [
    random_taxonomy(np.random.default_rng(seed), n, shape)
    for seed, (n, shape) in enumerate((n, shape) for n in (2, 5, 17, 40) for shape in ("bushy", "chain"))
]


def scores_for(t):
    return arrays(np.float64, st.tuples(st.integers(1, 20), st.just(len(t))),
                  elements=st.floats(0.0, 1.0, allow_nan=False))


def test_mcm_takes_subtree_max(tiny, by_name):
    h = ScoreMatrix(by_name(tiny, {"1": 0.3, "1.1": 0.7, "2": 0.2}), tiny)
    out = mcm(h)
    assert out.constrained
    np.testing.assert_allclose(out.values, by_name(tiny, {"1": 0.7, "1.1": 0.7, "2": 0.2}))


def test_mcm_leaves_consistent_scores_alone(tiny, by_name):
    values = by_name(tiny, {"1": 0.9, "1.1": 0.4, "2": 0.1})
    np.testing.assert_array_equal(mcm(ScoreMatrix(values, tiny)).values, values)


def test_find_violations(tiny, by_name):
    h = ScoreMatrix(by_name(tiny, {"1": 0.3, "1.1": 0.7, "2": 0.2}), tiny)
    violations = find_violations(h, tiny)
    assert len(violations) == 1
    v = violations[0]
    assert (v.sample, v.ancestor.name, v.descendant.name) == (0, "1", "1.1")
    assert v.gap == pytest.approx(0.4)
    assert find_violations(mcm(h), tiny) == []


def test_tampered_constrained_scores_are_caught(tiny, by_name):
    out = mcm(ScoreMatrix(by_name(tiny, {"1": 0.3, "1.1": 0.7, "2": 0.2}), tiny))
    values = out.values.copy()
    values[0, tiny.resolve("1").index] = 0.1
    assert find_violations(ScoreMatrix(values, tiny, constrained=True), tiny)


def test_delegations(chain):
    found = find_delegations(ScoreMatrix([[0.3, 0.7]], chain), chain)
    assert [(d.sample, d.parent.name, d.delegate.name) for d in found] == [(0, "1", "1.1")]
    assert find_delegations(ScoreMatrix([[0.9, 0.7]], chain), chain) == []
    assert find_delegations(ScoreMatrix([[0.5, 0.5]], chain), chain) == []


def test_argmax_ties_go_to_lowest_index(chain):
    arg = mcm_argmax(np.array([[0.5, 0.5], [0.2, 0.6]]), chain.descendants)
    assert arg.tolist() == [[0, 1], [1, 1]]


def test_violation_report_and_counts(tiny, by_name):
    h = ScoreMatrix(np.vstack([by_name(tiny, {"1": 0.3, "1.1": 0.7}), by_name(tiny, {"1": 0.8, "1.1": 0.7})]), tiny)
    report = violation_report(h, tiny)
    assert report["count"] == 1
    assert report["samples_affected"] == 1
    assert report["pairs"][0]["ancestor"] == "1"
    assert report["truncated"] is False
    assert violation_counts(h, tiny) == {"count": 1, "samples_affected": 1}


def test_score_matrix_validation(tiny, deep):
    with pytest.raises(DimensionMismatch):
        ScoreMatrix(np.zeros((2, 4)), tiny)
    with pytest.raises(ScoreOutOfRange):
        ScoreMatrix([[0.2, 1.5, 0.1]], tiny)
    with pytest.raises(ValueError):
        ScoreMatrix([[0.2, -0.1, 0.1]], tiny)
    with pytest.raises(NonFiniteValue):
        ScoreMatrix([[0.2, np.nan, 0.1]], tiny)
    with pytest.raises(TaxonomyMismatch):
        find_violations(ScoreMatrix(np.zeros((1, 3)), tiny), deep)
    with pytest.raises(DimensionMismatch):
        mcm_values(np.zeros((1, 3)), deep.descendants)


def test_root_slot_is_dropped(tiny):
    s = ScoreMatrix.from_model_output(np.array([[0.1, 0.2, 0.3, 0.9]]), tiny)
    assert s.values.tolist() == [[0.1, 0.2, 0.3]]


def test_score_csv(tmp_path, deep):
    rng = np.random.default_rng(3)
    h = ScoreMatrix(rng.uniform(size=(5, 12)), deep)
    path = tmp_path / "scores.csv"
    write_score_csv(h, path)
    np.testing.assert_array_equal(read_score_csv(path, deep).values, h.values)

    path.write_text("CD45 pos,CD45 neg\n0.1,0.2\n")
    with pytest.raises(SchemaMismatch):
        read_score_csv(path, deep)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_constrained_scores_never_violate(data):
    t = data.draw(st.sampled_from(TREES))
    values = data.draw(scores_for(t))
    out = mcm(ScoreMatrix(values, t))
    assert find_violations(out, t) == []
    for threshold in (0.0, 0.3, 0.5, 0.9, 1.0):
        predicted = out.values >= threshold
        assert np.array_equal(ancestor_close(predicted, t), predicted)


@pytest.mark.parametrize("t", TREES)
def test_uniform_batch_never_violates(t):
    values = np.random.default_rng(len(t)).uniform(size=(10_000, len(t)))
    assert find_violations(mcm(ScoreMatrix(values, t)), t) == []


@settings(max_examples=60, deadline=None)
@given(values=unit_scores)
def test_mcm_is_idempotent_and_dominates(values):
    once = mcm_values(values, DEEP.descendants)
    np.testing.assert_array_equal(mcm_values(once, DEEP.descendants), once)
    assert (once >= values).all()


@settings(max_examples=60, deadline=None)
@given(values=unit_scores, bump=st.floats(0.0, 1.0))
def test_mcm_is_monotone(values, bump):
    higher = np.minimum(values + bump * (values > 0.5), 1.0)
    assert (mcm_values(higher, DEEP.descendants) >= mcm_values(values, DEEP.descendants)).all()


def subtrees(t):
    """Subtree of every class, found by walking parent links upwards."""
    members = [{a} for a in range(len(t))]
    for b in range(len(t)):
        a = t.parent[b]
        while a is not None:
            members[a].add(b)
            a = t.parent[a]
    return [sorted(m) for m in members]


def brute_force_mcm(values, t):
    return np.array([[row[s].max() for s in subtrees(t)] for row in values])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 60), shape=st.sampled_from(["bushy", "chain"]))
def test_sparse_and_dense_paths_match_brute_force(seed, n, shape):
    rng = np.random.default_rng(seed)
    t = random_taxonomy(rng, n, shape)
    values = rng.uniform(size=(7, n))
    expected = brute_force_mcm(values, t)
    np.testing.assert_array_equal(mcm_values(values, t.descendants, method="sparse"), expected)
    np.testing.assert_array_equal(mcm_values(values, t.descendants, method="dense"), expected)


def test_deep_tree_matches_brute_force_on_uniform_rows():
    values = np.random.default_rng(11).uniform(size=(1000, len(DEEP)))
    expected = brute_force_mcm(values, DEEP)
    np.testing.assert_array_equal(mcm_values(values, DEEP.descendants, method="sparse"), expected)
    np.testing.assert_array_equal(mcm_values(values, DEEP.descendants, method="dense"), expected)


def test_unknown_mcm_method():
    with pytest.raises(ConfigError):
        mcm_values(np.zeros((1, len(DEEP))), DEEP.descendants, method="bitset")
