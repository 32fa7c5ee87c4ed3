import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fchc.components.constraint import ScoreMatrix
from fchc.components.loss import (
    EPS,
    bce,
    bce_grad,
    check_label_closure,
    mcloss,
    mcloss_grad,
    mcloss_terms,
)
from fchc.components.taxonomy import get_builtin_taxonomy, label_matrix, parse_taxonomy
from fchc.errors import DimensionMismatch, LabelNotClosed

FLAT = parse_taxonomy("1,2,3")
DEEP = get_builtin_taxonomy("fc-deep")


def central_differences(f, x, step=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (f(up) - f(down)) / (2 * step)
    return grad


def test_mcloss_labeled_child(tiny, by_name):
    h = by_name(tiny, {"1": 0.3, "1.1": 0.7, "2": 0.2})
    y = by_name(tiny, {"1": 1, "1.1": 1})
    report = mcloss(h, y, tiny.descendants)
    assert report.total == pytest.approx(-2 * np.log(0.7) - np.log(0.8), abs=1e-12)
    assert report.total == pytest.approx(0.936494, abs=1e-5)
    expected_terms = by_name(tiny, {"1": 0.356675, "1.1": 0.356675, "2": 0.223144})[0]
    np.testing.assert_allclose(report.per_class, expected_terms, atol=1e-6)


def test_mcloss_masks_unlabeled_subclass(tiny, by_name):
    h = by_name(tiny, {"1": 0.6, "1.1": 0.9, "2": 0.1})
    y = by_name(tiny, {"1": 1})
    report = mcloss(h, y, tiny.descendants)
    assert report.total == pytest.approx(2.918772, abs=1e-5)
    expected_terms = by_name(tiny, {"1": 0.510826, "1.1": 2.302585, "2": 0.105361})[0]
    np.testing.assert_allclose(report.per_class, expected_terms, atol=1e-6)

    # the labeled parent's term ignores the unlabeled child's score
    for child in (0.0, 0.5, 0.99):
        h[0, tiny.resolve("1.1").index] = child
        terms = mcloss_terms(h, y, tiny.descendants)
        assert terms[0, tiny.resolve("1").index] == pytest.approx(-np.log(0.6))


def test_mcloss_accepts_score_matrix(tiny, by_name):
    h = ScoreMatrix(by_name(tiny, {"1": 0.3, "1.1": 0.7, "2": 0.2}), tiny)
    y = by_name(tiny, {"1": 1, "1.1": 1})
    assert mcloss(h, y).total == pytest.approx(mcloss(h.values, y, tiny.descendants).total)


def test_mcloss_gradient_single_class():
    r = parse_taxonomy("1").descendants
    assert mcloss_grad(np.array([[0.5]]), np.array([[1.0]]), r).tolist() == [[-2.0]]


def test_mcloss_gradient_routes_to_maximizer(chain):
    grad = mcloss_grad(np.array([[0.3, 0.7]]), np.array([[1.0, 1.0]]), chain.descendants)
    assert grad[0, 0] == 0.0
    assert grad[0, 1] == pytest.approx(-2.857143, abs=1e-6)


def test_mcloss_gradient_matches_finite_differences(deep):
    rng = np.random.default_rng(11)
    r = deep.descendants
    leaves = rng.choice(deep.leaf_indices, size=6)
    y = label_matrix(deep, leaves.tolist())
    h = rng.uniform(0.05, 0.95, size=y.shape)

    numeric = central_differences(lambda v: mcloss(v, y, r).total, h)
    analytic = mcloss_grad(h, y, r)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-3)
    assert np.max(np.abs(numeric - analytic) / denom) < 1e-5


def test_clamped_terms_have_no_gradient(chain):
    grad = mcloss_grad(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), chain.descendants)
    assert grad.tolist() == [[0.0, 0.0]]
    assert mcloss(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), chain.descendants).total == pytest.approx(
        -np.log(1 - EPS) * 2, abs=1e-12)


def test_labels_must_be_closed(deep):
    y = np.zeros((1, 12))
    y[0, deep.resolve("NK cells").index] = 1
    with pytest.raises(LabelNotClosed):
        mcloss(np.full((1, 12), 0.5), y, deep.descendants)
    with pytest.raises(LabelNotClosed):
        check_label_closure(np.full((1, 12), 0.5), deep.descendants)


def test_shape_errors(tiny):
    with pytest.raises(DimensionMismatch):
        mcloss(np.full((2, 3), 0.5), np.ones((1, 3)), tiny.descendants)
    with pytest.raises(DimensionMismatch):
        mcloss(np.full((1, 2), 0.5), np.ones((1, 2)), tiny.descendants)
    with pytest.raises(ValueError):
        mcloss(np.full((1, 3), 0.5), np.ones((1, 3)))


def test_bce_values(tiny, by_name):
    assert bce(np.array([[0.5]]), np.array([[1.0]])).total == pytest.approx(0.693147, abs=1e-6)
    assert bce(np.array([[0.5]]), np.array([[0.0]])).total == pytest.approx(0.693147, abs=1e-6)
    h = by_name(tiny, {"1": 0.3, "1.1": 0.7, "2": 0.2})
    y = by_name(tiny, {"1": 1, "1.1": 1})
    assert bce(h, y).total == pytest.approx(1.783792, abs=1e-5)


def test_bce_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    h = rng.uniform(0.05, 0.95, size=(4, 5))
    y = (rng.uniform(size=(4, 5)) > 0.5).astype(float)
    numeric = central_differences(lambda v: bce(v, y).total, h)
    np.testing.assert_allclose(bce_grad(h, y), numeric, rtol=1e-5)


def test_mean_reduction(deep):
    rng = np.random.default_rng(2)
    y = label_matrix(deep, rng.choice(deep.leaf_indices, size=8).tolist())
    h = rng.uniform(size=y.shape)
    r = deep.descendants
    assert mcloss(h, y, r, "mean").total == pytest.approx(mcloss(h, y, r).total / 8)
    np.testing.assert_allclose(mcloss_grad(h, y, r, "mean"), mcloss_grad(h, y, r) / 8)


@settings(max_examples=60, deadline=None)
@given(h=arrays(np.float64, (5, 3), elements=st.floats(0.0, 1.0)),
       y=arrays(np.float64, (5, 3), elements=st.sampled_from([0.0, 1.0])))
def test_flat_taxonomy_reduces_to_bce(h, y):
    r = FLAT.descendants
    assert mcloss(h, y, r).total == pytest.approx(bce(h, y).total, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(mcloss_grad(h, y, r), bce_grad(h, y), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(h=arrays(np.float64, (4, 12), elements=st.floats(0.0, 1.0)),
       leaves=st.lists(st.integers(0, 7), min_size=4, max_size=4))
def test_mcloss_is_non_negative(h, leaves):
    y = label_matrix(DEEP, [int(DEEP.leaf_indices[i]) for i in leaves])
    report = mcloss(h, y, DEEP.descendants)
    assert report.total >= 0.0
    assert (report.per_sample >= 0.0).all()
