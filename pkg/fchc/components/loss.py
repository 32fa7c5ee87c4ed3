"""
Training objectives: the max constraint loss (MCLoss) and plain binary cross-entropy,
each with its exact (sub)gradient with respect to the unconstrained scores.
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from fchc.components.constraint import ScoreMatrix, mcm_argmax, mcm_values
from fchc.components.taxonomy import DescendantMatrix
from fchc.errors import DimensionMismatch, LabelNotClosed

EPS = 1e-7

Scores = Union[ScoreMatrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class LossReport:
    total: float
    per_class: np.ndarray
    per_sample: np.ndarray


def _as_arrays(h: Scores, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = h.values if isinstance(h, ScoreMatrix) else np.atleast_2d(np.asarray(h, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if values.shape != labels.shape:
        raise DimensionMismatch(f"Scores {values.shape} and labels {labels.shape} differ in shape")
    return values, labels


def _resolve_r(h: Scores, r: Optional[DescendantMatrix], width: int) -> DescendantMatrix:
    if r is None:
        if not isinstance(h, ScoreMatrix):
            raise ValueError("A descendant matrix is required when scores are given as a plain array")
        r = h.taxonomy.descendants
    if r.size != width:
        raise DimensionMismatch(f"Descendant matrix is {r.size}x{r.size} but scores have {width} columns")
    return r


def check_label_closure(y: np.ndarray, r: DescendantMatrix) -> None:
    """Labels are closed iff every labeled class has all of its ancestors labeled."""
    if not np.isin(y, (0.0, 1.0)).all():
        raise LabelNotClosed("Labels must be 0/1")
    if not np.array_equal(mcm_values(y, r), y):
        rows = np.flatnonzero((mcm_values(y, r) != y).any(axis=1))
        raise LabelNotClosed(f"Labels of samples {rows[:10].tolist()} are not closed under ancestors")


def _report(terms: np.ndarray, reduction: str) -> LossReport:
    scale = 1.0 if reduction == "sum" else 1.0 / max(terms.shape[0], 1)
    per_class = terms.sum(axis=0) * scale
    per_sample = terms.sum(axis=1) * scale
    return LossReport(total=float(terms.sum() * scale), per_class=per_class, per_sample=per_sample)


def _log_terms(y: np.ndarray, positive: np.ndarray, negative_score: np.ndarray) -> np.ndarray:
    return (-y * np.log(np.clip(positive, EPS, 1.0 - EPS))
            - (1.0 - y) * np.log(np.clip(1.0 - negative_score, EPS, 1.0 - EPS)))


def mcloss_terms(values: np.ndarray, y: np.ndarray, r: DescendantMatrix) -> np.ndarray:
    """Per (sample, class) MCLoss contributions."""
    positive = mcm_values(y * values, r)
    negative = mcm_values(values, r)
    return _log_terms(y, positive, negative)


def mcloss(h: Scores, y: np.ndarray, r: Optional[DescendantMatrix] = None, reduction: str = "sum") -> LossReport:
    """
    MCLoss_A = -y_A ln(max_{B in S_A} y_B h_B) - (1 - y_A) ln(1 - MCM_A), summed over classes and samples.
    """
    values, labels = _as_arrays(h, y)
    r = _resolve_r(h, r, values.shape[1])
    check_label_closure(labels, r)
    return _report(mcloss_terms(values, labels, r), reduction)


def mcloss_grad(h: Scores, y: np.ndarray, r: Optional[DescendantMatrix] = None, reduction: str = "sum") -> np.ndarray:
    """
    Gradient of `mcloss` with respect to the unconstrained scores. Each max routes
    its gradient to a single maximizer (lowest canonical index on ties); clamped
    logarithm arguments contribute nothing.
    """
    values, labels = _as_arrays(h, y)
    r = _resolve_r(h, r, values.shape[1])
    check_label_closure(labels, r)

    n, c = values.shape
    rows = np.repeat(np.arange(n), c)
    grad = np.zeros_like(values)

    # positive terms: -y_A ln(y_j h_j), j = argmax over S_A of y_B h_B
    masked = labels * values
    pos_arg = mcm_argmax(masked, r)
    pos_val = np.take_along_axis(masked, pos_arg, axis=1)
    pos_active = (labels > 0) & (pos_val > EPS) & (pos_val < 1.0 - EPS)
    pos_weight = np.zeros_like(values)
    y_at_arg = np.take_along_axis(labels, pos_arg, axis=1)
    np.divide(-labels * y_at_arg, pos_val, out=pos_weight, where=pos_active)
    np.add.at(grad, (rows, pos_arg.ravel()), pos_weight.ravel())

    # negative terms: -(1 - y_A) ln(1 - h_k), k = argmax over S_A of h_B
    neg_arg = mcm_argmax(values, r)
    neg_val = np.take_along_axis(values, neg_arg, axis=1)
    complement = 1.0 - neg_val
    neg_active = (labels < 1) & (complement > EPS) & (complement < 1.0 - EPS)
    neg_weight = np.zeros_like(values)
    np.divide(1.0 - labels, complement, out=neg_weight, where=neg_active)
    np.add.at(grad, (rows, neg_arg.ravel()), neg_weight.ravel())

    if reduction == "mean":
        grad /= max(n, 1)
    return grad


def bce_terms(values: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _log_terms(y, values, values)


def bce(h: Scores, y: np.ndarray, reduction: str = "sum") -> LossReport:
    """Standard binary cross-entropy, summed over classes and samples."""
    values, labels = _as_arrays(h, y)
    return _report(bce_terms(values, labels), reduction)


def bce_grad(h: Scores, y: np.ndarray, reduction: str = "sum") -> np.ndarray:
    values, labels = _as_arrays(h, y)
    grad = np.zeros_like(values)

    pos_active = (values > EPS) & (values < 1.0 - EPS)
    np.divide(-labels, values, out=grad, where=pos_active)

    complement = 1.0 - values
    neg_active = (complement > EPS) & (complement < 1.0 - EPS)
    neg = np.zeros_like(values)
    np.divide(1.0 - labels, complement, out=neg, where=neg_active)
    grad += neg

    if reduction == "mean":
        grad /= max(values.shape[0], 1)
    return grad
