"""
Hierarchical precision/recall/F-score over ancestor-closed class sets, per-class
recall percentages and macro-averaged flat scores on leaves.
"""
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional

import numpy as np
from sklearn.metrics import precision_recall_fscore_support

from fchc.components.constraint import ScoreMatrix
from fchc.components.taxonomy import Taxonomy
from fchc.errors import DimensionMismatch, EmptyTruth, UnconstrainedInput


class HierarchicalScores(NamedTuple):
    hp: float
    hr: float
    hf: float


class FlatScores(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True, eq=False)
class PredictionSets:
    """Row i of `alpha` / `beta` is the predicted / true ancestor-closed class set of sample i."""
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=bool))
        beta = np.atleast_2d(np.asarray(self.beta, dtype=bool))
        if alpha.shape != beta.shape:
            raise DimensionMismatch(f"Predicted sets {alpha.shape} and true sets {beta.shape} differ in shape")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def n_samples(self) -> int:
        return self.alpha.shape[0]

    def subset(self, rows) -> "PredictionSets":
        return PredictionSets(self.alpha[rows], self.beta[rows])


def ancestor_close(members: np.ndarray, t: Taxonomy) -> np.ndarray:
    """Add every ancestor of every member to each row."""
    members = np.atleast_2d(np.asarray(members, dtype=bool))
    bits = t.descendants.bits.astype(np.int64)
    return (members.astype(np.int64) @ bits.T) > 0


def predicted_set(constrained: ScoreMatrix, t: Taxonomy, threshold: float = 0.5) -> np.ndarray:
    """{A : score >= threshold} per sample; constrained scores make it ancestor-closed."""
    if not constrained.constrained:
        raise UnconstrainedInput("Predicted sets are defined on max-constrained scores, apply mcm first")
    return constrained.values >= threshold


def closed_predicted_set(scores: ScoreMatrix, t: Taxonomy, threshold: float = 0.5) -> np.ndarray:
    """Thresholded set made ancestor-closed explicitly, for models without the constraint."""
    return ancestor_close(scores.values >= threshold, t)


def true_sets(labels: np.ndarray, t: Taxonomy) -> np.ndarray:
    """Ancestor closure of the true leaf (canonical index) of every sample."""
    labels = np.asarray(labels, dtype=np.int64)
    return t.descendants.bits.T[labels]


def predicted_leaf(scores: ScoreMatrix, t: Taxonomy) -> np.ndarray:
    """Argmax over leaf scores only, as a canonical class index."""
    leaves = t.leaf_indices
    return leaves[np.argmax(scores.values[:, leaves], axis=1)]


def argmax_sets(scores: ScoreMatrix, t: Taxonomy) -> np.ndarray:
    return t.descendants.bits.T[predicted_leaf(scores, t)]


def prediction_sets(scores: ScoreMatrix, labels: np.ndarray, t: Taxonomy, threshold: float = 0.5) -> PredictionSets:
    alpha = predicted_set(scores, t, threshold) if scores.constrained else closed_predicted_set(scores, t, threshold)
    return PredictionSets(alpha, true_sets(labels, t))


def hierarchical_prf(sets: PredictionSets) -> HierarchicalScores:
    """
    hp = sum |a_i & b_i| / sum |a_i|, hr = sum |a_i & b_i| / sum |b_i|, hf their
    harmonic mean; hp is 0 when nothing is predicted and hf is 0 when hp + hr is 0.
    """
    if sets.n_samples == 0:
        raise EmptyTruth("No samples to evaluate")
    truth_sizes = sets.beta.sum(axis=1)
    if np.any(truth_sizes == 0):
        raise EmptyTruth(f"Sample {int(np.flatnonzero(truth_sizes == 0)[0])} has an empty true class set")

    overlap = int(np.logical_and(sets.alpha, sets.beta).sum())
    predicted = int(sets.alpha.sum())
    truth = int(truth_sizes.sum())
    hp = overlap / predicted if predicted else 0.0
    hr = overlap / truth
    hf = 2.0 * hp * hr / (hp + hr) if (hp + hr) > 0 else 0.0
    return HierarchicalScores(hp, hr, hf)


@dataclass(frozen=True, eq=False)
class ClassRecall:
    """Per-class recall in percent; NaN where no sample carries the class."""
    recall_pct: np.ndarray
    support: np.ndarray
    predicted_ever: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.support > 0

    def to_dict(self, t: Taxonomy) -> Dict[str, Dict[str, Any]]:
        out = {}
        for c in t.classes:
            i = c.index
            out[t.display_name(c)] = {
                "recall_pct": None if not self.present[i] else round(float(self.recall_pct[i]), 6),
                "support": int(self.support[i]),
                "predicted_ever": bool(self.predicted_ever[i]),
            }
        return out


def per_class_recall(sets: PredictionSets, t: Optional[Taxonomy] = None) -> ClassRecall:
    if t is not None and sets.alpha.shape[1] != len(t):
        raise DimensionMismatch(f"Sets cover {sets.alpha.shape[1]} classes, taxonomy has {len(t)}")
    hits = np.logical_and(sets.alpha, sets.beta).sum(axis=0)
    support = sets.beta.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(support > 0, 100.0 * hits / np.maximum(support, 1), np.nan)
    return ClassRecall(recall_pct=recall, support=support.astype(np.int64), predicted_ever=sets.alpha.any(axis=0))


def flat_prf(pred_leaf: np.ndarray, true_leaf: np.ndarray) -> FlatScores:
    """Macro-averaged precision, recall and F1 over the leaves seen in either vector."""
    pred_leaf = np.asarray(pred_leaf)
    true_leaf = np.asarray(true_leaf)
    if pred_leaf.shape != true_leaf.shape:
        raise DimensionMismatch(f"{pred_leaf.shape[0]} predictions for {true_leaf.shape[0]} labels")
    p, r, f1, _ = precision_recall_fscore_support(true_leaf, pred_leaf, average="macro", zero_division=0)
    return FlatScores(float(p), float(r), float(f1))
