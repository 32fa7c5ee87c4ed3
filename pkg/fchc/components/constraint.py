"""
The max constraint: every class score is replaced by the maximum score over its subtree,
which rules out hierarchy violations for any decision threshold.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional

import numpy as np
import pandas as pd

from fchc.components.taxonomy import ClassRef, DescendantMatrix, Taxonomy
from fchc.errors import (
    ConfigError,
    DimensionMismatch,
    NonFiniteValue,
    SchemaMismatch,
    ScoreOutOfRange,
    TaxonomyMismatch,
    UnknownClass,
)

# max elements of the block x C x C temporary of the dense path
_DENSE_ELEMENTS = 1 << 24


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Per-sample per-class scores in [0, 1] produced under `taxonomy`."""
    values: np.ndarray
    taxonomy: Taxonomy = field(repr=False)
    constrained: bool = False

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 2:
            raise DimensionMismatch(f"Scores must be a 2-D matrix, got shape {values.shape}")
        if values.shape[1] != len(self.taxonomy):
            raise DimensionMismatch(
                f"Score matrix has {values.shape[1]} columns but the taxonomy has {len(self.taxonomy)} classes"
            )
        if not np.isfinite(values).all():
            raise NonFiniteValue("Scores contain NaN or infinite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ScoreOutOfRange(f"Scores must lie in [0, 1], got range [{values.min():g}, {values.max():g}]")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_model_output(cls, output: np.ndarray, taxonomy: Taxonomy, constrained: bool = False) -> "ScoreMatrix":
        """Drop the trailing root slot of a network output."""
        output = np.asarray(output, dtype=np.float64)
        if output.shape[1] == len(taxonomy) + 1:
            output = output[:, :len(taxonomy)]
        return cls(output, taxonomy, constrained)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray, constrained: Optional[bool] = None) -> "ScoreMatrix":
        return replace(self, values=values, constrained=self.constrained if constrained is None else constrained)


class Violation(NamedTuple):
    sample: int
    ancestor: ClassRef
    descendant: ClassRef
    gap: float


class Delegation(NamedTuple):
    sample: int
    parent: ClassRef
    delegate: ClassRef


def _check_dims(values: np.ndarray, r: DescendantMatrix) -> None:
    if values.ndim != 2 or values.shape[1] != r.size:
        raise DimensionMismatch(f"Scores of shape {values.shape} do not match a {r.size}x{r.size} descendant matrix")


def mcm_values(values: np.ndarray, r: DescendantMatrix, method: str = "sparse") -> np.ndarray:
    """out[i, A] = max over the subclasses B of A of values[i, B]."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    _check_dims(values, r)
    if method == "sparse":
        out = np.empty_like(values)
        for a, idx in enumerate(r.index_lists):
            if len(idx) == 1:
                out[:, a] = values[:, idx[0]]
            else:
                out[:, a] = values[:, idx].max(axis=1)
        return out
    if method == "dense":
        out = np.empty_like(values)
        mask = r.bits[None, :, :]
        step = max(1, _DENSE_ELEMENTS // (r.size * r.size))
        for start in range(0, values.shape[0], step):
            block = values[start:start + step]
            out[start:start + step] = np.where(mask, block[:, None, :], -np.inf).max(axis=2)
        return out
    raise ConfigError(f"Unknown MCM method '{method}' (expected 'sparse' or 'dense')")


def mcm_argmax(values: np.ndarray, r: DescendantMatrix) -> np.ndarray:
    """
    Index of the maximizing subclass for every (sample, class) entry of the MCM.
    Ties go to the lowest canonical index.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    _check_dims(values, r)
    arg = np.empty(values.shape, dtype=np.int64)
    for a, idx in enumerate(r.index_lists):
        # index lists are sorted, argmax returns the first maximum
        arg[:, a] = idx[np.argmax(values[:, idx], axis=1)]
    return arg


def mcm(h: ScoreMatrix, r: Optional[DescendantMatrix] = None, method: str = "sparse") -> ScoreMatrix:
    r = h.taxonomy.descendants if r is None else r
    return h.with_values(mcm_values(h.values, r, method=method), constrained=True)


def _check_taxonomy(s: ScoreMatrix, t: Taxonomy) -> None:
    if s.taxonomy is not t and s.taxonomy != t:
        raise TaxonomyMismatch("Score matrix was produced under a different taxonomy")


def find_violations(s: ScoreMatrix, t: Taxonomy) -> List[Violation]:
    """All (sample, ancestor, descendant, gap) with the descendant scored above the ancestor."""
    _check_taxonomy(s, t)
    r = t.descendants
    found: List[Violation] = []
    for a, idx in enumerate(r.index_lists):
        for b in idx:
            if b == a:
                continue
            gaps = s.values[:, b] - s.values[:, a]
            for i in np.flatnonzero(gaps > 0):
                found.append(Violation(int(i), t.classes[a], t.classes[int(b)], float(gaps[i])))
    found.sort(key=lambda v: (v.sample, v.ancestor.index, v.descendant.index))
    return found


def find_delegations(h: ScoreMatrix, t: Taxonomy) -> List[Delegation]:
    """(sample, A_i, A_j) where the constrained score of A_i is supplied by a strictly higher-scoring subclass A_j."""
    _check_taxonomy(h, t)
    arg = mcm_argmax(h.values, t.descendants)
    rows, cols = np.nonzero(arg != np.arange(len(t))[None, :])
    found = []
    for i, a in zip(rows, cols):
        j = arg[i, a]
        if h.values[i, a] < h.values[i, j]:
            found.append(Delegation(int(i), t.classes[int(a)], t.classes[int(j)]))
    return found


def violation_report(s: ScoreMatrix, t: Taxonomy, max_pairs: int = 1000) -> Dict[str, Any]:
    violations = find_violations(s, t)
    return {
        "count": len(violations),
        "samples_affected": len({v.sample for v in violations}),
        "max_gap": max((v.gap for v in violations), default=0.0),
        "pairs": [
            {
                "sample": v.sample,
                "ancestor": t.display_name(v.ancestor),
                "descendant": t.display_name(v.descendant),
                "gap": v.gap,
            }
            for v in violations[:max_pairs]
        ],
        "truncated": len(violations) > max_pairs,
    }


def read_score_csv(path: str | Path, t: Taxonomy) -> ScoreMatrix:
    """Read a raw score CSV whose header names the classes (paths or display names)."""
    df = pd.read_csv(path, float_precision="round_trip")
    columns: Dict[int, str] = {}
    for col in df.columns:
        if str(col).lower() == t.root_name.lower() or str(col) == "root":
            continue
        try:
            ref = t.resolve(str(col))
        except UnknownClass as e:
            raise SchemaMismatch(f"Score column '{col}' is not a class of the taxonomy") from e
        columns[ref.index] = col
    missing = [t.display_name(c) for c in t.classes if c.index not in columns]
    if missing:
        raise SchemaMismatch(f"Score CSV is missing columns for classes: {missing}")
    values = df[[columns[i] for i in range(len(t))]].to_numpy(dtype=np.float64)
    return ScoreMatrix(values, t)


def write_score_csv(s: ScoreMatrix, path: str | Path) -> None:
    header = [s.taxonomy.display_name(c) for c in s.taxonomy.classes]
    pd.DataFrame(s.values, columns=header).to_csv(path, index=False, float_format="%.17g")


def violation_counts(s: ScoreMatrix, t: Taxonomy) -> Dict[str, int]:
    """Number of violating (sample, ancestor, descendant) triples and of affected samples."""
    _check_taxonomy(s, t)
    pairs = 0
    affected = np.zeros(s.n_samples, dtype=bool)
    for a, idx in enumerate(t.descendants.index_lists):
        below = idx[idx != a]
        if below.size == 0:
            continue
        hit = s.values[:, below] > s.values[:, [a]]
        pairs += int(hit.sum())
        affected |= hit.any(axis=1)
    return {"count": pairs, "samples_affected": int(affected.sum())}
