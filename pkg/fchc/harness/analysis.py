"""
Post-hoc analysis of a trained model: permutation feature importance and
export of the activations entering the output layer.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from fchc.components.data_provider import LABEL_COLUMN, MARKERS
from fchc.components.graph import CellGraph
from fchc.errors import ShapeMismatch
from fchc.harness.cross_validation import pooled_hf
from fchc.interfaces.model import Model
from fchc.utils.utils import log, log_verbose


@dataclass(frozen=True)
class ImportanceReport:
    """hf drop per shuffled marker, max-normalized to [0, 1]."""
    importance: Dict[str, float]
    raw_drop: Dict[str, float]
    baseline_hf: float
    shuffles: int

    @property
    def ranking(self) -> List[str]:
        # stable: equal scores keep panel order
        return sorted(self.importance, key=lambda m: -self.importance[m])

    def vector(self) -> np.ndarray:
        return np.array(list(self.importance.values()))

    def to_json(self) -> Dict:
        return {
            "importance": self.importance,
            "ranking": self.ranking,
            "raw_hf_drop": self.raw_drop,
            "baseline_hf": self.baseline_hf,
            "shuffles": self.shuffles,
        }

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")
        return path


def shuffle_column(graph: CellGraph, column: int, rng: np.random.Generator) -> CellGraph:
    """Permute one feature column across the cells; the neighborhoods stay as built."""
    features = graph.features.copy()
    features[:, column] = features[rng.permutation(graph.n_nodes), column]
    return graph.with_features(features)


def feature_importance(model: Model,
                       graphs: Sequence[CellGraph],
                       threshold: float = 0.5,
                       shuffles: int = 5,
                       seed: int = 0,
                       constrain: bool = True,
                       markers: Sequence[str] = MARKERS) -> ImportanceReport:
    """
    Permutation importance: the drop of pooled hf on `graphs` when a marker
    column is shuffled, averaged over `shuffles` permutations. Every marker is
    shuffled with the same permutations, so identical columns score the same.
    Negative drops count as zero; an all-zero vector stays zero.
    """
    if len(markers) != model.network.input_dim:
        raise ShapeMismatch(f"{len(markers)} marker names for {model.network.input_dim} input features")
    baseline = pooled_hf(model, graphs, [threshold], constrain)[0]
    log(f"Permutation importance of {len(markers)} markers ({shuffles} shuffles each), baseline hf {baseline:.4f}")

    drops = np.zeros(len(markers))
    for j, marker in enumerate(markers):
        scores = []
        for s in range(shuffles):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
            shuffled = [shuffle_column(g, j, rng) for g in graphs]
            scores.append(pooled_hf(model, shuffled, [threshold], constrain)[0])
        drops[j] = float(np.mean(baseline - np.array(scores)))
        log_verbose(f"{marker}: hf drop {drops[j]:.6f}")

    clipped = np.clip(drops, 0.0, None)
    top = clipped.max()
    normalized = clipped / top if top > 0 else clipped
    return ImportanceReport(
        importance={m: float(v) for m, v in zip(markers, normalized)},
        raw_drop={m: float(v) for m, v in zip(markers, drops)},
        baseline_hf=float(baseline),
        shuffles=shuffles,
    )


def embedding_frame(model: Model, graph: CellGraph) -> pd.DataFrame:
    """One row per cell: the penultimate activations plus the cell's leaf name when labeled."""
    emb = model.embeddings(graph)
    df = pd.DataFrame(emb, columns=[f"emb_{i}" for i in range(emb.shape[1])])
    if graph.labels is not None:
        t = model.taxonomy
        df[LABEL_COLUMN] = [t.display_name(int(i)) for i in graph.labels]
    return df


def export_embeddings(model: Model, graph: CellGraph, path: Optional[str | Path] = None) -> pd.DataFrame:
    df = embedding_frame(model, graph)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False)
        log(f"Wrote {len(df)} x {df.shape[1]} embedding table of patient {graph.patient_id} to {path}")
    return df
