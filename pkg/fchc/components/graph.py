"""
Per-patient Euclidean k-nearest-neighbour graphs over standardized marker values.
"""
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from fchc.components.data_provider import CellTable
from fchc.components.taxonomy import Taxonomy
from fchc.errors import EmptyPatient, NonFiniteValue, SchemaMismatch, StaleGraphCache, TooFewPoints
from fchc.utils.utils import get_worker_count, log, log_verbose

# query rows per distance block
_KNN_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class Neighborhoods:
    """
    Directed adjacency in compressed row form: the neighbors of node i are
    indices[indptr[i]:indptr[i + 1]].
    """
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]]) -> "Neighborhoods":
        lengths = np.array([len(x) for x in lists], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        indices = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists]) if len(lists) else np.zeros(0, np.int64)
        return cls(indptr, indices.astype(np.int64))

    @classmethod
    def from_edges(cls, src: np.ndarray, dst: np.ndarray, n_nodes: int) -> "Neighborhoods":
        """Edges must be grouped by source; order within a source is kept."""
        src = np.asarray(src, dtype=np.int64)
        if src.size and np.any(np.diff(src) < 0):
            raise SchemaMismatch("Edge list is not grouped by source node")
        counts = np.bincount(src, minlength=n_nodes)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(indptr, np.asarray(dst, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @cached_property
    def src(self) -> np.ndarray:
        """Owning node of every entry of `indices`."""
        return np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degree)

    @property
    def dst(self) -> np.ndarray:
        return self.indices

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def to_lists(self) -> List[List[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n_nodes)]

    def with_self_loops(self) -> "Neighborhoods":
        lists = []
        for i in range(self.n_nodes):
            nb = self.neighbors(i).tolist()
            lists.append(nb if i in nb else nb + [i])
        return Neighborhoods.from_lists(lists)

    def permute(self, perm: np.ndarray) -> "Neighborhoods":
        """Relabel node perm[i] as i."""
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return Neighborhoods.from_lists([inverse[self.neighbors(p)].tolist() for p in perm])

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n_nodes)


@dataclass(eq=False)
class CellGraph:
    patient_id: str
    features: np.ndarray
    neighborhoods: Neighborhoods
    labels: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    def targets(self, taxonomy: Taxonomy, with_root: bool = True) -> np.ndarray:
        """Ancestor-closed multi-hot labels, optionally with the always-on root column."""
        if self.labels is None:
            raise EmptyPatient(f"Graph of patient {self.patient_id} carries no labels")
        return _closure_rows(taxonomy, with_root)[self.labels]

    def with_features(self, features: np.ndarray) -> "CellGraph":
        return CellGraph(self.patient_id, features, self.neighborhoods, self.labels)


def _closure_rows(taxonomy: Taxonomy, with_root: bool) -> np.ndarray:
    rows = taxonomy.descendants.bits.T.astype(np.float64)  # row B: ancestors of B
    if with_root:
        rows = np.hstack([rows, np.ones((rows.shape[0], 1))])
    return rows


def standardize(features: np.ndarray, mode: str = "zscore") -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    mode = getattr(mode, "value", mode)
    if mode == "none":
        return features.copy()
    if mode == "zscore":
        std = features.std(axis=0)
        return (features - features.mean(axis=0)) / np.where(std > 0, std, 1.0)
    if mode == "minmax":
        lo, hi = features.min(axis=0), features.max(axis=0)
        span = hi - lo
        return (features - lo) / np.where(span > 0, span, 1.0)
    raise ValueError(f"Unknown standardization '{mode}'")


def knn_graph(points: np.ndarray, k: int, self_loops: bool = True) -> Neighborhoods:
    """
    For every point, the k closest other points by Euclidean distance, nearest
    first, with ties going to the lower row index. The point itself is
    appended last when `self_loops` is set.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise SchemaMismatch(f"Expected an N x D point matrix, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n <= k:
        raise TooFewPoints(f"{n} points cannot have {k} distinct neighbours each")
    if not np.isfinite(points).all():
        raise NonFiniteValue("Non-finite feature value in kNN input")

    width = k + 1 if self_loops else k
    indices = np.empty((n, width), dtype=np.int64)
    for start in range(0, n, _KNN_CHUNK):
        rows = np.arange(start, min(start + _KNN_CHUNK, n))
        d = cdist(points[rows], points, metric="sqeuclidean")
        d[np.arange(len(rows)), rows] = np.inf
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for r, row in enumerate(rows):
            candidates = np.flatnonzero(d[r] <= kth[r])
            # lexsort: last key is primary
            order = np.lexsort((candidates, d[r, candidates]))[:k]
            indices[row, :k] = candidates[order]
        if self_loops:
            indices[rows, k] = rows
    return Neighborhoods(np.arange(0, n * width + 1, width, dtype=np.int64), indices.reshape(-1))


def feature_checksum(features: np.ndarray) -> str:
    data = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    return hashlib.sha256(data.tobytes()).hexdigest()


def build_patient_graph(table: CellTable,
                        taxonomy: Optional[Taxonomy],
                        k: int = 7,
                        standardization: str = "zscore",
                        self_loops: bool = True,
                        cache_dir: Optional[str | Path] = None) -> CellGraph:
    if table.n_cells == 0:
        raise EmptyPatient(f"Patient {table.patient_id} has no cells")
    labels = table.label_indices(taxonomy) if (taxonomy is not None and table.labels is not None) else None
    features = standardize(table.features, standardization)

    neighborhoods = None
    if cache_dir is not None:
        try:
            neighborhoods = load_graph_cache(cache_dir, table.patient_id, table.features, k, standardization, self_loops)
            log_verbose(f"Reusing cached graph of patient {table.patient_id}")
        except FileNotFoundError:
            neighborhoods = None
        except StaleGraphCache as e:
            log(f"{e}, rebuilding.")
            neighborhoods = None
    if neighborhoods is None:
        neighborhoods = knn_graph(features, k, self_loops=self_loops)
        if cache_dir is not None:
            save_graph_cache(cache_dir, table.patient_id, neighborhoods, table.features, k, standardization, self_loops)
    return CellGraph(table.patient_id, features, neighborhoods, labels)


def _build_one(args) -> CellGraph:
    return build_patient_graph(*args)


def build_patient_graphs(cohort: Sequence[CellTable],
                         taxonomy: Optional[Taxonomy],
                         k: int = 7,
                         standardization: str = "zscore",
                         self_loops: bool = True,
                         cache_dir: Optional[str | Path] = None) -> List[CellGraph]:
    """One disjoint graph per patient, in cohort order."""
    standardization = getattr(standardization, "value", standardization)
    jobs = [(table, taxonomy, k, standardization, self_loops, cache_dir) for table in cohort]
    workers = min(get_worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            graphs = list(pool.map(_build_one, jobs))
    else:
        graphs = [_build_one(job) for job in jobs]
    log_verbose(f"Built {len(graphs)} patient graphs (k={k}, standardization={standardization})")
    return graphs


# ---- edge-list cache ----

def _cache_paths(cache_dir: str | Path, patient_id: str) -> Tuple[Path, Path]:
    cache_dir = Path(cache_dir)
    return cache_dir / f"{patient_id}_edges.csv", cache_dir / f"{patient_id}_graph.json"


def save_graph_cache(cache_dir: str | Path,
                     patient_id: str,
                     neighborhoods: Neighborhoods,
                     raw_features: np.ndarray,
                     k: int,
                     standardization: str,
                     self_loops: bool = True) -> Path:
    edges_path, sidecar_path = _cache_paths(cache_dir, patient_id)
    edges_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"src": neighborhoods.src, "dst": neighborhoods.dst}).to_csv(edges_path, index=False)
    sidecar = {
        "patient_id": patient_id,
        "k": k,
        "standardization": getattr(standardization, "value", standardization),
        "self_loops": self_loops,
        "n_nodes": neighborhoods.n_nodes,
        "feature_checksum": feature_checksum(raw_features),
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return edges_path


def load_graph_cache(cache_dir: str | Path,
                     patient_id: str,
                     raw_features: np.ndarray,
                     k: int,
                     standardization: str,
                     self_loops: bool = True) -> Neighborhoods:
    """Read a cached edge list, refusing it when it was built from other data or settings."""
    edges_path, sidecar_path = _cache_paths(cache_dir, patient_id)
    if not edges_path.is_file() or not sidecar_path.is_file():
        raise FileNotFoundError(f"No graph cache for patient {patient_id} in {cache_dir}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    expected = {
        "k": k,
        "standardization": getattr(standardization, "value", standardization),
        "self_loops": self_loops,
        "feature_checksum": feature_checksum(raw_features),
    }
    stale = [key for key, value in expected.items() if sidecar.get(key) != value]
    if stale:
        raise StaleGraphCache(f"Graph cache of patient {patient_id} is stale ({', '.join(stale)} changed)")
    edges = pd.read_csv(edges_path)
    return Neighborhoods.from_edges(edges["src"].to_numpy(), edges["dst"].to_numpy(), int(sidecar["n_nodes"]))
