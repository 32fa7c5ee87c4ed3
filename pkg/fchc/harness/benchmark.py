"""
Wall-clock benchmark of the max constraint: sparse (index lists) versus dense
(bit mask) evaluation on random trees of growing size, and its share of a
full forward pass.
"""
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from fchc.components.constraint import mcm_values
from fchc.components.graph import CellGraph, knn_graph
from fchc.components.taxonomy import get_builtin_taxonomy, random_taxonomy
from fchc.config.schema import NetworkConfig
from fchc.harness.records import to_jsonable
from fchc.utils.module_extractor import create_model
from fchc.utils.utils import log, log_verbose


def best_time(fn: Callable[[], object], repeats: int = 5) -> float:
    """Minimum wall-clock time of `repeats` calls."""
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def fit_exponent(x: Sequence[float], y: Sequence[float]) -> float:
    """Slope of log(y) against log(x)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


@dataclass(frozen=True)
class BenchReport:
    table: pd.DataFrame
    sparse_exponent: float
    dense_exponent: float
    forward_share: Optional[float] = None

    def to_json(self) -> Dict:
        return {
            "rows": self.table.to_dict(orient="records"),
            "sparse_exponent_vs_pairs": self.sparse_exponent,
            "dense_exponent_vs_classes": self.dense_exponent,
            "constraint_share_of_forward": self.forward_share,
        }


def bench_constraint(c_values: Sequence[int] = (10, 100, 1000),
                     samples: int = 1000,
                     shapes: Sequence[str] = ("bushy", "chain"),
                     repeats: int = 5,
                     seed: int = 0,
                     dense: bool = True) -> BenchReport:
    """
    Time both constraint paths on one random tree per (C, shape). The sparse
    exponent is fitted against the number of (class, descendant) pairs, the
    dense one against C.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for c in c_values:
        for shape in shapes:
            t = random_taxonomy(rng, int(c), shape)
            r = t.descendants
            h = rng.uniform(size=(samples, len(t)))
            sparse_s = best_time(lambda: mcm_values(h, r, method="sparse"), repeats)
            dense_s = best_time(lambda: mcm_values(h, r, method="dense"), repeats) if dense else float("nan")
            rows.append({"C": int(c), "shape": shape, "pairs": r.pair_count,
                         "sparse_s": sparse_s, "dense_s": dense_s})
            log_verbose(f"C={c} {shape}: {r.pair_count} pairs, sparse {sparse_s * 1e3:.3f} ms, dense {dense_s * 1e3:.3f} ms")

    table = pd.DataFrame(rows)
    sparse_exp = fit_exponent(table["pairs"], table["sparse_s"])
    dense_exp = fit_exponent(table["C"], table["dense_s"]) if dense else float("nan")
    log(f"Constraint scaling: sparse exponent {sparse_exp:.2f} (vs pairs), dense exponent {dense_exp:.2f} (vs C)")
    return BenchReport(table, sparse_exp, dense_exp)


def constraint_overhead(network: Optional[NetworkConfig] = None,
                        preset: str = "fc-deep",
                        n_cells: int = 2000,
                        k: int = 7,
                        repeats: int = 5,
                        seed: int = 0) -> float:
    """Time of the max constraint divided by the time of the early module's forward pass."""
    taxonomy = get_builtin_taxonomy(preset)
    network = network or NetworkConfig()
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n_cells, network.input_dim))
    graph = CellGraph("bench", features, knn_graph(features, k, self_loops=network.self_loops))
    model = create_model(network, taxonomy, seed=seed)

    raw = model.scores(graph).data
    r = taxonomy.descendants_with_root
    forward_s = best_time(lambda: model.scores(graph), repeats)
    constraint_s = best_time(lambda: mcm_values(raw, r), repeats)
    share = constraint_s / forward_s
    log(f"Constraint takes {constraint_s * 1e3:.3f} ms of a {forward_s * 1e3:.1f} ms forward pass ({100 * share:.2f}%)")
    return share


def write_report(report: BenchReport, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.table.to_csv(out_dir / "constraint_timings.csv", index=False)
    path = out_dir / "constraint_benchmark.json"
    path.write_text(json.dumps(to_jsonable(report.to_json()), indent=2), encoding="utf-8")
    return path
