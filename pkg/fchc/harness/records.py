"""
Immutable run records: one entry per evaluated (fold, seed) job plus the
aggregates reported over seeds, over folds and over both.
"""
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


def to_jsonable(value: Any) -> Any:
    """numpy scalars and arrays become plain Python values, NaN/Inf become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _as_float(value: Any) -> float:
    if value is None or value == "" or isinstance(value, (bool, np.bool_)):
        return math.nan
    try:
        return float(value)
    except (TypeError, ValueError):
        return math.nan


def _nan_stat(values: np.ndarray, fn) -> Optional[float]:
    finite = values[np.isfinite(values)]
    return float(fn(finite)) if finite.size else None


@dataclass(frozen=True)
class RunEntry:
    seed: int
    fold: Optional[int] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def to_json(self, include_timings: bool = True) -> Dict[str, Any]:
        out = {
            "fold": self.fold,
            "seed": self.seed,
            "metrics": self.metrics,
            "details": self.details,
            "hyperparameters": self.hyperparameters,
        }
        if include_timings:
            out["timings"] = self.timings
        return to_jsonable(out)


@dataclass(frozen=True)
class RunRecord:
    config_hash: str
    entries: Tuple[RunEntry, ...]
    plan: Optional[Dict[str, Any]] = None

    def metric_names(self) -> List[str]:
        names: List[str] = []
        for entry in self.entries:
            for key, value in entry.metrics.items():
                if key not in names and math.isfinite(_as_float(value)):
                    names.append(key)
        return names

    def values(self, metric: str) -> np.ndarray:
        return np.array([_as_float(e.metrics.get(metric)) for e in self.entries])

    def _grouped_std(self, metric: str, by: str) -> Optional[float]:
        """Std within each group of entries sharing `by`, averaged over groups."""
        groups: Dict[Any, List[float]] = {}
        for entry, value in zip(self.entries, self.values(metric)):
            groups.setdefault(getattr(entry, by), []).append(value)
        stds = [_nan_stat(np.array(v), np.std) for v in groups.values()]
        stds = [s for s in stds if s is not None]
        return float(np.mean(stds)) if stds else None

    def aggregate(self) -> Dict[str, Dict[str, Optional[float]]]:
        """
        For every numeric metric: mean and std over all entries, the std across
        seeds within a fold and the std across folds within a seed.
        """
        out = {}
        for name in self.metric_names():
            values = self.values(name)
            out[name] = {
                "mean": _nan_stat(values, np.mean),
                "std": _nan_stat(values, np.std),
                "std_over_seeds": self._grouped_std(name, "fold"),
                "std_over_folds": self._grouped_std(name, "seed"),
                "n": int(np.isfinite(values).sum()),
            }
        return out

    def mean(self, metric: str) -> Optional[float]:
        return _nan_stat(self.values(metric), np.mean)

    def total_timings(self) -> Dict[str, float]:
        totals: Dict[str, float] = {}
        for entry in self.entries:
            for key, value in entry.timings.items():
                totals[key] = totals.get(key, 0.0) + float(value)
        return totals

    def to_json(self, include_timings: bool = True) -> Dict[str, Any]:
        out = {
            "config_hash": self.config_hash,
            "runs": [e.to_json(include_timings) for e in self.entries],
            "aggregate": self.aggregate(),
        }
        if self.plan is not None:
            out["plan"] = self.plan
        if include_timings:
            out["timings"] = self.total_timings()
        return to_jsonable(out)

    def dumps(self, include_timings: bool = False) -> str:
        """Canonical JSON; without timings the text depends only on config and seeds."""
        return json.dumps(self.to_json(include_timings), indent=2, sort_keys=True)
