from typing import Any, Dict, List

import numpy as np

from fchc.components.graph import CellGraph
from fchc.components.metrics import PredictionSets, argmax_sets, per_class_recall, prediction_sets, true_sets
from fchc.components.taxonomy import Taxonomy
from fchc.interfaces.evaluation import EvaluationBatch
from fchc.interfaces.metric_collector import MetricCollector
from fchc.utils.module_extractor import register_metric_collector
from fchc.utils.utils import log_verbose


@register_metric_collector("class_recall_metric_collector")
class ClassRecallMetricCollector(MetricCollector):
    """
    Percentage of the cells of every class that are predicted as that class.

    The CSV columns hold the threshold-based recall. The details add the
    argmax-based variant, the support of every class and whether it was ever
    predicted, plus the recall averaged over patients.
    """

    def __init__(self, settings: Dict, taxonomy: Taxonomy):
        super().__init__(settings, taxonomy)

        self._hits = None
        self._argmax_hits = None
        self._support = None
        self._predicted_ever = None
        self._patient_recalls = []

    def _column(self, index: int) -> str:
        return f"Recall {self._taxonomy.display_name(index)} (%)"

    def get_collected_metrics_names(self) -> List[str]:
        return [self._column(c.index) for c in self._taxonomy.classes]

    def set_up(self) -> None:
        super().set_up()

        c = len(self._taxonomy)
        self._hits = np.zeros(c, dtype=np.int64)
        self._argmax_hits = np.zeros(c, dtype=np.int64)
        self._support = np.zeros(c, dtype=np.int64)
        self._predicted_ever = np.zeros(c, dtype=bool)
        self._patient_recalls = []

    def prepare_for_measurement(self, graph: CellGraph) -> None:
        pass

    def register_measurement(self, batch: EvaluationBatch, **kwargs) -> None:
        sets = prediction_sets(batch.scores, batch.labels, self._taxonomy, batch.threshold)
        recall = per_class_recall(sets, self._taxonomy)
        self._hits += np.logical_and(sets.alpha, sets.beta).sum(axis=0)
        self._support += recall.support
        self._predicted_ever |= recall.predicted_ever
        self._patient_recalls.append(recall.recall_pct)

        by_argmax = PredictionSets(argmax_sets(batch.scores, self._taxonomy), true_sets(batch.labels, self._taxonomy))
        self._argmax_hits += np.logical_and(by_argmax.alpha, by_argmax.beta).sum(axis=0)

    def tear_down(self) -> None:
        super().tear_down()

    def _percentages(self, hits: np.ndarray) -> np.ndarray:
        return np.where(self._support > 0, 100.0 * hits / np.maximum(self._support, 1), np.nan)

    def report_results(self) -> Dict[str, Any]:
        super().report_results()

        recall = self._percentages(self._hits)
        out = {}
        for c in self._taxonomy.classes:
            value = recall[c.index]
            out[self._column(c.index)] = None if np.isnan(value) else round(float(value), 4)
            log_verbose(f"{self._column(c.index)}: {out[self._column(c.index)]}")
        return out

    def report_details(self) -> Dict[str, Any]:
        threshold = self._percentages(self._hits)
        argmax = self._percentages(self._argmax_hits)
        with np.errstate(invalid="ignore"):
            patient_mean = np.nanmean(np.vstack(self._patient_recalls), axis=0) if self._patient_recalls else threshold

        per_class = {}
        for c in self._taxonomy.classes:
            i = c.index
            present = self._support[i] > 0
            per_class[self._taxonomy.display_name(c)] = {
                "recall_pct": round(float(threshold[i]), 6) if present else None,
                "recall_pct_argmax": round(float(argmax[i]), 6) if present else None,
                "recall_pct_patient_mean": round(float(patient_mean[i]), 6) if present else None,
                "support": int(self._support[i]),
                "predicted_ever": bool(self._predicted_ever[i]),
            }
        return {"per_class": per_class}
