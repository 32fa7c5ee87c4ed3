from typing import Any, Dict, List

import numpy as np

from fchc.components.graph import CellGraph
from fchc.components.metrics import flat_prf, predicted_leaf
from fchc.components.taxonomy import Taxonomy
from fchc.interfaces.evaluation import EvaluationBatch
from fchc.interfaces.metric_collector import MetricCollector
from fchc.utils.module_extractor import register_metric_collector
from fchc.utils.utils import log


@register_metric_collector("flat_metric_collector")
class FlatMetricCollector(MetricCollector):
    """Macro-averaged precision, recall and F1 of the argmax leaf against the true leaf."""

    def __init__(self, settings: Dict, taxonomy: Taxonomy):
        super().__init__(settings, taxonomy)

        self._predicted = []
        self._truth = []

    def get_collected_metrics_names(self) -> List[str]:
        return ["Precision", "Recall", "F1 Score"]

    def set_up(self) -> None:
        super().set_up()

        self._predicted = []
        self._truth = []

    def prepare_for_measurement(self, graph: CellGraph) -> None:
        pass

    def register_measurement(self, batch: EvaluationBatch, **kwargs) -> None:
        self._predicted.append(predicted_leaf(batch.scores, self._taxonomy))
        self._truth.append(np.asarray(batch.labels, dtype=np.int64))

    def tear_down(self) -> None:
        super().tear_down()

    def report_results(self) -> Dict[str, Any]:
        super().report_results()

        if not self._truth:
            raise RuntimeError("No measurements registered, cannot produce results.")

        scores = flat_prf(np.concatenate(self._predicted), np.concatenate(self._truth))
        out = {"Precision": scores.precision, "Recall": scores.recall, "F1 Score": scores.f1}
        for key, value in out.items():
            log(f"{key}: {value:.4f}")
        return out
