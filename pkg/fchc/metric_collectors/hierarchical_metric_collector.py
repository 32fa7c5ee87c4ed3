from typing import Any, Dict, List

import numpy as np

from fchc.components.graph import CellGraph
from fchc.components.metrics import hierarchical_prf, prediction_sets
from fchc.components.taxonomy import Taxonomy
from fchc.interfaces.evaluation import EvaluationBatch
from fchc.interfaces.metric_collector import MetricCollector
from fchc.utils.module_extractor import register_metric_collector
from fchc.utils.utils import log


@register_metric_collector("hierarchical_metric_collector")
class HierarchicalMetricCollector(MetricCollector):
    """
    Hierarchical precision, recall and F-score. Pooled scores sum the set
    sizes over every evaluated cell; the patient mean averages per-patient hf.
    """

    def __init__(self, settings: Dict, taxonomy: Taxonomy):
        super().__init__(settings, taxonomy)

        self._overlap = None
        self._predicted = None
        self._truth = None
        self._per_patient = {}

    def get_collected_metrics_names(self) -> List[str]:
        return ["hp", "hr", "hf", "hf (patient mean)"]

    def set_up(self) -> None:
        super().set_up()

        self._overlap = 0
        self._predicted = 0
        self._truth = 0
        self._per_patient = {}

    def prepare_for_measurement(self, graph: CellGraph) -> None:
        pass

    def register_measurement(self, batch: EvaluationBatch, **kwargs) -> None:
        sets = prediction_sets(batch.scores, batch.labels, self._taxonomy, batch.threshold)
        self._overlap += int(np.logical_and(sets.alpha, sets.beta).sum())
        self._predicted += int(sets.alpha.sum())
        self._truth += int(sets.beta.sum())
        self._per_patient[batch.patient_id] = hierarchical_prf(sets)._asdict()

    def tear_down(self) -> None:
        super().tear_down()

    def report_results(self) -> Dict[str, Any]:
        super().report_results()

        if self._truth == 0:
            raise RuntimeError("No measurements registered, cannot produce results.")

        hp = self._overlap / self._predicted if self._predicted else 0.0
        hr = self._overlap / self._truth
        hf = 2.0 * hp * hr / (hp + hr) if (hp + hr) > 0 else 0.0
        patient_mean = float(np.mean([s["hf"] for s in self._per_patient.values()]))

        out = {"hp": hp, "hr": hr, "hf": hf, "hf (patient mean)": patient_mean}
        for key, value in out.items():
            log(f"{key}: {value:.4f}")
        return out

    def report_details(self) -> Dict[str, Any]:
        return {"per_patient": self._per_patient}
