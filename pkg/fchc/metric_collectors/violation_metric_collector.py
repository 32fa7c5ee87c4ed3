from typing import Any, Dict, List

from fchc.components.constraint import violation_counts
from fchc.components.graph import CellGraph
from fchc.components.taxonomy import Taxonomy
from fchc.interfaces.evaluation import EvaluationBatch
from fchc.interfaces.metric_collector import MetricCollector
from fchc.utils.module_extractor import register_metric_collector
from fchc.utils.utils import log


@register_metric_collector("violation_metric_collector")
class ViolationMetricCollector(MetricCollector):
    """
    Hierarchy violations in the decision scores (zero whenever the constraint
    is applied) and in the raw scores of the early module.
    """

    def __init__(self, settings: Dict, taxonomy: Taxonomy):
        super().__init__(settings, taxonomy)

        self._counts = {}

    def get_collected_metrics_names(self) -> List[str]:
        return ["Violations", "Violating Cells (%)", "Raw Violating Cells (%)"]

    def set_up(self) -> None:
        super().set_up()

        self._counts = {"count": 0, "samples_affected": 0, "raw_samples_affected": 0, "cells": 0}

    def prepare_for_measurement(self, graph: CellGraph) -> None:
        pass

    def register_measurement(self, batch: EvaluationBatch, **kwargs) -> None:
        decision = violation_counts(batch.scores, self._taxonomy)
        raw = violation_counts(batch.raw, self._taxonomy)
        self._counts["count"] += decision["count"]
        self._counts["samples_affected"] += decision["samples_affected"]
        self._counts["raw_samples_affected"] += raw["samples_affected"]
        self._counts["cells"] += batch.n_cells

    def tear_down(self) -> None:
        super().tear_down()

    def report_results(self) -> Dict[str, Any]:
        super().report_results()

        cells = max(self._counts["cells"], 1)
        out = {
            "Violations": self._counts["count"],
            "Violating Cells (%)": 100.0 * self._counts["samples_affected"] / cells,
            "Raw Violating Cells (%)": 100.0 * self._counts["raw_samples_affected"] / cells,
        }
        log(f"Hierarchy violations: {out['Violations']} ({out['Violating Cells (%)']:.2f}% of cells)")
        return out
