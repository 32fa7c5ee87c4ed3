import time
from typing import Any, Dict, List

from fchc.components.graph import CellGraph
from fchc.components.taxonomy import Taxonomy
from fchc.interfaces.evaluation import EvaluationBatch
from fchc.interfaces.metric_collector import MetricCollector
from fchc.utils.module_extractor import register_metric_collector
from fchc.utils.utils import log


@register_metric_collector("efficiency_metric_collector")
class EfficiencyMetricCollector(MetricCollector):
    """
    Collects inference latency: the time between `prepare_for_measurement` and
    `register_measurement` of every evaluated patient graph.
    """
    deterministic = False

    def __init__(self, settings: Dict, taxonomy: Taxonomy):
        super().__init__(settings, taxonomy)

        self._n_graphs = None
        self._n_cells = None
        self._total_latency = None

        self.start_time = None

    def get_collected_metrics_names(self) -> List[str]:
        return ["Average Latency (s)", "Latency per 1k Cells (ms)"]

    def set_up(self) -> None:
        super().set_up()

        self._n_graphs = 0
        self._n_cells = 0
        self._total_latency = 0.0

    def prepare_for_measurement(self, graph: CellGraph) -> None:
        self.start_time = time.perf_counter()

    def register_measurement(self, batch: EvaluationBatch, **kwargs) -> None:
        self._n_graphs += 1
        self._n_cells += batch.n_cells
        self._total_latency += time.perf_counter() - self.start_time

    def tear_down(self) -> None:
        super().tear_down()

    def report_results(self) -> Dict[str, Any]:
        super().report_results()

        if self._n_graphs == 0:
            raise RuntimeError("No measurements registered, cannot produce results.")

        average_latency = self._total_latency / self._n_graphs
        per_k_cells = 1e6 * self._total_latency / max(self._n_cells, 1)
        log(f"Average Latency (s): {average_latency:.4f}")
        return {"Average Latency (s)": average_latency, "Latency per 1k Cells (ms)": per_k_cells}
