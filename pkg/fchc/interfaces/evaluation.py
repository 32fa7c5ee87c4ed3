from dataclasses import dataclass
from typing import Optional

import numpy as np

from fchc.components.constraint import ScoreMatrix


@dataclass(eq=False)
class EvaluationBatch:
    """
    Everything the metric collectors see about one evaluated patient graph:
    the raw and the decision scores, the true leaf of every cell and the
    decision threshold.
    """
    patient_id: str
    labels: np.ndarray
    raw: ScoreMatrix
    scores: ScoreMatrix
    threshold: float = 0.5
    fold: Optional[int] = None
    seed: Optional[int] = None

    @property
    def n_cells(self) -> int:
        return len(self.labels)

    @property
    def taxonomy(self):
        return self.scores.taxonomy
