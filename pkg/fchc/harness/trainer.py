"""
Training and evaluation of a single model: Adam updates, one full-batch step per
patient graph and epoch, on the unconstrained scores; evaluation runs the
inference path through the metric collectors.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fchc.components.checkpoint import save_checkpoint
from fchc.components.constraint import ScoreMatrix, mcm
from fchc.components.graph import CellGraph
from fchc.components.loss import bce, bce_grad, mcloss, mcloss_grad
from fchc.components.taxonomy import Taxonomy, taxonomy_from_config
from fchc.config.config_io import config_hash
from fchc.config.schema import ExperimentConfig, LossKind, OptimizerConfig
from fchc.diffcore import ops
from fchc.diffcore.tensor import Tape, Tensor, set_debug
from fchc.errors import ConfigError, DivergedLoss, TooFewPatients
from fchc.harness.records import RunEntry, RunRecord
from fchc.interfaces.evaluation import EvaluationBatch
from fchc.interfaces.metric_collector import MetricCollector
from fchc.interfaces.model import Model
from fchc.utils.module_extractor import create_model
from fchc.utils.utils import log, log_verbose


class Adam:
    """Adaptive moment estimation over a dict of parameter tensors."""

    def __init__(self,
                 params: Dict[str, Tensor],
                 learning_rate: float = 1e-3,
                 beta1: float = 0.9,
                 beta2: float = 0.999,
                 eps: float = 1e-8):
        self._params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    @classmethod
    def from_config(cls, params: Dict[str, Tensor], cfg: OptimizerConfig, learning_rate: Optional[float] = None) -> "Adam":
        if cfg.kind.lower() != "adam":
            raise ConfigError(f"Unsupported optimizer '{cfg.kind}', only 'adam' is available")
        return cls(params, learning_rate or cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, p in self._params.items():
            if p.grad is None:
                continue
            m = self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * p.grad
            v = self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * p.grad ** 2
            p.data = p.data - self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainHistory:
    losses: List[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.losses)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def non_increasing_share(self) -> float:
        """Share of epochs whose loss did not exceed the previous epoch's."""
        if len(self.losses) < 2:
            return 1.0
        diffs = np.diff(np.asarray(self.losses))
        return float(np.mean(diffs <= 0.0))


@dataclass(eq=False)
class TrainResult:
    model: Model
    history: TrainHistory
    record: RunRecord
    checkpoint: Optional[Path] = None


def loss_and_grad(values: np.ndarray,
                  targets: np.ndarray,
                  taxonomy: Taxonomy,
                  loss: LossKind = LossKind.MCLOSS,
                  reduction: str = "sum") -> Tuple[float, np.ndarray]:
    """
    Loss value and gradient for N x (C + 1) scores whose last column is the
    root slot.
    """
    if LossKind(loss) == LossKind.MCLOSS:
        r = taxonomy.descendants_with_root
        return mcloss(values, targets, r, reduction).total, mcloss_grad(values, targets, r, reduction)
    return bce(values, targets, reduction).total, bce_grad(values, targets, reduction)


def _diverged(model: Model, epoch: int, graph: CellGraph, value: float) -> DivergedLoss:
    bad = [name for name, p in model.parameters().items() if not np.all(np.isfinite(p.data))]
    return DivergedLoss(
        f"Loss became {value} at epoch {epoch + 1} on patient {graph.patient_id}; "
        f"non-finite parameters: {bad or 'none'}"
    )


def train_step(model: Model,
               graph: CellGraph,
               targets: np.ndarray,
               optimizer: Adam,
               loss: LossKind,
               reduction: str,
               step: int) -> Tuple[float, np.ndarray]:
    """One forward/backward pass on `graph` followed by an optimizer update."""
    model.zero_grad()
    with Tape() as tape:
        out = model.scores(graph, training=True, step=step)
        value, grad = loss_and_grad(out.data, targets, model.taxonomy, loss, reduction)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return value, grad
        objective = ops.objective(out, value, grad, name=LossKind(loss).value)
    tape.backward(objective)
    optimizer.step()
    return value, grad


def train_model(graphs: Sequence[CellGraph],
                cfg: ExperimentConfig,
                taxonomy: Taxonomy,
                seed: int = 0,
                learning_rate: Optional[float] = None,
                epochs: Optional[int] = None,
                label: Optional[str] = None) -> Tuple[Model, TrainHistory]:
    if not graphs:
        raise TooFewPatients("Training needs at least one labeled patient graph")
    set_debug(cfg.debug)

    model = create_model(cfg.network, taxonomy, seed=seed, label=label)
    optimizer = Adam.from_config(model.parameters(), cfg.optimizer, learning_rate)
    epochs = epochs or cfg.optimizer.epochs
    targets = [g.targets(taxonomy, with_root=True) for g in graphs]

    history = TrainHistory()
    start = time.perf_counter()
    for epoch in range(epochs):
        epoch_loss = 0.0
        for i, (graph, y) in enumerate(zip(graphs, targets)):
            value, grad = train_step(model, graph, y, optimizer, cfg.loss, cfg.loss_reduction, epoch * len(graphs) + i)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise _diverged(model, epoch, graph, value)
            epoch_loss += value
        history.losses.append(epoch_loss)
        log_verbose(f"[{model}] epoch {epoch + 1}/{epochs}: loss {epoch_loss:.6f}")
    history.seconds = time.perf_counter() - start

    log(f"Trained {model} ({model.parameter_count()} parameters) for {epochs} epochs "
        f"on {len(graphs)} graphs in {history.seconds:.1f}s, final loss {history.final_loss:.6f}")
    return model, history


def decision_scores(model: Model, graph: CellGraph, constrain: bool = True) -> Tuple[ScoreMatrix, ScoreMatrix]:
    """Raw early-module scores and the scores decisions are made on."""
    raw = model.forward(graph, mode="infer", constrain=False)
    return raw, (mcm(raw) if constrain else raw)


def evaluate(model: Model,
             graphs: Sequence[CellGraph],
             collectors: Sequence[MetricCollector],
             threshold: float = 0.5,
             constrain: bool = True,
             fold: Optional[int] = None,
             seed: Optional[int] = None) -> List[EvaluationBatch]:
    """
    Run the collector lifecycle over `graphs`. Results are left in the
    collectors, to be read through `report_results` (or a CSVLogger).
    """
    for mc in collectors:
        mc.set_up()
    batches = []
    try:
        for graph in graphs:
            if graph.labels is None:
                raise TooFewPatients(f"Patient {graph.patient_id} carries no labels to evaluate against")
            for mc in collectors:
                mc.prepare_for_measurement(graph)
            raw, scores = decision_scores(model, graph, constrain)
            batch = EvaluationBatch(graph.patient_id, graph.labels, raw, scores, threshold, fold, seed)
            for mc in collectors:
                mc.register_measurement(batch)
            batches.append(batch)
    finally:
        for mc in collectors:
            mc.tear_down()
    return batches


def train(graphs: Sequence[CellGraph],
          cfg: ExperimentConfig,
          taxonomy: Optional[Taxonomy] = None,
          seed: Optional[int] = None,
          checkpoint_path: Optional[str | Path] = None) -> TrainResult:
    """Train one model and save it to `checkpoint_path` when given."""
    taxonomy = taxonomy or taxonomy_from_config(cfg.taxonomy.preset, cfg.taxonomy.spec, cfg.taxonomy.names)
    seed = cfg.seeds[0] if seed is None else seed
    cfg_hash = config_hash(cfg)
    log(f"Training {cfg.network.kind.value} with {cfg.loss.value} (config {cfg_hash}, seed {seed})")

    model, history = train_model(graphs, cfg, taxonomy, seed=seed)
    entry = RunEntry(
        seed=seed,
        metrics={"Final Loss": history.final_loss, "Epochs": history.epochs},
        details={"losses": history.losses},
        hyperparameters={"learning_rate": cfg.optimizer.learning_rate, "threshold": cfg.threshold},
        timings={"Train Time (s)": history.seconds},
    )
    record = RunRecord(cfg_hash, (entry,))

    saved = None
    if checkpoint_path is not None:
        saved = save_checkpoint(checkpoint_path, model, cfg, metrics=record.to_json(include_timings=False))
        log(f"Checkpoint written to {saved}")
    return TrainResult(model, history, record, saved)
