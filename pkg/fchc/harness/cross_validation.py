"""
Patient-level nested cross validation. Inner folds pick the decision threshold
and learning rate from a small grid, every outer fold is then trained once per
seed and evaluated through the metric collectors.
"""
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fchc.components.data_provider import CellTable, FoldPlan, fold_plan
from fchc.components.graph import CellGraph, build_patient_graphs
from fchc.components.metrics import prediction_sets
from fchc.components.taxonomy import Taxonomy, taxonomy_from_config
from fchc.config.config_io import config_hash
from fchc.config.schema import ExperimentConfig
from fchc.errors import DivergedLoss
from fchc.harness.records import RunEntry, RunRecord
from fchc.harness.trainer import TrainHistory, decision_scores, evaluate, train_model
from fchc.interfaces.model import Model
from fchc.utils.csv_logger import CSVLogger
from fchc.utils.module_extractor import create_metric_collectors, create_model
from fchc.utils.utils import get_worker_count, log, log_verbose

Cohort = Sequence[Union[CellTable, CellGraph]]

METADATA_COLUMNS = [
    "Config Hash",
    "Model",
    "Loss",
    "Constraint",
    "Taxonomy",
    "Fold",
    "Seed",
    "Threshold",
    "Learning Rate",
    "Final Loss",
    "Train Time (s)",
]


@dataclass(frozen=True)
class TrainJob:
    """One independent training run; each job builds and owns its model."""
    cfg: ExperimentConfig
    taxonomy: Taxonomy
    graphs: Tuple[CellGraph, ...]
    seed: int
    learning_rate: float
    epochs: int
    fold: Optional[int] = None
    inner_fold: Optional[int] = None


@dataclass(frozen=True)
class TrainedJob:
    job: TrainJob
    parameters: Dict[str, np.ndarray]
    history: TrainHistory

    def model(self) -> Model:
        model = create_model(self.job.cfg.network, self.job.taxonomy, seed=self.job.seed)
        model.load_parameters(self.parameters)
        return model


def _run_train_job(job: TrainJob) -> TrainedJob:
    model, history = train_model(job.graphs, job.cfg, job.taxonomy, seed=job.seed,
                                 learning_rate=job.learning_rate, epochs=job.epochs)
    return TrainedJob(job, {name: t.data for name, t in model.parameters().items()}, history)


def run_jobs(jobs: Sequence[TrainJob]) -> List[TrainedJob]:
    """Run jobs in a process pool when FCHC_THREADS allows it; results keep job order."""
    workers = min(get_worker_count(), len(jobs))
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_run_train_job, jobs))
        return [_run_train_job(job) for job in jobs]
    except DivergedLoss:
        traceback.print_exc()
        log("Training diverged, aborting the cross validation run.")
        raise


def as_graphs(cohort: Cohort, cfg: ExperimentConfig, taxonomy: Taxonomy) -> List[CellGraph]:
    tables = [c for c in cohort if isinstance(c, CellTable)]
    if not tables:
        return list(cohort)
    return build_patient_graphs(tables, taxonomy, cfg.graph.k, cfg.graph.standardization,
                                cfg.network.self_loops, cfg.graph.cache_dir)


def pooled_hf(model: Model, graphs: Sequence[CellGraph], thresholds: Sequence[float], constrain: bool) -> List[float]:
    """Hierarchical F-score over all cells of `graphs` at every threshold."""
    scored = [(decision_scores(model, g, constrain)[1], g.labels) for g in graphs]
    out = []
    for threshold in thresholds:
        overlap = predicted = truth = 0
        for scores, labels in scored:
            sets = prediction_sets(scores, labels, model.taxonomy, threshold)
            overlap += int(np.logical_and(sets.alpha, sets.beta).sum())
            predicted += int(sets.alpha.sum())
            truth += int(sets.beta.sum())
        hp = overlap / predicted if predicted else 0.0
        hr = overlap / truth if truth else 0.0
        out.append(2.0 * hp * hr / (hp + hr) if (hp + hr) > 0 else 0.0)
    return out


def _tuning_jobs(cfg: ExperimentConfig, taxonomy: Taxonomy, by_id: Dict[str, CellGraph],
                 plan: FoldPlan, folds: Sequence[int]) -> List[TrainJob]:
    grid = cfg.folds.grid
    epochs = grid.epochs or cfg.optimizer.epochs
    jobs = []
    for fold in folds:
        inner = plan.inner_folds(fold)
        for lr in grid.learning_rates:
            for i, held_out in enumerate(inner):
                train_ids = [p for p in plan.train(fold) if p not in set(held_out)]
                jobs.append(TrainJob(cfg, taxonomy, tuple(by_id[p] for p in train_ids),
                                     cfg.seeds[0], lr, epochs, fold, i))
    return jobs


def select_hyperparameters(cfg: ExperimentConfig, taxonomy: Taxonomy, by_id: Dict[str, CellGraph],
                           plan: FoldPlan, folds: Sequence[int]) -> Dict[int, Dict[str, float]]:
    """
    Threshold and learning rate per outer fold, maximizing the mean inner-fold
    hf. Ties keep the earliest grid entry.
    """
    default = {"threshold": cfg.threshold, "learning_rate": cfg.optimizer.learning_rate}
    tunable = [f for f in folds if plan.inner_folds(f)] if cfg.folds.tune else []
    chosen = {f: dict(default) for f in folds}
    if not tunable:
        return chosen

    grid = cfg.folds.grid
    log(f"Selecting hyperparameters on inner folds: thresholds {grid.thresholds} x learning rates {grid.learning_rates}")
    trained = run_jobs(_tuning_jobs(cfg, taxonomy, by_id, plan, tunable))

    scores: Dict[Tuple[int, float], List[List[float]]] = {}
    for result in trained:
        job = result.job
        held_out = plan.inner_folds(job.fold)[job.inner_fold]
        hf = pooled_hf(result.model(), [by_id[p] for p in held_out], grid.thresholds, cfg.use_constraint_at_inference)
        scores.setdefault((job.fold, job.learning_rate), []).append(hf)

    for fold in tunable:
        best, best_score = None, -np.inf
        for lr in grid.learning_rates:
            mean_hf = np.mean(np.asarray(scores[(fold, lr)]), axis=0)
            for threshold, value in zip(grid.thresholds, mean_hf):
                if value > best_score:
                    best, best_score = {"threshold": threshold, "learning_rate": lr}, float(value)
        chosen[fold] = best
        log_verbose(f"Fold {fold}: threshold {best['threshold']}, learning rate {best['learning_rate']} "
                    f"(inner hf {best_score:.4f})")
    return chosen


def _split_results(row: Dict, collectors) -> Tuple[Dict, Dict]:
    metrics, timings = {}, {}
    for mc in collectors:
        target = metrics if mc.deterministic else timings
        for col in mc.get_collected_metrics_names():
            target[col] = row.get(col)
    return metrics, timings


def run_cv(cohort: Cohort,
           cfg: ExperimentConfig,
           taxonomy: Optional[Taxonomy] = None,
           output_dir: Optional[str | Path] = None,
           label: Optional[str] = None) -> RunRecord:
    """
    Nested cross validation over the patients of `cohort` (cell tables or
    prebuilt graphs). With `cfg.folds.cv` off a single outer split is run.

    Writes results_<timestamp>.csv, metrics.json (deterministic) and
    run_record.json (with timings) under <output_dir>/cv_<config hash>.
    """
    taxonomy = taxonomy or taxonomy_from_config(cfg.taxonomy.preset, cfg.taxonomy.spec, cfg.taxonomy.names)
    cfg_hash = config_hash(cfg)
    label = label or cfg.network.kind.value
    out_dir = Path(output_dir or cfg.output_dir) / f"cv_{cfg_hash}"

    graphs = as_graphs(cohort, cfg, taxonomy)
    by_id = {g.patient_id: g for g in graphs}
    plan = fold_plan([g.patient_id for g in graphs], cfg.folds.outer, cfg.folds.inner, cfg.folds.seed)
    folds = list(range(len(plan))) if cfg.folds.cv else [0]
    log(f"Cross validation of {label} (config {cfg_hash}): {len(graphs)} patients, "
        f"{len(folds)} outer fold(s) x {len(cfg.seeds)} seed(s)")

    chosen = select_hyperparameters(cfg, taxonomy, by_id, plan, folds)
    jobs = [
        TrainJob(cfg, taxonomy, tuple(by_id[p] for p in plan.train(fold)), seed,
                 chosen[fold]["learning_rate"], cfg.optimizer.epochs, fold)
        for fold in folds
        for seed in cfg.seeds
    ]
    trained = run_jobs(jobs)

    collectors = create_metric_collectors(cfg.metric_collectors, taxonomy)
    entries = []
    with CSVLogger(collectors, str(out_dir), metadata_columns=METADATA_COLUMNS) as logger:
        for i, result in enumerate(trained):
            job = result.job
            threshold = chosen[job.fold]["threshold"]
            log(f"{'-' * 60}\nEvaluating run {i + 1} of {len(trained)}: fold {job.fold}, seed {job.seed}\n{'-' * 60}")
            test_graphs = [by_id[p] for p in plan.test(job.fold)]
            evaluate(result.model(), test_graphs, collectors, threshold, cfg.use_constraint_at_inference,
                     fold=job.fold, seed=job.seed)
            row = logger.log_experiment(meta_values={
                "Config Hash": cfg_hash,
                "Model": label,
                "Loss": cfg.loss.value,
                "Constraint": cfg.use_constraint_at_inference,
                "Taxonomy": cfg.taxonomy.preset or cfg.taxonomy.spec,
                "Fold": job.fold,
                "Seed": job.seed,
                "Threshold": threshold,
                "Learning Rate": job.learning_rate,
                "Final Loss": result.history.final_loss,
                "Train Time (s)": result.history.seconds,
            })
            metrics, timings = _split_results(row, collectors)
            details = {}
            for mc in collectors:
                details.update(mc.report_details())
            timings["Train Time (s)"] = result.history.seconds
            entries.append(RunEntry(
                seed=job.seed,
                fold=job.fold,
                metrics={**metrics, "Final Loss": result.history.final_loss},
                details=details,
                hyperparameters={"threshold": threshold, "learning_rate": job.learning_rate},
                timings=timings,
            ))

    record = RunRecord(cfg_hash, tuple(entries), plan={**plan.to_json(), "evaluated_folds": folds})
    write_record(record, out_dir)
    summary = record.aggregate()
    for key in ("hf", "F1 Score"):
        if key in summary and summary[key]["mean"] is not None:
            log(f"{label} {key}: {summary[key]['mean']:.4f} +- {summary[key]['std']:.4f} over {summary[key]['n']} runs")
    return record


def write_record(record: RunRecord, out_dir: str | Path) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(record.dumps(include_timings=False), encoding="utf-8")
    record_path = out_dir / "run_record.json"
    record_path.write_text(record.dumps(include_timings=True), encoding="utf-8")
    log(f"Run record written to {record_path}")
    return metrics_path, record_path

