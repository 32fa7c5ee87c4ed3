"""
Command line entry point: `fchc <command> [options]`.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 diverged training.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from fchc.components.checkpoint import load_checkpoint
from fchc.components.constraint import mcm, read_score_csv, violation_report, write_score_csv
from fchc.components.data_provider import CellTable, load_cohort, load_patients, write_cohort
from fchc.components.graph import build_patient_graphs
from fchc.components.synthetic import synth_cohort
from fchc.components.taxonomy import Taxonomy, taxonomy_from_config
from fchc.config.config_io import config_hash, deep_merge, load_config
from fchc.config.schema import ExperimentConfig
from fchc.errors import ConfigError, DataError, DivergedLoss, FCHCError
from fchc.utils.utils import log, set_verbose


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="Path to a YAML or JSON config file.")
    common.add_argument("--no-defaults", action="store_true", help="Use only the config file (no defaults).")
    common.add_argument("--preset", help="Named config preset (fchc-gat, fchc-gcn, fchc-sage, fchc-dnn, flat-gat; paper-* aliases accepted).")
    hierarchy = common.add_mutually_exclusive_group()
    hierarchy.add_argument("--hierarchy", help="Hierarchy specification string, e.g. '1,1_1,1_2,2'.")
    hierarchy.add_argument("--hierarchy-preset", help="Built-in hierarchy (fc-deep or fc-shallow).")
    common.add_argument("--out", "-o", help="Output path (file or directory, depending on the command).")
    common.add_argument("--verbose", "-v", action="store_true", help="Log verbose messages to the console.")
    return common


def _data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cells", help="cells.csv with marker columns, a label column and an optional patient column.")
    p.add_argument("--manifest", help="Cohort manifest.json written by `fchc synth`.")


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    p = argparse.ArgumentParser(prog="fchc", description="Hierarchy-constrained cell classification on kNN graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="Train one model on every patient and save a checkpoint.")
    _data_options(train)
    train.add_argument("--seed", type=int, help="Model seed (defaults to the first configured seed).")

    cv = sub.add_parser("cv", parents=[common], help="Nested patient-level cross validation.")
    _data_options(cv)
    cv.add_argument("--no-cv", action="store_true", help="Run a single train/test split.")

    ablate = sub.add_parser("ablate", parents=[common], help="Constraint on/off x deep/shallow x backbone grid.")
    ablate.add_argument("--models", nargs="+", help="Backbones to compare (gat, gcn, sage, mlp).")
    ablate.add_argument("--taxonomies", nargs="+", default=["fc-deep", "fc-shallow"])
    ablate.add_argument("--no-cv", action="store_true", help="Run a single train/test split per variant.")

    constrain = sub.add_parser("constrain", parents=[common], help="Apply the max constraint to a score CSV.")
    constrain.add_argument("--scores", required=True, help="CSV with one column per class.")
    constrain.add_argument("--report", help="Write a violation report (JSON) of the input scores.")

    graph = sub.add_parser("graph", help="Graph utilities.")
    graph_sub = graph.add_subparsers(dest="graph_command", required=True)
    build = graph_sub.add_parser("build", parents=[common], help="Build and cache per-patient kNN graphs.")
    _data_options(build)
    build.add_argument("--k", type=int, help="Neighbors per cell.")

    synth = sub.add_parser("synth", parents=[common], help="Write a synthetic cohort and its manifest.")
    synth.add_argument("--patients", type=int)
    synth.add_argument("--cells-per-patient", type=int)
    synth.add_argument("--coupling", type=float)
    synth.add_argument("--seed", type=int)

    importance = sub.add_parser("importance", parents=[common], help="Permutation importance of every marker.")
    _data_options(importance)
    importance.add_argument("--checkpoint", required=True)
    importance.add_argument("--shuffles", type=int)

    embed = sub.add_parser("embed", parents=[common], help="Export penultimate activations of one patient graph.")
    _data_options(embed)
    embed.add_argument("--checkpoint", required=True)
    embed.add_argument("--patient", help="Patient id when the input holds several patients.")

    bench = sub.add_parser("bench", parents=[common], help="Benchmark the max constraint.")
    bench.add_argument("--sizes", type=int, nargs="+", default=[10, 100, 1000])
    bench.add_argument("--samples", type=int, default=1000)
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--no-dense", action="store_true", help="Skip the dense-mask path.")

    sub.add_parser("taxonomy", parents=[common], help="Print or export the class tree.")
    return p


# ---- helpers ----

def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, "hierarchy", None):
        overrides["taxonomy"] = {"spec": args.hierarchy}
    elif getattr(args, "hierarchy_preset", None):
        overrides["taxonomy"] = {"preset": args.hierarchy_preset, "spec": None}
    if getattr(args, "no_cv", False):
        overrides["folds"] = {"cv": False}
    return overrides


def load_experiment_config(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    overrides = deep_merge(_overrides(args), extra or {})
    use_defaults = not args.no_defaults or args.config is None
    return load_config(args.config, use_defaults=use_defaults, preset=args.preset, overrides=overrides)


def config_taxonomy(cfg: ExperimentConfig) -> Taxonomy:
    return taxonomy_from_config(cfg.taxonomy.preset, cfg.taxonomy.spec, cfg.taxonomy.names)


def load_tables(args: argparse.Namespace, cfg: ExperimentConfig, taxonomy: Taxonomy) -> List[CellTable]:
    """Cells from --cells/--manifest, then the config's data paths, then a synthetic cohort."""
    if getattr(args, "cells", None):
        return load_patients(args.cells, taxonomy)
    if getattr(args, "manifest", None):
        return load_cohort(args.manifest, taxonomy)
    if cfg.data.cells_path:
        return load_patients(cfg.data.cells_path, taxonomy)
    if cfg.data.manifest_path:
        return load_cohort(cfg.data.manifest_path, taxonomy)
    log(f"No input data given, synthesizing {cfg.data.synth.patients} patients")
    return synth_cohort(cfg.data.synth, taxonomy)


def _build_graphs(tables: List[CellTable], cfg: ExperimentConfig, taxonomy: Taxonomy, cache_dir=None):
    return build_patient_graphs(tables, taxonomy, cfg.graph.k, cfg.graph.standardization,
                                cfg.network.self_loops, cache_dir or cfg.graph.cache_dir)


def _out_dir(args: argparse.Namespace, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.output_dir)


# ---- commands ----

def cmd_train(args: argparse.Namespace) -> None:
    from fchc.harness.trainer import train

    cfg = load_experiment_config(args)
    taxonomy = config_taxonomy(cfg)
    graphs = _build_graphs(load_tables(args, cfg, taxonomy), cfg, taxonomy)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"model_{config_hash(cfg)}.json"
    result = train(graphs, cfg, taxonomy, seed=args.seed, checkpoint_path=out)
    record_path = out.with_name(out.stem + "_record.json")
    record_path.write_text(result.record.dumps(include_timings=True), encoding="utf-8")
    log(f"Run record written to {record_path}")


def cmd_cv(args: argparse.Namespace) -> None:
    from fchc.harness.cross_validation import run_cv

    cfg = load_experiment_config(args)
    taxonomy = config_taxonomy(cfg)
    run_cv(load_tables(args, cfg, taxonomy), cfg, taxonomy, output_dir=_out_dir(args, cfg))


def cmd_ablate(args: argparse.Namespace) -> None:
    from fchc.harness.ablation import ablate

    extra = {"models": args.models} if args.models else None
    cfg = load_experiment_config(args, extra)
    ablate(cfg, taxonomies=args.taxonomies, output_dir=_out_dir(args, cfg))


def cmd_constrain(args: argparse.Namespace) -> None:
    cfg = load_experiment_config(args)
    taxonomy = config_taxonomy(cfg)
    scores = read_score_csv(args.scores, taxonomy)
    report = violation_report(scores, taxonomy)
    log(f"Input: {report['count']} violations in {report['samples_affected']} of {scores.n_samples} samples")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2), encoding="utf-8")

    constrained = mcm(scores)
    out = Path(args.out) if args.out else Path(args.scores).with_name(Path(args.scores).stem + "_constrained.csv")
    write_score_csv(constrained, out)
    log(f"Constrained scores written to {out}")


def cmd_graph_build(args: argparse.Namespace) -> None:
    extra = {"graph": {"k": args.k}} if args.k else None
    cfg = load_experiment_config(args, extra)
    taxonomy = config_taxonomy(cfg)
    cache_dir = args.out or cfg.graph.cache_dir or str(Path(cfg.output_dir) / "graphs")
    tables = load_tables(args, cfg, taxonomy)
    graphs = _build_graphs(tables, cfg, taxonomy, cache_dir)
    log(f"Cached {len(graphs)} graphs ({sum(g.neighborhoods.n_edges for g in graphs)} edges) in {cache_dir}")


def cmd_synth(args: argparse.Namespace) -> None:
    synth = {key: value for key, value in {
        "patients": args.patients,
        "cells_per_patient": args.cells_per_patient,
        "coupling": args.coupling,
        "seed": args.seed,
    }.items() if value is not None}
    cfg = load_experiment_config(args, {"data": {"synth": synth}} if synth else None)
    taxonomy = config_taxonomy(cfg)
    tables = synth_cohort(cfg.data.synth, taxonomy)
    out = args.out or str(Path(cfg.output_dir) / "cohort")
    write_cohort(tables, out, taxonomy, generator=cfg.data.synth.model_dump(mode="json"), seed=cfg.data.synth.seed)


def cmd_importance(args: argparse.Namespace) -> None:
    from fchc.harness.analysis import feature_importance

    checkpoint = load_checkpoint(args.checkpoint)
    cfg, taxonomy = checkpoint.config, checkpoint.taxonomy
    graphs = _build_graphs(load_tables(args, cfg, taxonomy), cfg, taxonomy)
    report = feature_importance(checkpoint.model, graphs, cfg.threshold,
                                shuffles=args.shuffles or cfg.importance_shuffles,
                                seed=checkpoint.model.seed, constrain=cfg.use_constraint_at_inference)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "feature_importance.json"
    report.dump(out)
    log(f"Marker ranking: {', '.join(report.ranking)}")
    log(f"Feature importance written to {out}")


def cmd_embed(args: argparse.Namespace) -> None:
    from fchc.harness.analysis import export_embeddings

    checkpoint = load_checkpoint(args.checkpoint)
    cfg, taxonomy = checkpoint.config, checkpoint.taxonomy
    tables = load_tables(args, cfg, taxonomy)
    if args.patient:
        tables = [t for t in tables if t.patient_id == args.patient]
        if not tables:
            raise DataError(f"Patient '{args.patient}' not found in the input")
    elif len(tables) > 1:
        raise DataError(f"Input holds {len(tables)} patients, select one with --patient")
    graph = _build_graphs(tables, cfg, taxonomy)[0]
    out = args.out or str(Path(cfg.output_dir) / f"embeddings_{graph.patient_id}.csv")
    export_embeddings(checkpoint.model, graph, out)


def cmd_bench(args: argparse.Namespace) -> None:
    from fchc.harness.benchmark import BenchReport, bench_constraint, constraint_overhead, write_report

    cfg = load_experiment_config(args)
    report = bench_constraint(args.sizes, args.samples, repeats=args.repeats, dense=not args.no_dense)
    share = constraint_overhead(cfg.network, cfg.taxonomy.preset or "fc-deep", repeats=args.repeats)
    report = BenchReport(report.table, report.sparse_exponent, report.dense_exponent, share)
    path = write_report(report, _out_dir(args, cfg))
    log(f"Benchmark written to {path}")


def cmd_taxonomy(args: argparse.Namespace) -> None:
    cfg = load_experiment_config(args)
    taxonomy = config_taxonomy(cfg)
    text = taxonomy.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        log(f"Taxonomy written to {args.out}")
    else:
        print(text)


COMMANDS = {
    "train": cmd_train,
    "cv": cmd_cv,
    "ablate": cmd_ablate,
    "constrain": cmd_constrain,
    "graph": cmd_graph_build,
    "synth": cmd_synth,
    "importance": cmd_importance,
    "embed": cmd_embed,
    "bench": cmd_bench,
    "taxonomy": cmd_taxonomy,
}


def exit_code(error: BaseException) -> int:
    if isinstance(error, (ConfigError, DataError, DivergedLoss)):
        return error.exit_code
    # malformed hierarchy strings and unknown names come from the command line
    if isinstance(error, FCHCError):
        return ConfigError.exit_code
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        set_verbose(True)
    try:
        COMMANDS[args.command](args)
    except FCHCError as e:
        log(f"{type(e).__name__}: {e}")
        return exit_code(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
