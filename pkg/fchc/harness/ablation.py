"""
Ablation grid: hierarchical module on/off x deep/shallow taxonomy x backbone.
The constrained variant trains with MCLoss and applies the max constraint at
inference; the flat variant is the same backbone with BCE and no constraint.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import pandas as pd

from fchc.components.data_provider import CellTable
from fchc.components.synthetic import synth_cohort
from fchc.components.taxonomy import Taxonomy, get_builtin_taxonomy
from fchc.config.config_io import config_hash
from fchc.config.schema import ExperimentConfig, LossKind, ModelKind, TaxonomyConfig
from fchc.harness.cross_validation import as_graphs, run_cv
from fchc.harness.records import RunRecord, to_jsonable
from fchc.utils.utils import log

BACKBONE_NAMES = {
    ModelKind.GAT: "GAT",
    ModelKind.GCN: "GCN",
    ModelKind.SAGE: "SAGE",
    ModelKind.MLP: "DNN",
}
HIERARCHICAL_ROWS = ("hp", "hr", "hf")
FLAT_ROWS = ("Precision", "Recall", "F1 Score")
DEFAULT_TAXONOMIES = ("fc-deep", "fc-shallow")


def variant_name(kind: ModelKind, constrained: bool) -> str:
    name = BACKBONE_NAMES[ModelKind(kind)]
    return f"FCHC-{name}" if constrained else name


def variant_config(base: ExperimentConfig, taxonomy: str, kind: ModelKind, constrained: bool) -> ExperimentConfig:
    return base.model_copy(update={
        "taxonomy": TaxonomyConfig(preset=taxonomy),
        "network": base.network.model_copy(update={"kind": ModelKind(kind)}),
        "loss": LossKind.MCLOSS if constrained else LossKind.BCE,
        "use_constraint_at_inference": constrained,
    }, deep=True)


@dataclass
class AblationResult:
    records: Dict[Tuple[str, str], RunRecord] = field(default_factory=dict)
    hierarchical: Optional[pd.DataFrame] = None
    class_recall: Optional[pd.DataFrame] = None
    flat: Optional[pd.DataFrame] = None

    def mean(self, taxonomy: str, variant: str, metric: str) -> Optional[float]:
        return self.records[(taxonomy, variant)].mean(metric)

    def gaps(self) -> Dict[str, Dict[str, Optional[float]]]:
        """hf of every constrained variant minus the macro F1 of its flat counterpart."""
        out: Dict[str, Dict[str, Optional[float]]] = {}
        for (taxonomy, variant) in self.records:
            if not variant.startswith("FCHC-"):
                continue
            flat = variant[len("FCHC-"):]
            hf = self.mean(taxonomy, variant, "hf")
            f1 = self.mean(taxonomy, flat, "F1 Score") if (taxonomy, flat) in self.records else None
            gap = hf - f1 if hf is not None and f1 is not None else None
            out.setdefault(taxonomy, {})[variant] = gap
        return out


def _column(taxonomy: str, variant: str, n_taxonomies: int) -> str:
    return variant if n_taxonomies == 1 else f"{variant} [{taxonomy}]"


def _stat(summary: Dict, key: str, stat: str) -> Optional[float]:
    return summary.get(key, {}).get(stat)


def _tables(result: AblationResult, taxonomies: Mapping[str, Taxonomy]) -> None:
    hierarchical, flat, recall_rows = {}, {}, []
    for (tax_name, variant), record in result.records.items():
        col = _column(tax_name, variant, len(taxonomies))
        summary = record.aggregate()
        hierarchical[col] = {**{m: _stat(summary, m, "mean") for m in HIERARCHICAL_ROWS},
                             **{f"{m} (std)": _stat(summary, m, "std") for m in HIERARCHICAL_ROWS}}
        flat[col] = {m: _stat(summary, m, "mean") for m in FLAT_ROWS}
        t = taxonomies[tax_name]
        for c in t.classes:
            name = t.display_name(c)
            recall_rows.append({"taxonomy": tax_name, "class": name, "variant": variant,
                                "recall": _stat(summary, f"Recall {name} (%)", "mean")})

    result.hierarchical = pd.DataFrame(hierarchical)
    result.flat = pd.DataFrame(flat)
    # rows in taxonomy order, then canonical class order
    order = [(tax, taxonomies[tax].display_name(c)) for tax in taxonomies for c in taxonomies[tax].classes]
    variants = list(dict.fromkeys(r["variant"] for r in recall_rows))
    table = pd.DataFrame(recall_rows).pivot(index=["taxonomy", "class"], columns="variant", values="recall")
    result.class_recall = table.reindex(index=pd.MultiIndex.from_tuples(order, names=["taxonomy", "class"]),
                                        columns=variants)


def write_tables(result: AblationResult, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.hierarchical.to_csv(out_dir / "hierarchical_metrics.csv", float_format="%.4f")
    result.class_recall.to_csv(out_dir / "class_recall.csv", float_format="%.2f")
    result.flat.to_csv(out_dir / "flat_metrics.csv", float_format="%.4f")
    summary = {
        "runs": {f"{tax}/{variant}": record.config_hash for (tax, variant), record in result.records.items()},
        "hf_minus_flat_f1": result.gaps(),
    }
    (out_dir / "ablation_summary.json").write_text(json.dumps(to_jsonable(summary), indent=2, sort_keys=True),
                                                  encoding="utf-8")
    log(f"Ablation tables written to {out_dir}")
    return out_dir


def ablate(base_cfg: ExperimentConfig,
           cohorts: Optional[Mapping[str, Sequence[CellTable]]] = None,
           taxonomies: Sequence[str] = DEFAULT_TAXONOMIES,
           models: Optional[Sequence[ModelKind]] = None,
           output_dir: Optional[str | Path] = None) -> AblationResult:
    """
    Cross-validate every variant of the grid. `cohorts` maps a taxonomy preset
    to the cell tables labeled under it; missing cohorts are synthesized from
    `base_cfg.data.synth` with the matching preset.
    """
    models = list(models or base_cfg.models)
    out_dir = Path(output_dir or base_cfg.output_dir) / f"ablation_{config_hash(base_cfg)}"
    cohorts = dict(cohorts or {})
    resolved = {name: get_builtin_taxonomy(name) for name in taxonomies}
    log(f"Ablation over {list(taxonomies)} x {[BACKBONE_NAMES[ModelKind(m)] for m in models]} x constraint on/off")

    result = AblationResult()
    for tax_name, taxonomy in resolved.items():
        tables = cohorts.get(tax_name)
        if tables is None:
            synth = base_cfg.data.synth
            # proportions name leaves of the configured preset only
            update = {"preset": tax_name} if tax_name == synth.preset else {"preset": tax_name, "proportions": None}
            tables = synth_cohort(synth.model_copy(update=update), taxonomy)
        graphs = as_graphs(tables, base_cfg, taxonomy)
        for kind in models:
            for constrained in (True, False):
                variant = variant_name(kind, constrained)
                cfg = variant_config(base_cfg, tax_name, kind, constrained)
                result.records[(tax_name, variant)] = run_cv(graphs, cfg, taxonomy, out_dir, label=variant)

    _tables(result, resolved)
    write_tables(result, out_dir)
    return result
