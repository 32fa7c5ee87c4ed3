import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from fchc.components.taxonomy import Taxonomy
from fchc.errors import NonFiniteValue, SchemaMismatch, TooFewPatients, UnknownClass, UnknownLabel
from fchc.utils.utils import log, log_verbose

# Flow cytometry panel, in column order
MARKERS = (
    "FS INT",
    "SS INT",
    "CD14-FITC",
    "CD19-PE",
    "CD13-ECD",
    "CD33-PC5.5",
    "CD34-PC7",
    "CD117-APC",
    "CD7-APC700",
    "CD16-APC750",
    "HLA-PB",
    "CD45-KO",
)
LABEL_COLUMN = "label"
PATIENT_COLUMN = "patient"

MANIFEST_VERSION = 1


@dataclass(eq=False)
class CellTable:
    """
    The cells of one patient: an N x 12 marker matrix in panel order plus one
    leaf label per cell (None for unlabeled data).
    """
    patient_id: str
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    markers: Sequence[str] = field(default=MARKERS)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != len(self.markers):
            raise SchemaMismatch(
                f"Patient {self.patient_id}: expected {len(self.markers)} marker columns, got shape {self.features.shape}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=object)
            if self.labels.shape != (self.features.shape[0],):
                raise SchemaMismatch(
                    f"Patient {self.patient_id}: {self.labels.shape[0]} labels for {self.features.shape[0]} cells"
                )

    @property
    def n_cells(self) -> int:
        return self.features.shape[0]

    def label_indices(self, taxonomy: Taxonomy) -> np.ndarray:
        """Canonical class index of every cell label. Labels must name leaves of `taxonomy`."""
        if self.labels is None:
            raise UnknownLabel(f"Patient {self.patient_id} has no labels")
        lookup: Dict[str, int] = {}
        for raw in pd.unique(self.labels):
            lookup[raw] = resolve_leaf(taxonomy, raw, self.patient_id)
        return np.array([lookup[lbl] for lbl in self.labels], dtype=np.int64)

    def to_frame(self, taxonomy: Optional[Taxonomy] = None) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.markers))
        if self.labels is not None:
            labels = self.labels
            if taxonomy is not None:
                labels = [taxonomy.display_name(taxonomy.resolve(lbl)) for lbl in labels]
            df[LABEL_COLUMN] = labels
        return df


def resolve_leaf(taxonomy: Taxonomy, label: Any, patient_id: str = "?") -> int:
    try:
        ref = taxonomy.resolve(str(label))
    except UnknownClass as e:
        raise UnknownLabel(f"Patient {patient_id}: label '{label}' is not a class of the taxonomy") from e
    if ref not in taxonomy.leaves:
        raise UnknownLabel(f"Patient {patient_id}: label '{label}' is not a leaf class")
    return ref.index


def _read_cell_frame(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise SchemaMismatch(f"Cell table not found: {path}")
    df = pd.read_csv(path, dtype={LABEL_COLUMN: str, PATIENT_COLUMN: str}, float_precision="round_trip")

    columns = [str(c).strip() for c in df.columns]
    df.columns = columns
    missing = [m for m in MARKERS if m not in columns]
    extra = [c for c in columns if c not in MARKERS and c not in (LABEL_COLUMN, PATIENT_COLUMN)]
    if missing or extra:
        raise SchemaMismatch(f"{path}: header does not match the marker panel (missing {missing}, unexpected {extra})")

    try:
        values = df[list(MARKERS)].apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as e:
        raise SchemaMismatch(f"{path}: non-numeric marker value ({e})") from e
    if not np.isfinite(values.to_numpy(dtype=np.float64)).all():
        bad = np.argwhere(~np.isfinite(values.to_numpy(dtype=np.float64)))[0]
        raise NonFiniteValue(f"{path}: non-finite value in row {bad[0]}, column '{MARKERS[bad[1]]}'")
    df[list(MARKERS)] = values
    return df


def _frame_to_table(df: pd.DataFrame, patient_id: str, taxonomy: Optional[Taxonomy]) -> CellTable:
    labels = None
    if LABEL_COLUMN in df.columns:
        labels = df[LABEL_COLUMN].to_numpy(dtype=object)
        if pd.isna(df[LABEL_COLUMN]).any():
            raise UnknownLabel(f"Patient {patient_id}: missing cell label")
    table = CellTable(patient_id, df[list(MARKERS)].to_numpy(dtype=np.float64), labels)
    if taxonomy is not None and labels is not None:
        table.label_indices(taxonomy)
    return table


def load_cells(path: str | Path, taxonomy: Optional[Taxonomy] = None) -> CellTable:
    """
    Read one patient's cells.csv. When a taxonomy is given every label is checked
    to be one of its leaves (display names and dotted paths are both accepted).
    """
    df = _read_cell_frame(path)
    patient_id = Path(path).stem
    if PATIENT_COLUMN in df.columns:
        ids = pd.unique(df[PATIENT_COLUMN])
        if len(ids) > 1:
            raise SchemaMismatch(f"{path}: holds {len(ids)} patients, use load_patients")
        if len(ids) == 1:
            patient_id = str(ids[0])
    return _frame_to_table(df, patient_id, taxonomy)


def load_patients(path: str | Path, taxonomy: Optional[Taxonomy] = None) -> List[CellTable]:
    """Split a multi-patient cell table on its patient column, in order of first appearance."""
    df = _read_cell_frame(path)
    if PATIENT_COLUMN not in df.columns:
        return [_frame_to_table(df, Path(path).stem, taxonomy)]
    tables = []
    for patient_id, group in df.groupby(PATIENT_COLUMN, sort=False):
        tables.append(_frame_to_table(group, str(patient_id), taxonomy))
    log_verbose(f"Loaded {len(tables)} patients from {path}")
    return tables


def write_cells(table: CellTable, path: str | Path, taxonomy: Optional[Taxonomy] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_frame(taxonomy).to_csv(path, index=False, float_format="%.17g")


# ---- cohort manifest ----

class PatientEntry(BaseModel):
    patient_id: str
    file: str
    cells: int


class CohortManifest(BaseModel):
    """
    Index of a cohort directory: one cells CSV per patient plus the generator
    settings that produced them.
    """
    version: int = MANIFEST_VERSION
    seed: Optional[int] = None
    taxonomy: Optional[str] = None
    generator: Dict[str, Any] = Field(default_factory=dict)
    patients: List[PatientEntry] = Field(default_factory=list)


def write_cohort(tables: Sequence[CellTable],
                 out_dir: str | Path,
                 taxonomy: Optional[Taxonomy] = None,
                 generator: Optional[Dict[str, Any]] = None,
                 seed: Optional[int] = None) -> Path:
    """Write every table as `<patient>.csv` plus `manifest.json`; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for table in tables:
        file_name = f"{table.patient_id}.csv"
        write_cells(table, out_dir / file_name, taxonomy)
        entries.append(PatientEntry(patient_id=table.patient_id, file=file_name, cells=table.n_cells))

    manifest = CohortManifest(
        seed=seed,
        taxonomy=None if taxonomy is None else taxonomy.spec_string,
        generator=generator or {},
        patients=entries,
    )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest.model_dump(), indent=2, sort_keys=True), encoding="utf-8")
    log(f"Wrote {len(entries)} patient tables and {manifest_path}")
    return manifest_path


def read_manifest(path: str | Path) -> CohortManifest:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            raw = json.load(f)
        return CohortManifest.model_validate(raw)
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise SchemaMismatch(f"Invalid cohort manifest {path}: {e}") from e


def load_cohort(manifest_path: str | Path, taxonomy: Optional[Taxonomy] = None) -> List[CellTable]:
    manifest = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    tables = []
    for entry in manifest.patients:
        table = load_cells(root / entry.file, taxonomy)
        table.patient_id = entry.patient_id
        if table.n_cells != entry.cells:
            raise SchemaMismatch(f"Patient {entry.patient_id}: manifest lists {entry.cells} cells, file has {table.n_cells}")
        tables.append(table)
    return tables


# ---- fold plan ----

@dataclass(frozen=True)
class FoldPlan:
    """
    Patient-level outer folds, and for every outer fold an inner split of its
    training patients used for hyperparameter selection.
    """
    patients: tuple
    outer: tuple
    inner: tuple

    def __len__(self) -> int:
        return len(self.outer)

    def test(self, fold: int) -> List[str]:
        return list(self.outer[fold])

    def train(self, fold: int) -> List[str]:
        held_out = set(self.outer[fold])
        return [p for p in self.patients if p not in held_out]

    def inner_folds(self, fold: int) -> List[List[str]]:
        return [list(f) for f in self.inner[fold]]

    def to_json(self) -> Dict[str, Any]:
        return {"outer": [list(f) for f in self.outer], "inner": [[list(f) for f in fs] for fs in self.inner]}


def balanced_partition(items: Sequence, parts: int) -> List[List]:
    """Split into `parts` contiguous chunks whose sizes differ by at most one, larger chunks first."""
    base, extra = divmod(len(items), parts)
    out, start = [], 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        out.append(list(items[start:start + size]))
        start += size
    return out


def fold_plan(patients: Sequence[str], outer: int = 7, inner: int = 4, seed: int = 0) -> FoldPlan:
    patients = [str(p) for p in patients]
    if len(set(patients)) != len(patients):
        raise SchemaMismatch("Patient ids must be unique")
    if len(patients) < outer:
        raise TooFewPatients(f"{len(patients)} patients cannot fill {outer} outer folds")

    rng = np.random.default_rng(seed)
    shuffled = [patients[i] for i in rng.permutation(len(patients))]
    outer_folds = balanced_partition(shuffled, outer)

    inner_plans = []
    for fold in outer_folds:
        held_out = set(fold)
        remaining = [p for p in shuffled if p not in held_out]
        n_inner = min(inner, len(remaining))
        inner_plans.append(tuple(tuple(f) for f in balanced_partition(remaining, n_inner)) if n_inner >= 2 else ())

    return FoldPlan(
        patients=tuple(patients),
        outer=tuple(tuple(f) for f in outer_folds),
        inner=tuple(inner_plans),
    )
