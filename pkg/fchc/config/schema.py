from enum import Enum
from typing import Dict, List, Optional, Any

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    model_validator,
)


class ModelKind(str, Enum):
    GAT = "gat"
    GCN = "gcn"
    SAGE = "sage"
    MLP = "mlp"


class LossKind(str, Enum):
    MCLOSS = "mcloss"
    BCE = "bce"


class Standardization(str, Enum):
    NONE = "none"
    ZSCORE = "zscore"
    MINMAX = "minmax"


class TaxonomyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # Name of a built-in hierarchy ("fc-deep" or "fc-shallow").
    preset: Optional[str] = "fc-deep"

    # Comma-separated hierarchy string, e.g. "1,1_1,2". Takes precedence over the preset.
    spec: Optional[str] = None

    # Human-readable names keyed by dotted class path, merged over the preset's names.
    names: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_source(self):
        if not self.preset and not self.spec:
            raise ValueError("either 'preset' or 'spec' must be given")
        return self


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ModelKind = ModelKind.GAT
    nb_layers: int = Field(2, ge=1)
    hidden_dim: int = Field(32, ge=1)
    num_heads: int = Field(2, ge=1)
    out_heads: int = Field(2, ge=1)
    input_dim: int = Field(12, ge=1)

    # Number of classes + 1 root slot. Filled in from the taxonomy when left empty.
    output_dim: Optional[int] = Field(None, ge=2)

    dropout: float = Field(0.2, ge=0.0, lt=1.0)

    # Dropout applied to the attention coefficients of each GAT layer (first, then following layers).
    attn_dropout: List[float] = Field(default_factory=lambda: [0.4, 0.2])

    leaky_slope: float = Field(0.2, ge=0.0)
    hidden_activation: str = "relu"

    # Whether every neighborhood contains the node itself.
    self_loops: bool = True


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str = "adam"
    learning_rate: float = Field(1e-3, gt=0.0)
    epochs: int = Field(200, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class GraphConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(7, ge=1)
    standardization: Standardization = Standardization.ZSCORE

    # Directory for the edge-list cache, or None to always rebuild.
    cache_dir: Optional[str] = None


class InnerGridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    thresholds: List[float] = Field(default_factory=lambda: [0.3, 0.5, 0.7])
    learning_rates: List[float] = Field(default_factory=lambda: [1e-3, 1e-2])

    # Epoch budget of the inner-fold runs, None to reuse the optimizer setting.
    epochs: Optional[int] = Field(None, ge=1)


class FoldConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    outer: int = Field(7, ge=1)
    inner: int = Field(4, ge=2)
    seed: int = 0

    # False runs a single train/test split (the --no-cv switch).
    cv: bool = True

    # Select threshold/learning rate with inner cross validation.
    tune: bool = True
    grid: InnerGridConfig = Field(default_factory=InnerGridConfig)


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: str = "fc-deep"
    patients: int = Field(19, ge=1)
    cells_per_patient: int = Field(5000, ge=2)

    # Mixture proportions keyed by leaf name or dotted path. Missing leaves share the remainder.
    proportions: Optional[Dict[str, float]] = None

    covariance_scale: float = Field(0.35, gt=0.0)

    # 0 -> leaf centers i.i.d., 1 -> sibling leaves collapse onto their parent's center.
    coupling: float = Field(0.9, ge=0.0, le=1.0)

    # Indices of the marker columns that carry class signal, None for all of them.
    informative_features: Optional[List[int]] = None

    # Per-patient random shift of every center (batch effect between patients).
    patient_shift: float = Field(0.1, ge=0.0)

    seed: int = 0


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # A cells.csv with an optional "patient" column, or a cohort manifest written by `fchc synth`.
    cells_path: Optional[str] = None
    manifest_path: Optional[str] = None

    # Used when no input path is given.
    synth: SynthConfig = Field(default_factory=SynthConfig)


class MetricCollectorConfig(BaseModel):
    module_name: str
    settings: Dict[str, Any] = Field(default_factory=dict)


class ExperimentConfig(BaseModel):
    """
    Top-level configuration of an fchc experiment.
    """
    model_config = ConfigDict(extra="forbid")

    taxonomy: TaxonomyConfig = Field(default_factory=TaxonomyConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)

    # Backbones iterated over by the ablation runner.
    models: List[ModelKind] = Field(default_factory=lambda: list(ModelKind))

    loss: LossKind = LossKind.MCLOSS
    loss_reduction: str = "sum"
    use_constraint_at_inference: bool = True

    graph: GraphConfig = Field(default_factory=GraphConfig)
    threshold: float = Field(0.5, ge=0.0, le=1.0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    folds: FoldConfig = Field(default_factory=FoldConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    metric_collectors: List[MetricCollectorConfig] = Field(default_factory=list)

    # Number of column shuffles per marker in permutation importance.
    importance_shuffles: int = Field(5, ge=1)

    output_dir: str = "results"

    # Trip NonFiniteValue on any NaN/Inf produced by a differentiable op.
    debug: bool = False

    @model_validator(mode="after")
    def _check_loss_reduction(self):
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError(f"loss_reduction must be 'sum' or 'mean', got '{self.loss_reduction}'")
        return self
