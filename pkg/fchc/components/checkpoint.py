"""
Versioned JSON checkpoints: configuration, taxonomy, seed, metrics at save time
and every parameter as a base64 float64 blob, so a reload is bit-exact.
"""
import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from pydantic import ValidationError

from fchc.components.taxonomy import Taxonomy, parse_taxonomy
from fchc.config.schema import ExperimentConfig, NetworkConfig
from fchc.errors import SchemaMismatch
from fchc.interfaces.model import Model
from fchc.utils.module_extractor import create_model

CHECKPOINT_FORMAT = "fchc-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    model: Model
    config: ExperimentConfig
    metrics: Dict[str, Any] = field(default_factory=dict)

    @property
    def taxonomy(self) -> Taxonomy:
        return self.model.taxonomy


def encode_array(array: np.ndarray) -> Dict[str, Any]:
    data = np.ascontiguousarray(array, dtype="<f8")
    return {"shape": list(data.shape), "dtype": "float64", "data": base64.b64encode(data.tobytes()).decode("ascii")}


def decode_array(blob: Dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(blob["shape"])


def save_checkpoint(path: str | Path, model: Model, config: ExperimentConfig,
                    metrics: Optional[Dict[str, Any]] = None) -> Path:
    t = model.taxonomy
    envelope = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.get_name(),
        "seed": model.seed,
        "config": config.model_dump(mode="json"),
        "network": model.network.model_dump(mode="json"),
        "taxonomy": {"spec": t.spec_string, "names": t.names, "root": t.root_name},
        "parameters": {name: encode_array(tensor.data) for name, tensor in model.parameters().items()},
        "metrics": metrics or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(envelope, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        envelope = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaMismatch(f"Cannot read checkpoint {path}: {e}") from e
    if envelope.get("format") != CHECKPOINT_FORMAT:
        raise SchemaMismatch(f"{path} is not an fchc checkpoint")
    if envelope.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"Unsupported checkpoint version {envelope.get('version')} (expected {CHECKPOINT_VERSION})")

    try:
        config = ExperimentConfig.model_validate(envelope["config"])
        network = NetworkConfig.model_validate(envelope["network"])
    except (KeyError, ValidationError) as e:
        raise SchemaMismatch(f"Checkpoint {path} holds an invalid configuration: {e}") from e

    tax = envelope["taxonomy"]
    taxonomy = parse_taxonomy(tax["spec"], tax.get("names"), tax.get("root", "root"))
    model = create_model(network, taxonomy, seed=int(envelope["seed"]))
    model.load_parameters({name: decode_array(blob) for name, blob in envelope["parameters"].items()})
    return Checkpoint(model=model, config=config, metrics=envelope.get("metrics", {}))
