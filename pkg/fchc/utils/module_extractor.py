import importlib
import pkgutil
import traceback
from typing import Any, Dict, List, Optional, Type

from fchc.components.taxonomy import Taxonomy
from fchc.config.schema import MetricCollectorConfig, NetworkConfig
from fchc.interfaces.metric_collector import MetricCollector
from fchc.interfaces.model import Model
from fchc.utils.utils import log

_MODEL_REGISTRY: Dict[str, Type[Model]] = {}
_MODEL_PACKAGE = "fchc.models"

_METRIC_REGISTRY: Dict[str, Type[MetricCollector]] = {}
_METRIC_PACKAGE = "fchc.metric_collectors"


def _normalize(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def _resolve(name: str, registry: Dict[str, Any]) -> Any:
    norm = _normalize(name)
    if norm not in registry:
        raise ValueError(f"Unknown module '{name}'")
    return registry[norm]


def _import_all_modules(package_path: str) -> None:
    package = importlib.import_module(package_path)
    for _, module_name, _ in pkgutil.iter_modules(package.__path__, package.__name__ + "."):
        try:
            importlib.import_module(module_name)
        except Exception as e:
            # a broken plug-in must not take the others down
            log(f"ERROR importing module {module_name}: {e}")
            traceback.print_exc()


# Model factory
def register_model(name: str):
    """Decorator to register a Model subclass under `name`."""
    norm = _normalize(name)

    def _decorator(cls: Type[Model]):
        if not issubclass(cls, Model):
            raise TypeError(f"{cls.__name__} must subclass Model")
        _MODEL_REGISTRY[norm] = cls
        setattr(cls, "__model_name__", name)
        return cls
    return _decorator


def available_models() -> List[str]:
    if not _MODEL_REGISTRY:
        _import_all_modules(_MODEL_PACKAGE)
    return sorted(cls.get_name() for cls in _MODEL_REGISTRY.values())


def create_model(network: NetworkConfig, taxonomy: Taxonomy, seed: int = 0, label: Optional[str] = None) -> Model:
    if not _MODEL_REGISTRY:
        _import_all_modules(_MODEL_PACKAGE)
    cls = _resolve(getattr(network.kind, "value", network.kind), _MODEL_REGISTRY)
    return cls(network, taxonomy, seed=seed, label=label)


# Metric collector factory
def register_metric_collector(name: str):
    """Decorator to register a MetricCollector subclass under `name`."""
    norm = _normalize(name)

    def _decorator(cls: Type[MetricCollector]):
        if not issubclass(cls, MetricCollector):
            raise TypeError(f"{cls.__name__} must subclass MetricCollector")
        _METRIC_REGISTRY[norm] = cls
        setattr(cls, "__collector_name__", name)
        return cls
    return _decorator


def create_metric_collectors(specs: List[MetricCollectorConfig], taxonomy: Taxonomy) -> List[MetricCollector]:
    if not _METRIC_REGISTRY:
        _import_all_modules(_METRIC_PACKAGE)

    instances: List[MetricCollector] = []
    for spec in specs:
        cls = _resolve(spec.module_name, _METRIC_REGISTRY)
        instances.append(cls(dict(spec.settings), taxonomy))
    return instances
