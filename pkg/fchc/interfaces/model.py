from abc import ABC, abstractmethod
from typing import ClassVar, Dict, List, Optional

import numpy as np

from fchc.components.constraint import ScoreMatrix, mcm_values
from fchc.components.graph import CellGraph, Neighborhoods
from fchc.components.taxonomy import Taxonomy
from fchc.config.schema import NetworkConfig
from fchc.diffcore import ops
from fchc.diffcore.tensor import Tensor
from fchc.errors import DimensionMismatch, ShapeMismatch


class Model(ABC):
    """
    An early module: a stack of graph (or plain) layers producing one score in
    [0, 1] per class plus a trailing root slot. Training mode returns the raw
    scores, inference mode the max-constrained ones.
    """
    __model_name__: ClassVar[str | None] = None

    def __init__(self, network: NetworkConfig, taxonomy: Taxonomy, seed: int = 0, label: Optional[str] = None):
        self._network = network
        self._taxonomy = taxonomy
        self._seed = seed
        self._label = label

        self.output_dim = network.output_dim or len(taxonomy) + 1
        if self.output_dim != len(taxonomy) + 1:
            raise DimensionMismatch(
                f"Network output width {self.output_dim} does not match {len(taxonomy)} classes + root slot"
            )
        self._hidden_activation = ops.activation(network.hidden_activation)
        self._params: Dict[str, Tensor] = self.init_parameters(np.random.default_rng(seed))

    @classmethod
    def get_name(cls) -> str:
        return cls.__model_name__

    def get_unique_id(self) -> str:
        return f"{self.get_name()}:L{self._network.nb_layers}xH{self._network.hidden_dim}:seed{self._seed}"

    def __str__(self) -> str:
        if self._label is not None:
            return self._label
        return self.get_unique_id()

    @property
    def network(self) -> NetworkConfig:
        return self._network

    @property
    def taxonomy(self) -> Taxonomy:
        return self._taxonomy

    @property
    def seed(self) -> int:
        return self._seed

    def parameters(self) -> Dict[str, Tensor]:
        return self._params

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def load_parameters(self, values: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place (tensor identities are kept)."""
        missing = sorted(set(self._params) - set(values))
        unexpected = sorted(set(values) - set(self._params))
        if missing or unexpected:
            raise ShapeMismatch(f"Parameter sets differ (missing {missing}, unexpected {unexpected})")
        for name, tensor in self._params.items():
            array = np.asarray(values[name], dtype=np.float64)
            if array.shape != tensor.shape:
                raise ShapeMismatch(f"Parameter '{name}' has shape {tensor.shape}, got {array.shape}")
            tensor.data = array.copy()
            tensor.grad = None

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def layer_widths(self) -> List[int]:
        """Output width of every layer, the last one being `output_dim`."""
        hidden = [self.hidden_width()] * (self._network.nb_layers - 1)
        return hidden + [self.output_dim]

    def hidden_width(self) -> int:
        return self._network.hidden_dim

    def _check_input(self, graph: CellGraph) -> None:
        if graph.features.ndim != 2 or graph.features.shape[1] != self._network.input_dim:
            raise ShapeMismatch(
                f"Graph features have shape {graph.features.shape}, the network expects {self._network.input_dim} columns"
            )

    def _propagate(self, graph: CellGraph, training: bool, step: int, stop_before_last: bool = False) -> Tensor:
        self._check_input(graph)
        x = Tensor(graph.features)
        last = self._network.nb_layers - 1
        for layer in range(self._network.nb_layers):
            if layer == last and stop_before_last:
                return x
            x = self._apply_layer(layer, x, graph.neighborhoods, training, step)
            if layer != last:
                x = self._hidden_activation(x)
                x = ops.dropout(x, self._network.dropout, self._seed, step, layer, training)
            else:
                x = ops.sigmoid(x)
        return x

    def scores(self, graph: CellGraph, training: bool = False, step: int = 0) -> Tensor:
        """
        N x (C + 1) raw scores. `step` keys the dropout streams together with
        the model seed, so a training step can be replayed exactly.
        """
        return self._propagate(graph, training, step)

    def forward(self, graph: CellGraph, mode: str = "infer", constrain: bool = True, step: int = 0) -> ScoreMatrix:
        if mode not in ("train", "infer"):
            raise ValueError(f"Unknown mode '{mode}'")
        out = self.scores(graph, training=mode == "train", step=step).data
        if mode == "infer" and constrain:
            out = mcm_values(out, self._taxonomy.descendants_with_root)
            return ScoreMatrix.from_model_output(out, self._taxonomy, constrained=True)
        return ScoreMatrix.from_model_output(out, self._taxonomy, constrained=False)

    def embeddings(self, graph: CellGraph) -> np.ndarray:
        """Activations entering the output layer (inference mode)."""
        return self._propagate(graph, training=False, step=0, stop_before_last=True).data

    @abstractmethod
    def init_parameters(self, rng: np.random.Generator) -> Dict[str, Tensor]:
        raise NotImplementedError()

    @abstractmethod
    def _apply_layer(self, layer: int, x: Tensor, adj: Neighborhoods, training: bool, step: int) -> Tensor:
        """Pre-activation output of `layer`."""
        raise NotImplementedError()
