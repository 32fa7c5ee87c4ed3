from typing import Dict

import numpy as np

from fchc.components.graph import Neighborhoods
from fchc.diffcore.tensor import Tensor
from fchc.interfaces.model import Model
from fchc.models.layers import init_uniform, mlp_layer
from fchc.utils.module_extractor import register_model


@register_model("mlp")
class MlpModel(Model):
    """Per-cell feed-forward network; the graph is ignored."""

    def init_parameters(self, rng: np.random.Generator) -> Dict[str, Tensor]:
        params = {}
        in_dim = self._network.input_dim
        for layer, out_dim in enumerate(self.layer_widths()):
            params[f"layer{layer}.W"] = init_uniform(rng, in_dim, (in_dim, out_dim), f"layer{layer}.W")
            params[f"layer{layer}.b"] = init_uniform(rng, in_dim, (out_dim,), f"layer{layer}.b")
            in_dim = out_dim
        return params

    def _apply_layer(self, layer: int, x: Tensor, adj: Neighborhoods, training: bool, step: int) -> Tensor:
        return mlp_layer(x, self._params[f"layer{layer}.W"], self._params[f"layer{layer}.b"])
