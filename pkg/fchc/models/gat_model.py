from typing import Dict

import numpy as np

from fchc.components.graph import Neighborhoods
from fchc.diffcore.tensor import Tensor
from fchc.interfaces.model import Model
from fchc.models.layers import GatParams, gat_layer
from fchc.utils.module_extractor import register_model


@register_model("gat")
class GatModel(Model):
    """
    Multi-head graph attention. Hidden layers concatenate their heads, the
    output layer averages `out_heads` heads.
    """

    def hidden_width(self) -> int:
        return self._network.hidden_dim * self._network.num_heads

    def _attention_dropout(self, layer: int) -> float:
        rates = self._network.attn_dropout
        if not rates:
            return 0.0
        return rates[min(layer, len(rates) - 1)]

    def init_parameters(self, rng: np.random.Generator) -> Dict[str, Tensor]:
        net = self._network
        self._layers = []
        in_dim = net.input_dim
        for layer in range(net.nb_layers):
            last = layer == net.nb_layers - 1
            out_dim = self.output_dim if last else net.hidden_dim
            heads = net.out_heads if last else net.num_heads
            self._layers.append(GatParams.init(rng, in_dim, out_dim, heads,
                                               leaky_slope=net.leaky_slope,
                                               dropout=self._attention_dropout(layer),
                                               prefix=f"layer{layer}"))
            in_dim = out_dim * heads

        params = {}
        for p in self._layers:
            for tensor in p.tensors():
                params[tensor.name] = tensor
        return params

    def _apply_layer(self, layer: int, x: Tensor, adj: Neighborhoods, training: bool, step: int) -> Tensor:
        last = layer == self._network.nb_layers - 1
        return gat_layer(x, adj, self._layers[layer],
                         mode="average" if last else "concat",
                         training=training, seed=self._seed, epoch=step, layer=layer)
