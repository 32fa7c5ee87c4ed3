"""
Graph layers of the early module: multi-head attention (GAT), symmetric-normalized
convolution (GCN), self + neighborhood-mean concatenation (SAGE) and a plain
affine layer (MLP). All of them work on Tensors and `Neighborhoods`.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from fchc.components.graph import Neighborhoods
from fchc.diffcore import ops
from fchc.diffcore.tensor import Tensor, parameter
from fchc.errors import IsolatedNode, ShapeMismatch

Activation = Callable[[Tensor], Tensor]


def init_uniform(rng: np.random.Generator, fan_in: int, shape, name: Optional[str] = None) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)


def _check_neighborhoods(x: Tensor, adj: Neighborhoods) -> None:
    if adj.n_nodes != x.shape[0]:
        raise ShapeMismatch(f"Adjacency covers {adj.n_nodes} nodes but features have {x.shape[0]} rows")
    empty = np.flatnonzero(adj.degree == 0)
    if empty.size:
        raise IsolatedNode(f"Nodes {empty[:10].tolist()} have an empty neighbourhood")


def _column(values: Tensor) -> Tensor:
    return ops.reshape(values, (values.shape[0], 1))


@dataclass(eq=False)
class GatParams:
    """One (W, a) pair per head; W maps m inputs to m~ outputs, a has length 2 m~."""
    weights: List[Tensor]
    attention: List[Tensor]
    leaky_slope: float = 0.2
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.weights) < 1:
            raise ValueError("A GAT layer needs at least one head")
        if len(self.weights) != len(self.attention):
            raise ValueError(f"{len(self.weights)} weight matrices for {len(self.attention)} attention vectors")
        for w, a in zip(self.weights, self.attention):
            if a.shape != (2 * w.shape[1],):
                raise ShapeMismatch(f"Attention vector of shape {a.shape} does not match head width {w.shape[1]}")

    @property
    def num_heads(self) -> int:
        return len(self.weights)

    @property
    def head_width(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int, num_heads: int,
             leaky_slope: float = 0.2, dropout: float = 0.0, prefix: str = "gat") -> "GatParams":
        weights = [init_uniform(rng, in_dim, (in_dim, out_dim), f"{prefix}.W{h}") for h in range(num_heads)]
        attention = [init_uniform(rng, 2 * out_dim, (2 * out_dim,), f"{prefix}.a{h}") for h in range(num_heads)]
        return cls(weights, attention, leaky_slope, dropout)

    def tensors(self) -> List[Tensor]:
        return [*self.weights, *self.attention]


def attention_coefficients(z: Tensor, a: Tensor, adj: Neighborhoods, leaky_slope: float) -> Tensor:
    """gamma_ij = softmax over j in N(i) of LeakyReLU(a . [z_i || z_j]), one entry per edge."""
    width = z.shape[1]
    score_self = ops.matmul(z, ops.slice(a, slice(0, width)))
    score_neighbor = ops.matmul(z, ops.slice(a, slice(width, 2 * width)))
    logits = ops.add(ops.gather_rows(score_self, adj.src), ops.gather_rows(score_neighbor, adj.dst))
    return ops.segment_softmax(ops.leaky_relu(logits, leaky_slope), adj.src, adj.n_nodes)


def gat_layer(x: Tensor,
              adj: Neighborhoods,
              p: GatParams,
              mode: str = "concat",
              activation: Activation = ops.identity,
              training: bool = False,
              seed: int = 0,
              epoch: int = 0,
              layer: int = 0) -> Tensor:
    """
    Multi-head masked attention. Heads are concatenated ("concat") or
    averaged before the activation ("average").
    """
    _check_neighborhoods(x, adj)
    heads = []
    for h, (w, a) in enumerate(zip(p.weights, p.attention)):
        z = ops.matmul(x, w)
        gamma = attention_coefficients(z, a, adj, p.leaky_slope)
        # distinct stream per head
        gamma = ops.dropout(gamma, p.dropout, seed, epoch, 1000 * (layer + 1) + h, training)
        messages = ops.mul(ops.gather_rows(z, adj.dst), _column(gamma))
        heads.append(ops.segment_sum(messages, adj.src, adj.n_nodes))

    if mode == "concat":
        out = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    elif mode == "average":
        out = ops.mean_over_heads(heads)
    else:
        raise ValueError(f"Unknown head mode '{mode}'")
    return activation(out)


def gcn_coefficients(adj: Neighborhoods) -> np.ndarray:
    """1 / sqrt(d_i d_j) per edge, d = neighbourhood size (self included)."""
    d = adj.degree.astype(np.float64)
    return 1.0 / np.sqrt(d[adj.src] * d[adj.dst])


def gcn_layer(x: Tensor, adj: Neighborhoods, weight: Tensor, bias: Optional[Tensor] = None,
              activation: Activation = ops.identity) -> Tensor:
    _check_neighborhoods(x, adj)
    coeff = Tensor(gcn_coefficients(adj)[:, None])
    pooled = ops.segment_sum(ops.mul(ops.gather_rows(x, adj.dst), coeff), adj.src, adj.n_nodes)
    out = ops.matmul(pooled, weight)
    if bias is not None:
        out = ops.add(out, bias)
    return activation(out)


def neighborhood_mean(x: Tensor, adj: Neighborhoods) -> Tensor:
    inv_degree = Tensor((1.0 / adj.degree.astype(np.float64))[:, None])
    return ops.mul(ops.segment_sum(ops.gather_rows(x, adj.dst), adj.src, adj.n_nodes), inv_degree)


def sage_layer(x: Tensor, adj: Neighborhoods, weight: Tensor, bias: Optional[Tensor] = None,
               activation: Activation = ops.identity) -> Tensor:
    """concat(x_i, mean_{j in N(i)} x_j) @ W; W stacks the self block over the neighbour block."""
    _check_neighborhoods(x, adj)
    if weight.shape[0] != 2 * x.shape[1]:
        raise ShapeMismatch(f"SAGE weight has {weight.shape[0]} rows, expected {2 * x.shape[1]}")
    out = ops.matmul(ops.concat([x, neighborhood_mean(x, adj)], axis=1), weight)
    if bias is not None:
        out = ops.add(out, bias)
    return activation(out)


def mlp_layer(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
              activation: Activation = ops.identity) -> Tensor:
    out = ops.matmul(x, weight)
    if bias is not None:
        out = ops.add(out, bias)
    return activation(out)

