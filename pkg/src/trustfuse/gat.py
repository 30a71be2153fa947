"""Multi-head graph attention layers and the three-level encoder.

Layers operate on batched node features of shape (..., d, f) with a
fixed binary adjacency; attention logits use the single-vector scoring
a . (W h_u || W h_v) with leaky-relu(0.2), outputs pass through elu.
The encoder stacks three layers on the same topology and concatenates
the mean-pooled output of each level into one sample representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .rri import EdgeMatrix, SampleGraph


@dataclass
class GatLayerParams:
    """Per-head projection weights and pair-scoring vectors.

    weights[k] has shape (f_in, f_head); attn[k] has shape (2 * f_head,)
    and scores the concatenated pair (W h_u || W h_v).
    """

    weights: list
    attn: list

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.attn):
            raise ConfigurationError("need one attention vector per head, K >= 1")
        self.weights = [ad.as_tensor(w) for w in self.weights]
        self.attn = [ad.as_tensor(a) for a in self.attn]
        f_head = self.weights[0].shape[1]
        for w, a in zip(self.weights, self.attn):
            if w.shape[1] != f_head or a.shape != (2 * f_head,):
                raise DimensionError(
                    f"head shapes inconsistent: W {w.shape}, a {a.shape}"
                )

    @property
    def n_heads(self) -> int:
        return len(self.weights)

    @property
    def f_head(self) -> int:
        return self.weights[0].shape[1]


@dataclass
class EncoderConfig:
    levels: int = 3
    n_heads: int = 2
    f_head: int = 16
    readout: str = "mean-pool"

    def __post_init__(self):
        if self.levels != 3:
            raise ConfigurationError("the encoder is defined for exactly 3 levels")
        if self.readout != "mean-pool":
            raise ConfigurationError(f"unknown readout '{self.readout}'")

    @property
    def f_view(self) -> int:
        return self.levels * self.n_heads * self.f_head


def _adjacency(edges) -> np.ndarray:
    return edges.adjacency if isinstance(edges, EdgeMatrix) else np.asarray(edges, float)


def attention_coefficients(h, edges, params: GatLayerParams, head: int) -> Tensor:
    """Row-normalized attention weights of one head, (..., d, d).

    Row u is a softmax over the neighbors of u (self-loop included);
    non-edge entries are exactly zero.
    """
    h = ad.as_tensor(h)
    adj = _adjacency(edges)
    w, a = params.weights[head], params.attn[head]
    f_head = params.f_head
    wh = ad.matmul(h, w)  # (..., d, f_head)
    a_src, a_dst = ad.split(ad.reshape(a, (2 * f_head, 1)), [f_head, f_head], axis=0)
    s = ad.matmul(wh, a_src)  # (..., d, 1)
    t = ad.matmul(wh, a_dst)  # (..., d, 1)
    return ad.pair_softmax(s, t, adj)  # softmax of leaky-relu pair scores


def gat_layer(h, edges, params: GatLayerParams) -> Tensor:
    """One multi-head attention layer: (..., d, f_in) -> (..., d, K*f_head)."""
    h = ad.as_tensor(h)
    adj = _adjacency(edges)
    heads = []
    for k in range(params.n_heads):
        alpha = attention_coefficients(h, adj, params, k)
        wh = ad.matmul(h, params.weights[k])
        heads.append(ad.elu(ad.matmul(alpha, wh)))
    return ad.concat(heads, axis=-1)


def readout(node_embeddings) -> Tensor:
    """Arithmetic mean over the node axis: (..., d, f) -> (..., f)."""
    return ad.mean(ad.as_tensor(node_embeddings), axis=-2)


def multilevel_encode(
    h, edges, level_params: list[GatLayerParams], cfg: EncoderConfig | None = None
) -> Tensor:
    """Stack three attention layers on a fixed topology and pool each level.

    Accepts raw node features (..., d, f) plus an edge matrix, or a
    SampleGraph. Returns the concatenation of the three per-level
    readouts: (..., levels * K * f_head).
    """
    if isinstance(h, SampleGraph):
        h, edges = h.node_features, h.edges
    cfg = cfg or EncoderConfig(n_heads=level_params[0].n_heads, f_head=level_params[0].f_head)
    if len(level_params) != cfg.levels:
        raise ConfigurationError(
            f"need {cfg.levels} layer parameter sets, got {len(level_params)}"
        )
    adj = _adjacency(edges)
    x = ad.as_tensor(h)
    pooled = []
    for params in level_params:
        x = gat_layer(x, adj, params)
        pooled.append(readout(x))
    return ad.concat(pooled, axis=-1)
