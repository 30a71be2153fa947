"""Cross-view and cross-modal attention fusion plus classifier heads.

Per-sample representations are treated as length-1 sequences, so the
scaled dot-product attention between two of them degenerates to a
value projection of the attended source. The general operation is
implemented (and tested) for arbitrary sequence lengths anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError


@dataclass
class AttentionProjections:
    """Query/key/value projection triple for one attention site."""

    wq: Tensor
    wk: Tensor
    wv: Tensor

    def __post_init__(self):
        self.wq = ad.as_tensor(self.wq)
        self.wk = ad.as_tensor(self.wk)
        self.wv = ad.as_tensor(self.wv)
        if self.wq.shape[1] != self.wk.shape[1]:
            raise DimensionError(
                f"query/key widths differ: {self.wq.shape} vs {self.wk.shape}"
            )


def scaled_dot_attention(q, k, v) -> Tensor:
    """softmax(Q K^T / sqrt(f)) V over the last two axes."""
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"Q width {q.shape} vs K width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"K rows {k.shape} vs V rows {v.shape}")
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


def _as_seq(x: Tensor) -> Tensor:
    """(n, f) -> (n, 1, f): each sample is a length-1 sequence."""
    n, f = x.shape
    return ad.reshape(x, (n, 1, f))


def _from_seq(x: Tensor) -> Tensor:
    n, _, f = x.shape
    return ad.reshape(x, (n, f))


def attend_pair(src: Tensor, ctx: Tensor, proj: AttentionProjections) -> Tensor:
    """Attention of `src` queries over `ctx` keys/values, per sample."""
    q = ad.matmul(_as_seq(src), proj.wq)
    k = ad.matmul(_as_seq(ctx), proj.wk)
    v = ad.matmul(_as_seq(ctx), proj.wv)
    return _from_seq(scaled_dot_attention(q, k, v))


def cross_view_fuse(
    f_t, f_r, proj_t: AttentionProjections, proj_r: AttentionProjections
) -> Tensor:
    """Fuse the two view representations of one modality.

    The transcriptomic view attends over the radiomic one and vice
    versa; the two attended vectors are concatenated per sample.
    proj_t projects the T-view when it serves as key/value source,
    proj_r the R-view, matching the per-source parameterization.
    """
    f_t, f_r = ad.as_tensor(f_t), ad.as_tensor(f_r)
    z_t = attend_pair(f_t, f_r, AttentionProjections(proj_t.wq, proj_r.wk, proj_r.wv))
    z_r = attend_pair(f_r, f_t, AttentionProjections(proj_r.wq, proj_t.wk, proj_t.wv))
    return ad.concat([z_t, z_r], axis=-1)


def linear_head(x, weight, bias) -> Tensor:
    return ad.add(ad.matmul(ad.as_tensor(x), ad.as_tensor(weight)), ad.as_tensor(bias))


def modality_classifier(z, weight, bias, labels=None):
    """Linear logits on a modal representation; summed CE when labels given."""
    logits = linear_head(z, weight, bias)
    if labels is None:
        return logits, None
    n = logits.shape[0]
    loss = ad.mul(ad.cross_entropy(logits, labels), float(n))
    return logits, loss


def cross_modal_fuse(h_list, projections) -> Tensor:
    """Fuse trust-weighted modal representations across modalities.

    h_list holds M per-sample representations; projections[(m, j)] is
    the AttentionProjections letting modality m attend over modality j.
    Output is the concatenation over m of the concatenation over j != m.
    """
    m_count = len(h_list)
    if m_count < 2:
        raise ConfigurationError("cross-modal fusion needs at least 2 modalities")
    blocks = []
    for m in range(m_count):
        parts = [
            attend_pair(ad.as_tensor(h_list[m]), ad.as_tensor(h_list[j]), projections[(m, j)])
            for j in range(m_count)
            if j != m
        ]
        blocks.append(ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0])
    return ad.concat(blocks, axis=-1)


def final_classifier(u, weight, bias) -> Tensor:
    """Linear logits over classes from the fused representation."""
    return linear_head(u, weight, bias)
