"""Harmonized true/false class-probability confidence (the TFCP criterion).

TCP is the softmax probability of the true class; FCP the largest
softmax probability among the untrue classes. TFCP harmonically
combines certainty (TCP) and complement-of-uncertainty (1 - FCP):

    tfcp = 2 / (1/tcp + 1/(1 - fcp))

Both quantities need labels, so two small perceptrons estimate them
from the modal representation at test time; their harmonic combination
is regressed onto the label-derived target during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, DimensionError

CLAMP_EPS = 1e-7


# ---------------------------------------------------------------------------
# scalar criteria

def _check_simplex(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise DimensionError(f"expected a probability vector, got shape {p.shape}")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise DataError("input is not on the probability simplex")
    return p


def mcp(probs) -> float:
    """Maximum class probability."""
    return float(_check_simplex(probs).max())


def tcp(probs, true_label: int) -> float:
    """Softmax probability of the true class."""
    p = _check_simplex(probs)
    if not 0 <= true_label < p.size:
        raise DataError(f"label {true_label} out of range [0, {p.size})")
    return float(p[true_label])


def fcp(probs, true_label: int) -> float:
    """Largest softmax probability among the untrue classes."""
    p = _check_simplex(probs)
    if not 0 <= true_label < p.size:
        raise DataError(f"label {true_label} out of range [0, {p.size})")
    return float(np.delete(p, true_label).max())


def tfcp(tcp_value: float, fcp_value: float) -> float:
    """Harmonic combination of tcp and (1 - fcp), clamped away from 0/1."""
    t = min(max(float(tcp_value), CLAMP_EPS), 1.0 - CLAMP_EPS)
    g = min(max(1.0 - float(fcp_value), CLAMP_EPS), 1.0 - CLAMP_EPS)
    return 2.0 / (1.0 / t + 1.0 / g)


# ---------------------------------------------------------------------------
# batched tensor versions used inside the model

def tfcp_combine(t: Tensor, g_complement_fcp: Tensor) -> Tensor:
    """Batched harmonic combination; inputs clamped into (0, 1)."""
    t = ad.clip(t, CLAMP_EPS, 1.0 - CLAMP_EPS)
    g = ad.clip(g_complement_fcp, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return ad.div(2.0, ad.add(ad.div(1.0, t), ad.div(1.0, g)))


def tcp_batch(probs: Tensor, labels) -> Tensor:
    """Per-row probability of the true class, differentiable."""
    return ad.gather_rows(probs, labels)


def fcp_batch(probs: Tensor, labels) -> Tensor:
    """Per-row max probability over untrue classes, differentiable.

    The true-class entry is pushed below zero with a constant offset so
    the row max never selects it; probabilities are nonnegative.
    """
    n, c = probs.shape
    if c < 2:
        raise DimensionError("fcp needs at least 2 classes")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
    return ad.max_(ad.sub(probs, ad.as_tensor(2.0 * onehot)), axis=1)


@dataclass
class ConfidenceNets:
    """Shared classifier head plus the two estimation perceptrons.

    cls_w/cls_b score classes from Z (its softmax defines the TCP/FCP
    targets); theta_t and theta_f are (w1, b1, w2, b2) tuples of a
    one-hidden-layer elu perceptron ending in a sigmoid scalar.
    """

    cls_w: Tensor
    cls_b: Tensor
    theta_t: tuple
    theta_f: tuple


def _perceptron(z: Tensor, theta) -> Tensor:
    w1, b1, w2, b2 = (ad.as_tensor(p) for p in theta)
    hidden = ad.elu(ad.add(ad.matmul(z, w1), b1))
    out = ad.add(ad.matmul(hidden, w2), b2)  # (n, 1)
    return ad.reshape(ad.sigmoid(out), (z.shape[0],))


def estimate_confidence(z, nets: ConfidenceNets) -> tuple[Tensor, Tensor, Tensor]:
    """Label-free (tcp_hat, fcp_hat, tfcp_hat) estimates, each in (0, 1)."""
    z = ad.as_tensor(z)
    tcp_hat = _perceptron(z, nets.theta_t)
    fcp_hat = _perceptron(z, nets.theta_f)
    tfcp_hat = tfcp_combine(tcp_hat, ad.sub(1.0, fcp_hat))
    return tcp_hat, fcp_hat, tfcp_hat


def confidence_loss(z, labels, nets: ConfidenceNets) -> tuple[Tensor, Tensor]:
    """Batch-mean squared TFCP regression error plus the classifier CE.

    Returns (loss, tfcp_hat); the CE term is summed over samples to
    match the scale of the other classification losses.
    """
    z = ad.as_tensor(z)
    logits = ad.add(ad.matmul(z, nets.cls_w), nets.cls_b)
    n = logits.shape[0]
    ce = ad.mul(ad.cross_entropy(logits, labels), float(n))
    probs = ad.softmax(logits, axis=-1)
    target = tfcp_combine(tcp_batch(probs, labels), ad.sub(1.0, fcp_batch(probs, labels)))
    _, _, tfcp_hat = estimate_confidence(z, nets)
    sq = ad.mean(ad.power(ad.sub(target, tfcp_hat), 2.0))
    return ad.add(sq, ce), tfcp_hat


def apply_confidence(tfcp_hat, z) -> Tensor:
    """Scale each sample's representation by its confidence scalar."""
    z = ad.as_tensor(z)
    tfcp_hat = ad.as_tensor(tfcp_hat)
    n = z.shape[0]
    return ad.mul(ad.reshape(tfcp_hat, (n, 1)), z)


def export_scores_csv(path, rows) -> None:
    """Write per-sample confidence rows: sample_id, modality, tcp, fcp, tfcp."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_id,modality,tcp_hat,fcp_hat,tfcp_hat\n")
        for sid, modality, t, f, h in rows:
            fh.write(f"{sid},{modality},{t:.10g},{f:.10g},{h:.10g}\n")
