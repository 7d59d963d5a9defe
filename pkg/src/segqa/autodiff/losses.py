"""Mean-reduced training losses."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, log_softmax

__all__ = ["smooth_l1", "l1", "mse", "cross_entropy", "cosine_similarity", "cosine_similarity_loss"]


def _same_shape(pred: Tensor, target):
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeMismatch(f"prediction/target shape mismatch: {pred.shape} vs {t.shape}")
    return t


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Huber-style loss: ``0.5 d^2 / beta`` for ``|d| < beta``, else ``|d| - beta/2``."""
    t = _same_shape(pred, target)
    d = pred.data - t
    ad = np.abs(d)
    quad = ad < beta
    val = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = d.size
    slope = (np.where(quad, d / beta, np.sign(d)) / n).astype(pred.dtype)
    return Tensor._result(np.asarray(val.mean(), pred.dtype), (pred,), lambda g: (g * slope,), "smooth_l1")


def l1(pred: Tensor, target) -> Tensor:
    t = _same_shape(pred, target)
    return (pred - Tensor(t, dtype=pred.dtype)).abs().mean()


def mse(pred: Tensor, target) -> Tensor:
    t = _same_shape(pred, target)
    d = pred - Tensor(t, dtype=pred.dtype)
    return (d * d).mean()


def cross_entropy(logits: Tensor, classes) -> Tensor:
    """Mean negative log-likelihood of integer ``classes`` under softmax(``logits``)."""
    y = np.asarray(classes, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or len(y) != logits.shape[0]:
        raise ShapeMismatch(f"cross_entropy expects (N, C) logits and N labels: {logits.shape} vs {y.shape}")
    if len(y) and (y.min() < 0 or y.max() >= logits.shape[1]):
        raise IndexError(f"class index out of range [0, {logits.shape[1]})")
    picked = log_softmax(logits, axis=1)[np.arange(len(y)), y]
    return -picked.mean()


def cosine_similarity(a: Tensor, b, eps: float = 1e-8) -> Tensor:
    """Row-wise cosine similarity; each norm is clamped below at ``eps``."""
    bt = b if isinstance(b, Tensor) else Tensor(b, dtype=a.dtype)
    if a.shape != bt.shape or a.ndim != 2:
        raise ShapeMismatch(f"cosine_similarity expects matching (N, D) inputs: {a.shape} vs {bt.shape}")
    A, B = a.data, bt.data
    na_raw = np.linalg.norm(A, axis=1)
    nb_raw = np.linalg.norm(B, axis=1)
    na = np.maximum(na_raw, eps)
    nb = np.maximum(nb_raw, eps)
    dot = (A * B).sum(axis=1)
    cos = dot / (na * nb)

    def bw(g):
        g = g[:, None]
        ga = g * (B / (na * nb)[:, None] - np.where((na_raw > eps)[:, None], cos[:, None] * A / (na * na)[:, None], 0.0))
        gb = g * (A / (na * nb)[:, None] - np.where((nb_raw > eps)[:, None], cos[:, None] * B / (nb * nb)[:, None], 0.0))
        return ga.astype(A.dtype), gb.astype(B.dtype)

    return Tensor._result(cos.astype(A.dtype), (a, bt), bw, "cosine_similarity")


def cosine_similarity_loss(pred: Tensor, target, eps: float = 1e-8) -> Tensor:
    """``1 - mean_i cos(pred_i, target_i)``."""
    return 1.0 - cosine_similarity(pred, target, eps).mean()
