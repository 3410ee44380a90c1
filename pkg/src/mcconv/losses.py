"""Losses with analytic gradients."""

from __future__ import annotations

import numpy as np

from .errors import InvalidLabel, ShapeMismatch


def cosine_loss(pred, target, return_grad: bool = False):
    """Mean cosine distance ``1 - cos(pred_i, target_i)`` over points.

    Rows with a zero-norm prediction (or target) count as distance 1 and get
    a zero gradient.
    """
    p = np.asarray(pred, dtype=np.float64)
    n = np.asarray(target, dtype=np.float64)
    if p.shape != n.shape or p.ndim != 2:
        raise ShapeMismatch(f"prediction {p.shape} and target {n.shape} must be equal (n, d) arrays")
    count = p.shape[0]
    if count == 0:
        return (0.0, np.zeros_like(p)) if return_grad else 0.0
    pn = np.linalg.norm(p, axis=1)
    tn = np.linalg.norm(n, axis=1)
    ok = (pn > 0) & (tn > 0)
    cos = np.zeros(count)
    cos[ok] = np.sum(p[ok] * n[ok], axis=1) / (pn[ok] * tn[ok])
    loss = float(np.mean(1.0 - cos))
    if not return_grad:
        return loss
    grad = np.zeros_like(p)
    that = n[ok] / tn[ok, None]
    grad[ok] = -(that / pn[ok, None] - cos[ok, None] * p[ok] / pn[ok, None] ** 2) / count
    return loss, grad


def cross_entropy_loss(logits, labels, return_grad: bool = False):
    """Mean negative log-softmax probability of the true class."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ShapeMismatch(f"logits {z.shape} and labels {y.shape} do not match")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1] or not np.issubdtype(y.dtype, np.integer)):
        raise InvalidLabel(f"labels must be integers in [0, {z.shape[1]})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(log_norm - shifted[rows, y]))
    if not return_grad:
        return loss
    prob = np.exp(shifted - log_norm[:, None])
    prob[rows, y] -= 1.0
    return loss, prob / z.shape[0]
