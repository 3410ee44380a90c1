"""MLP convolution kernels with hand-written backpropagation.

A kernel trunk maps a normalized offset ``delta = (x - y) / r`` through two
ReLU hidden layers of width ``H`` to ``K`` linear outputs, i.e. ``K``
different kernel functions share one trunk.

All functions broadcast over a leading *trunk* axis: ``W1`` may be
``(3, H)`` for one trunk or ``(B, 3, H)`` for ``B`` stacked trunks, and
offsets may be a single ``(3,)`` vector or a ``(P, 3)`` batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, ShapeMismatch

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(eq=False)
class KernelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W1.shape[-1]

    @property
    def outputs(self) -> int:
        return self.W3.shape[-1]

    @property
    def trunks(self) -> int:
        """Number of stacked trunks, 1 for an unstacked parameter set."""
        return self.W1.shape[0] if self.W1.ndim == 3 else 1

    @property
    def size(self) -> int:
        return sum(getattr(self, n).size for n in PARAM_NAMES)

    def arrays(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def copy(self) -> "KernelParams":
        return KernelParams(*(a.copy() for a in self.arrays()))

    def trunk(self, i: int) -> "KernelParams":
        if self.W1.ndim != 3:
            raise InvalidParameter("parameters are not stacked")
        return KernelParams(*(a[i] for a in self.arrays()))

    @classmethod
    def zeros(cls, H: int = 8, K: int = 8, trunks: int | None = None) -> "KernelParams":
        lead = () if trunks is None else (trunks,)
        return cls(
            np.zeros(lead + (3, H)), np.zeros(lead + (H,)),
            np.zeros(lead + (H, H)), np.zeros(lead + (H,)),
            np.zeros(lead + (H, K)), np.zeros(lead + (K,)),
        )

    @classmethod
    def stack(cls, params) -> "KernelParams":
        params = list(params)
        return cls(*(np.stack([getattr(p, n) for p in params]) for n in PARAM_NAMES))

    @classmethod
    def from_flat(cls, vec, H: int = 8, K: int = 8, trunks: int | None = None) -> "KernelParams":
        template = cls.zeros(H, K, trunks)
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != template.size:
            raise ShapeMismatch(f"expected {template.size} values, got {vec.size}")
        out, pos = [], 0
        for a in template.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return cls(*out)


def parameter_count(H: int = 8, K: int = 8) -> int:
    return 3 * H + H + H * H + H + H * K + K


def mac_count(H: int = 8, K: int = 8) -> int:
    """Multiply-accumulates for one evaluation of a shared ``K``-output trunk."""
    return 3 * H + H * H + H * K


def naive_mac_count(H: int = 8, K: int = 8) -> int:
    """Multiply-accumulates for ``K`` independent single-output MLPs."""
    return K * (3 * H + H * H + H)


def kernel_init(rng, H: int = 8, K: int = 8, trunks: int | None = None, tag: str = "kernel") -> KernelParams:
    """Uniform fan-in scaled weights, zero biases.

    Weights of a layer with fan-in ``n`` are drawn from ``U(-a, a)`` with
    ``a = sqrt(6/n)`` for the two ReLU layers and ``a = sqrt(3/n)`` for the
    linear output layer, which keeps the output variance near that of the input.
    """
    if H < 1 or K < 1:
        raise InvalidParameter(f"hidden width and output count must be >= 1, got H={H}, K={K}")
    gen = rng.stream(tag) if hasattr(rng, "stream") else rng
    p = KernelParams.zeros(H, K, trunks)
    for name, fan_in, gain in (("W1", 3, 6.0), ("W2", H, 6.0), ("W3", H, 3.0)):
        a = getattr(p, name)
        bound = math.sqrt(gain / fan_in)
        a[...] = gen.uniform(-bound, bound, size=a.shape)
    return p


def _bias(b):
    # (B, H) -> (B, 1, H) so it broadcasts over the offset axis
    return b[..., None, :] if b.ndim == 2 else b


def kernel_forward(params: KernelParams, offsets, return_cache: bool = False):
    """Kernel values for each offset: ``(K,)``, ``(P, K)`` or ``(B, P, K)``."""
    d = np.asarray(offsets, dtype=np.float64)
    single = d.ndim == 1
    if single:
        d = d[None, :]
    z1 = d @ params.W1 + _bias(params.b1)
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.W2 + _bias(params.b2)
    a2 = np.maximum(z2, 0.0)
    out = a2 @ params.W3 + _bias(params.b3)
    if single:
        out = out[..., 0, :]
    if return_cache:
        return out, (d, z1, a1, z2, a2, single)
    return out


def kernel_backward(params: KernelParams, offsets, upstream, cache=None) -> KernelParams:
    """Gradient of ``sum(upstream * kernel_forward(params, offsets))`` w.r.t. every parameter.

    Contributions of all offsets are summed. ``cache`` may be the one returned
    by ``kernel_forward(..., return_cache=True)`` to skip recomputation.
    """
    if cache is None:
        _, cache = kernel_forward(params, offsets, return_cache=True)
    d, z1, a1, z2, a2, single = cache
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[..., None, :]

    def outer(a, b):
        return np.swapaxes(a, -1, -2) @ b

    dW3 = outer(a2, g)
    db3 = g.sum(axis=-2)
    g2 = (g @ np.swapaxes(params.W3, -1, -2)) * (z2 > 0)
    dW2 = outer(a1, g2)
    db2 = g2.sum(axis=-2)
    g1 = (g2 @ np.swapaxes(params.W2, -1, -2)) * (z1 > 0)
    # offsets are shared by all trunks; broadcast them up to g1's leading axes
    dW1 = outer(np.broadcast_to(d, g1.shape[:-1] + (3,)), g1)
    db1 = g1.sum(axis=-2)
    return KernelParams(dW1, db1, dW2, db2, dW3, db3)

