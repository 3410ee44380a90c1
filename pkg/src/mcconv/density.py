"""Kernel density estimate of the sample pdf inside each receptive field.

For a query ``x`` with neighbor set ``N(x)`` the density at neighbor ``y_j`` is

    p(y_j | x) = 1 / (|N(x)| sigma^3) * sum_{k in N(x)} prod_d h((y_jd - y_kd) / sigma)

The sum runs over the query's own neighborhood only, so the same source point
gets a different density in every receptive field it belongs to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import IndexMismatch, InvalidParameter
from .grid import NeighborTable

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# bounds the padded (query, neighbor, neighbor) arrays built per chunk
_CHUNK_PAIRS = 1 << 21
# neighborhoods above this size are handled one query at a time
_LARGE = 512


def gaussian_kernel_1d(t):
    t = np.asarray(t, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * t * t)


def epanechnikov_kernel_1d(t):
    t = np.asarray(t, dtype=np.float64)
    return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)


DENSITY_KERNELS = {
    "gaussian": gaussian_kernel_1d,
    "epanechnikov": epanechnikov_kernel_1d,
}


def density_kernel_1d(t, kernel: str = "gaussian"):
    """Evaluate the one-dimensional density kernel ``h`` (unit integral)."""
    try:
        fn = DENSITY_KERNELS[kernel]
    except KeyError:
        raise InvalidParameter(f"unknown density kernel {kernel!r}") from None
    out = fn(t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DensityParams:
    """KDE bandwidth and kernel; ``sigma=None`` means ``sigma_fraction * r``."""

    sigma: float | None = None
    sigma_fraction: float = 0.25
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise InvalidParameter(f"bandwidth must be positive, got {self.sigma}")
        if not self.sigma_fraction > 0:
            raise InvalidParameter(f"bandwidth fraction must be positive, got {self.sigma_fraction}")
        if self.kernel not in DENSITY_KERNELS:
            raise InvalidParameter(f"unknown density kernel {self.kernel!r}")

    def bandwidth(self, radius: float) -> float:
        return self.sigma if self.sigma is not None else self.sigma_fraction * radius


def _chunks(sorted_counts):
    """Consecutive runs of ascending counts whose padded ``len * max**2`` stays bounded."""
    n = len(sorted_counts)
    sq = sorted_counts.astype(np.int64) ** 2
    i0 = 0
    while i0 < n:
        cost = (np.arange(1, n - i0 + 1) * sq[i0:])
        i1 = i0 + max(1, int(np.searchsorted(cost, _CHUNK_PAIRS, side="right")))
        yield i0, i1
        i0 = i1


def _large_query(p, sigma, h, gaussian):
    """Row sums of the full kernel matrix of one big neighborhood ``p`` (c, 3)."""
    c = len(p)
    out = np.empty(c)
    step = max(1, _CHUNK_PAIRS // c)
    for i0 in range(0, c, step):
        blk = p[i0:i0 + step]
        if gaussian:
            d2 = np.zeros((len(blk), c))
            for d in range(3):
                d2 += ((blk[:, None, d] - p[None, :, d]) / sigma) ** 2
            out[i0:i0 + step] = _INV_SQRT_2PI**3 * np.exp(-0.5 * d2).sum(axis=1)
        else:
            w = np.ones((len(blk), c))
            for d in range(3):
                w *= h((blk[:, None, d] - p[None, :, d]) / sigma)
            out[i0:i0 + step] = w.sum(axis=1)
    return out


def estimate_pdf(table: NeighborTable, sources: PointCloud, params: DensityParams | None = None) -> NeighborTable:
    """Fill the pdf slot of every pair in ``table`` (which must index ``sources``)."""
    params = params or DensityParams()
    if table.n_sources != len(sources):
        raise IndexMismatch(
            f"table was built over {table.n_sources} sources, got a cloud of {len(sources)}"
        )
    sigma = params.bandwidth(table.radius)
    h = DENSITY_KERNELS[params.kernel]
    gaussian = params.kernel == "gaussian"
    pos = sources.positions[table.neighbors]
    counts = table.counts
    pdf = np.empty(table.n_pairs, dtype=np.float64)
    big = counts > _LARGE
    for qi in np.flatnonzero(big):
        s0, s1 = table.indptr[qi], table.indptr[qi + 1]
        pdf[s0:s1] = _large_query(pos[s0:s1], sigma, h, gaussian) / (counts[qi] * sigma**3)
    qs_all = np.flatnonzero(~big & (counts > 0))
    qs_all = qs_all[np.argsort(counts[qs_all], kind="stable")]
    for i0, i1 in _chunks(counts[qs_all]):
        qs = qs_all[i0:i1]
        c = counts[qs]
        cm = int(c.max())
        slot = np.arange(cm)
        valid = slot[None, :] < c[:, None]
        idx = table.indptr[qs][:, None] + np.where(valid, slot[None, :], 0)
        p = pos[idx] / sigma  # (Q, cm, 3), padding repeats the first neighbor
        if gaussian:
            # centering keeps |p| <= 2r/sigma, so the expanded square loses no precision
            p = p - p[:, :1, :]
            sq = np.einsum("qid,qid->qi", p, p)
            d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * (p @ np.swapaxes(p, 1, 2))
            np.maximum(d2, 0.0, out=d2)
            w = np.exp(-0.5 * d2)
            w *= valid[:, None, :]
            sums = _INV_SQRT_2PI**3 * w.sum(axis=2)
        else:
            w = valid[:, None, :].astype(np.float64)
            for d in range(3):
                w = w * h(p[:, :, None, d] - p[:, None, :, d])
            sums = w.sum(axis=2)
        pdf[idx[valid]] = (sums / (c[:, None] * sigma**3))[valid]
    return table.with_pdf(pdf)


def uniform_pdf(table: NeighborTable, value: float = 1.0) -> NeighborTable:
    """Constant pdf, used by the kernel-weighted averaging baseline."""
    return table.with_pdf(np.full(table.n_pairs, float(value)))
