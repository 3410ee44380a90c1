"""Monte Carlo convolution over point clouds.

For an output point ``x`` with receptive field ``N(x)`` the convolution of a
feature ``f`` with an MLP kernel ``g`` is estimated as

    (f * g)(x) ~= 1/|N(x)| * sum_j f(y_j) g((x - y_j) / r) / p(y_j | x)

where ``p`` is the per-field sample density. Input and output samplings may
differ, which covers same-sampling convolution, pooling and up-sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, reference_diag, receptive_radius
from .density import DensityParams, estimate_pdf
from .errors import IndexMismatch, InputError, InvalidParameter, ShapeMismatch
from .grid import NeighborTable, radius_neighbors
from .kernel import KernelParams, kernel_backward, kernel_forward, kernel_init

SINGLE = "single"
MULTI = "multi"


@dataclass(frozen=True)
class ConvLayerConfig:
    """Hyperparameters of one spatial convolution.

    ``density="avg"`` forces ``p = 1``, turning the estimator into plain
    kernel-weighted averaging over the receptive field.
    """

    in_channels: int
    out_channels: int | None = None
    mode: str = MULTI
    radius_fraction: float = 0.1
    sigma_fraction: float = 0.25
    density: str = "kde"
    hidden: int = 8
    kernel_outputs: int = 8

    def __post_init__(self):
        if self.mode not in (SINGLE, MULTI):
            raise InvalidParameter(f"mode must be 'single' or 'multi', got {self.mode!r}")
        if self.out_channels is None:
            object.__setattr__(self, "out_channels", self.in_channels)
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidParameter("channel counts must be positive")
        if self.mode == SINGLE and self.out_channels != self.in_channels:
            raise InvalidParameter(
                f"single-feature convolution keeps the channel count ({self.in_channels} != {self.out_channels})"
            )
        if not self.radius_fraction > 0:
            raise InvalidParameter(f"radius fraction must be positive, got {self.radius_fraction}")
        if not self.sigma_fraction > 0:
            raise InvalidParameter(f"bandwidth fraction must be positive, got {self.sigma_fraction}")
        if self.density not in ("kde", "avg"):
            raise InvalidParameter(f"density must be 'kde' or 'avg', got {self.density!r}")

    @property
    def n_kernels(self) -> int:
        if self.mode == SINGLE:
            return self.in_channels
        return self.in_channels * self.out_channels

    @property
    def n_trunks(self) -> int:
        return math.ceil(self.n_kernels / self.kernel_outputs)

    def init_kernels(self, rng, tag: str = "kernel") -> KernelParams:
        return kernel_init(rng, self.hidden, self.kernel_outputs, trunks=self.n_trunks, tag=tag)

    def zero_kernels(self) -> KernelParams:
        return KernelParams.zeros(self.hidden, self.kernel_outputs, trunks=self.n_trunks)


def _as_features(features, n, channels):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape != (n, channels):
        raise ShapeMismatch(f"expected features of shape {(n, channels)}, got {f.shape}")
    return f


def _check_kernels(config, kernels):
    if kernels.W1.ndim != 3:
        kernels = KernelParams.stack([kernels])
    if kernels.trunks * kernels.outputs < config.n_kernels:
        raise ShapeMismatch(
            f"{kernels.trunks} trunks x {kernels.outputs} outputs cannot hold {config.n_kernels} kernels"
        )
    return kernels


def segment_sum(values, indptr):
    """Sum consecutive row blocks ``values[indptr[i]:indptr[i+1]]``; empty blocks give 0."""
    n = len(indptr) - 1
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    counts = np.diff(indptr)
    nonempty = np.flatnonzero(counts)
    if len(nonempty):
        out[nonempty] = np.add.reduceat(values, indptr[nonempty], axis=0)
    return out


def _pair_setup(config, in_cloud, out_cloud, table, pdf):
    if table.n_sources != len(in_cloud):
        raise IndexMismatch(f"table indexes {table.n_sources} sources, input cloud has {len(in_cloud)}")
    if table.n_queries != len(out_cloud):
        raise IndexMismatch(f"table has {table.n_queries} queries, output cloud has {len(out_cloud)}")
    if pdf is None:
        pdf = np.ones(table.n_pairs) if config.density == "avg" else table.require_pdf()
    pdf = np.asarray(pdf, dtype=np.float64)
    if pdf.shape != (table.n_pairs,):
        raise IndexMismatch(f"{pdf.shape} pdf values for {table.n_pairs} pairs")
    q = table.pair_queries
    j = table.neighbors
    delta = (out_cloud.positions[q] - in_cloud.positions[j]) / table.radius
    weight = 1.0 / (table.counts[q] * pdf)
    return q, j, delta, weight


def mc_conv_forward(config, kernels, in_cloud, in_features, out_cloud, table: NeighborTable,
                    pdf=None, return_cache: bool = False):
    """Convolve ``in_features`` (rows of ``in_cloud``) onto the points of ``out_cloud``.

    ``table`` must have queries = ``out_cloud`` and sources = ``in_cloud``.
    Its pdf is used unless ``pdf`` overrides it or ``config.density == "avg"``.
    Output points with an empty receptive field get all-zero features.

    ``kernels`` may also be a plain function mapping ``(P, 3)`` offsets to
    ``(P, n_kernels)`` values, for fixed analytic kernels; such a forward pass
    has no cache and no backward.
    """
    f = _as_features(in_features, len(in_cloud), config.in_channels)
    q, j, delta, weight = _pair_setup(config, in_cloud, out_cloud, table, pdf)
    P = len(j)
    M, L = config.in_channels, config.out_channels

    if callable(kernels) and not isinstance(kernels, KernelParams):
        if return_cache:
            raise InvalidParameter("a fixed kernel function has no backward pass")
        g = np.asarray(kernels(delta), dtype=np.float64).reshape(P, -1)
        if g.shape[1] != config.n_kernels:
            raise ShapeMismatch(f"kernel function returned {g.shape[1]} values per pair, need {config.n_kernels}")
        kcache = None
    else:
        kernels = _check_kernels(config, kernels)
        g_all, kcache = kernel_forward(kernels, delta, return_cache=True)
        B, K = kernels.trunks, kernels.outputs
        # (B, P, K) -> (P, B*K): kernel index t lives in trunk t // K, output t % K
        g = np.transpose(g_all, (1, 0, 2)).reshape(P, B * K)[:, :config.n_kernels]
    fw = f[j] * weight[:, None]
    if config.mode == SINGLE:
        contrib = fw * g
    else:
        contrib = np.einsum("pm,plm->pl", fw, g.reshape(P, L, M))
    out = segment_sum(contrib, table.indptr)
    if not return_cache:
        return out
    cache = dict(q=q, j=j, delta=delta, weight=weight, f=f, g=g, kcache=kcache,
                 kernels=kernels, table=table, n_in=len(in_cloud))
    return out, cache


def mc_conv_backward(config, cache, upstream):
    """Gradients of ``sum(upstream * forward_output)``.

    Returns ``(grad_in_features, grad_kernels)``; positions are treated as data
    and receive no gradient.
    """
    q, j, weight, f, g = cache["q"], cache["j"], cache["weight"], cache["f"], cache["g"]
    kernels = cache["kernels"]
    table = cache["table"]
    u = np.asarray(upstream, dtype=np.float64)
    L, M = config.out_channels, config.in_channels
    if u.shape != (table.n_queries, L):
        raise ShapeMismatch(f"upstream must have shape {(table.n_queries, L)}, got {u.shape}")
    P = len(j)
    uw = u[q] * weight[:, None]
    fj = f[j]
    if config.mode == SINGLE:
        dg = uw * fj
        df_pairs = uw * g
    else:
        gm = g.reshape(P, L, M)
        dg = (uw[:, :, None] * fj[:, None, :]).reshape(P, L * M)
        df_pairs = np.einsum("pl,plm->pm", uw, gm)

    grad_f = np.empty((cache["n_in"], M))
    for m in range(M):
        grad_f[:, m] = np.bincount(j, weights=df_pairs[:, m], minlength=cache["n_in"])

    B, K = kernels.trunks, kernels.outputs
    dg_full = np.zeros((P, B * K))
    dg_full[:, :config.n_kernels] = dg
    dg_full = np.transpose(dg_full.reshape(P, B, K), (1, 0, 2))
    grad_k = kernel_backward(kernels, cache["delta"], dg_full, cache=cache["kcache"])
    return grad_f, grad_k


def conv_table(in_cloud, out_cloud, config, scale=None) -> NeighborTable:
    """Neighbor table (and pdf, unless ``config.density == "avg"``) for one convolution.

    The receptive radius is ``config.radius_fraction * scale`` where ``scale``
    defaults to the input cloud's largest per-batch bounding-box diagonal.
    """
    if scale is None:
        scale = reference_diag(in_cloud)
    r = receptive_radius(config.radius_fraction, scale)
    table = radius_neighbors(out_cloud, in_cloud, r)
    if config.density == "avg":
        return table
    return estimate_pdf(table, in_cloud, DensityParams(sigma_fraction=config.sigma_fraction))


def mc_convolve(config, kernels, in_cloud: PointCloud, in_features, out_cloud: PointCloud | None = None,
                scale=None):
    """Build the neighbor table and pdf, then run :func:`mc_conv_forward`.

    With ``out_cloud=None`` the output sampling equals the input sampling.
    """
    if out_cloud is None:
        out_cloud = in_cloud
    table = conv_table(in_cloud, out_cloud, config, scale)
    return mc_conv_forward(config, kernels, in_cloud, in_features, out_cloud, table)


def multi_sampling_concat(inputs, out_cloud) -> np.ndarray:
    """Convolve several (features, cloud, config, kernels, table) inputs onto ``out_cloud``.

    Each input's table carries a pdf estimated against that input's own cloud,
    and may use its own radius. Output channels are concatenated in argument order.
    """
    blocks = []
    for i, item in enumerate(inputs):
        features, cloud, config, kernels, table = item
        try:
            blocks.append(mc_conv_forward(config, kernels, cloud, features, out_cloud, table))
        except Exception as exc:
            raise InputError(i, exc) from exc
    if not blocks:
        raise InvalidParameter("multi_sampling_concat needs at least one input")
    return np.concatenate(blocks, axis=1)
