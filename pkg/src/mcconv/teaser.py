"""Edge filter on a non-uniformly sampled sphere: averaging vs Monte Carlo.

A latitude band indicator is convolved with a fixed antisymmetric kernel
``g(d) = d_z exp(-|d|^2 / 0.18)`` at a fixed set of evaluation points. Four
samplings are compared: a dense uniform reference, a sparse uniform one, and a
sparse one thinned by the ``gradient`` protocol along +z, the last evaluated
both with plain averaging (pdf = 1) and with the density-normalized estimator.
Each condition is scored against the dense reference computed with the same
estimator, since the two estimators differ by a constant scale.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import PointCloud
from .conv import SINGLE, ConvLayerConfig, mc_conv_forward
from .density import DensityParams, estimate_pdf
from .grid import radius_neighbors
from .protocols import Protocol, apply_protocol, generate_shape, scalar_field_on_sphere
from .rng import Rng
from .svg import line_chart

CONDITIONS = ("reference", "uniform", "gradient_avg", "gradient_mc")


def edge_kernel(delta):
    """Fixed edge detector, odd in ``z``: ``d_z * exp(-|d|^2 / 0.18)``."""
    d = np.asarray(delta, dtype=np.float64)
    return d[:, 2:3] * np.exp(-np.sum(d * d, axis=1, keepdims=True) / 0.18)


@dataclass(frozen=True)
class TeaserConfig:
    """Radii are in unit-sphere units (the sphere's bounding-box diagonal is 2*sqrt(3))."""

    seed: int = 0
    n_reference: int = 200_000
    n_uniform: int = 4000
    n_gradient: int = 4000
    radius: float = 0.25
    band: tuple = (-0.6, 0.0)
    lat_bins: int = 60
    lat_limit: float = 1.4
    lon_reference: int = 2
    lon_sparse: int = 64
    p_min: float = 0.05

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        return d


@dataclass
class TeaserResult:
    config: TeaserConfig
    latitudes: np.ndarray
    curves: dict = field(default_factory=dict)
    constant_curves: dict = field(default_factory=dict)
    constant: dict = field(default_factory=dict)
    constant_dev: dict = field(default_factory=dict)
    nrmse: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        """Gradient-MC error over Gradient-AVG error."""
        return self.nrmse["gradient_mc"] / self.nrmse["gradient_avg"]

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["latitude", "reference_avg", "reference_mc", "uniform_avg", "uniform_mc",
                    "gradient_avg", "gradient_mc"])
        keys = ["reference_avg", "reference_mc", "uniform_avg", "uniform_mc", "gradient_avg", "gradient_mc"]
        for i, lat in enumerate(self.latitudes):
            w.writerow([repr(float(lat))] + [repr(float(self.curves[k][i])) for k in keys])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "estimator", "points", "nrmse", "constant_mean_abs", "constant_deviation"])
        for cond in ("reference", "uniform", "gradient"):
            for est in ("avg", "mc"):
                key = f"{cond}_{est}"
                w.writerow([cond, est, self.sizes[cond], repr(self.nrmse.get(key, 0.0)),
                            repr(self.constant[key]), repr(self.constant_dev[key])])
        return buf.getvalue()

    def svg(self) -> str:
        lat = self.latitudes
        series = {
            "dense uniform (MC)": (lat, _unit_peak(self.curves["reference_mc"])),
            "uniform 4k (MC)": (lat, _unit_peak(self.curves["uniform_mc"], self.curves["reference_mc"])),
            "gradient AVG": (lat, _unit_peak(self.curves["gradient_avg"], self.curves["reference_avg"])),
            "gradient MC": (lat, _unit_peak(self.curves["gradient_mc"], self.curves["reference_mc"])),
        }
        return line_chart(series, title="Edge response on a sphere", xlabel="latitude (rad)",
                          ylabel="response / reference peak")


def _unit_peak(curve, ref=None):
    ref = curve if ref is None else ref
    peak = np.max(np.abs(ref))
    return curve / peak if peak > 0 else curve


def evaluation_points(lat_bins: int, lat_limit: float, n_lon: int) -> tuple:
    """Grid of ``lat_bins x n_lon`` points on the unit sphere; returns (latitudes, cloud)."""
    lat = np.linspace(-lat_limit, lat_limit, lat_bins)
    lon = (np.arange(n_lon) + 0.5) * 2.0 * math.pi / n_lon
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    pts = np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1).reshape(-1, 3)
    return lat, PointCloud(pts, pts.copy())


def latitude_profile(cloud: PointCloud, features, estimator: str, radius: float, lat_bins: int,
                     lat_limit: float, n_lon: int) -> np.ndarray:
    """Mean filter response per latitude row of the evaluation grid.

    ``features`` may hold several channels; each is filtered on its own and
    the result has shape ``(lat_bins, channels)`` (or ``(lat_bins,)`` for one).
    """
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    f = f[:, None] if single else f
    _, queries = evaluation_points(lat_bins, lat_limit, n_lon)
    table = radius_neighbors(queries, cloud, radius)
    density = "avg" if estimator == "avg" else "kde"
    if density == "kde":
        table = estimate_pdf(table, cloud, DensityParams())
    m = f.shape[1]
    cfg = ConvLayerConfig(m, m, SINGLE, density=density)
    out = mc_conv_forward(cfg, lambda d: np.repeat(edge_kernel(d), m, axis=1), cloud, f, queries, table)
    prof = out.reshape(lat_bins, n_lon, m).mean(axis=1)
    return prof[:, 0] if single else prof


def nrmse(curve, reference) -> float:
    """RMSE of ``curve`` against ``reference`` divided by the reference's RMS."""
    curve, reference = np.asarray(curve), np.asarray(reference)
    return float(np.sqrt(np.mean((curve - reference) ** 2)) / np.sqrt(np.mean(reference**2)))


def sample_conditions(cfg: TeaserConfig) -> dict:
    rng = Rng(cfg.seed)
    dense = generate_shape("sphere", cfg.n_reference, rng.child("teaser/reference"))
    uniform = generate_shape("sphere", cfg.n_uniform, rng.child("teaser/uniform"))
    # the gradient keeps (1 + p_min)/2 of the points on average; oversample to land near n_gradient
    n_base = int(round(cfg.n_gradient * 2.0 / (1.0 + cfg.p_min)))
    base = generate_shape("sphere", n_base, rng.child("teaser/gradient"))
    gradient = apply_protocol(base, Protocol("gradient", direction=(0.0, 0.0, 1.0), p_min=cfg.p_min,
                                             seed=rng.child("teaser/protocol").seed))
    return {"reference": dense, "uniform": uniform, "gradient": gradient}


def run_teaser(cfg: TeaserConfig | None = None) -> TeaserResult:
    cfg = cfg or TeaserConfig()
    clouds = sample_conditions(cfg)
    lat, _ = evaluation_points(cfg.lat_bins, cfg.lat_limit, 1)
    res = TeaserResult(cfg, lat, sizes={k: len(v) for k, v in clouds.items()})
    for name, cloud in clouds.items():
        n_lon = cfg.lon_reference if name == "reference" else cfg.lon_sparse
        signal = np.asarray(scalar_field_on_sphere(cloud, band=cfg.band))[:, 0]
        both = np.stack([signal, np.ones(len(cloud))], axis=1)
        for est in ("avg", "mc"):
            prof = latitude_profile(cloud, both, est, cfg.radius, cfg.lat_bins, cfg.lat_limit, n_lon)
            res.curves[f"{name}_{est}"] = prof[:, 0]
            res.constant_curves[f"{name}_{est}"] = prof[:, 1]
    for name in clouds:
        for est in ("avg", "mc"):
            key = f"{name}_{est}"
            scale = np.sqrt(np.mean(res.curves[f"reference_{est}"] ** 2))
            const = res.constant_curves[key]
            res.constant[key] = float(np.mean(np.abs(const)) / scale)
            res.constant_dev[key] = float(np.mean(np.abs(const - res.constant_curves[f"reference_{est}"])) / scale)
            if name != "reference":
                res.nrmse[key] = nrmse(res.curves[key], res.curves[f"reference_{est}"])
    return res
