"""Synthetic shapes and rejection-sampling protocols for non-uniform data.

Each protocol assigns every point a keep probability and draws one Bernoulli
per point from a counter-based stream, so the result is an index subset of the
input that depends only on the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import FeatureMap, PointCloud, compute_bbox_diag
from .errors import InvalidParameter, MissingNormals
from .rng import as_rng

PROTOCOLS = ("uniform", "split", "gradient", "lambertian", "occlusion")
_ALIASES = {"lambert": "lambertian"}
SHAPES = ("sphere", "torus", "box", "ellipsoid")


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not n > 0:
        raise InvalidParameter("direction must be non-zero")
    return v / n


@dataclass(frozen=True)
class Protocol:
    """One rejection-sampling rule.

    ``direction`` is the gradient axis (``gradient``) or the view direction
    (``lambertian``, ``occlusion``); when ``None`` it is drawn from the seed.
    ``gradient`` without a direction uses the largest bounding-box axis with a
    random sign. ``p_min`` floors the gradient keep probability.
    """

    kind: str = "uniform"
    keep_prob: float = 0.25
    direction: tuple | None = None
    p_min: float = 0.05
    occlusion_bins: int = 64
    occlusion_depth: float = 0.02
    seed: int = 0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in PROTOCOLS:
            raise InvalidParameter(f"unknown protocol {self.kind!r}; expected one of {PROTOCOLS}")
        object.__setattr__(self, "kind", kind)
        if not 0 < self.keep_prob <= 1:
            raise InvalidParameter(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if not 0 <= self.p_min <= 1:
            raise InvalidParameter(f"p_min must be in [0, 1], got {self.p_min}")
        if self.direction is not None:
            object.__setattr__(self, "direction", tuple(_unit(self.direction).tolist()))


def _random_direction(gen):
    v = gen.normal(size=3)
    return v / np.linalg.norm(v)


def keep_probabilities(cloud: PointCloud, proto: Protocol) -> np.ndarray:
    """Per-point keep probability (occlusion gives 0/1 visibility)."""
    rng = as_rng(proto.seed)
    n = len(cloud)
    prob = np.ones(n)
    if proto.kind == "uniform" or n == 0:
        return prob
    if proto.kind == "lambertian" and cloud.normals is None:
        raise MissingNormals("the lambertian protocol needs per-point normals")
    for b in cloud.batches:
        sel = np.flatnonzero(cloud.batch_ids == b)
        pos = cloud.positions[sel]
        gen = rng.stream(f"protocol/{proto.kind}", int(b))
        if proto.kind == "split":
            normal = _random_direction(gen)
            side = (pos - pos.mean(axis=0)) @ normal > 0
            prob[sel] = np.where(side, proto.keep_prob, 1.0)
        elif proto.kind == "gradient":
            if proto.direction is not None:
                axis = np.asarray(proto.direction)
            else:
                axis = np.zeros(3)
                axis[int(np.argmax(np.ptp(pos, axis=0)))] = 1.0 if gen.random() < 0.5 else -1.0
            t = pos @ axis
            span = t.max() - t.min()
            t = (t - t.min()) / span if span > 0 else np.ones_like(t)
            prob[sel] = proto.p_min + (1.0 - proto.p_min) * t
        elif proto.kind == "lambertian":
            d = np.asarray(proto.direction) if proto.direction is not None else _random_direction(gen)
            prob[sel] = np.maximum(0.0, cloud.normals[sel] @ d)
        else:
            d = np.asarray(proto.direction) if proto.direction is not None else _random_direction(gen)
            prob[sel] = _visible(pos, d, proto.occlusion_bins, proto.occlusion_depth).astype(np.float64)
    return prob


def _visible(pos, d, bins, depth_fraction):
    """Points within ``depth_fraction * diag`` of the nearest point in their view bin."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    pu, pv = pos @ u, pos @ v
    depth = -(pos @ d)  # viewer sits far away along +d
    iu = _bin(pu, bins)
    iv = _bin(pv, bins)
    cell = iu * bins + iv
    nearest = np.full(bins * bins, np.inf)
    np.minimum.at(nearest, cell, depth)
    tau = depth_fraction * compute_bbox_diag(pos) if len(pos) > 1 else 0.0
    return depth <= nearest[cell] + tau


def _bin(x, bins):
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros(len(x), dtype=np.int64)
    return np.minimum(((x - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)


def apply_protocol(cloud: PointCloud, proto: Protocol, return_indices: bool = False):
    """Subset of ``cloud`` kept by one Bernoulli draw per point."""
    prob = keep_probabilities(cloud, proto)
    if proto.kind in ("uniform", "occlusion"):
        keep = prob >= 1.0
    else:
        u = as_rng(proto.seed).stream(f"protocol/{proto.kind}/draw").random(len(cloud))
        keep = u < prob
    idx = np.flatnonzero(keep)
    sub = cloud.subset(idx)
    return (sub, idx) if return_indices else sub


# --- synthetic shapes -------------------------------------------------------

TORUS_MAJOR = 1.0
TORUS_MINOR = 0.4
BOX_HALF = (1.0, 0.6, 0.4)
ELLIPSOID_AXES = (1.0, 0.7, 0.5)


def _sphere(n, gen):
    v = gen.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, v.copy()


def _rejection(n, gen, propose):
    """Collect ``n`` accepted proposals; ``propose(m)`` returns (pos, normal, accept_prob)."""
    pos_out, nrm_out = [], []
    have = 0
    while have < n:
        m = max(64, int(1.5 * (n - have)) + 16)
        pos, nrm, acc = propose(m)
        keep = gen.random(m) < acc
        pos_out.append(pos[keep])
        nrm_out.append(nrm[keep])
        have += int(keep.sum())
    return np.concatenate(pos_out)[:n], np.concatenate(nrm_out)[:n]


def _torus(n, gen, R=TORUS_MAJOR, rho=TORUS_MINOR):
    def propose(m):
        u = gen.uniform(0, 2 * np.pi, m)  # around the tube
        v = gen.uniform(0, 2 * np.pi, m)  # around the axis
        ring = R + rho * np.cos(u)
        pos = np.stack([ring * np.cos(v), ring * np.sin(v), rho * np.sin(u)], axis=1)
        nrm = np.stack([np.cos(u) * np.cos(v), np.cos(u) * np.sin(v), np.sin(u)], axis=1)
        return pos, nrm, ring / (R + rho)

    return _rejection(n, gen, propose)


def _box(n, gen, half=BOX_HALF):
    a, b, c = half
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = gen.choice(6, size=n, p=areas / areas.sum())
    uv = gen.uniform(-1, 1, size=(n, 2))
    pos = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    h = np.asarray(half)
    for f in range(6):
        sel = face == f
        axis, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
        others = [k for k in range(3) if k != axis]
        pos[sel, axis] = sign * h[axis]
        pos[sel, others[0]] = uv[sel, 0] * h[others[0]]
        pos[sel, others[1]] = uv[sel, 1] * h[others[1]]
        nrm[sel, axis] = sign
    return pos, nrm


def _ellipsoid(n, gen, axes=ELLIPSOID_AXES):
    a, b, c = axes
    g_max = max(b * c, a * c, a * b)

    def propose(m):
        u, _ = _sphere(m, gen)
        pos = u * np.asarray(axes)
        # area stretch of the sphere -> ellipsoid map at u
        g = np.sqrt((b * c * u[:, 0]) ** 2 + (a * c * u[:, 1]) ** 2 + (a * b * u[:, 2]) ** 2)
        nrm = pos / np.asarray(axes) ** 2
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        return pos, nrm, g / g_max

    return _rejection(n, gen, propose)


_GENERATORS = {"sphere": _sphere, "torus": _torus, "box": _box, "ellipsoid": _ellipsoid}


def generate_shape(kind: str, n: int, rng=None) -> PointCloud:
    """``n`` area-uniform surface samples with exact outward unit normals."""
    if kind not in _GENERATORS:
        raise InvalidParameter(f"unknown shape {kind!r}; expected one of {SHAPES}")
    if n < 1:
        raise InvalidParameter(f"n must be >= 1, got {n}")
    gen = as_rng(rng).stream(f"shape/{kind}")
    pos, nrm = _GENERATORS[kind](n, gen)
    return PointCloud(pos, nrm)


# --- signals on the unit sphere ---------------------------------------------


def latitude(cloud: PointCloud) -> np.ndarray:
    """Latitude in radians, measured from the equator (``asin(z)``)."""
    z = np.clip(cloud.positions[:, 2] / np.linalg.norm(cloud.positions, axis=1), -1.0, 1.0)
    return np.arcsin(z)


def scalar_field_on_sphere(cloud: PointCloud, field: str = "step_band",
                           band=(-math.pi / 2, math.pi / 2), k: float = 0.0) -> FeatureMap:
    """One-channel test signal: latitude band indicator or ``cos(k * latitude)``."""
    lat = latitude(cloud)
    if field in ("step_band", "StepBand"):
        lo, hi = band
        return FeatureMap(((lat >= lo) & (lat <= hi)).astype(np.float64))
    if field in ("harmonic", "Harmonic"):
        return FeatureMap(np.cos(k * lat))
    raise InvalidParameter(f"unknown field {field!r}")


def band_area_fraction(lo: float, hi: float) -> float:
    """Fraction of the unit sphere's area with latitude in ``[lo, hi]``."""
    return (math.sin(hi) - math.sin(lo)) / 2.0
