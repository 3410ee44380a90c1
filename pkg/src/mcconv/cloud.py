"""Point clouds, per-point feature maps and bounding-box helpers."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyInput, InvalidParameter, ShapeMismatch

NORMAL_TOL = 1e-6


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class FeatureMap:
    """Dense ``(n, M)`` per-point feature rows.

    Behaves like an array through ``__array__`` so it can be handed to any
    numpy function; the stored values are read-only.
    """

    def __init__(self, values):
        v = np.array(values, dtype=np.float64, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ShapeMismatch(f"feature values must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidParameter("feature values must be finite")
        v.setflags(write=False)
        self.values = v

    @property
    def channel_count(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __repr__(self):
        return f"FeatureMap(n={len(self)}, channels={self.channel_count})"

    def __eq__(self, other):
        return isinstance(other, FeatureMap) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable set of 3-D samples with optional normals and features.

    ``batch_ids`` tags every point with the model it belongs to, so several
    models can travel through the pipeline as one cloud.
    """

    positions: np.ndarray
    normals: np.ndarray | None = None
    features: FeatureMap | None = None
    batch_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pos = _frozen(self.positions)
        if pos.ndim != 2 or pos.shape[1] != 3:
            if pos.size == 0:
                pos = _frozen(np.zeros((0, 3)))
            else:
                raise ShapeMismatch(f"positions must have shape (n, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvalidParameter("positions must be finite")
        n = pos.shape[0]
        object.__setattr__(self, "positions", pos)

        if self.batch_ids is None:
            bids = np.zeros(n, dtype=np.int64)
        else:
            bids = np.array(self.batch_ids, dtype=np.int64, copy=True).reshape(-1)
            if bids.shape[0] != n:
                raise ShapeMismatch(f"{bids.shape[0]} batch ids for {n} points")
            if n and bids.min() < 0:
                raise InvalidParameter("batch ids must be non-negative")
        bids.setflags(write=False)
        object.__setattr__(self, "batch_ids", bids)

        if self.normals is not None:
            nrm = _frozen(self.normals)
            if nrm.shape != (n, 3):
                raise ShapeMismatch(f"normals shape {nrm.shape} does not match {n} points")
            if n and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > NORMAL_TOL:
                raise InvalidParameter("normals must have unit length")
            object.__setattr__(self, "normals", nrm)

        if self.features is not None:
            feats = self.features
            if not isinstance(feats, FeatureMap):
                feats = FeatureMap(feats)
            if len(feats) != n:
                raise ShapeMismatch(f"{len(feats)} feature rows for {n} points")
            object.__setattr__(self, "features", feats)

    def __len__(self):
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.batch_ids, other.batch_ids)
            and _opt_equal(self.normals, other.normals)
            and _opt_equal(self.features, other.features)
        )

    __hash__ = None

    @cached_property
    def bbox_diag(self) -> float:
        return compute_bbox_diag(self)

    @property
    def batches(self) -> np.ndarray:
        """Sorted unique batch ids present in the cloud."""
        return np.unique(self.batch_ids)

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            None if self.normals is None else self.normals[idx],
            None if self.features is None else self.features.values[idx],
            self.batch_ids[idx],
        )

    def with_features(self, features) -> "PointCloud":
        return PointCloud(self.positions, self.normals, features, self.batch_ids)

    def with_batch_ids(self, batch_ids) -> "PointCloud":
        return PointCloud(self.positions, self.normals, self.features, batch_ids)

    def with_positions(self, positions) -> "PointCloud":
        return PointCloud(positions, self.normals, self.features, self.batch_ids)

    def batch(self, batch_id: int) -> "PointCloud":
        return self.subset(np.flatnonzero(self.batch_ids == batch_id))


def _opt_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(np.asarray(a), np.asarray(b))


def compute_bbox_diag(cloud) -> float:
    """Length of the axis-aligned bounding-box diagonal of ``cloud``."""
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pos.shape[0] == 0:
        raise EmptyInput("bounding box of an empty cloud is undefined")
    extent = pos.max(axis=0) - pos.min(axis=0)
    return float(np.linalg.norm(extent))


def receptive_radius(fraction: float, bbox_diag: float) -> float:
    """Receptive-field radius as a fraction of the bounding-box diagonal."""
    if not fraction > 0:
        raise InvalidParameter(f"radius fraction must be positive, got {fraction}")
    if not bbox_diag > 0:
        raise InvalidParameter(f"bounding-box diagonal must be positive, got {bbox_diag}")
    return fraction * bbox_diag


def concat_clouds(clouds) -> PointCloud:
    """Stack clouds into one batched cloud; the i-th input gets batch id i."""
    clouds = list(clouds)
    if not clouds:
        raise EmptyInput("nothing to concatenate")
    has_normals = all(c.normals is not None for c in clouds)
    has_feats = all(c.features is not None for c in clouds)
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.normals for c in clouds]) if has_normals else None,
        np.concatenate([c.features.values for c in clouds]) if has_feats else None,
        np.concatenate([np.full(len(c), i, dtype=np.int64) for i, c in enumerate(clouds)]),
    )


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center each batch on its bounding-box center and scale its diagonal to 1.

    Normals are unchanged by a uniform scale plus translation. Batches made of
    a single point (zero diagonal) are only centered.
    """
    pos = np.array(cloud.positions)
    for b in cloud.batches:
        sel = cloud.batch_ids == b
        p = pos[sel]
        lo, hi = p.min(axis=0), p.max(axis=0)
        diag = np.linalg.norm(hi - lo)
        p = p - 0.5 * (lo + hi)
        if diag > 0:
            p = p / diag
        pos[sel] = p
    return cloud.with_positions(pos)


def reference_diag(cloud: PointCloud) -> float:
    """Largest per-batch bounding-box diagonal; the scene scale used for radii."""
    if len(cloud) == 0:
        raise EmptyInput("bounding box of an empty cloud is undefined")
    return max(compute_bbox_diag(cloud.positions[cloud.batch_ids == b]) for b in cloud.batches)
