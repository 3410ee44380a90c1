"""Input coercion and checks shared by the estimator classes and the CLI."""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud
from .errors import EmptyInput, InvalidParameter, MissingNormals, ShapeMismatch


def check_cloud(X, *, require_normals: bool = False, allow_empty: bool = False) -> PointCloud:
    """Return ``X`` as a :class:`PointCloud`.

    Accepts a cloud or anything array-like of shape ``(n, 3)``; an ``(n, 6)``
    array is read as positions followed by unit normals.
    """
    if isinstance(X, PointCloud):
        cloud = X
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] not in (3, 6):
            raise ShapeMismatch(f"expected an (n, 3) or (n, 6) array, got shape {arr.shape}")
        cloud = PointCloud(arr[:, :3], arr[:, 3:] if arr.shape[1] == 6 else None)
    if not allow_empty and len(cloud) == 0:
        raise EmptyInput("point cloud is empty")
    if require_normals and cloud.normals is None:
        raise MissingNormals("this operation needs per-point normals")
    return cloud


def check_features(F, n: int, channels: int | None = None) -> np.ndarray:
    """``(n, M)`` float array; a 1-D input becomes one channel."""
    f = np.asarray(F, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2 or f.shape[0] != n:
        raise ShapeMismatch(f"expected {n} feature rows, got shape {f.shape}")
    if channels is not None and f.shape[1] != channels:
        raise ShapeMismatch(f"expected {channels} feature channels, got {f.shape[1]}")
    if not np.all(np.isfinite(f)):
        raise InvalidParameter("features must be finite")
    return f


def check_positive(name: str, value, *, allow_none: bool = False):
    if value is None and allow_none:
        return value
    if value is None or not float(value) > 0:
        raise InvalidParameter(f"{name} must be positive, got {value}")
    return value


def check_cloud_list(clouds, *, require_normals: bool = False) -> list:
    if isinstance(clouds, PointCloud):
        clouds = [clouds]
    out = [check_cloud(c, require_normals=require_normals) for c in clouds]
    if not out:
        raise EmptyInput("no point clouds given")
    return out
