"""Uniform voxel grids and flat radius-neighbor tables.

A grid with cell size ``>= r`` guarantees that every point within ``r`` of a
query lives in the query's cell or one of its 26 neighbors, so a radius
search only scans 27 cells and costs time linear in the output size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .cloud import PointCloud
from .errors import EmptyInput, IndexMismatch, InvalidParameter, NotEstimated

_OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)
_MAX_CELLS = 2**62


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Points of one batch bucketed into cubic cells.

    Only occupied cells are stored: ``cell_keys`` holds their sorted linear
    ids and ``cell_starts``/``cell_ends`` their ranges into ``point_order``.
    """

    cell_size: float
    origin: np.ndarray
    dims: tuple
    point_order: np.ndarray
    point_cells: np.ndarray
    cell_keys: np.ndarray
    cell_starts: np.ndarray
    cell_ends: np.ndarray
    batch_tag: int

    @property
    def cell_ranges(self) -> np.ndarray:
        return np.stack([self.cell_starts, self.cell_ends], axis=1)

    def cell_of(self, positions) -> np.ndarray:
        """Integer ``(n, 3)`` cell coordinates of ``positions`` (may fall outside ``dims``)."""
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        return np.floor((pos - self.origin) / self.cell_size).astype(np.int64)

    def linear_id(self, cells) -> np.ndarray:
        d = self.dims
        return (cells[:, 0] * d[1] + cells[:, 1]) * d[2] + cells[:, 2]

    def cell_range(self, cell) -> tuple:
        """``(start, end)`` into ``point_order`` for one cell; empty cells give ``(0, 0)``."""
        lin = self.linear_id(np.asarray(cell, dtype=np.int64).reshape(1, 3))[0]
        k = np.searchsorted(self.cell_keys, lin)
        if k < len(self.cell_keys) and self.cell_keys[k] == lin:
            return int(self.cell_starts[k]), int(self.cell_ends[k])
        return 0, 0


def build_grid(cloud: PointCloud, cell_size: float) -> list:
    """One :class:`VoxelGrid` per batch id of ``cloud``, in ascending batch order."""
    if not cell_size > 0:
        raise InvalidParameter(f"cell size must be positive, got {cell_size}")
    if len(cloud) == 0:
        raise EmptyInput("cannot build a grid over an empty cloud")
    grids = []
    for b in cloud.batches:
        idx = np.flatnonzero(cloud.batch_ids == b)
        pos = cloud.positions[idx]
        origin = pos.min(axis=0)
        cells = np.floor((pos - origin) / cell_size).astype(np.int64)
        dims = tuple(int(v) for v in cells.max(axis=0) + 1)
        if float(dims[0]) * dims[1] * dims[2] >= _MAX_CELLS:
            raise InvalidParameter(f"cell size {cell_size} is too small for the cloud extent")
        lin = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
        # stable sort keeps ascending original index within each cell
        order = np.argsort(lin, kind="stable")
        lin_sorted = lin[order]
        keys, starts, counts = np.unique(lin_sorted, return_index=True, return_counts=True)
        grids.append(
            VoxelGrid(
                cell_size=float(cell_size),
                origin=origin,
                dims=dims,
                point_order=idx[order],
                point_cells=lin_sorted,
                cell_keys=keys,
                cell_starts=starts,
                cell_ends=starts + counts,
                batch_tag=int(b),
            )
        )
    return grids


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """CSR-style neighbor lists with one pdf slot per (query, neighbor) pair.

    Neighbors of query ``i`` are ``neighbors[indptr[i]:indptr[i + 1]]`` in
    ascending index order; ``pdf`` is ``None`` until density estimation runs.
    """

    indptr: np.ndarray
    neighbors: np.ndarray
    radius: float
    n_sources: int
    pdf: np.ndarray | None = None

    @property
    def n_queries(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_pairs(self) -> int:
        return len(self.neighbors)

    @property
    def query_ranges(self) -> np.ndarray:
        return np.stack([self.indptr[:-1], self.indptr[1:]], axis=1)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def pair_queries(self) -> np.ndarray:
        """Query index of every pair."""
        return np.repeat(np.arange(self.n_queries), self.counts)

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.neighbors[self.indptr[i]:self.indptr[i + 1]]

    def with_pdf(self, pdf) -> "NeighborTable":
        pdf = np.asarray(pdf, dtype=np.float64)
        if pdf.shape != self.neighbors.shape:
            raise IndexMismatch(f"{pdf.shape[0]} pdf values for {self.n_pairs} pairs")
        return replace(self, pdf=pdf)

    def require_pdf(self) -> np.ndarray:
        if self.pdf is None:
            raise NotEstimated("neighbor table has no pdf values; run estimate_pdf first")
        return self.pdf


def _check_grids(sources: PointCloud, grids) -> dict:
    by_batch = {}
    total = 0
    for g in grids:
        po = g.point_order
        total += len(po)
        if len(po) and (po.max() >= len(sources) or po.min() < 0):
            raise IndexMismatch("grid references points outside the source cloud")
        if np.any(sources.batch_ids[po] != g.batch_tag):
            raise IndexMismatch("grid batch tag does not match source batch ids")
        if not np.array_equal(g.linear_id(g.cell_of(sources.positions[po])), g.point_cells):
            raise IndexMismatch("grid was not built over these source positions")
        by_batch[g.batch_tag] = g
    if total != len(sources):
        raise IndexMismatch(f"grids cover {total} points but the source cloud has {len(sources)}")
    return by_batch


def _expand_ranges(starts, counts):
    """Concatenate ``arange(s, s + c)`` for every (s, c) without a Python loop."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    base = np.repeat(starts - (np.cumsum(counts) - counts), counts)
    return base + np.arange(total, dtype=np.int64)


def build_neighbor_table(queries: PointCloud, sources: PointCloud, grids, r: float) -> NeighborTable:
    """All source points within distance ``r`` (closed ball) of each query.

    ``grids`` is the list returned by :func:`build_grid` over ``sources`` (a
    single :class:`VoxelGrid` is accepted for single-batch clouds). Pairs never
    cross batch ids.
    """
    if isinstance(grids, VoxelGrid):
        grids = [grids]
    if not r > 0:
        raise InvalidParameter(f"radius must be positive, got {r}")
    by_batch = _check_grids(sources, grids)
    for g in by_batch.values():
        if g.cell_size < r:
            raise InvalidParameter(f"grid cell size {g.cell_size} is smaller than radius {r}")
    r2 = r * r
    q_all, s_all = [], []
    for b, g in by_batch.items():
        q_idx = np.flatnonzero(queries.batch_ids == b)
        if len(q_idx) == 0:
            continue
        qpos = queries.positions[q_idx]
        qcell = g.cell_of(qpos)
        dims = np.array(g.dims)
        cand_q, cand_start, cand_count = [], [], []
        for off in _OFFSETS:
            c = qcell + off
            inside = np.all((c >= 0) & (c < dims), axis=1)
            if not inside.any():
                continue
            qi = np.flatnonzero(inside)
            lin = g.linear_id(c[qi])
            k = np.searchsorted(g.cell_keys, lin)
            k_clip = np.minimum(k, len(g.cell_keys) - 1)
            hit = (k < len(g.cell_keys)) & (g.cell_keys[k_clip] == lin)
            cand_q.append(qi[hit])
            cand_start.append(g.cell_starts[k_clip[hit]])
            cand_count.append(g.cell_ends[k_clip[hit]] - g.cell_starts[k_clip[hit]])
        if not cand_q:
            continue
        cq = np.concatenate(cand_q)
        cs = np.concatenate(cand_start)
        cc = np.concatenate(cand_count)
        slots = _expand_ranges(cs, cc)
        local_q = np.repeat(cq, cc)
        src = g.point_order[slots]
        d2 = squared_distances(qpos[local_q], sources.positions[src])
        keep = d2 <= r2
        q_all.append(q_idx[local_q[keep]])
        s_all.append(src[keep])
    if q_all:
        q = np.concatenate(q_all)
        s = np.concatenate(s_all)
        order = np.lexsort((s, q))
        q, s = q[order], s[order]
    else:
        q = s = np.zeros(0, dtype=np.int64)
    counts = np.bincount(q, minlength=len(queries))
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return NeighborTable(indptr=indptr, neighbors=s.astype(np.int64), radius=float(r), n_sources=len(sources))


def squared_distances(a, b) -> np.ndarray:
    """Row-wise squared Euclidean distance, summed x, then y, then z."""
    d = a - b
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


def radius_neighbors(queries: PointCloud, sources: PointCloud, r: float) -> NeighborTable:
    """Convenience wrapper: build grids with cell size ``r`` and query them."""
    if len(sources) == 0:
        counts = np.zeros(len(queries) + 1, dtype=np.int64)
        return NeighborTable(counts, np.zeros(0, dtype=np.int64), float(r), 0)
    return build_neighbor_table(queries, sources, build_grid(sources, r), r)
