import math

import numpy as np
import pytest

from mcconv.cloud import PointCloud
from mcconv.errors import InvalidParameter
from mcconv.grid import radius_neighbors
from conftest import greedy_poisson
from mcconv.poisson import _dart_throw, build_hierarchy, farthest_point_sample, max_neighbors_bound, poisson_sample
from mcconv.protocols import generate_shape
from mcconv.rng import Rng


def min_pairwise(pos):
    if len(pos) < 2:
        return np.inf
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


@pytest.mark.parametrize("seed", range(8))
def test_matches_all_pairs_greedy(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(1, 600))
    pos = g.random((n, 3)) * g.uniform(0.01, 100) + g.uniform(-50, 50)
    if seed % 2:
        pos[:, 2] *= 1e-3  # nearly flat: many empty cells in one axis
    r_p = g.uniform(0.02, 0.3) * np.ptp(pos[:, 0])
    order = g.permutation(n)
    assert _dart_throw(pos, order, r_p).tolist() == greedy_poisson(pos, order, r_p)


def test_identical_points_give_one():
    assert len(poisson_sample(PointCloud(np.ones((50, 3))), 0.1, Rng(0))) == 1


def test_sparse_grid_keeps_everything():
    g = np.stack(np.meshgrid(*[np.arange(5) * 0.2] * 3, indexing="ij"), -1).reshape(-1, 3)
    assert len(poisson_sample(PointCloud(g), 0.15, Rng(0))) == 125


def test_contract_on_uniform_cube():
    cloud = PointCloud(np.random.default_rng(0).random((10_000, 3)))
    sel = poisson_sample(cloud, 0.1, Rng(1))
    kept = cloud.positions[sel]
    assert min_pairwise(kept) >= 0.1
    d2 = ((cloud.positions[:, None, :] - kept[None, :, :]) ** 2).sum(axis=2)
    assert np.sqrt(d2.min(axis=1)).max() < 0.1 + 1e-12


def test_batches_sampled_independently():
    pos = np.random.default_rng(0).random((500, 3))
    cloud = PointCloud(np.vstack([pos, pos]), batch_ids=[0] * 500 + [1] * 500)
    sel = poisson_sample(cloud, 0.2, Rng(0))
    for b in (0, 1):
        part = sel[cloud.batch_ids[sel] == b]
        assert len(part) > 1 and min_pairwise(cloud.positions[part]) >= 0.2


def test_seed_determinism_and_sensitivity():
    cloud = PointCloud(np.random.default_rng(0).random((2000, 3)))
    a = poisson_sample(cloud, 0.1, Rng(5))
    assert np.array_equal(a, poisson_sample(cloud, 0.1, Rng(5)))
    assert not np.array_equal(a, poisson_sample(cloud, 0.1, Rng(6)))
    assert len(poisson_sample(PointCloud(np.zeros((0, 3))), 0.1)) == 0
    with pytest.raises(InvalidParameter):
        poisson_sample(cloud, 0.0)


def test_bound_values():
    assert math.pi * 1.5**3 / (3 * math.sqrt(2)) == pytest.approx(2.4991, abs=1e-4)
    assert max_neighbors_bound(1.0, 1.0) == 2
    assert math.pi * 4.5**3 / (3 * math.sqrt(2)) == pytest.approx(67.48, abs=1e-2)
    assert max_neighbors_bound(4.0, 1.0) == 67
    assert max_neighbors_bound(0.4, 0.1) == 67
    with pytest.raises(InvalidParameter):
        max_neighbors_bound(0.1, 0.2)


def test_surface_neighbor_counts_near_thirty():
    sphere = generate_shape("sphere", 20_000, Rng(0))
    r_p = 0.05
    level = sphere.subset(poisson_sample(sphere, r_p, Rng(1)))
    for ratio in (4, 8):
        counts = radius_neighbors(level, level, ratio * r_p).counts
        assert counts.max() <= max_neighbors_bound(ratio * r_p, r_p)
    # on a surface the count grows like ratio**2, far below the volumetric bound
    assert 15 <= radius_neighbors(level, level, 4 * r_p).counts.mean() <= 120


def test_farthest_point():
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.random((1000, 3)))
    assert sorted(farthest_point_sample(cloud, 1000, Rng(0))) == list(range(1000))
    assert len(farthest_point_sample(cloud, 1, Rng(0))) == 1
    sel = farthest_point_sample(cloud, 100, Rng(0))
    pos = cloud.positions
    for i in range(1, 100):
        d = np.min(np.linalg.norm(pos[:, None, :] - pos[sel[:i]][None], axis=2), axis=1)
        assert d[sel[i]] == pytest.approx(d.max(), rel=0, abs=1e-12)
    with pytest.raises(InvalidParameter):
        farthest_point_sample(cloud, 0)
    with pytest.raises(InvalidParameter):
        farthest_point_sample(cloud, 1001)


def test_hierarchy_top_level_single_point_per_batch():
    a = generate_shape("sphere", 300, Rng(0))
    b = generate_shape("torus", 300, Rng(1))
    cloud = PointCloud(np.vstack([a.positions, b.positions]), batch_ids=[0] * 300 + [1] * 300)
    diag = max(a.bbox_diag, b.bbox_diag)
    h = build_hierarchy(cloud, [0.2, diag], Rng(0))
    top = h.levels[-1]
    assert sorted(top.batch_ids.tolist()) == [0, 1]


def test_hierarchy_tiny_radius_is_identity():
    cloud = PointCloud(np.random.default_rng(0).random((200, 3)))
    h = build_hierarchy(cloud, [1e-6], Rng(0))
    assert h.levels[1] == cloud


def test_hierarchy_three_levels_on_sphere():
    cloud = generate_shape("sphere", 5000, Rng(0))
    h = build_hierarchy(cloud, [0.05, 0.2, 0.5], Rng(0))
    assert len(h) == 4
    for lv in range(1, 4):
        pos = h.levels[lv].positions
        assert min_pairwise(pos) >= h.radii[lv]
        prev = h.levels[lv - 1].positions
        assert np.array_equal(prev[h.parent_indices[lv]], pos)
        d = np.sqrt(((prev[:, None] - pos[None]) ** 2).sum(-1)).min(axis=1)
        assert d.max() < h.radii[lv]
        assert np.array_equal(cloud.positions[h.root_indices(lv)], pos)
    with pytest.raises(InvalidParameter):
        build_hierarchy(cloud, [0.2, 0.1])
