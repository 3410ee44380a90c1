import math

import numpy as np
import pytest

from mcconv.cloud import PointCloud
from mcconv.errors import InvalidParameter, MissingNormals
from mcconv.protocols import (BOX_HALF, PROTOCOLS, Protocol, apply_protocol, band_area_fraction, generate_shape,
                              keep_probabilities, latitude, scalar_field_on_sphere)
from mcconv.rng import Rng


def three_sigma(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


def test_uniform_keeps_everything():
    c = generate_shape("torus", 500, Rng(0))
    assert apply_protocol(c, Protocol("uniform")) == c


def test_lambertian_sphere_rate():
    c = generate_shape("sphere", 50_000, Rng(0))
    sub = apply_protocol(c, Protocol("lambert", direction=(0, 0, 1), seed=3))
    assert np.all(sub.normals[:, 2] > 0)
    assert abs(len(sub) / len(c) - 0.25) < three_sigma(0.25, len(c))


def test_lambertian_needs_normals():
    with pytest.raises(MissingNormals):
        apply_protocol(PointCloud(np.zeros((3, 3))), Protocol("lambertian"))


def test_split_fraction():
    c = PointCloud(np.random.default_rng(0).random((100_000, 3)))
    sub = apply_protocol(c, Protocol("split", keep_prob=0.25, seed=1))
    prob = keep_probabilities(c, Protocol("split", keep_prob=0.25, seed=1))
    # the expectation given the drawn half-space, then the nominal 0.625
    assert abs(len(sub) / len(c) - prob.mean()) < three_sigma(0.625, len(c))
    assert abs(len(sub) / len(c) - 0.625) < 0.03


def test_split_monotone_in_keep_prob():
    c = PointCloud(np.random.default_rng(1).random((5000, 3)))
    for seed in range(10):
        sizes = [len(apply_protocol(c, Protocol("split", keep_prob=k, seed=seed))) for k in (0.1, 0.4, 0.8)]
        assert sizes[0] < sizes[1] < sizes[2]


def test_gradient_probability_range():
    c = generate_shape("ellipsoid", 4000, Rng(0))
    prob = keep_probabilities(c, Protocol("gradient", p_min=0.05, seed=2))
    assert prob.min() == pytest.approx(0.05) and prob.max() == pytest.approx(1.0)
    # the largest extent of the ellipsoid is x
    x = c.positions[:, 0]
    assert abs(np.corrcoef(x, prob)[0, 1]) > 0.999


def test_occlusion_keeps_front_side():
    # dense enough that every central view bin holds several front-side points
    c = generate_shape("sphere", 100_000, Rng(0))
    sub = apply_protocol(c, Protocol("occlusion", direction=(1, 0, 0)))
    assert 0.3 < len(sub) / len(c) < 0.6
    assert np.mean(sub.positions[:, 0] > 0) > 0.95


def test_protocols_are_subsets_and_deterministic():
    c = generate_shape("box", 3000, Rng(0))
    for kind in PROTOCOLS:
        sub, idx = apply_protocol(c, Protocol(kind, seed=4), return_indices=True)
        assert np.array_equal(sub.positions, c.positions[idx])
        again = apply_protocol(c, Protocol(kind, seed=4))
        assert again == sub
        if kind not in ("uniform",):
            other = apply_protocol(c, Protocol(kind, seed=5))
            assert other != sub


def test_protocol_validation():
    with pytest.raises(InvalidParameter):
        Protocol("fog")
    with pytest.raises(InvalidParameter):
        Protocol("split", keep_prob=0)
    assert Protocol("gradient", direction=(0, 0, 2)).direction == (0.0, 0.0, 1.0)


def test_sphere_generator():
    c = generate_shape("sphere", 1000, Rng(0))
    assert np.allclose(np.linalg.norm(c.positions, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(c.normals, c.positions)


def test_torus_implicit_equation():
    c = generate_shape("torus", 2000, Rng(0))
    x, y, z = c.positions.T
    resid = (np.sqrt(x**2 + y**2) - 1.0) ** 2 + z**2 - 0.4**2
    assert np.max(np.abs(resid)) < 1e-9


def test_box_faces_area_proportional():
    n = 60_000
    c = generate_shape("box", n, Rng(0))
    a, b, cc = BOX_HALF
    areas = np.array([b * cc, a * cc, a * b])
    frac = areas / areas.sum()
    nrm = c.normals
    assert np.all(np.sum(np.abs(nrm) == 1.0, axis=1) == 1)
    for axis in range(3):
        share = np.mean(np.abs(nrm[:, axis]) == 1.0)
        assert abs(share - frac[axis]) < three_sigma(frac[axis], n)


def test_ellipsoid_normals_unit_and_on_surface():
    c = generate_shape("ellipsoid", 2000, Rng(0))
    x, y, z = c.positions.T
    assert np.max(np.abs((x / 1.0) ** 2 + (y / 0.7) ** 2 + (z / 0.5) ** 2 - 1)) < 1e-9
    grad = c.positions / np.array([1.0, 0.49, 0.25])
    grad /= np.linalg.norm(grad, axis=1, keepdims=True)
    assert np.allclose(grad, c.normals, atol=1e-12)


def test_scalar_fields():
    c = generate_shape("sphere", 10_000, Rng(0))
    assert np.all(np.asarray(scalar_field_on_sphere(c)) == 1.0)
    assert np.all(np.asarray(scalar_field_on_sphere(c, "harmonic", k=0)) == 1.0)
    band = np.asarray(scalar_field_on_sphere(c, band=(0.2, 0.5)))[:, 0]
    p = band_area_fraction(0.2, 0.5)
    assert abs(band.mean() - p) < three_sigma(p, len(c))
    assert np.allclose(latitude(PointCloud([[0, 0, 1], [1, 0, 0]])), [math.pi / 2, 0])
