import numpy as np
import pytest

from mcconv.kernel import (PARAM_NAMES, KernelParams, kernel_backward, kernel_forward, kernel_init, mac_count,
                           naive_mac_count, parameter_count)
from mcconv.rng import Rng


def numeric_grad(params, offsets, upstream, step=1e-6):
    out = {}
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            fp = np.sum(upstream * kernel_forward(params, offsets))
            arr[idx] = old - step
            fm = np.sum(upstream * kernel_forward(params, offsets))
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * step)
        out[name] = g
    return out


def test_parameter_and_mac_counts():
    assert parameter_count(8, 8) == 176
    assert kernel_init(Rng(0)).size == 176
    assert mac_count(8, 8) == 152
    assert naive_mac_count(8, 8) == 768


def test_init_deterministic_and_centered():
    a, b = kernel_init(Rng(3)), kernel_init(Rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert not np.array_equal(a.W1, kernel_init(Rng(4)).W1)
    assert np.all(a.b1 == 0) and np.all(a.b2 == 0) and np.all(a.b3 == 0)
    w = kernel_init(Rng(1), trunks=1250).W1.ravel()  # 30k draws
    assert abs(w.mean()) < 3 * w.std() / np.sqrt(w.size)
    assert np.max(np.abs(w)) <= np.sqrt(6 / 3)


def test_zero_network_outputs_zero():
    p = KernelParams.zeros()
    assert np.all(kernel_forward(p, np.random.default_rng(0).normal(size=(10, 3))) == 0)


def test_hand_set_relu_path():
    p = KernelParams.zeros(H=8, K=8)
    p.W1[0, 0] = 1.0
    p.W2[0, 0] = 1.0
    p.W3[0, 0] = 1.0
    out = kernel_forward(p, np.array([0.5, 0.0, 0.0]))
    assert out.shape == (8,)
    assert out[0] == pytest.approx(0.5) and np.all(out[1:] == 0)
    assert kernel_forward(p, np.array([-0.5, 0.0, 0.0]))[0] == 0.0


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        p = kernel_init(Rng(trial), H=4, K=3)
        for name in ("b1", "b2", "b3"):
            getattr(p, name)[...] = rng.normal(scale=0.3, size=getattr(p, name).shape)
        d = rng.uniform(-1, 1, size=(2, 3))
        up = rng.normal(size=(2, 3))
        g = kernel_backward(p, d, up)
        # skip draws that sit within the step of a ReLU kink
        _, (_, z1, _, z2, _, _) = kernel_forward(p, d, return_cache=True)
        if min(np.abs(z1).min(), np.abs(z2).min()) < 1e-4:
            continue
        num = numeric_grad(p, d, up)
        for name in PARAM_NAMES:
            a, b = getattr(g, name), num[name]
            err = np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(b)))
            worst = max(worst, err)
    assert worst < 1e-5


def test_zero_upstream_and_dead_relu():
    p = kernel_init(Rng(2))
    d = np.array([[0.2, -0.1, 0.3]])
    g = kernel_backward(p, d, np.zeros((1, 8)))
    assert all(np.all(a == 0) for a in g.arrays())
    p.b1[...] = -100.0  # all first-layer pre-activations negative
    g = kernel_backward(p, d, np.ones((1, 8)))
    assert np.all(g.W1 == 0) and np.all(g.W2 == 0)


def test_piecewise_linear_within_pattern():
    p = kernel_init(Rng(5))
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(200):
        a = rng.uniform(-1, 1, 3)
        b = a + rng.normal(scale=1e-3, size=3)
        _, ca = kernel_forward(p, a, return_cache=True)
        _, cb = kernel_forward(p, b, return_cache=True)
        if np.array_equal(ca[1] > 0, cb[1] > 0) and np.array_equal(ca[3] > 0, cb[3] > 0):
            alpha = 0.3
            mid = kernel_forward(p, alpha * a + (1 - alpha) * b)
            lin = alpha * kernel_forward(p, a) + (1 - alpha) * kernel_forward(p, b)
            assert np.allclose(mid, lin, atol=1e-12, rtol=0)
            checked += 1
    assert checked > 100


def test_shared_trunk_equals_single_output_networks():
    p = kernel_init(Rng(8))
    d = np.random.default_rng(8).uniform(-1, 1, (20, 3))
    full = kernel_forward(p, d)
    for k in range(8):
        single = KernelParams(p.W1, p.b1, p.W2, p.b2, p.W3[:, k:k + 1], p.b3[k:k + 1])
        # BLAS may pick a different kernel for a one-column product; allow last-bit rounding
        assert np.allclose(kernel_forward(single, d)[:, 0], full[:, k], rtol=0, atol=1e-14)


def test_stacked_trunks_broadcast():
    ps = [kernel_init(Rng(i), H=4, K=2) for i in range(3)]
    stacked = KernelParams.stack(ps)
    d = np.random.default_rng(0).uniform(-1, 1, (5, 3))
    out = kernel_forward(stacked, d)
    assert out.shape == (3, 5, 2)
    for i, p in enumerate(ps):
        assert np.allclose(out[i], kernel_forward(p, d), rtol=0, atol=1e-15)
    flat = KernelParams.from_flat(stacked.flat(), H=4, K=2, trunks=3)
    assert np.array_equal(flat.flat(), stacked.flat())
