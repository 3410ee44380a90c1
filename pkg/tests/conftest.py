import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mcconv.cloud import PointCloud

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def brute_neighbors(queries, sources, r):
    """All-pairs radius search; list of ascending index arrays, batch ids respected."""
    q, s = queries.positions, sources.positions
    d2 = ((q[:, None, :] - s[None, :, :]) ** 2).sum(axis=2)
    same = queries.batch_ids[:, None] == sources.batch_ids[None, :]
    hit = (d2 <= r * r) & same
    return [np.flatnonzero(row) for row in hit]


def random_cloud(rng, n, batches=1, scale=1.0):
    pos = rng.random((n, 3)) * scale
    bids = rng.integers(0, batches, n) if batches > 1 else None
    return PointCloud(pos, batch_ids=bids)


def direct_pdf(pos, nb, j, sigma):
    """Literal nested-loop kernel density at neighbor ``j`` of one receptive field."""
    h = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)  # noqa: E731
    total = 0.0
    for k in nb:
        prod = 1.0
        for d in range(3):
            prod *= h((pos[j, d] - pos[k, d]) / sigma)
        total += prod
    return total / (len(nb) * sigma**3)


def duplicated_pdf(table, q_density, src_index, dup_row):
    """Pdf of a table over sources with ``dup_row`` a copy of ``src_index``.

    ``q_density`` maps (query, source) to the count-free density ``q = |N| p``.
    Both copies get ``2 q`` and every pair is renormalized by the new count.
    """
    out = []
    for qi, j, n in zip(table.pair_queries, table.neighbors, table.counts[table.pair_queries]):
        base = q_density[(qi, src_index if j == dup_row else j)]
        out.append(base * (2.0 if j in (src_index, dup_row) else 1.0) / n)
    return np.array(out)


def tiny_network(seed):
    """Random network with at most two spatial convolutions on at most 64 points."""
    from mcconv.network import (INPUT, MULTI, SINGLE, NetworkSpec, PointwiseConv, ReLU, SpatialConv,
                                init_params)
    from mcconv.poisson import build_hierarchy
    from mcconv.rng import Rng

    rng = np.random.default_rng(seed)
    n = int(rng.integers(16, 65))
    cloud = PointCloud(rng.random((n, 3)))
    m = int(rng.integers(1, 3))
    w = int(rng.integers(1, 4))
    two = seed % 2 == 0
    layers = [SpatialConv("c1", INPUT, "h1", 0, 1 if two else 0, w, MULTI),
              ReLU("h1", "h1r"), PointwiseConv("p1", "h1r", "p", w)]
    out = "p"
    if two:
        mode = SINGLE if seed % 4 == 0 else MULTI
        layers.append(SpatialConv("c2", "p", "h2", 1, 0, w if mode == SINGLE else 2, mode))
        out = "h2"
    spec = NetworkSpec(radii=(0.25,), layers=tuple(layers), in_channels=m, output=out, hidden=4,
                       kernel_outputs=3)
    params = init_params(spec, Rng(seed))
    # nonzero biases move pre-activations off exact zeros
    for k, v in params.items():
        if k.endswith(("b1", "b2", ".b")):
            params[k] = rng.normal(scale=0.3, size=v.shape)
    feats = rng.normal(size=(n, m))
    hier = build_hierarchy(cloud, [0.25 * cloud.bbox_diag], Rng(seed))
    conv = "mc" if seed % 3 else "avg"
    return spec, params, cloud, feats, hier, conv


def network_gradient_errors(spec, params, cloud, feats, hier, conv, seed=0):
    """Worst relative error of analytic vs central-difference gradients, and the count checked.

    With the activation pattern fixed the network is linear in any single
    parameter, so a central difference inside one linear piece is exact up to
    rounding and the largest kink-free step is the most accurate. Steps that
    cross a ReLU kink (the pattern differs between the two evaluations) are
    retried with smaller ones; a parameter with no kink-free step is skipped.
    """
    from mcconv.network import activation_pattern, backward, forward

    rng = np.random.default_rng(seed)
    out, cache = forward(spec, params, cloud, feats, conv=conv, hierarchy=hier)
    w = rng.normal(size=out.shape)
    grads = backward(spec, params, cache, w)

    def evaluate(p):
        o, c = forward(spec, p, cloud, feats, conv=conv, hierarchy=hier)
        return float(np.sum(w * o)), activation_pattern(c)

    worst, checked = 0.0, 0
    for name, arr in params.items():
        for idx in np.ndindex(arr.shape):
            for eps in (1e-4, 1e-5, 1e-6, 1e-7):
                old = arr[idx]
                arr[idx] = old + eps
                lp, pat_p = evaluate(params)
                arr[idx] = old - eps
                lm, pat_m = evaluate(params)
                arr[idx] = old
                if np.array_equal(pat_p, pat_m):
                    break
            else:
                continue
            num = (lp - lm) / (2 * eps)
            ana = grads[name][idx]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-7)
            worst = max(worst, err)
            checked += 1
    return worst, checked


def greedy_poisson(pos, order, r_p):
    """Plain greedy dart throwing over ``order`` with an all-pairs distance check."""
    accepted = []
    for i in order:
        if all(((pos[i] - pos[a]) ** 2).sum() >= r_p * r_p for a in accepted):
            accepted.append(int(i))
    return accepted
