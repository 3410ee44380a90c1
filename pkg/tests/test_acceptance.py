"""Acceptance criteria 1-9. Each test prints one ``PASS``/``FAIL`` line with the measured value.

Tolerances are pinned here; run ``pytest tests/test_acceptance.py -v`` to see the report.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import brute_neighbors, direct_pdf, duplicated_pdf, network_gradient_errors, random_cloud, tiny_network
from mcconv.bench import bench_sample, time_ratio
from mcconv.cli import main
from mcconv.cloud import PointCloud
from mcconv.conv import MULTI, SINGLE, ConvLayerConfig, mc_conv_forward
from mcconv.density import estimate_pdf
from mcconv.grid import radius_neighbors
from mcconv.poisson import max_neighbors_bound, poisson_sample
from mcconv.protocols import generate_shape
from mcconv.rng import Rng
from mcconv.teaser import TeaserConfig, run_teaser
from mcconv.training import TrainConfig, train_normal_estimation

GOLDEN = Path(__file__).parent / "golden"

GRAD_REL_TOL = 1e-4
GRAD_NETWORKS = 24
DUP_TOL = 1e-12
DUP_INSTANCES = 200
PD_CLOUDS = 50
PD_RATIO = 4
BENCH_PD_MAX_RATIO = 15.0
GRID_CONFIGS = 50
KDE_TOL = 1e-12
KDE_NEIGHBORHOODS = 30
TOY_LOSS_FRACTION = 0.5
ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gradients(report):
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for seed in range(GRAD_NETWORKS):
        w, c = network_gradient_errors(*tiny_network(seed), seed=seed)
        worst, checked = max(worst, w), checked + c
    dt = time.perf_counter() - t0
    report(1, worst < GRAD_REL_TOL and dt < 120,
           f"{GRAD_NETWORKS} networks, {checked} parameters, worst rel err {worst:.2e} "
           f"(tol {GRAD_REL_TOL:g}), {dt:.1f}s")


def test_criterion_2_duplication(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(DUP_INSTANCES):
        n, nq = int(rng.integers(5, 60)), int(rng.integers(1, 12))
        m = int(rng.integers(1, 4))
        mode = SINGLE if trial % 3 == 0 else MULTI
        cfg = ConvLayerConfig(m, m if mode == SINGLE else int(rng.integers(1, 4)), mode)
        kernels = cfg.init_kernels(Rng(trial))
        src = PointCloud(rng.random((n, 3)))
        q = PointCloud(rng.random((nq, 3)))
        f = rng.normal(size=(n, m))
        r = float(rng.uniform(0.3, 0.9))
        t = radius_neighbors(q, src, r)
        qd = rng.uniform(0.1, 5.0, t.n_pairs)
        base = mc_conv_forward(cfg, kernels, src, f, q, t, pdf=qd / t.counts[t.pair_queries])
        j = int(rng.integers(n))
        src2 = src.subset(list(range(n)) + [j])
        t2 = radius_neighbors(q, src2, r)
        lookup = dict(zip(zip(t.pair_queries, t.neighbors), qd))
        out = mc_conv_forward(cfg, kernels, src2, np.vstack([f, f[j:j + 1]]), q, t2,
                              pdf=duplicated_pdf(t2, lookup, j, n))
        scale = max(1.0, float(np.max(np.abs(base))))
        worst = max(worst, float(np.max(np.abs(out - base))) / scale)
    report(2, worst <= DUP_TOL, f"{DUP_INSTANCES} instances, worst deviation {worst:.2e} (tol {DUP_TOL:g})")


def test_criterion_3_teaser(report):
    golden = json.loads((GOLDEN / "teaser.json").read_text())
    cfg = TeaserConfig(**{**golden["config"], "band": tuple(golden["config"]["band"])})
    t0 = time.perf_counter()
    res = run_teaser(cfg)
    dt = time.perf_counter() - t0
    matches = all(math.isclose(res.nrmse[k], v, rel_tol=1e-9) for k, v in golden["nrmse"].items())
    ok = (res.ratio <= golden["ratio_threshold"] and matches and dt < 60
          and res.nrmse["uniform_mc"] < res.nrmse["gradient_avg"]
          and res.constant_dev["gradient_mc"] < res.constant_dev["gradient_avg"])
    report(3, ok, f"gradient MC/AVG RMSE ratio {res.ratio:.3f} (threshold {golden['ratio_threshold']}), "
                  f"golden match {matches}, {dt:.1f}s")


def _pairwise_min(pos, block=2048):
    best = np.inf
    for a in range(0, len(pos), block):
        d2 = ((pos[a:a + block, None, :] - pos[None, :, :]) ** 2).sum(-1)
        idx = np.arange(a, min(a + block, len(pos)))
        d2[idx - a, idx] = np.inf
        best = min(best, float(d2.min()))
    return math.sqrt(best)


def _max_dist_to_set(pos, kept, block=1024):
    worst = 0.0
    for a in range(0, len(pos), block):
        d2 = ((pos[a:a + block, None, :] - kept[None, :, :]) ** 2).sum(-1)
        worst = max(worst, float(np.sqrt(d2.min(axis=1)).max()))
    return worst


def _max_ball_count(kept, r, block=1024):
    most = 0
    for a in range(0, len(kept), block):
        d2 = ((kept[a:a + block, None, :] - kept[None, :, :]) ** 2).sum(-1)
        most = max(most, int((d2 <= r * r).sum(axis=1).max()))
    return most


def _pd_cloud(rng, trial):
    n = int(rng.integers(100, 20_001))
    kind = trial % 4
    if kind == 0:
        pos = rng.random((n, 3))
    elif kind == 1:
        pos = generate_shape(("sphere", "torus", "box", "ellipsoid")[trial % 8 // 2], n, Rng(trial)).positions
    elif kind == 2:
        centers = rng.random((5, 3))
        pos = centers[rng.integers(0, 5, n)] + rng.normal(scale=0.05, size=(n, 3))
    else:
        pos = rng.random((n, 3)) * np.array([1.0, 1.0, 0.01])
    return PointCloud(pos)


def packing_bound(r, r_p):
    """Sphere-packing count for r_p-separated points: balls of radius r_p/2 inside radius r + r_p/2."""
    return math.ceil(math.pi * (2 * r / r_p + 1) ** 3 / (3 * math.sqrt(2))) - 1


def test_criterion_4_poisson_disk(report):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    spacing, coverage, over_printed, over_packing, worst_count = [], [], [], [], 0
    for trial in range(PD_CLOUDS):
        cloud = _pd_cloud(rng, trial)
        r_p = float(rng.uniform(0.03, 0.1)) * cloud.bbox_diag
        kept = cloud.positions[poisson_sample(cloud, r_p, Rng(trial))]
        count = _max_ball_count(kept, PD_RATIO * r_p)
        worst_count = max(worst_count, count)
        if _pairwise_min(kept) < r_p:
            spacing.append(trial)
        if _max_dist_to_set(cloud.positions, kept) >= r_p:
            coverage.append(trial)
        if count > max_neighbors_bound(PD_RATIO * r_p, r_p):
            over_printed.append(trial)
        if count > packing_bound(PD_RATIO * r_p, r_p):
            over_packing.append(trial)
    dt = time.perf_counter() - t0
    # the printed formula divides by r_p**3 where packing balls of radius r_p/2 need (r_p/2)**3,
    # so volumetric clouds exceed it while staying under the packing count
    report(4, not (spacing or coverage or over_printed) and dt < 120,
           f"{PD_CLOUDS} clouds: spacing failures {spacing}, coverage failures {coverage}; "
           f"largest count in a 4*r_p ball {worst_count} vs printed bound {max_neighbors_bound(4.0, 1.0)} "
           f"(exceeded in trials {over_printed}) and packing bound {packing_bound(4.0, 1.0)} "
           f"(exceeded in {over_packing}), {dt:.1f}s")


@pytest.mark.slow
def test_criterion_5_scalability(report):
    t0 = time.perf_counter()
    rows = bench_sample((10_000, 100_000), reps=3, seed=0)
    pd_ratio, fp_ratio = time_ratio(rows, "poisson"), time_ratio(rows, "farthest")
    dt = time.perf_counter() - t0
    report(5, pd_ratio <= BENCH_PD_MAX_RATIO and fp_ratio > pd_ratio and dt < 180,
           f"t(100k)/t(10k) poisson {pd_ratio:.1f} (max {BENCH_PD_MAX_RATIO:g}), farthest {fp_ratio:.1f}, {dt:.1f}s")


def test_criterion_6_grid_oracle(report):
    rng = np.random.default_rng(6)
    bad = []
    for trial in range(GRID_CONFIGS):
        n = int(rng.integers(1, 2001))
        r = float(rng.uniform(0.005, 0.5))
        scale = float(rng.choice([1.0, 0.01, 50.0]))
        src = random_cloud(rng, n, batches=int(rng.integers(1, 4)), scale=scale)
        qry = src if trial % 2 == 0 else random_cloud(rng, int(rng.integers(1, 800)), batches=3, scale=scale)
        t = radius_neighbors(qry, src, r * scale)
        want = brute_neighbors(qry, src, r * scale)
        if not all(np.array_equal(t.neighbors_of(i), w) for i, w in enumerate(want)):
            bad.append(trial)
    report(6, not bad, f"{GRID_CONFIGS} configurations, mismatching {bad}")


def test_criterion_7_kde(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(KDE_NEIGHBORHOODS):
        n = int(rng.integers(1, 200))
        pos = rng.normal(size=(n, 3)) * rng.uniform(0.05, 0.5) + rng.uniform(-10, 10, 3)
        cloud = PointCloud(pos)
        center = PointCloud(pos[:1])
        r = float(rng.uniform(0.2, 2.0))
        t = estimate_pdf(radius_neighbors(center, cloud, r), cloud)
        nb = t.neighbors_of(0)
        for a, j in enumerate(nb):
            want = direct_pdf(pos, nb, j, 0.25 * r)
            worst = max(worst, abs(t.pdf[a] - want) / want)
    single = PointCloud([[1.0, -2.0, 0.5]])
    r = 0.8
    one = estimate_pdf(radius_neighbors(single, single, r), single).pdf[0]
    analytic = (2 * math.pi) ** -1.5 / (0.25 * r) ** 3
    single_err = abs(one - analytic) / analytic
    report(7, worst <= KDE_TOL and single_err <= KDE_TOL,
           f"{KDE_NEIGHBORHOODS} neighborhoods, worst rel err {worst:.2e}, single point rel err {single_err:.2e} "
           f"(tol {KDE_TOL:g})")


def test_criterion_8a_toy_loss_halves(report):
    cfg = TrainConfig(shapes=("sphere",), n_points=200, n_train=1, n_test=1, epochs=200, batch_size=1,
                      decay_every=100, val_every=0, eval_seeds=1, seed=0)
    losses = [m[3] for m in train_normal_estimation(cfg).metrics if m[1] == "train"]
    frac = losses[-1] / losses[0]
    report("8a", frac < TOY_LOSS_FRACTION,
           f"200 steps on 200 points: loss {losses[0]:.3f} -> {losses[-1]:.3f} (ratio {frac:.3f} < {TOY_LOSS_FRACTION})")


# Desk-scale ablation: uniform-only training, then test losses under Gradient and Split thinning.
ABLATION = dict(n_points=512, n_train=64, n_test=16, epochs=30, batch_size=16, decay_every=10, val_every=0,
                eval_seeds=3, level0_radius=0.2)


@pytest.mark.slow
def test_criterion_8b_mc_vs_avg(report):
    wins, lines = 0, []
    for seed in ABLATION_SEEDS:
        val = {}
        for conv in ("mc", "avg"):
            res = train_normal_estimation(TrainConfig(conv=conv, seed=seed, **ABLATION))
            val[conv] = {m[2]: m[3] for m in res.metrics if m[1] == "val"}
        won = all(val["mc"][p] <= val["avg"][p] for p in ("gradient", "split"))
        wins += won
        lines.append(f"seed {seed}: gradient {val['mc']['gradient']:.4f}/{val['avg']['gradient']:.4f} "
                     f"split {val['mc']['split']:.4f}/{val['avg']['split']:.4f} (mc/avg)")
    report("8b", wins * 2 > len(ABLATION_SEEDS),
           f"MC <= AVG on gradient and split in {wins}/{len(ABLATION_SEEDS)} seeds; " + "; ".join(lines))


def _run_twice(out, argv, outputs):
    """Run a subcommand twice into the same ``--out`` and compare the named outputs byte for byte."""
    blobs = []
    for _ in range(2):
        assert main(["--seed", "7", "--threads", "1", "--out", str(out), *argv]) == 0
        base = out.parent if out.suffix else out
        blobs.append({name: (base / name).read_bytes() for name in outputs})
    return blobs[0] == blobs[1]


def test_criterion_9_cli_determinism(tmp_path, report):
    small = ["--points", "96", "--n-train", "4", "--n-test", "2", "--eval-seeds", "2", "--batch-size", "2"]
    checks = {
        "train": _run_twice(tmp_path / "train", ["train", "--epochs", "2", *small],
                            ["metrics.csv", "model.mcckpt", "loss.svg", "run.json"]),
        "teaser": _run_twice(tmp_path / "teaser", ["teaser", "--n-reference", "20000", "--n-sparse", "1500"],
                             ["teaser_curves.csv", "teaser_summary.csv", "teaser.svg", "run.json"]),
        "gen": _run_twice(tmp_path / "gen", ["gen", "--dataset", "--n", "200", "--n-train", "3", "--n-test", "2"],
                          ["train/00000.txt", "test/00001.txt", "manifest.json", "run.json"]),
    }
    ckpt = tmp_path / "train" / "model.mcckpt"
    checks["eval"] = _run_twice(tmp_path / "eval" / "eval.csv", ["eval", "--checkpoint", str(ckpt), *small],
                                ["eval.csv", "eval.csv.run.json"])
    report(9, all(checks.values()), "bit-identical repeats: " + ", ".join(f"{k}={v}" for k, v in checks.items()))
