"""Timing of Poisson-disk and farthest-point subsampling."""

from __future__ import annotations

import csv
import io
import time

import numpy as np

from .cloud import PointCloud
from .poisson import farthest_point_sample, poisson_sample
from .rng import Rng

BENCH_HEADER = ("algorithm", "n_in", "n_out", "millis", "seed")
DEFAULT_SIZES = (1000, 10_000, 100_000)
# clouds up to this size calibrate the Poisson radius directly; larger ones rescale it
_CALIBRATION_MAX = 10_000


def uniform_cube(n: int, rng: Rng) -> PointCloud:
    return PointCloud(rng.stream("bench/cube", n).random((n, 3)))


def calibrate_radius(cloud: PointCloud, target: int, rng: Rng, iters: int = 30) -> float:
    """Bisect the Poisson-disk radius until about ``target`` points are selected."""
    lo, hi = 0.0, float(np.linalg.norm(np.ptp(cloud.positions, axis=0)))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if len(poisson_sample(cloud, mid, rng)) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def radius_for_tenth(n: int, rng: Rng) -> float:
    """Poisson radius keeping about ``n / 10`` of ``n`` uniform cube points.

    The radius is calibrated on ``min(n, 10k)`` points and scaled by
    ``(m / n) ** (1/3)``, since spacing at fixed selected fraction shrinks
    with the cube root of the point count.
    """
    m = min(n, _CALIBRATION_MAX)
    r = calibrate_radius(uniform_cube(m, rng), max(1, m // 10), rng.child("calibrate"))
    return r * (m / n) ** (1.0 / 3.0)


def _time_ms(fn) -> tuple:
    t0 = time.perf_counter()
    out = fn()
    return (time.perf_counter() - t0) * 1000.0, out


def bench_sample(sizes=DEFAULT_SIZES, reps: int = 5, seed: int = 0, algorithms=("poisson", "farthest"),
                 log=None) -> list:
    """Median-of-``reps`` timings; one row ``(algorithm, n_in, n_out, millis, seed)`` per size."""
    rng = Rng(seed)
    rows = []
    for n in sizes:
        n = int(n)
        if n <= 0:
            continue
        cloud = uniform_cube(n, rng)
        r_p = radius_for_tenth(n, rng) if "poisson" in algorithms else None
        for algo in algorithms:
            times, n_out = [], 0
            for rep in range(reps):
                if algo == "poisson":
                    ms, sel = _time_ms(lambda: poisson_sample(cloud, r_p, rng.child("rep", rep)))
                else:
                    ms, sel = _time_ms(lambda: farthest_point_sample(cloud, max(1, n // 10), rng.child("rep", rep)))
                times.append(ms)
                n_out = len(sel)
            rows.append((algo, n, n_out, float(np.median(times)), seed))
            if log is not None:
                log(f"{algo} n={n} -> {n_out} in {rows[-1][3]:.1f} ms")
    return rows


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for algo, n_in, n_out, ms, seed in rows:
        w.writerow([algo, n_in, n_out, f"{ms:.3f}", seed])
    return buf.getvalue()


def time_ratio(rows, algorithm: str, big: int = 100_000, small: int = 10_000) -> float:
    t = {n: ms for a, n, _, ms, _ in rows if a == algorithm}
    return t[big] / t[small]
