"""Command-line entry point: ``mcconv <subcommand> [options]``.

Exit codes: 0 success, 2 bad arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DEFAULT_SIZES, bench_csv, bench_sample
from .cloud import PointCloud
from .errors import InvalidParameter, MCConvError
from .io import read_cloud, write_cloud
from .poisson import build_hierarchy, poisson_sample
from .protocols import PROTOCOLS, SHAPES, Protocol, apply_protocol, generate_shape
from .rng import Rng
from .svg import line_chart
from .teaser import TeaserConfig, run_teaser
from .training import (NONUNIFORM, TrainConfig, TrainResult, config_dict, evaluate, load_checkpoint,
                       load_dataset, make_dataset, save_checkpoint, train_normal_estimation, write_dataset)

log = logging.getLogger("mcconv")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Argument combination that argparse cannot catch on its own."""


def _checked(factory, *a, **kw):
    """Build a config object from arguments, reporting invalid values as usage errors."""
    try:
        return factory(*a, **kw)
    except InvalidParameter as exc:
        raise UsageError(str(exc)) from None


def _floats(text: str, count: int | None = None) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers, got {text!r}")
    return vals


def _vec3(text):
    return _floats(text, 3)


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=_seed, default=d(0), help="master random seed (default 0)")
    parser.add_argument("--threads", type=_positive_int, default=d(None),
                        help="cap on BLAS/OpenMP threads (default: library default)")
    parser.add_argument("--out", default=d(None), help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcconv", description="Monte Carlo convolution toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a shape or a train/test dataset")
    g.add_argument("--shape", choices=SHAPES, default="sphere")
    g.add_argument("--n", type=_positive_int, default=1024, help="points per shape")
    g.add_argument("--dataset", action="store_true", help="write a train/test directory instead of one cloud")
    g.add_argument("--n-train", type=_positive_int, default=64)
    g.add_argument("--n-test", type=_positive_int, default=16)
    g.add_argument("--shapes", default="sphere,torus,ellipsoid,box", help="shapes cycled through a dataset")

    r = sub.add_parser("resample", parents=[common], help="thin a cloud with a sampling protocol")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--protocol", required=True, choices=PROTOCOLS + ("lambert",))
    r.add_argument("--dir", type=_vec3, default=None, help="direction x,y,z (gradient/lambert/occlusion)")
    r.add_argument("--keep-prob", type=float, default=0.25)
    r.add_argument("--p-min", type=float, default=0.05)

    s = sub.add_parser("sample-pd", parents=[common], help="Poisson-disk subsample or hierarchy")
    s.add_argument("--in", dest="input", required=True)
    grp = s.add_mutually_exclusive_group(required=True)
    grp.add_argument("--radius", type=float, help="absolute minimum spacing")
    grp.add_argument("--fraction", type=float, help="spacing as a fraction of the bbox diagonal")
    grp.add_argument("--levels", type=_floats, help="comma-separated bbox fractions; writes one file per level")

    t = sub.add_parser("teaser", parents=[common], help="edge filter on a non-uniform sphere, AVG vs MC")
    t.add_argument("--n-reference", type=_positive_int, default=TeaserConfig.n_reference)
    t.add_argument("--n-sparse", type=_positive_int, default=TeaserConfig.n_uniform)
    t.add_argument("--radius", type=float, default=TeaserConfig.radius)
    t.add_argument("--band", type=lambda x: _floats(x, 2), default=TeaserConfig.band)

    b = sub.add_parser("bench", parents=[common], help="time Poisson-disk vs farthest-point sampling")
    b.add_argument("--sizes", type=_ints, default=DEFAULT_SIZES)
    b.add_argument("--large", action="store_true", help="also time 1M points")
    b.add_argument("--reps", type=_positive_int, default=5)
    b.add_argument("--algorithms", default="poisson,farthest")

    for name, help_ in (("train", "train the normal-estimation network"),
                        ("eval", "evaluate a checkpoint on all protocols")):
        c = sub.add_parser(name, parents=[common], help=help_)
        c.add_argument("--data", help="dataset directory from `gen --dataset` (default: synthesize)")
        c.add_argument("--points", type=_positive_int, default=512, help="points per synthesized shape")
        c.add_argument("--n-train", type=_positive_int, default=64)
        c.add_argument("--n-test", type=_positive_int, default=16)
        c.add_argument("--eval-seeds", type=_positive_int, default=5)
        c.add_argument("--batch-size", type=_positive_int, default=16)
        if name == "train":
            c.add_argument("--conv", choices=("mc", "avg"), default="mc")
            c.add_argument("--train-regimen", choices=("uniform", "nonuniform"), default="uniform")
            c.add_argument("--epochs", type=int, default=60)
            c.add_argument("--lr", type=float, default=0.005)
            c.add_argument("--width", type=_positive_int, default=8)
            c.add_argument("--level0-radius", type=float, default=None)
            c.add_argument("--dropout", type=float, default=0.0)
            c.add_argument("--val-every", type=int, default=1)
        else:
            c.add_argument("--checkpoint", required=True)

    i = sub.add_parser("inspect", parents=[common], help="print cloud statistics as JSON")
    i.add_argument("--in", dest="input", required=True)
    return p


# --- helpers -----------------------------------------------------------------


def _out_path(args, default_name: str | None = None, directory: bool = False) -> Path | None:
    if args.out is None:
        if default_name is None:
            return None
        return Path(default_name)
    out = Path(args.out)
    if directory:
        out.mkdir(parents=True, exist_ok=True)
    elif out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _run_json_path(args, out: Path | None, directory: bool) -> Path:
    if out is None:
        return Path("run.json")
    if directory:
        return out / "run.json"
    return out.with_name(out.name + ".run.json")


def _write_run_json(path: Path, args, resolved: dict | None = None):
    echo = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
            if k != "func"}
    doc = {"tool": "mcconv", "version": __version__, "command": args.command, "args": echo,
           "resolved": resolved or {}}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _cloud_stats(cloud: PointCloud) -> dict:
    stats = {"points": len(cloud), "normals": cloud.normals is not None,
             "features": 0 if cloud.features is None else cloud.features.channel_count,
             "batches": int(len(cloud.batches)) if len(cloud) else 0}
    if len(cloud):
        lo, hi = cloud.positions.min(axis=0), cloud.positions.max(axis=0)
        stats.update(bbox_min=lo.tolist(), bbox_max=hi.tolist(), bbox_diag=cloud.bbox_diag,
                     centroid=cloud.positions.mean(axis=0).tolist())
        if len(cloud) > 1:
            from .grid import radius_neighbors

            # nearest-neighbor spacing from a radius query sized by the mean spacing guess
            r = cloud.bbox_diag * 2.0 / np.sqrt(len(cloud))
            table = radius_neighbors(cloud, cloud, r)
            d = []
            for qi in range(min(len(cloud), 2000)):
                nb = table.neighbors_of(qi)
                nb = nb[nb != qi]
                if len(nb):
                    d.append(np.min(np.linalg.norm(cloud.positions[nb] - cloud.positions[qi], axis=1)))
            if d:
                stats["nn_spacing_median"] = float(np.median(d))
    return stats


# --- subcommands --------------------------------------------------------------


def cmd_gen(args):
    rng = Rng(args.seed)
    if args.dataset:
        shapes = tuple(s for s in args.shapes.split(",") if s)
        bad = [s for s in shapes if s not in SHAPES]
        if bad or not shapes:
            raise UsageError(f"unknown shapes {bad}; choose from {SHAPES}")
        out = _out_path(args, "dataset", directory=True)
        out.mkdir(parents=True, exist_ok=True)
        train = make_dataset(shapes, args.n_train, args.n, rng, "train")
        test = make_dataset(shapes, args.n_test, args.n, rng, "test")
        write_dataset(out, train, test)
        log.info("wrote %d train / %d test shapes to %s", len(train), len(test), out)
        return out, True, {"shapes": list(shapes)}
    out = _out_path(args, "cloud.txt")
    write_cloud(out, generate_shape(args.shape, args.n, rng))
    log.info("wrote %d-point %s to %s", args.n, args.shape, out)
    return out, False, {}


def cmd_resample(args):
    cloud = read_cloud(args.input)
    proto = _checked(Protocol, args.protocol, keep_prob=args.keep_prob, direction=args.dir, p_min=args.p_min,
                     seed=args.seed)
    if proto.kind == "lambertian" and cloud.normals is None:
        raise UsageError("the lambertian protocol needs an input cloud with normals")
    sub = apply_protocol(cloud, proto)
    out = _out_path(args, "resampled.txt")
    write_cloud(out, sub)
    log.info("kept %d of %d points", len(sub), len(cloud))
    return out, False, {"protocol": proto.kind, "kept": len(sub), "input_points": len(cloud)}


def cmd_sample_pd(args):
    cloud = read_cloud(args.input)
    rng = Rng(args.seed)
    if args.levels is not None:
        if any(not f > 0 for f in args.levels) or any(b <= a for a, b in zip(args.levels, args.levels[1:])):
            raise UsageError("levels must be positive and strictly increasing")
        out = _out_path(args, "hierarchy", directory=True)
        out.mkdir(parents=True, exist_ok=True)
        diag = cloud.bbox_diag
        h = build_hierarchy(cloud, [f * diag for f in args.levels], rng)
        sizes = []
        for lv, level in enumerate(h.levels):
            write_cloud(out / f"level{lv}.txt", level)
            sizes.append(len(level))
        return out, True, {"radii": [None if r is None else r for r in h.radii], "sizes": sizes}
    r = args.radius if args.radius is not None else args.fraction * cloud.bbox_diag
    if not r > 0:
        raise UsageError("Poisson-disk radius must be positive")
    idx = poisson_sample(cloud, r, rng)
    out = _out_path(args, "poisson.txt")
    write_cloud(out, cloud.subset(idx))
    log.info("selected %d of %d points at spacing %g", len(idx), len(cloud), r)
    return out, False, {"radius": r, "selected": int(len(idx))}


def cmd_teaser(args):
    cfg = TeaserConfig(seed=args.seed, n_reference=args.n_reference, n_uniform=args.n_sparse,
                       n_gradient=args.n_sparse, radius=args.radius, band=tuple(args.band))
    if not cfg.radius > 0:
        raise UsageError("radius must be positive")
    res = run_teaser(cfg)
    out = _out_path(args, "teaser", directory=True)
    out.mkdir(parents=True, exist_ok=True)
    (out / "teaser_curves.csv").write_text(res.curves_csv())
    (out / "teaser_summary.csv").write_text(res.summary_csv())
    (out / "teaser.svg").write_text(res.svg())
    log.info("gradient MC/AVG error ratio %.3f", res.ratio)
    return out, True, {"teaser": cfg.to_dict(), "ratio": res.ratio}


def cmd_bench(args):
    sizes = tuple(args.sizes) + ((1_000_000,) if args.large else ())
    if any(n < 0 for n in sizes):
        raise UsageError("sizes must be non-negative")
    algos = tuple(a for a in args.algorithms.split(",") if a)
    if not algos or any(a not in ("poisson", "farthest") for a in algos):
        raise UsageError("algorithms must be a subset of poisson,farthest")
    rows = bench_sample(sizes, args.reps, args.seed, algos, log=log.info)
    out = _out_path(args, "bench.csv")
    out.write_text(bench_csv(rows))
    return out, False, {"sizes": list(sizes), "algorithms": list(algos)}


def _datasets(args):
    if args.data is not None:
        return load_dataset(args.data)
    rng = Rng(args.seed)
    shapes = ("sphere", "torus", "ellipsoid", "box")
    return (make_dataset(shapes, args.n_train, args.points, rng, "train"),
            make_dataset(shapes, args.n_test, args.points, rng, "test"))


def cmd_train(args):
    if args.epochs < 0:
        raise UsageError("epochs must be >= 0")
    if not args.lr > 0:
        raise UsageError("learning rate must be positive")
    train, test = _datasets(args)
    if not 0 <= args.dropout < 1:
        raise UsageError("dropout must be in [0, 1)")
    if args.level0_radius is not None and not args.level0_radius > 0:
        raise UsageError("level-0 radius must be positive")
    cfg = _checked(TrainConfig, n_points=args.points, n_train=len(train), n_test=len(test), epochs=args.epochs,
                      batch_size=args.batch_size, lr=args.lr, conv=args.conv, regimen=args.train_regimen,
                      seed=args.seed, width=args.width, level0_radius=args.level0_radius,
                      dropout=args.dropout, eval_seeds=args.eval_seeds, val_every=args.val_every)
    result = train_normal_estimation(cfg, train, test, log=log.info)
    out = _out_path(args, "train_out", directory=True)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.mcckpt", result.spec, result.state, extra={"conv": cfg.conv,
                                                                          "train": config_dict(cfg)})
    (out / "metrics.csv").write_text(result.metrics_csv())
    (out / "loss.svg").write_text(_loss_svg(result))
    return out, True, {"train": config_dict(cfg), "spec_hash": result.spec.spec_hash()}


def _loss_svg(result: TrainResult) -> str:
    series = {}
    for epoch, split, proto, loss in result.metrics:
        key = "train" if split == "train" else f"val {proto}"
        xs, ys = series.setdefault(key, ([], []))
        xs.append(epoch)
        ys.append(loss)
    return line_chart(series, title="Cosine loss", xlabel="epoch", ylabel="loss")


def cmd_eval(args):
    spec, state, header = load_checkpoint(args.checkpoint)
    conv = header.get("extra", {}).get("conv", "mc")
    train, test = _datasets(args)
    rng = Rng(args.seed)
    seeds = tuple(range(args.eval_seeds))
    rows = []
    for split, clouds in (("train", train), ("test", test)):
        res = evaluate(spec, state.params, clouds, conv, PROTOCOLS, seeds, rng.child(f"eval/{split}"),
                       batch_size=args.batch_size)
        rows += [(state.epoch, split, proto, loss) for proto, loss in res.items()]
    out = _out_path(args, "eval.csv")
    out.write_text(TrainResult(spec, state, rows).metrics_csv())
    return out, False, {"conv": conv, "spec_hash": spec.spec_hash(), "seeds": list(seeds)}


def cmd_inspect(args):
    stats = _cloud_stats(read_cloud(args.input))
    text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    out = _out_path(args)
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
    return out, False, {"stats": stats}


COMMANDS = {"gen": cmd_gen, "resample": cmd_resample, "sample-pd": cmd_sample_pd, "teaser": cmd_teaser,
            "bench": cmd_bench, "train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            out, is_dir, resolved = COMMANDS[args.command](args)
        _write_run_json(_run_json_path(args, out, is_dir), args, resolved)
    except UsageError as exc:
        print(f"mcconv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MCConvError, OSError, ValueError, RuntimeError) as exc:
        print(f"mcconv {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
