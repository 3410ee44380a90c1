"""Adam optimization, checkpoints and the normal-estimation training loop."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cloud import PointCloud, concat_clouds, normalize_cloud
from .errors import DatasetNotFound, InvalidParameter, ShapeMismatch
from .io import read_cloud
from .losses import cosine_loss
from .network import NetworkSpec, backward, flatten_params, forward, init_params, normal_estimation_spec, \
    unflatten_params
from .protocols import PROTOCOLS, Protocol, apply_protocol, generate_shape
from .rng import Rng

MAGIC = b"MCCKPT1\n"
NONUNIFORM = ("split", "gradient", "lambertian", "occlusion")


def scheduled_lr(epoch: int, base_lr: float = 0.005, every: int = 20, factor: float = 0.5) -> float:
    """Step schedule: ``base_lr * factor ** (epoch // every)``."""
    return base_lr * factor ** (epoch // every)


@dataclass
class TrainState:
    """Parameters plus Adam moments; ``lr`` follows the step schedule of ``epoch``."""

    params: dict
    m: dict
    v: dict
    step: int = 0
    epoch: int = 0
    base_lr: float = 0.005
    decay_every: int = 20
    decay_factor: float = 0.5

    @classmethod
    def create(cls, params: dict, base_lr: float = 0.005, **kw) -> "TrainState":
        if not base_lr > 0:
            raise InvalidParameter(f"learning rate must be positive, got {base_lr}")
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(params=dict(params), m=zeros, v={k: z.copy() for k, z in zeros.items()},
                   base_lr=base_lr, **kw)

    @property
    def lr(self) -> float:
        return scheduled_lr(self.epoch, self.base_lr, self.decay_every, self.decay_factor)

    def copy(self) -> "TrainState":
        def dup(d):
            return {k: v.copy() for k, v in d.items()}

        return replace(self, params=dup(self.params), m=dup(self.m), v=dup(self.v))


def adam_step(state: TrainState, grads: dict, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> TrainState:
    """One bias-corrected Adam update at the scheduled learning rate; returns a new state."""
    if set(grads) != set(state.params):
        raise ShapeMismatch("gradient names do not match the parameter layout")
    step = state.step + 1
    lr = state.lr
    params, m, v = {}, {}, {}
    for k, p in state.params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m[k] = beta1 * state.m[k] + (1 - beta1) * g
        v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = m[k] / (1 - beta1**step)
        v_hat = v[k] / (1 - beta2**step)
        params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return replace(state, params=params, m=m, v=v, step=step)


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(path, spec: NetworkSpec, state: TrainState, extra: dict | None = None) -> None:
    """Write ``MCCKPT1`` + header length + JSON header + float64 LE blocks (params, m, v)."""
    layout = spec.resolve().layout
    header = {
        "spec_hash": spec.spec_hash(),
        "spec": spec.to_dict(),
        "layout": [[name, list(shape)] for name, shape in layout],
        "step": state.step,
        "epoch": state.epoch,
        "lr": state.lr,
        "base_lr": state.base_lr,
        "decay_every": state.decay_every,
        "decay_factor": state.decay_factor,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for d in (state.params, state.m, state.v):
            fh.write(flatten_params(d, layout).astype("<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(spec, state, header)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise InvalidParameter(f"{path} is not an MCCKPT1 checkpoint")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    header = json.loads(raw[pos:pos + hlen])
    pos += hlen
    spec = NetworkSpec.from_dict(header["spec"])
    if spec.spec_hash() != header["spec_hash"]:
        raise InvalidParameter("checkpoint spec hash does not match its spec")
    layout = [(name, tuple(shape)) for name, shape in header["layout"]]
    body = np.frombuffer(raw[pos:], dtype="<f8").astype(np.float64)
    n = sum(int(np.prod(s)) for _, s in layout)
    if body.size != 3 * n:
        raise ShapeMismatch(f"checkpoint holds {body.size} values, expected {3 * n}")
    params, m, v = (unflatten_params(body[i * n:(i + 1) * n], layout) for i in range(3))
    state = TrainState(params=params, m=m, v=v, step=header["step"], epoch=header["epoch"],
                       base_lr=header["base_lr"], decay_every=header["decay_every"],
                       decay_factor=header["decay_factor"])
    return spec, state, header


# --- data -------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Desk-scale normal-estimation experiment."""

    shapes: tuple = ("sphere", "torus", "ellipsoid", "box")
    n_points: int = 512
    n_train: int = 64
    n_test: int = 16
    epochs: int = 60
    batch_size: int = 16
    lr: float = 0.005
    decay_every: int = 20
    conv: str = "mc"
    regimen: str = "uniform"
    seed: int = 0
    width: int = 8
    radii: tuple = (0.1, 0.4)
    levels: int = 3
    dropout: float = 0.0
    level0_radius: float | None = None
    eval_seeds: int = 5
    val_every: int = 1

    def __post_init__(self):
        if self.conv not in ("mc", "avg"):
            raise InvalidParameter(f"conv must be 'mc' or 'avg', got {self.conv!r}")
        if self.regimen not in ("uniform", "nonuniform"):
            raise InvalidParameter(f"regimen must be 'uniform' or 'nonuniform', got {self.regimen!r}")

    def network(self) -> NetworkSpec:
        return normal_estimation_spec(self.width, self.radii, self.dropout, self.levels, self.level0_radius)


def make_dataset(shapes, count: int, n_points: int, rng: Rng, tag: str) -> list:
    """``count`` uniformly sampled shapes cycling through ``shapes`` with random rotations."""
    out = []
    for i in range(count):
        kind = shapes[i % len(shapes)]
        cloud = generate_shape(kind, n_points, rng.child(f"{tag}/shape", i))
        rot = _random_rotation(rng.stream(f"{tag}/rotation", i))
        out.append(PointCloud(cloud.positions @ rot.T, cloud.normals @ rot.T))
    return out


def _random_rotation(gen) -> np.ndarray:
    q, r = np.linalg.qr(gen.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def write_dataset(root, train: list, test: list) -> None:
    from .io import write_cloud

    root = Path(root)
    for split, clouds in (("train", train), ("test", test)):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for i, c in enumerate(clouds):
            write_cloud(d / f"{i:05d}.txt", c)
    (root / "manifest.json").write_text(json.dumps({"train": len(train), "test": len(test)}, indent=2) + "\n")


def load_dataset(root):
    """``(train, test)`` cloud lists from a directory written by :func:`write_dataset`."""
    root = Path(root)
    if not (root / "manifest.json").is_file():
        raise DatasetNotFound(f"no dataset manifest under {root}")
    splits = []
    for split in ("train", "test"):
        files = sorted((root / split).glob("*.txt"))
        if not files:
            raise DatasetNotFound(f"dataset split {split!r} under {root} is empty")
        splits.append([read_cloud(f) for f in files])
    return tuple(splits)


def resample(clouds, protocol: str, seed_rng: Rng, tag: str) -> PointCloud:
    """Apply ``protocol`` to every model, normalize, and batch the result."""
    out = []
    for i, c in enumerate(clouds):
        sub = apply_protocol(c, Protocol(protocol, seed=seed_rng.child(tag, i).seed))
        if len(sub) == 0:
            sub = c.subset([0])
        out.append(sub)
    return normalize_cloud(concat_clouds(out))


# --- training ---------------------------------------------------------------


def train_step(spec, state, batch: PointCloud, conv: str, rng: Rng):
    pred, cache = forward(spec, state.params, batch, conv=conv, train=True, rng=rng)
    loss, g = cosine_loss(pred, batch.normals, return_grad=True)
    grads = backward(spec, state.params, cache, g)
    return adam_step(state, grads), loss


def evaluate(spec, params, clouds, conv: str, protocols=PROTOCOLS, seeds=(0,), rng: Rng | None = None,
             batch_size: int = 16) -> dict:
    """Mean cosine loss per protocol, averaged over ``seeds`` resampling runs."""
    rng = rng or Rng(0)
    result = {}
    for proto in protocols:
        losses = []
        for s in seeds:
            total, count = 0.0, 0
            for b0 in range(0, len(clouds), batch_size):
                part = clouds[b0:b0 + batch_size]
                batch = resample(part, proto, rng.child(f"eval/{proto}", s), f"batch{b0}")
                pred, _ = forward(spec, params, batch, conv=conv, rng=rng.child(f"evalfwd/{proto}/{s}", b0))
                total += cosine_loss(pred, batch.normals) * len(batch)
                count += len(batch)
            losses.append(total / count)
        result[proto] = float(np.mean(losses))
    return result


@dataclass
class TrainResult:
    spec: NetworkSpec
    state: TrainState
    metrics: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "split", "protocol", "loss"])
        for row in self.metrics:
            w.writerow([row[0], row[1], row[2], repr(float(row[3]))])
        return buf.getvalue()


def train_normal_estimation(cfg: TrainConfig, train=None, test=None, log=None) -> TrainResult:
    """Train the normal-estimation network; metrics rows are ``(epoch, split, protocol, loss)``.

    Each epoch resamples every training model with a fresh seed: the uniform
    regimen keeps all points, the non-uniform one draws one of the four
    non-uniform protocols per model.
    """
    rng = Rng(cfg.seed)
    if train is None:
        train = make_dataset(cfg.shapes, cfg.n_train, cfg.n_points, rng, "train")
    if test is None:
        test = make_dataset(cfg.shapes, cfg.n_test, cfg.n_points, rng, "test")
    spec = cfg.network()
    state = TrainState.create(init_params(spec, rng.child("init")), base_lr=cfg.lr, decay_every=cfg.decay_every)
    result = TrainResult(spec, state)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        order = rng.stream("shuffle", epoch).permutation(len(train))
        ep_rng = rng.child("epoch", epoch)
        losses, weights = [], []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            models = [train[i] for i in idx]
            if cfg.regimen == "uniform":
                batch = resample(models, "uniform", ep_rng, f"b{b0}")
            else:
                picks = ep_rng.stream("protocols", b0).integers(len(NONUNIFORM), size=len(models))
                parts = [resample([m], NONUNIFORM[p], ep_rng, f"b{b0}/{k}") for k, (m, p) in
                         enumerate(zip(models, picks))]
                batch = concat_clouds(parts)
            state, loss = train_step(spec, state, batch, cfg.conv, ep_rng.child("step", b0))
            losses.append(loss)
            weights.append(len(batch))
        train_loss = float(np.average(losses, weights=weights))
        result.metrics.append((epoch, "train", cfg.regimen, train_loss))
        last = epoch == cfg.epochs - 1
        if cfg.val_every and ((epoch + 1) % cfg.val_every == 0) and not last:
            val = evaluate(spec, state.params, test, cfg.conv, seeds=(0,), rng=rng.child("val", epoch),
                           batch_size=cfg.batch_size)
            for proto, v in val.items():
                result.metrics.append((epoch, "val", proto, v))
        if log is not None:
            log(f"epoch {epoch} lr {state.lr:.5f} train {train_loss:.4f}")
    state.epoch = cfg.epochs
    if cfg.epochs:
        val = evaluate(spec, state.params, test, cfg.conv, seeds=tuple(range(cfg.eval_seeds)),
                       rng=rng.child("final"), batch_size=cfg.batch_size)
        for proto, v in val.items():
            result.metrics.append((cfg.epochs - 1, "val", proto, v))
    result.state = state
    return result


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
