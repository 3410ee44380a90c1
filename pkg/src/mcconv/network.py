"""Layer graphs built from spatial and pointwise convolutions.

A :class:`NetworkSpec` is a list of layers that read and write named
tensors. Every tensor lives on one level of a Poisson-disk hierarchy; the
network input is the tensor ``"input"`` on level 0. Spatial convolutions move
features between levels, everything else stays on one level.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import PointCloud, reference_diag
from .conv import MULTI, SINGLE, ConvLayerConfig, mc_conv_backward, mc_conv_forward
from .density import DensityParams, estimate_pdf
from .errors import InvalidParameter, ShapeMismatch
from .grid import radius_neighbors
from .kernel import PARAM_NAMES, KernelParams
from .poisson import build_hierarchy
from .rng import as_rng

INPUT = "input"


@dataclass(frozen=True)
class SpatialConv:
    """Monte Carlo convolution from level ``in_level`` to ``out_level``.

    The estimate is a volume integral in scene units, so its magnitude grows
    like ``r**3``. The output is multiplied by ``gain``, which defaults to
    ``1 / r**3`` for the layer's actual radius; this keeps activations O(1)
    and makes the network invariant to a uniform rescaling of the input.
    """

    name: str
    source: str
    target: str
    in_level: int
    out_level: int
    out_channels: int | None = None
    mode: str = MULTI
    radius: float | None = None
    sigma_fraction: float = 0.25
    gain: float | None = None


@dataclass(frozen=True)
class PointwiseConv:
    """Per-point linear map ``M -> L`` (a 1x1 convolution) with bias."""

    name: str
    source: str
    target: str
    out_channels: int


@dataclass(frozen=True)
class ReLU:
    source: str
    target: str


@dataclass(frozen=True)
class FeatureDropout:
    """Zero whole feature rows with probability ``rate`` during training."""

    source: str
    target: str
    rate: float = 0.2


@dataclass(frozen=True)
class Concat:
    sources: tuple
    target: str


LAYER_TYPES = {cls.__name__: cls for cls in (SpatialConv, PointwiseConv, ReLU, FeatureDropout, Concat)}


@dataclass(frozen=True)
class NetworkSpec:
    """Hierarchy radii (fractions of the scene scale) plus an ordered layer list."""

    radii: tuple = (0.1, 0.4)
    layers: tuple = ()
    in_channels: int = 1
    output: str = INPUT
    hidden: int = 8
    kernel_outputs: int = 8

    def to_dict(self) -> dict:
        return {
            "radii": list(self.radii),
            "in_channels": self.in_channels,
            "output": self.output,
            "hidden": self.hidden,
            "kernel_outputs": self.kernel_outputs,
            "layers": [{"type": type(l).__name__, **_plain(asdict(l))} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = LAYER_TYPES[item.pop("type")]
            if "sources" in item:
                item["sources"] = tuple(item["sources"])
            layers.append(kind(**item))
        return cls(
            radii=tuple(d["radii"]),
            layers=tuple(layers),
            in_channels=d["in_channels"],
            output=d["output"],
            hidden=d["hidden"],
            kernel_outputs=d["kernel_outputs"],
        )

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def conv_radius(self, layer: SpatialConv) -> float:
        """Receptive radius fraction of a spatial convolution.

        Defaults to twice the Poisson-disk radius of the coarser level it
        touches; convolutions that stay on level 0 use the first radius.
        """
        if layer.radius is not None:
            return layer.radius
        coarse = max(layer.in_level, layer.out_level)
        if coarse == 0:
            return self.radii[0]
        return 2.0 * self.radii[coarse - 1]

    def resolve(self) -> "ResolvedNetwork":
        """Check channel/level bookkeeping and derive per-layer configs."""
        n_levels = len(self.radii) + 1
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])) or any(r <= 0 for r in self.radii):
            raise InvalidParameter(f"radii must be positive and strictly increasing, got {self.radii}")
        tensors = {INPUT: (0, self.in_channels)}
        convs, layout = {}, []
        names = set()
        for layer in self.layers:
            srcs = layer.sources if isinstance(layer, Concat) else (layer.source,)
            for s in srcs:
                if s not in tensors:
                    raise InvalidParameter(f"layer writing {layer.target!r} reads unknown tensor {s!r}")
            if layer.target in tensors:
                raise InvalidParameter(f"tensor {layer.target!r} is written twice")
            lname = getattr(layer, "name", None)
            if lname is not None:
                if lname in names:
                    raise InvalidParameter(f"duplicate layer name {lname!r}")
                names.add(lname)
            if isinstance(layer, SpatialConv):
                level, m = tensors[layer.source]
                if level != layer.in_level:
                    raise InvalidParameter(
                        f"{layer.name}: source {layer.source!r} is on level {level}, not {layer.in_level}"
                    )
                if not 0 <= layer.out_level < n_levels:
                    raise InvalidParameter(f"{layer.name}: level {layer.out_level} not in hierarchy")
                out = layer.out_channels if layer.out_channels is not None else m
                cfg = ConvLayerConfig(
                    in_channels=m, out_channels=out, mode=layer.mode,
                    radius_fraction=self.conv_radius(layer), sigma_fraction=layer.sigma_fraction,
                    hidden=self.hidden, kernel_outputs=self.kernel_outputs,
                )
                convs[layer.name] = cfg
                template = cfg.zero_kernels()
                for pname, arr in zip(PARAM_NAMES, template.arrays()):
                    layout.append((f"{layer.name}.{pname}", arr.shape))
                tensors[layer.target] = (layer.out_level, out)
            elif isinstance(layer, PointwiseConv):
                level, m = tensors[layer.source]
                layout.append((f"{layer.name}.W", (m, layer.out_channels)))
                layout.append((f"{layer.name}.b", (layer.out_channels,)))
                tensors[layer.target] = (level, layer.out_channels)
            elif isinstance(layer, (ReLU, FeatureDropout)):
                if isinstance(layer, FeatureDropout) and not 0 <= layer.rate < 1:
                    raise InvalidParameter(f"dropout rate must be in [0, 1), got {layer.rate}")
                tensors[layer.target] = tensors[layer.source]
            elif isinstance(layer, Concat):
                levels = {tensors[s][0] for s in layer.sources}
                if len(levels) != 1:
                    raise InvalidParameter(f"concat into {layer.target!r} mixes levels {sorted(levels)}")
                tensors[layer.target] = (levels.pop(), sum(tensors[s][1] for s in layer.sources))
            else:
                raise InvalidParameter(f"unknown layer {layer!r}")
        if self.output not in tensors:
            raise InvalidParameter(f"output tensor {self.output!r} is never produced")
        return ResolvedNetwork(self, tensors, convs, layout)


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class ResolvedNetwork:
    spec: NetworkSpec
    tensors: dict
    convs: dict
    layout: list

    @property
    def out_channels(self) -> int:
        return self.tensors[self.spec.output][1]

    @property
    def out_level(self) -> int:
        return self.tensors[self.spec.output][0]

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for _, s in self.layout)


def init_params(spec: NetworkSpec, rng=None) -> dict:
    """Fresh parameters in layout order: ``U(+-sqrt(6/fan_in))`` weights, zero biases."""
    net = spec.resolve()
    rng = as_rng(rng)
    params = {}
    for layer in spec.layers:
        if isinstance(layer, SpatialConv):
            k = net.convs[layer.name].init_kernels(rng, tag=f"init/{layer.name}")
            for pname, arr in zip(PARAM_NAMES, k.arrays()):
                params[f"{layer.name}.{pname}"] = arr
        elif isinstance(layer, PointwiseConv):
            m = net.tensors[layer.source][1]
            bound = math.sqrt(6.0 / m)
            gen = rng.stream(f"init/{layer.name}")
            params[f"{layer.name}.W"] = gen.uniform(-bound, bound, size=(m, layer.out_channels))
            params[f"{layer.name}.b"] = np.zeros(layer.out_channels)
    return {name: params[name] for name, _ in net.layout}


def flatten_params(params: dict, layout) -> np.ndarray:
    return np.concatenate([np.asarray(params[n], dtype=np.float64).ravel() for n, _ in layout]) \
        if layout else np.zeros(0)


def unflatten_params(vec, layout) -> dict:
    vec = np.asarray(vec, dtype=np.float64)
    total = sum(math.prod(s) for _, s in layout)
    if vec.size != total:
        raise ShapeMismatch(f"expected {total} parameters, got {vec.size}")
    out, pos = {}, 0
    for name, shape in layout:
        size = math.prod(shape)
        out[name] = vec[pos:pos + size].reshape(shape).copy()
        pos += size
    return out


def _kernels(params, name):
    return KernelParams(*(params[f"{name}.{p}"] for p in PARAM_NAMES))


@dataclass
class ForwardCache:
    net: ResolvedNetwork
    hierarchy: object
    tensors: dict
    layer_caches: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)


def forward(spec: NetworkSpec, params: dict, cloud: PointCloud, features=None, *,
            conv: str = "mc", train: bool = False, rng=None, hierarchy=None):
    """Run the network on a (batched) cloud.

    Returns ``(output, cache)``; ``output`` lives on the level of
    ``spec.output``. ``features`` default to a constant 1 per point. ``conv``
    selects density-normalized (``"mc"``) or plain averaging (``"avg"``)
    spatial convolutions.
    """
    if conv not in ("mc", "avg"):
        raise InvalidParameter(f"conv must be 'mc' or 'avg', got {conv!r}")
    net = spec.resolve()
    rng = as_rng(rng)
    if features is None:
        features = np.ones((len(cloud), spec.in_channels))
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.shape != (len(cloud), spec.in_channels):
        raise ShapeMismatch(f"expected input features {(len(cloud), spec.in_channels)}, got {features.shape}")
    scale = reference_diag(cloud)
    if hierarchy is None:
        hierarchy = build_hierarchy(cloud, [f * scale for f in spec.radii], rng.child("hierarchy"))
    cache = ForwardCache(net, hierarchy, {INPUT: features})
    t = cache.tensors
    for layer in spec.layers:
        if isinstance(layer, SpatialConv):
            cfg = net.convs[layer.name]
            src_cloud = hierarchy.levels[layer.in_level]
            dst_cloud = hierarchy.levels[layer.out_level]
            r = cfg.radius_fraction * scale
            key = (layer.in_level, layer.out_level, r, cfg.sigma_fraction, conv)
            table = cache.tables.get(key)
            if table is None:
                table = radius_neighbors(dst_cloud, src_cloud, r)
                if conv == "mc":
                    table = estimate_pdf(table, src_cloud, DensityParams(sigma_fraction=cfg.sigma_fraction))
                cache.tables[key] = table
            run_cfg = cfg if conv == "mc" else _avg(cfg)
            out, lc = mc_conv_forward(run_cfg, _kernels(params, layer.name), src_cloud, t[layer.source],
                                      dst_cloud, table, return_cache=True)
            gain = layer.gain if layer.gain is not None else r**-3
            cache.layer_caches.append((run_cfg, lc, gain))
            t[layer.target] = out * gain
        elif isinstance(layer, PointwiseConv):
            t[layer.target] = t[layer.source] @ params[f"{layer.name}.W"] + params[f"{layer.name}.b"]
            cache.layer_caches.append(None)
        elif isinstance(layer, ReLU):
            t[layer.target] = np.maximum(t[layer.source], 0.0)
            cache.layer_caches.append(t[layer.source] > 0)
        elif isinstance(layer, FeatureDropout):
            x = t[layer.source]
            if train and layer.rate > 0:
                gen = rng.child("dropout").stream(layer.target)
                keep = gen.random(x.shape[0]) >= layer.rate
                scale_rows = keep / (1.0 - layer.rate)
                t[layer.target] = x * scale_rows[:, None]
                cache.layer_caches.append(scale_rows)
            else:
                t[layer.target] = x
                cache.layer_caches.append(None)
        elif isinstance(layer, Concat):
            t[layer.target] = np.concatenate([t[s] for s in layer.sources], axis=1)
            cache.layer_caches.append([t[s].shape[1] for s in layer.sources])
    return t[spec.output], cache


def _avg(cfg):
    return ConvLayerConfig(cfg.in_channels, cfg.out_channels, cfg.mode, cfg.radius_fraction,
                           cfg.sigma_fraction, "avg", cfg.hidden, cfg.kernel_outputs)


def backward(spec: NetworkSpec, params: dict, cache: ForwardCache, grad_output) -> dict:
    """Parameter gradients of ``sum(grad_output * output)`` for a cached forward pass."""
    net = cache.net
    grads = {name: np.zeros(shape) for name, shape in net.layout}
    g = {spec.output: np.asarray(grad_output, dtype=np.float64)}

    def add(name, value):
        if name in g:
            g[name] = g[name] + value
        else:
            g[name] = value

    for layer, lc in zip(reversed(spec.layers), reversed(cache.layer_caches)):
        up = g.pop(layer.target, None)
        if up is None:
            continue  # tensor does not influence the output
        if isinstance(layer, SpatialConv):
            cfg, conv_cache, gain = lc
            gf, gk = mc_conv_backward(cfg, conv_cache, up * gain)
            for pname, arr in zip(PARAM_NAMES, gk.arrays()):
                grads[f"{layer.name}.{pname}"] += arr
            add(layer.source, gf)
        elif isinstance(layer, PointwiseConv):
            x = cache.tensors[layer.source]
            grads[f"{layer.name}.W"] += x.T @ up
            grads[f"{layer.name}.b"] += up.sum(axis=0)
            add(layer.source, up @ params[f"{layer.name}.W"].T)
        elif isinstance(layer, ReLU):
            add(layer.source, up * lc)
        elif isinstance(layer, FeatureDropout):
            add(layer.source, up if lc is None else up * lc[:, None])
        elif isinstance(layer, Concat):
            start = 0
            for s, width in zip(layer.sources, lc):
                add(s, up[:, start:start + width])
                start += width
    return grads


def activation_pattern(cache: ForwardCache) -> np.ndarray:
    """All ReLU on/off decisions of a forward pass, flattened.

    Two passes with equal patterns lie on the same linear piece of the
    network, which is what finite-difference gradient checks need.
    """
    parts = []
    for lc in cache.layer_caches:
        if isinstance(lc, tuple):
            conv_cache = lc[1]
            _, z1, _, z2, _, _ = conv_cache["kcache"]
            parts += [(z1 > 0).ravel(), (z2 > 0).ravel()]
        elif isinstance(lc, np.ndarray) and lc.dtype == bool:
            parts.append(lc.ravel())
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def normal_estimation_spec(width: int = 8, radii=(0.1, 0.4), dropout: float = 0.0,
                           levels: int = 3, level0_radius: float | None = None) -> NetworkSpec:
    """Small encoder-decoder predicting a 3-vector per input point.

    ``levels=3`` builds the full down/up path over two Poisson-disk levels;
    ``levels=2`` stops after the first one. ``level0_radius`` overrides the
    receptive radius of the first convolution (default ``radii[0]``).
    """
    w = width
    L = []

    def drop(src, dst):
        if dropout > 0:
            L.append(FeatureDropout(src, dst, dropout))
            return dst
        return src

    L += [SpatialConv("enc0", INPUT, "e0", 0, 0, w, MULTI, radius=level0_radius), ReLU("e0", "e0r")]
    x = drop("e0r", "e0d")
    L += [SpatialConv("down1", x, "d1", 0, 1, w, SINGLE), PointwiseConv("mix1", "d1", "m1", 2 * w),
          ReLU("m1", "m1r")]
    skip1 = "m1r"
    if levels >= 3:
        x = drop("m1r", "m1d")
        L += [SpatialConv("down2", x, "d2", 1, 2, 2 * w, SINGLE), PointwiseConv("mix2", "d2", "m2", 2 * w),
              ReLU("m2", "m2r")]
        x = drop("m2r", "m2d")
        L += [SpatialConv("up1", x, "u1", 2, 1, 2 * w, SINGLE), Concat(("u1", "m1r"), "c1"),
              PointwiseConv("mixu1", "c1", "mu1", 2 * w), ReLU("mu1", "mu1r")]
        skip1 = "mu1r"
    x = drop(skip1, "s1d")
    L += [SpatialConv("up0", x, "u0", 1, 0, 2 * w, SINGLE), Concat(("u0", "e0r"), "c0"),
          PointwiseConv("mixu0", "c0", "mu0", 2 * w), ReLU("mu0", "mu0r"),
          PointwiseConv("head", "mu0r", "normals", 3)]
    radii = tuple(radii)[: levels - 1]
    return NetworkSpec(radii=radii, layers=tuple(L), in_channels=1, output="normals")
