"""GateCNN: configuration, weights, float forward pass and cost accounting.

Data flow for one (C0, H0, W0) micro-Doppler frame::

    fuse      conv kh x kw, C0 -> C1                  (C1, H0, W0)
    pool      max pool                                 (C1, H', W')
    embed     conv H' x 1 over the full Doppler column (D, W')
    gate      depthwise time conv                      Z      (D, W')
    content   depthwise time conv                      X2     (D, W')
    cascade1  relu(conv kc x kc, 1 -> c) on X2 as image
    cascade2  relu(conv kc x kc, c -> c)
    cascade3  conv kc x kc, c -> 1                     X5     (D, W')
    combine   Y = X5 * relu(Z) + X1                    (D, W')
    average   conv D x 1 collapsing Doppler            v      (W',)
    classify  logits = W_cls v + b_cls                 (N,)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .ops import DimensionError, conv1d_time, conv2d, maxpool2d, relu

WEIGHT_NAMES = (
    "w_c0", "b_c0", "w_c1", "b_c1", "w_g", "b_g", "w_p", "b_p",
    "w_c2", "b_c2", "w_c3", "b_c3", "w_c4", "b_c4",
    "w_avg", "b_avg", "w_cls", "b_cls",
)

STAGES = ("fuse", "pool", "embed", "gate", "content", "cascade1", "cascade2",
          "cascade3", "combine", "average", "classify")


@dataclass(frozen=True)
class GateCNNConfig:
    """Architecture hyperparameters.

    The defaults give 2,719 parameters and 283,584 FLOPs per inference for a
    (1, 30, 28) input and 6 classes.  Spatial kernels must be odd; they are
    zero-padded to keep extents ("same" padding).
    """

    in_channels: int = 1
    doppler_bins: int = 30
    time_steps: int = 28
    fuse_channels: int = 1
    fuse_kernel: tuple[int, int] = (1, 1)
    pool: tuple[int, int] = (2, 2)
    embed_dim: int = 4
    gate_taps: int = 7
    content_channels: int = 9
    cascade_kernel: tuple[int, int] = (5, 5)
    num_classes: int = 6

    def __post_init__(self):
        object.__setattr__(self, "fuse_kernel", tuple(int(k) for k in self.fuse_kernel))
        object.__setattr__(self, "pool", tuple(int(k) for k in self.pool))
        object.__setattr__(self, "cascade_kernel", tuple(int(k) for k in self.cascade_kernel))
        for name in ("in_channels", "doppler_bins", "time_steps", "fuse_channels",
                     "embed_dim", "gate_taps", "content_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.gate_taps % 2 == 0:
            raise ValueError(f"gate_taps must be odd, got {self.gate_taps}")
        for name in ("fuse_kernel", "cascade_kernel"):
            if any(k < 1 or k % 2 == 0 for k in getattr(self, name)):
                raise ValueError(f"{name} extents must be odd and positive, got {getattr(self, name)}")
        ph, pw = self.pool
        if ph < 1 or pw < 1:
            raise ValueError(f"pool window must be positive, got {self.pool}")
        if self.doppler_bins % ph or self.time_steps % pw:
            raise ValueError(
                f"input ({self.doppler_bins}, {self.time_steps}) not divisible by pool {self.pool}")

    @property
    def pooled_doppler(self) -> int:
        return self.doppler_bins // self.pool[0]

    @property
    def pooled_time(self) -> int:
        return self.time_steps // self.pool[1]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.doppler_bins, self.time_steps)

    @property
    def fuse_padding(self) -> tuple[int, int]:
        return (self.fuse_kernel[0] // 2, self.fuse_kernel[1] // 2)

    @property
    def cascade_padding(self) -> tuple[int, int]:
        return (self.cascade_kernel[0] // 2, self.cascade_kernel[1] // 2)

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        C0, C1, D, c = self.in_channels, self.fuse_channels, self.embed_dim, self.content_channels
        fh, fw = self.fuse_kernel
        kh, kw = self.cascade_kernel
        return {
            "w_c0": (C1, C0, fh, fw), "b_c0": (C1,),
            "w_c1": (D, C1, self.pooled_doppler, 1), "b_c1": (D,),
            "w_g": (D, self.gate_taps), "b_g": (D,),
            "w_p": (D, self.gate_taps), "b_p": (D,),
            "w_c2": (c, 1, kh, kw), "b_c2": (c,),
            "w_c3": (c, c, kh, kw), "b_c3": (c,),
            "w_c4": (1, c, kh, kw), "b_c4": (1,),
            "w_avg": (1, 1, D, 1), "b_avg": (1,),
            "w_cls": (self.num_classes, self.pooled_time), "b_cls": (self.num_classes,),
        }

    def fan_in(self, name: str) -> int:
        """Fan-in of the layer owning weight or bias ``name``."""
        shape = self.weight_shapes()["w" + name[1:]]
        return int(np.prod(shape[1:]))


@dataclass
class ModelWeights:
    """All learnable tensors, in file order."""

    w_c0: np.ndarray
    b_c0: np.ndarray
    w_c1: np.ndarray
    b_c1: np.ndarray
    w_g: np.ndarray
    b_g: np.ndarray
    w_p: np.ndarray
    b_p: np.ndarray
    w_c2: np.ndarray
    b_c2: np.ndarray
    w_c3: np.ndarray
    b_c3: np.ndarray
    w_c4: np.ndarray
    b_c4: np.ndarray
    w_avg: np.ndarray
    b_avg: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> ModelWeights:
        return ModelWeights(**{k: v.copy() for k, v in self.items()})

    @classmethod
    def zeros(cls, cfg: GateCNNConfig) -> ModelWeights:
        return cls(**{k: np.zeros(s) for k, s in cfg.weight_shapes().items()})

    def check(self, cfg: GateCNNConfig) -> None:
        for name, shape in cfg.weight_shapes().items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")

    def size(self) -> int:
        return sum(v.size for _, v in self.items())


Gradients = ModelWeights


def init_weights(cfg: GateCNNConfig, seed: int = 0) -> ModelWeights:
    """Uniform(+-sqrt(1/fan_in)) for everything except the averaging head (1/D, bias 0)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in cfg.weight_shapes().items():
        if name == "w_avg":
            tensors[name] = np.full(shape, 1.0 / cfg.embed_dim)
        elif name == "b_avg":
            tensors[name] = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / cfg.fan_in(name))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelWeights(**tensors)


@dataclass
class ForwardTrace:
    x: np.ndarray
    x1: np.ndarray
    x_ds: np.ndarray
    x_conv1: np.ndarray
    z: np.ndarray
    x_conv2: np.ndarray
    x_conv3: np.ndarray
    x_conv4: np.ndarray
    x_conv5: np.ndarray
    y: np.ndarray
    v: np.ndarray
    logits: np.ndarray

    def stages(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def frame_data(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x))


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is DimensionError:
            raise DimensionError(f"{self.name} stage: {exc}") from exc
        return False


def forward(cfg: GateCNNConfig, w: ModelWeights, x) -> ForwardTrace:
    x = np.asarray(frame_data(x), dtype=np.float64)
    if x.shape != cfg.input_shape:
        raise DimensionError(f"input stage: expected shape {cfg.input_shape}, got {x.shape}")
    D, Wp = cfg.embed_dim, cfg.pooled_time
    with _stage("fuse"):
        x1 = conv2d(x, w.w_c0, w.b_c0, padding=cfg.fuse_padding)
    with _stage("pool"):
        x_ds = maxpool2d(x1, cfg.pool)
    with _stage("embed"):
        x_conv1 = conv2d(x_ds, w.w_c1, w.b_c1).reshape(D, Wp)
    with _stage("gate"):
        z = conv1d_time(x_conv1, w.w_g, w.b_g)
    with _stage("content"):
        x_conv2 = conv1d_time(x_conv1, w.w_p, w.b_p)
    pad = cfg.cascade_padding
    with _stage("cascade1"):
        x_conv3 = relu(conv2d(x_conv2[None], w.w_c2, w.b_c2, padding=pad))
    with _stage("cascade2"):
        x_conv4 = relu(conv2d(x_conv3, w.w_c3, w.b_c3, padding=pad))
    with _stage("cascade3"):
        x_conv5 = conv2d(x_conv4, w.w_c4, w.b_c4, padding=pad)[0]
    with _stage("combine"):
        if x_conv5.shape != z.shape:
            raise DimensionError(f"content {x_conv5.shape} vs gate {z.shape}")
        y = x_conv5 * relu(z) + x_conv1
    with _stage("average"):
        v = conv2d(y[None], w.w_avg, w.b_avg).reshape(Wp)
    with _stage("classify"):
        if w.w_cls.shape[1] != Wp:
            raise DimensionError(f"classifier expects {w.w_cls.shape[1]} features, got {Wp}")
        logits = conv2d(v[:, None, None], w.w_cls[:, :, None, None], w.b_cls).reshape(-1)
    return ForwardTrace(x, x1, x_ds, x_conv1, z, x_conv2, x_conv3, x_conv4, x_conv5, y, v, logits)


def predict(cfg: GateCNNConfig, w: ModelWeights, x) -> int:
    """Arg-max class; ties go to the lowest index."""
    return int(np.argmax(forward(cfg, w, x).logits))


@dataclass(frozen=True)
class LayerCost:
    name: str
    macs: int
    elementwise: int  # arithmetic ops counted once each (ReLU, gating multiply/add)
    compares: int = 0  # pooling comparisons; not floating-point arithmetic


def layer_costs(cfg: GateCNNConfig) -> list[LayerCost]:
    """Per-stage work for one inference. Padded taps count as full MACs."""
    C0, C1, D, c, N = (cfg.in_channels, cfg.fuse_channels, cfg.embed_dim,
                       cfg.content_channels, cfg.num_classes)
    H0, W0, Hp, Wp = cfg.doppler_bins, cfg.time_steps, cfg.pooled_doppler, cfg.pooled_time
    fh, fw = cfg.fuse_kernel
    kh, kw = cfg.cascade_kernel
    ph, pw = cfg.pool
    plane = D * Wp
    return [
        LayerCost("fuse", C1 * H0 * W0 * C0 * fh * fw, 0),
        LayerCost("pool", 0, 0, C1 * Hp * Wp * (ph * pw - 1)),
        LayerCost("embed", plane * C1 * Hp, 0),
        LayerCost("gate", plane * cfg.gate_taps, 0),
        LayerCost("content", plane * cfg.gate_taps, 0),
        LayerCost("cascade1", c * plane * kh * kw, c * plane),
        LayerCost("cascade2", c * plane * c * kh * kw, c * plane),
        LayerCost("cascade3", plane * c * kh * kw, 0),
        LayerCost("combine", 0, 3 * plane),
        LayerCost("average", Wp * D, 0),
        LayerCost("classify", N * Wp, 0),
    ]


def param_count(cfg: GateCNNConfig) -> int:
    C0, C1, D, c, N = (cfg.in_channels, cfg.fuse_channels, cfg.embed_dim,
                       cfg.content_channels, cfg.num_classes)
    kk = cfg.cascade_kernel[0] * cfg.cascade_kernel[1]
    return (
        C1 * C0 * cfg.fuse_kernel[0] * cfg.fuse_kernel[1] + C1
        + D * C1 * cfg.pooled_doppler + D
        + 2 * (D * cfg.gate_taps + D)
        + (c * kk + c) + (c * c * kk + c) + (c * kk + 1)
        + D + 1
        + N * cfg.pooled_time + N
    )


def flop_count(cfg: GateCNNConfig) -> int:
    """Two FLOPs per MAC plus one per ReLU / gating multiply / residual add; biases and pooling are free."""
    costs = layer_costs(cfg)
    return 2 * sum(lc.macs for lc in costs) + sum(lc.elementwise for lc in costs)


# ---------------------------------------------------------------- weight file

MAGIC = b"GCNN"
VERSION = 1
_CFG_FMT = "<14I"


def pack_config(cfg: GateCNNConfig) -> bytes:
    return struct.pack(
        _CFG_FMT, cfg.in_channels, cfg.doppler_bins, cfg.time_steps, cfg.fuse_channels,
        *cfg.fuse_kernel, *cfg.pool, cfg.embed_dim, cfg.gate_taps, cfg.content_channels,
        *cfg.cascade_kernel, cfg.num_classes)


def unpack_config(buf: bytes, offset: int = 0) -> tuple[GateCNNConfig, int]:
    v = struct.unpack_from(_CFG_FMT, buf, offset)
    cfg = GateCNNConfig(
        in_channels=v[0], doppler_bins=v[1], time_steps=v[2], fuse_channels=v[3],
        fuse_kernel=(v[4], v[5]), pool=(v[6], v[7]), embed_dim=v[8], gate_taps=v[9],
        content_channels=v[10], cascade_kernel=(v[11], v[12]), num_classes=v[13])
    return cfg, offset + struct.calcsize(_CFG_FMT)


class FormatError(ValueError):
    """Malformed or mismatched binary artifact."""


def pack_tensors(tensors, dtype: str) -> bytes:
    out = [struct.pack("<H", len(tensors))]
    for name, arr in tensors:
        raw = name.encode("ascii")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(out)


def unpack_tensors(buf: bytes, offset: int, dtype: str):
    try:
        (count,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        tensors = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, offset)
            name = buf[offset + 2:offset + 2 + n].decode("ascii")
            offset += 2 + n
            (ndim,) = struct.unpack_from("<B", buf, offset)
            shape = struct.unpack_from(f"<{ndim}I", buf, offset + 1)
            offset += 1 + 4 * ndim
            nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
            if offset + nbytes > len(buf):
                raise FormatError(f"tensor {name!r} truncated")
            arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)), offset=offset)
            tensors.append((name, arr.reshape(shape).astype(dtype[1:], copy=True)))
            offset += nbytes
    except struct.error as exc:
        raise FormatError(f"truncated tensor table: {exc}") from exc
    return tensors, offset


def _check_names(names):
    if tuple(names) != WEIGHT_NAMES:
        raise FormatError(f"unexpected tensor names {names}")


def weights_to_bytes(cfg: GateCNNConfig, w: ModelWeights) -> bytes:
    w.check(cfg)
    return MAGIC + struct.pack("<H", VERSION) + pack_config(cfg) + pack_tensors(w.items(), "<f8")


def weights_from_bytes(buf: bytes) -> tuple[GateCNNConfig, ModelWeights]:
    if buf[:4] != MAGIC:
        raise FormatError("not a GCNN weight file")
    try:
        (version,) = struct.unpack_from("<H", buf, 4)
        if version != VERSION:
            raise FormatError(f"unsupported GCNN version {version}")
        cfg, off = unpack_config(buf, 6)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated header: {exc}") from exc
    tensors, off = unpack_tensors(buf, off, "<f8")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes")
    _check_names([n for n, _ in tensors])
    w = ModelWeights(**dict(tensors))
    try:
        w.check(cfg)
    except (DimensionError, ValueError) as exc:
        raise FormatError(str(exc)) from exc
    return cfg, w


def save_weights(path, cfg: GateCNNConfig, w: ModelWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(cfg, w))


def load_weights(path) -> tuple[GateCNNConfig, ModelWeights]:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
