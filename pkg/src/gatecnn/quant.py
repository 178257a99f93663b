"""Post-training 32-bit fixed-point conversion, integer inference and ROM export.

Every layer multiplies codes in a double-width accumulator, adds the bias
shifted into the same scale and rounds back to ``frac_bits`` exactly once.
Max pooling and ReLU act on codes directly.  One Q-format is shared by all
weights and activations.
"""

from __future__ import annotations

import json
import math
import re
import struct
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .fixed import FixedPointSpec, Q16_16, dequantize_array, quantize_array
from .model import (
    WEIGHT_NAMES, FormatError, ForwardTrace, GateCNNConfig, ModelWeights, forward, frame_data,
    pack_config, pack_tensors, unpack_config, unpack_tensors,
)
from .ops import DimensionError, conv1d_time_fixed, conv2d_fixed, gated_combine_fixed, maxpool2d, relu


@dataclass
class QuantizedModel:
    cfg: GateCNNConfig
    spec: FixedPointSpec
    codes: dict[str, np.ndarray]
    saturations: int = 0
    warnings: list[str] = field(default_factory=list)

    def dequantized(self) -> ModelWeights:
        return ModelWeights(**{k: dequantize_array(self.codes[k], self.spec) for k in WEIGHT_NAMES})

    def param_count(self) -> int:
        return sum(int(self.codes[k].size) for k in WEIGHT_NAMES)

    def rom_bytes(self) -> int:
        return self.param_count() * self.spec.total_bits // 8

    def same_as(self, other: QuantizedModel) -> bool:
        return (self.cfg == other.cfg and self.spec == other.spec and all(
            self.codes[k].dtype == other.codes[k].dtype
            and np.array_equal(self.codes[k], other.codes[k]) for k in WEIGHT_NAMES))


def quantize_model(cfg: GateCNNConfig, w: ModelWeights, spec: FixedPointSpec = Q16_16) -> QuantizedModel:
    """Elementwise quantization; out-of-range weights are counted and warned about."""
    w.check(cfg)
    codes, saturated = {}, 0
    for name, arr in w.items():
        codes[name] = quantize_array(arr, spec)
        saturated += int(np.count_nonzero((arr > spec.max_value) | (arr < spec.min_value)))
    qm = QuantizedModel(cfg, spec, codes, saturated)
    if saturated:
        msg = f"{saturated} weights outside the {spec.describe()} range were {spec.overflow}d"
        qm.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return qm


def forward_fixed_trace(qm: QuantizedModel, x) -> ForwardTrace:
    """Integer forward pass; every field of the returned trace holds int32 codes."""
    cfg, spec, c = qm.cfg, qm.spec, qm.codes
    xf = np.asarray(frame_data(x), dtype=np.float64)
    if xf.shape != cfg.input_shape:
        raise DimensionError(f"input stage: expected shape {cfg.input_shape}, got {xf.shape}")
    D, Wp = cfg.embed_dim, cfg.pooled_time
    pad = cfg.cascade_padding
    xq = quantize_array(xf, spec)
    x1 = conv2d_fixed(xq, c["w_c0"], c["b_c0"], spec, padding=cfg.fuse_padding)
    x_ds = maxpool2d(x1, cfg.pool)
    x_conv1 = conv2d_fixed(x_ds, c["w_c1"], c["b_c1"], spec).reshape(D, Wp)
    z = conv1d_time_fixed(x_conv1, c["w_g"], c["b_g"], spec)
    x_conv2 = conv1d_time_fixed(x_conv1, c["w_p"], c["b_p"], spec)
    x_conv3 = relu(conv2d_fixed(x_conv2[None], c["w_c2"], c["b_c2"], spec, padding=pad))
    x_conv4 = relu(conv2d_fixed(x_conv3, c["w_c3"], c["b_c3"], spec, padding=pad))
    x_conv5 = conv2d_fixed(x_conv4, c["w_c4"], c["b_c4"], spec, padding=pad)[0]
    y = gated_combine_fixed(x_conv5, z, x_conv1, spec)
    v = conv2d_fixed(y[None], c["w_avg"], c["b_avg"], spec).reshape(Wp)
    logits = conv2d_fixed(v[:, None, None], c["w_cls"][:, :, None, None], c["b_cls"], spec).reshape(-1)
    return ForwardTrace(xq, x1, x_ds, x_conv1, z, x_conv2, x_conv3, x_conv4, x_conv5, y, v, logits)


def forward_fixed(qm: QuantizedModel, x) -> np.ndarray:
    """Logit codes (int32) for one frame."""
    return forward_fixed_trace(qm, x).logits


def predict_fixed(qm: QuantizedModel, x) -> int:
    return int(np.argmax(forward_fixed(qm, x)))


# ------------------------------------------------------------------ range audit

def required_int_bits(max_abs: float) -> int:
    """Integer magnitude bits covering ``max_abs``, plus one guard bit."""
    return int(math.floor(max_abs)).bit_length() + 1


@dataclass(frozen=True)
class StageRange:
    stage: str
    min: float
    max: float
    int_bits: int

    def to_line(self) -> str:
        return json.dumps({"stage": self.stage, "min": self.min, "max": self.max,
                           "int_bits": self.int_bits})


@dataclass
class RangeAudit:
    stages: list[StageRange]
    frames: int

    @property
    def max_int_bits(self) -> int:
        return max(s.int_bits for s in self.stages)

    def fits(self, spec: FixedPointSpec) -> bool:
        """True when every stage fits with its guard bit and a sign bit to spare."""
        return self.max_int_bits + 1 <= spec.int_bits

    def lines(self) -> list[str]:
        return [s.to_line() for s in self.stages]


def audit_ranges(cfg: GateCNNConfig, w: ModelWeights, calibration) -> RangeAudit:
    """Float activation extrema per stage over a calibration set."""
    calibration = list(calibration)
    if not calibration:
        raise ValueError("calibration set is empty")
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    for fr in calibration:
        for name, arr in forward(cfg, w, fr).stages():
            lo[name] = min(lo.get(name, math.inf), float(arr.min()))
            hi[name] = max(hi.get(name, -math.inf), float(arr.max()))
    names = [f.name for f in fields(ForwardTrace)]
    stages = [StageRange(n, lo[n], hi[n], required_int_bits(max(abs(lo[n]), abs(hi[n]))))
              for n in names]
    return RangeAudit(stages, len(calibration))


# ------------------------------------------------------------------ ROM export

_PER_LINE = 8


def _literal(code: int) -> str:
    return "INT32_MIN" if code == -(1 << 31) else str(code)


def _config_fields(cfg: GateCNNConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out.append(f"{f.name}={'x'.join(map(str, v)) if isinstance(v, tuple) else v}")
    return " ".join(out)


def export_rom(qm: QuantizedModel) -> str:
    """C-style constant tables, one flat row-major int32 array per tensor."""
    s = qm.spec
    nbytes = qm.rom_bytes()
    lines = [
        "// GateCNN fixed-point weight ROM (generated, do not edit)",
        f"// format: {s.describe()} total_bits={s.total_bits} frac_bits={s.frac_bits} "
        f"rounding={s.rounding} overflow={s.overflow}",
        f"// config: {_config_fields(qm.cfg)}",
        f"// params: {qm.param_count()}",
        f"// bytes: {nbytes} ({nbytes / 1024:.1f} KiB)",
        f"// saturations: {qm.saturations}",
        "#include <stdint.h>",
        "",
    ]
    for name in WEIGHT_NAMES:
        arr = qm.codes[name]
        flat = arr.reshape(-1).tolist()
        dims = "x".join(map(str, arr.shape))
        lines.append(f"static const int32_t {name}[{len(flat)}] /* {dims} */ = {{")
        for i in range(0, len(flat), _PER_LINE):
            lines.append("    " + ", ".join(_literal(v) for v in flat[i:i + _PER_LINE]) + ",")
        lines.append("};")
        lines.append("")
    return "\n".join(lines)


_ARRAY_RE = re.compile(
    r"static const int32_t (\w+)\[(\d+)\] /\* ([\dx]+) \*/ = \{(.*?)\};", re.DOTALL)


def _header_value(text: str, key: str) -> str:
    m = re.search(rf"^// {key}: (.*)$", text, re.MULTILINE)
    if m is None:
        raise FormatError(f"ROM header lacks '{key}'")
    return m.group(1).strip()


def _kv(s: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in s.split() if "=" in tok)


def parse_rom(text: str) -> QuantizedModel:
    """Inverse of :func:`export_rom`."""
    try:
        fmt = _kv(_header_value(text, "format"))
        spec = FixedPointSpec(int(fmt["total_bits"]), int(fmt["frac_bits"]),
                              fmt["rounding"], fmt["overflow"])
        raw = _kv(_header_value(text, "config"))
        kwargs = {}
        for f in fields(GateCNNConfig):
            v = raw[f.name]
            kwargs[f.name] = tuple(int(p) for p in v.split("x")) if "x" in v else int(v)
        cfg = GateCNNConfig(**kwargs)
        saturations = int(_header_value(text, "saturations"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad ROM header: {exc}") from exc
    codes = {}
    for m in _ARRAY_RE.finditer(text):
        name, n, dims, body = m.group(1), int(m.group(2)), m.group(3), m.group(4)
        toks = [t.strip() for t in body.replace("\n", " ").split(",") if t.strip()]
        vals = [-(1 << 31) if t == "INT32_MIN" else int(t) for t in toks]
        shape = tuple(int(d) for d in dims.split("x"))
        if len(vals) != n or int(np.prod(shape)) != n:
            raise FormatError(f"{name}: {len(vals)} literals for declared size {n} / shape {shape}")
        codes[name] = np.array(vals, dtype=np.int32).reshape(shape)
    if tuple(codes) != WEIGHT_NAMES:
        raise FormatError(f"ROM tables {tuple(codes)} do not match the weight layout")
    expected = cfg.weight_shapes()
    for name, arr in codes.items():
        if arr.shape != expected[name]:
            raise FormatError(f"{name}: shape {arr.shape} inconsistent with config {expected[name]}")
    return QuantizedModel(cfg, spec, codes, saturations)


# ------------------------------------------------------------------ GCNQ file

MAGIC = b"GCNQ"
VERSION = 1


def quantized_to_bytes(qm: QuantizedModel) -> bytes:
    s = qm.spec
    head = MAGIC + struct.pack("<HBBBB", VERSION, s.total_bits, s.frac_bits, s.rounding_id, s.overflow_id)
    tensors = [(k, qm.codes[k]) for k in WEIGHT_NAMES]
    return head + pack_config(qm.cfg) + struct.pack("<I", qm.saturations) + pack_tensors(tensors, "<i4")


def quantized_from_bytes(buf: bytes) -> QuantizedModel:
    if buf[:4] != MAGIC:
        raise FormatError("not a GCNQ quantized-model file")
    try:
        version, total, frac, rnd, ovf = struct.unpack_from("<HBBBB", buf, 4)
        if version != VERSION:
            raise FormatError(f"unsupported GCNQ version {version}")
        spec = FixedPointSpec(total, frac, ("nearest-even", "truncate")[rnd], ("saturate", "wrap")[ovf])
        cfg, off = unpack_config(buf, 10)
        (saturations,) = struct.unpack_from("<I", buf, off)
    except (struct.error, ValueError, IndexError) as exc:
        raise FormatError(f"bad GCNQ header: {exc}") from exc
    tensors, end = unpack_tensors(buf, off + 4, "<i4")
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes")
    codes = dict(tensors)
    if tuple(codes) != WEIGHT_NAMES:
        raise FormatError(f"unexpected tensor names {tuple(codes)}")
    for name, shape in cfg.weight_shapes().items():
        if codes[name].shape != shape:
            raise FormatError(f"{name}: shape {codes[name].shape} inconsistent with config {shape}")
    return QuantizedModel(cfg, spec, codes, saturations)


def save_quantized(path, qm: QuantizedModel) -> None:
    with open(path, "wb") as fh:
        fh.write(quantized_to_bytes(qm))


def load_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        return quantized_from_bytes(fh.read())
