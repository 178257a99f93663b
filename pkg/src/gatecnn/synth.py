"""Synthetic micro-Doppler frames: Gaussian ridges along analytic Doppler trajectories."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import FormatError

KINDS = ("constant", "linear", "sinusoidal")


@dataclass(frozen=True)
class SignatureTemplate:
    """Center-Doppler trajectory ``h(t)`` plus ridge shape, in Doppler-bin units.

    constant:   h(t) = start
    linear:     h(t) = start + (stop - start) * t / (T - 1)
    sinusoidal: h(t) = start + swing * sin(2*pi*t/period + phase)
    """

    kind: str = "constant"
    start: float = 15.0
    stop: float = 15.0
    swing: float = 0.0
    period: float = 14.0
    phase: float = 0.0
    bandwidth: float = 1.5
    amplitude: float = 1.0
    name: str = ""

    def trajectory(self, time_steps: int) -> np.ndarray:
        t = np.arange(time_steps, dtype=np.float64)
        if self.kind == "constant":
            return np.full(time_steps, float(self.start))
        if self.kind == "linear":
            return self.start + (self.stop - self.start) * t / max(time_steps - 1, 1)
        if self.kind == "sinusoidal":
            return self.start + self.swing * np.sin(2 * math.pi * t / self.period + self.phase)
        raise ValueError(f"unknown trajectory kind {self.kind!r}")


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[SignatureTemplate, ...]
    noise_std: float = 0.05
    samples_per_class: int = 20
    seed: int = 0
    jitter: float = 0.0  # std of a per-sample Doppler offset, in bins
    channels: int = 1
    doppler_bins: int = 30
    time_steps: int = 28

    def validate(self) -> None:
        if not self.classes:
            raise ValueError("at least one class template is required")
        if self.noise_std < 0 or self.jitter < 0:
            raise ValueError("noise_std and jitter must be >= 0")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if len(self.classes) > 255:
            raise ValueError("at most 255 classes fit the frame format")
        for i, tpl in enumerate(self.classes):
            if tpl.kind not in KINDS:
                raise ValueError(f"class {i}: unknown trajectory kind {tpl.kind!r}")
            if tpl.bandwidth <= 0:
                raise ValueError(f"class {i}: bandwidth must be > 0")
            if tpl.kind == "sinusoidal" and tpl.period <= 0:
                raise ValueError(f"class {i}: period must be > 0")
            h = tpl.trajectory(self.time_steps)
            if h.min() < 0 or h.max() >= self.doppler_bins:
                raise ValueError(
                    f"class {i}: trajectory spans [{h.min():.2f}, {h.max():.2f}], "
                    f"outside [0, {self.doppler_bins})")

    def to_json(self) -> str:
        d = asdict(self)
        d["classes"] = [asdict(c) for c in self.classes]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        d = dict(d)
        d["classes"] = tuple(SignatureTemplate(**c) for c in d["classes"])
        return cls(**d)


@dataclass
class MicroDopplerFrame:
    data: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)


def default_spec(doppler_bins: int = 30, time_steps: int = 28, samples_per_class: int = 20,
                 seed: int = 0, noise_std: float = 0.08) -> SynthSpec:
    """Six activity-like signatures scaled to the frame geometry."""
    H = doppler_bins
    mid = (H - 1) / 2
    templates = (
        SignatureTemplate("sinusoidal", start=mid, swing=0.3 * H, period=time_steps / 2,
                          bandwidth=0.08 * H, name="walking"),
        SignatureTemplate("linear", start=mid + 0.25 * H, stop=mid - 0.05 * H,
                          bandwidth=0.06 * H, name="sitting"),
        SignatureTemplate("linear", start=mid - 0.25 * H, stop=mid + 0.05 * H,
                          bandwidth=0.06 * H, name="standing"),
        SignatureTemplate("sinusoidal", start=mid + 0.1 * H, swing=0.08 * H, period=time_steps / 3,
                          bandwidth=0.04 * H, amplitude=0.7, name="drinking"),
        SignatureTemplate("linear", start=mid, stop=0.05 * H, bandwidth=0.1 * H, name="falling"),
        SignatureTemplate("constant", start=mid - 0.2 * H, bandwidth=0.12 * H, amplitude=0.8,
                          name="picking"),
    )
    return SynthSpec(templates, noise_std=noise_std, samples_per_class=samples_per_class,
                     seed=seed, jitter=0.03 * H, doppler_bins=doppler_bins, time_steps=time_steps)


def three_class_spec(samples_per_class: int = 20, seed: int = 0, noise_std: float = 0.05) -> SynthSpec:
    """Three well-separated signatures for smoke tests."""
    templates = (
        SignatureTemplate("constant", start=6.0, bandwidth=1.5, name="low"),
        SignatureTemplate("linear", start=8.0, stop=24.0, bandwidth=1.5, name="rising"),
        SignatureTemplate("sinusoidal", start=20.0, swing=6.0, period=9.0, bandwidth=1.5, name="oscillating"),
    )
    return SynthSpec(templates, noise_std=noise_std, samples_per_class=samples_per_class, seed=seed)


def render(template: SignatureTemplate, doppler_bins: int, time_steps: int, offset: float = 0.0):
    centers = np.clip(template.trajectory(time_steps) + offset, 0.0, doppler_bins - 1)
    h = np.arange(doppler_bins, dtype=np.float64)[:, None]
    return template.amplitude * np.exp(-0.5 * ((h - centers[None, :]) / template.bandwidth) ** 2)


def generate(spec: SynthSpec) -> list[MicroDopplerFrame]:
    """Class-major list of frames; bit-reproducible for a given spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = (spec.channels, spec.doppler_bins, spec.time_steps)
    frames = []
    for label, tpl in enumerate(spec.classes):
        for k in range(spec.samples_per_class):
            offset = float(rng.normal(0.0, spec.jitter)) if spec.jitter > 0 else 0.0
            ridge = render(tpl, spec.doppler_bins, spec.time_steps, offset)
            noise = rng.normal(0.0, spec.noise_std, size=shape) if spec.noise_std > 0 else 0.0
            data = np.clip(ridge[None, :, :] + noise, 0.0, 1.0)
            frames.append(MicroDopplerFrame(data, label, {"template": tpl.name or tpl.kind,
                                                          "offset": offset, "index": k}))
    return frames


def split(frames, holdout_fraction: float, seed: int = 0):
    """Stratified shuffled split; each class keeps ``round(n * fraction)`` frames for test."""
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must be in (0, 1)")
    frames = list(frames)
    rng = np.random.default_rng(seed)
    by_label: dict[int, list[int]] = {}
    for i, fr in enumerate(frames):
        by_label.setdefault(fr.label, []).append(i)
    test_idx = set()
    for label in sorted(by_label):
        idx = by_label[label]
        n_test = int(round(len(idx) * holdout_fraction))
        if n_test == 0 or n_test == len(idx):
            raise ValueError(f"class {label} with {len(idx)} frames would be emptied by the split")
        test_idx.update(rng.permutation(idx)[:n_test].tolist())
    train = [fr for i, fr in enumerate(frames) if i not in test_idx]
    test = [fr for i, fr in enumerate(frames) if i in test_idx]
    return train, test


# ---------------------------------------------------------------- MDFR files

MAGIC = b"MDFR"
VERSION = 1
_HEADER = "<4sHIIII"


def frames_to_bytes(frames) -> bytes:
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to write")
    shape = frames[0].data.shape
    parts = [struct.pack(_HEADER, MAGIC, VERSION, len(frames), *shape)]
    for fr in frames:
        if fr.data.shape != shape:
            raise ValueError(f"inconsistent frame shape {fr.data.shape} vs {shape}")
        parts.append(struct.pack("<B", fr.label))
        parts.append(np.ascontiguousarray(fr.data, dtype="<f8").tobytes())
    return b"".join(parts)


def frames_from_bytes(buf: bytes) -> list[MicroDopplerFrame]:
    try:
        magic, version, count, C, H, W = struct.unpack_from(_HEADER, buf, 0)
    except struct.error as exc:
        raise FormatError(f"truncated MDFR header: {exc}") from exc
    if magic != MAGIC:
        raise FormatError("not an MDFR frame file")
    if version != VERSION:
        raise FormatError(f"unsupported MDFR version {version}")
    n = C * H * W
    off = struct.calcsize(_HEADER)
    if len(buf) != off + count * (1 + 8 * n):
        raise FormatError(f"MDFR size mismatch: expected {off + count * (1 + 8 * n)} bytes, got {len(buf)}")
    frames = []
    for _ in range(count):
        label = buf[off]
        data = np.frombuffer(buf, dtype="<f8", count=n, offset=off + 1).reshape(C, H, W).astype(np.float64)
        frames.append(MicroDopplerFrame(data, label))
        off += 1 + 8 * n
    return frames


def save_frames(path, frames) -> None:
    with open(path, "wb") as fh:
        fh.write(frames_to_bytes(frames))


def load_frames(path) -> list[MicroDopplerFrame]:
    with open(path, "rb") as fh:
        return frames_from_bytes(fh.read())


def load_spec(source: str) -> SynthSpec:
    """``defaults``, ``three-class`` or a path to a JSON spec."""
    if source == "defaults":
        return default_spec()
    if source == "three-class":
        return three_class_spec()
    with open(source) as fh:
        try:
            return SynthSpec.from_dict(json.load(fh))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad synth spec {source}: {exc}") from exc
