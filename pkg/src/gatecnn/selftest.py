"""Fast built-in oracle and invariant checks behind ``gatecnn selftest``.

Each check raises ``AssertionError`` on failure.  The pytest suite covers the
same ground far more thoroughly; this is the installed-package smoke test.
"""

from __future__ import annotations

import itertools
import traceback

import numpy as np

from . import dataflow, kernels, model, quant, synth, train
from .fixed import Q16_16, FixedScalar, fixed_mac, quantize, quantize_array, renormalize


def loop_conv2d(x, w, b, pad):
    C, H, W = x.shape
    O, _, KH, KW = w.shape
    OH, OW = H + 2 * pad[0] - KH + 1, W + 2 * pad[1] - KW + 1
    out = np.empty((O, OH, OW))
    for o, i, j in itertools.product(range(O), range(OH), range(OW)):
        s = 0.0
        for c, u, v in itertools.product(range(C), range(KH), range(KW)):
            r, q = i + u - pad[0], j + v - pad[1]
            if 0 <= r < H and 0 <= q < W:
                s += w[o, c, u, v] * x[c, r, q]
        out[o, i, j] = s + b[o]
    return out


def check_conv_oracle():
    rng = np.random.default_rng(1)
    for name in kernels.available_backends():
        k = kernels.get_backend(name)
        for _ in range(10):
            C, H, W, O = rng.integers(1, 4), rng.integers(3, 8), rng.integers(3, 8), rng.integers(1, 3)
            x = rng.normal(size=(C, H, W))
            w = rng.normal(size=(O, C, 3, 3))
            b = rng.normal(size=O)
            assert np.array_equal(k.conv2d_f64(x, w, b, 1, 1, 1, 1), loop_conv2d(x, w, b, (1, 1))), name


def check_backends_agree():
    names = kernels.available_backends()
    rng = np.random.default_rng(2)
    x = rng.integers(-2**20, 2**20, size=(2, 6, 7), dtype=np.int32)
    w = rng.integers(-2**20, 2**20, size=(3, 2, 3, 3), dtype=np.int32)
    b = rng.integers(-2**20, 2**20, size=3, dtype=np.int32)
    outs = [kernels.get_backend(n).conv2d_fx(x, w, b, 1, 1, 1, 1, 16, 0, 0) for n in names]
    for o in outs[1:]:
        assert np.array_equal(outs[0], o)


def check_fixed_scalar():
    assert quantize(0.0).code == 0
    assert quantize(1.0).code == 65536
    assert quantize(0.1).code == 6554
    assert renormalize(fixed_mac(0, quantize(0.5), quantize(0.5))).value == 0.25
    assert (FixedScalar(Q16_16.max_code) + quantize(1.0)).code == Q16_16.max_code
    x = np.random.default_rng(3).uniform(-1000, 1000, 200)
    err = np.abs(quantize_array(x) * Q16_16.lsb - x)
    assert err.max() <= 2.0 ** -17


def check_gating_and_residual():
    cfg = model.GateCNNConfig()
    w = model.init_weights(cfg, 4)
    x = np.random.default_rng(4).random(cfg.input_shape)
    t = model.forward(cfg, w, x)
    assert np.array_equal(t.y, t.x_conv5 * np.maximum(t.z, 0) + t.x_conv1)
    w.w_c4[:] = 0
    w.b_c4[:] = 0
    t = model.forward(cfg, w, x)
    assert np.array_equal(t.y, t.x_conv1)


def check_gradients():
    cfg = model.GateCNNConfig(doppler_bins=6, time_steps=8, embed_dim=3, content_channels=2,
                              gate_taps=3, cascade_kernel=(3, 3), fuse_kernel=(3, 3), num_classes=3)
    rng = np.random.default_rng(5)
    w = model.init_weights(cfg, 5)
    x = rng.random(cfg.input_shape)
    _, g = train.backward(cfg, w, x, 1)
    eps = 1e-5
    for name, arr in w.items():
        for idx in list(np.ndindex(arr.shape))[:6]:
            old = arr[idx]
            arr[idx] = old + eps
            lp = train.loss(model.forward(cfg, w, x).logits, 1)
            arr[idx] = old - eps
            lm = train.loss(model.forward(cfg, w, x).logits, 1)
            arr[idx] = old
            num, ana = (lp - lm) / (2 * eps), getattr(g, name)[idx]
            assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana)) + 1e-8, (name, idx, ana, num)


def check_counts():
    cfg = model.GateCNNConfig()
    assert model.param_count(cfg) == model.init_weights(cfg).size()
    assert 2000 <= model.param_count(cfg) <= 3500
    assert 150_000 <= model.flop_count(cfg) <= 450_000
    # hand totals: fuse 840, embed 840, two time convs 392 each, cascade 12600 + 113400 + 12600,
    # average 56, classify 84 MACs; ReLU 504 + 504 and combine 168 elementwise
    assert model.param_count(cfg) == 2719
    assert model.flop_count(cfg) == 2 * 141_204 + 1_176


def check_quant_rom():
    cfg = model.GateCNNConfig()
    w = model.init_weights(cfg, 6)
    qm = quant.quantize_model(cfg, w)
    assert quant.parse_rom(quant.export_rom(qm)).same_as(qm)
    assert quant.quantized_from_bytes(quant.quantized_to_bytes(qm)).same_as(qm)
    err = max(np.abs(qm.dequantized().__dict__[k] - v).max() for k, v in w.items())
    assert err <= 2.0 ** -17
    frames = synth.generate(synth.default_spec(samples_per_class=3))
    agree = sum(model.predict(cfg, w, f) == quant.predict_fixed(qm, f) for f in frames)
    assert agree >= 0.99 * len(frames)


def check_pipeline_arithmetic():
    r = dataflow.PipelineReport.from_cycles(10_750, 100e6)
    assert abs(r.latency_seconds - 107.5e-6) < 1e-15
    assert round(r.throughput_inf_per_s) == 9302
    assert dataflow.estimate(model.GateCNNConfig()).realtime_ok


def check_formats():
    cfg = model.GateCNNConfig()
    w = model.init_weights(cfg, 7)
    buf = model.weights_to_bytes(cfg, w)
    assert model.weights_to_bytes(*model.weights_from_bytes(buf)) == buf
    frames = synth.generate(synth.three_class_spec(samples_per_class=2))
    buf = synth.frames_to_bytes(frames)
    assert synth.frames_to_bytes(synth.frames_from_bytes(buf)) == buf


CHECKS = [
    check_conv_oracle, check_backends_agree, check_fixed_scalar, check_gating_and_residual,
    check_gradients, check_counts, check_quant_rom, check_pipeline_arithmetic, check_formats,
]


def run_all(out=print) -> bool:
    ok = True
    out(f"kernel backend: {kernels.BACKEND} (available: {', '.join(kernels.available_backends())})")
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            check()
            out(f"PASS {name}")
        except Exception:  # noqa: BLE001
            ok = False
            out(f"FAIL {name}")
            out(traceback.format_exc())
    return ok
