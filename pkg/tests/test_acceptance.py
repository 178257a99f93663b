"""Acceptance criteria, one test per criterion.

Run ``pytest tests/test_acceptance.py`` for a pass/fail line per criterion in
the terminal summary.
"""

import re
import time
from dataclasses import replace

import numpy as np
import pytest

from gatecnn import kernels
from gatecnn.cli import run
from gatecnn.dataflow import CONTENT_BRANCH, GATE_BRANCH, PipelineReport, branch_latency, estimate
from gatecnn.model import GateCNNConfig, ModelWeights, flop_count, forward, init_weights, param_count, predict
from gatecnn.ops import conv1d_time, conv2d, maxpool2d
from gatecnn.quant import export_rom, parse_rom, predict_fixed, quantize_model
from gatecnn.synth import default_spec, generate, three_class_spec
from gatecnn.train import TrainConfig, accuracy, backward, loss, train
from conftest import random_cfg
from oracles import counting_forward, loop_conv1d, loop_conv2d, loop_maxpool, numeric_gradient

criterion = pytest.mark.criterion


@criterion(1, "convolution and pooling match nested-loop oracles exactly")
def test_criterion_1_oracles(monkeypatch):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    for name in kernels.available_backends():
        monkeypatch.setattr(kernels, "active", kernels.get_backend(name))
        for _ in range(100):
            C, H, W = (int(v) for v in rng.integers(1, [5, 9, 9]))
            O = int(rng.integers(1, 5))
            kh, kw = int(rng.integers(1, H + 1)), int(rng.integers(1, W + 1))
            ph, pw = int(rng.integers(0, kh // 2 + 1)), int(rng.integers(0, kw // 2 + 1))
            x, w, b = rng.normal(size=(C, H, W)), rng.normal(size=(O, C, kh, kw)), rng.normal(size=O)
            assert np.array_equal(conv2d(x, w, b, padding=(ph, pw)), loop_conv2d(x, w, b, pad=(ph, pw)))

            k = int(rng.choice([1, 3, 5, 7]))
            x1, w1, b1 = rng.normal(size=(C, W)), rng.normal(size=(C, k)), rng.normal(size=C)
            assert np.array_equal(conv1d_time(x1, w1, b1), loop_conv1d(x1, w1, b1))

            win = (int(rng.integers(1, min(H, 3) + 1)), int(rng.integers(1, min(W, 3) + 1)))
            assert np.array_equal(maxpool2d(x, win), loop_maxpool(x, win, win))
    assert time.perf_counter() - t0 < 10.0


@criterion(2, "gating algebra Y - X1 = X5 * relu(Z) and the closed-content residual")
def test_criterion_2_gating():
    rng = np.random.default_rng(2)
    for _ in range(50):
        cfg = random_cfg(rng)
        # real-valued model: Y is exactly the once-rounded X5 * relu(Z) + X1
        w = init_weights(cfg, int(rng.integers(1 << 30)))
        x = rng.random(cfg.input_shape)
        t = forward(cfg, w, x)
        assert np.array_equal(t.y, t.x_conv5 * np.maximum(t.z, 0.0) + t.x_conv1)
        w.w_c4[:] = 0
        w.b_c4[:] = 0
        assert np.array_equal(forward(cfg, w, x).y, forward(cfg, w, x).x_conv1)

        # dyadic-grid model: no float op rounds, so the subtraction form holds exactly
        wd = ModelWeights(**{k: rng.integers(-4, 5, s) / 4 for k, s in cfg.weight_shapes().items()})
        t = forward(cfg, wd, rng.integers(0, 5, cfg.input_shape) / 4)
        assert np.array_equal(t.y - t.x_conv1, t.x_conv5 * np.maximum(t.z, 0.0))
        wd.w_c4[:] = 0
        wd.b_c4[:] = 0
        t = forward(cfg, wd, rng.random(cfg.input_shape))
        assert np.array_equal(t.y, t.x_conv1)


@criterion(3, "analytic gradients match central differences (rel err < 1e-4, 10 seeds)")
def test_criterion_3_gradients(tiny_cfg):
    t0 = time.perf_counter()
    cfg = tiny_cfg
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        w = init_weights(cfg, seed)
        x = rng.random(cfg.input_shape)
        label = int(rng.integers(cfg.num_classes))
        _, g = backward(cfg, w, x, label)

        def f():
            return loss(forward(cfg, w, x).logits, label)

        for name, arr in w.items():
            for idx in np.ndindex(arr.shape):
                num = numeric_gradient(f, arr, idx, eps=1e-5)
                ana = float(getattr(g, name)[idx])
                if num == 0.0 and ana == 0.0:
                    continue  # dead ReLU path: both exactly zero
                rel = abs(num - ana) / max(abs(num), abs(ana))
                assert rel < 1e-4, (seed, name, idx, ana, num)
                worst = max(worst, rel)
    print(f"max relative gradient error {worst:.2e}")
    assert time.perf_counter() - t0 < 60.0


@criterion(4, "parameter and FLOP counts match enumeration and instrumented loops")
def test_criterion_4_counting():
    rng = np.random.default_rng(4)
    for _ in range(20):
        cfg = random_cfg(rng)
        w = init_weights(cfg, 0)
        assert param_count(cfg) == sum(int(np.prod(s)) for s in cfg.weight_shapes().values()) == w.size()
        _, n = counting_forward(cfg, w, rng.random(cfg.input_shape))
        assert flop_count(cfg) == 2 * n.macs + n.elementwise
    cfg = GateCNNConfig()
    assert 2_000 <= param_count(cfg) <= 3_500
    assert 150_000 <= flop_count(cfg) <= 450_000
    print(f"default: {param_count(cfg)} params, {flop_count(cfg)} FLOPs")


@criterion(5, "3-class synthetic set reaches >= 90% train accuracy within 50 epochs, deterministically")
def test_criterion_5_learnability():
    t0 = time.perf_counter()
    frames = generate(three_class_spec())
    cfg = GateCNNConfig(num_classes=3)
    tc = TrainConfig(epochs=50, seed=0)
    w, hist = train(cfg, frames, tc)
    acc = accuracy(cfg, w, frames)
    print(f"train accuracy {acc:.3f} after {tc.epochs} epochs")
    assert acc >= 0.90
    w2, hist2 = train(cfg, frames, tc)
    assert hist2 == hist
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(w.items(), w2.items()))
    assert time.perf_counter() - t0 < 180.0


@pytest.fixture(scope="module")
def trained_six_class():
    cfg = GateCNNConfig()
    w, _ = train(cfg, generate(default_spec()), TrainConfig(learning_rate=0.05, epochs=30))
    return cfg, w


@criterion(6, "Q16.16 fidelity, dequantization bound and ROM round trip")
def test_criterion_6_quantization(trained_six_class):
    cfg, w = trained_six_class
    qm = quantize_model(cfg, w)
    for name, arr in qm.dequantized().items():
        assert np.abs(arr - getattr(w, name)).max() <= 2.0 ** -17, name

    frames = generate(default_spec(samples_per_class=167, seed=1))[:1000]
    assert len(frames) == 1000
    agree = sum(predict(cfg, w, f) == predict_fixed(qm, f) for f in frames)
    print(f"fixed/float argmax agreement {agree}/1000")
    assert agree >= 990

    text = export_rom(qm)
    assert parse_rom(text).same_as(qm)
    nbytes = int(re.search(r"^// bytes: (\d+)", text, re.MULTILINE).group(1))
    assert nbytes == 4 * param_count(cfg) == 4 * 2719
    assert abs(nbytes / 1000 - 11) < 0.5


@criterion(7, "pipeline arithmetic, monotonicity, branch max and realtime budget")
def test_criterion_7_pipeline():
    r = PipelineReport.from_cycles(10_750, 100e6)
    assert r.latency_seconds == 107.5e-6
    assert round(r.throughput_inf_per_s / 1e3, 1) == 9.3

    rng = np.random.default_rng(7)
    for _ in range(50):
        cfg = random_cfg(rng, small=False)
        p = int(rng.integers(1, 8))
        rep = estimate(cfg, p)
        assert rep.latency_seconds == rep.total_latency_cycles / rep.clock_hz
        assert rep.throughput_inf_per_s == rep.clock_hz / rep.initiation_interval_cycles
        gate, content = branch_latency(rep.stages, GATE_BRANCH), branch_latency(rep.stages, CONTENT_BRANCH)
        serial = sum(s.stage_latency for s in rep.stages) - gate - content
        assert rep.total_latency_cycles == serial + max(gate, content)
        assert estimate(cfg, p + 1).total_latency_cycles <= rep.total_latency_cycles
        bigger = replace(cfg, content_channels=cfg.content_channels + 1)
        assert estimate(bigger, p).total_latency_cycles >= rep.total_latency_cycles
    assert estimate(GateCNNConfig()).realtime_ok


@criterion(8, "gen-data, train and quantize reruns are byte-identical")
def test_criterion_8_determinism(tmp_path):
    def pipeline(d):
        d.mkdir()
        data, w, q = str(d / "d.mdfr"), str(d / "w.gcnn"), str(d / "q.gcnq")
        assert run(["gen-data", "--spec", "three-class", "--out", data, "--seed", "5"]) == 0
        assert run(["train", "--data", data, "--out", w, "--epochs", "4", "--seed", "5"]) == 0
        assert run(["quantize", "--weights", w, "--out", q]) == 0
        return [open(p, "rb").read() for p in (data, w, q, q + ".audit.jsonl")]

    first, second = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    assert first == second
