import math
from dataclasses import replace

import pytest

from gatecnn.dataflow import (
    CONTENT_BRANCH, GATE_BRANCH, PipelineReport, branch_latency, compare_to_reference, cycle_ratio,
    estimate,
)
from gatecnn.model import GateCNNConfig, layer_costs
from conftest import random_cfg


def test_reference_pairing():
    r = PipelineReport.from_cycles(10_750, 100_000_000)
    assert r.latency_seconds == 107.5e-6
    assert r.throughput_inf_per_s == 100_000_000 / 10_750
    assert round(r.throughput_inf_per_s / 1000, 1) == 9.3
    assert r.realtime_ok


def test_from_cycles_explicit_ii():
    r = PipelineReport.from_cycles(1000, 1e6, initiation_interval_cycles=250)
    assert r.latency_seconds == 1e-3
    assert r.throughput_inf_per_s == 4000.0
    with pytest.raises(ValueError):
        PipelineReport.from_cycles(10, 0)


def test_stage_arithmetic():
    cfg = GateCNNConfig()
    r = estimate(cfg, parallelism=4, fill_cycles=3)
    for s, lc in zip(r.stages, layer_costs(cfg)):
        assert s.initiation_interval == math.ceil(lc.macs / 4) + lc.elementwise + lc.compares
        assert s.stage_latency == s.initiation_interval + 3
    assert r.initiation_interval_cycles == max(s.initiation_interval for s in r.stages)
    assert r.latency_seconds == r.total_latency_cycles / r.clock_hz
    assert r.throughput_inf_per_s == r.clock_hz / r.initiation_interval_cycles


def test_total_is_serial_plus_longer_branch(rng):
    for _ in range(50):
        cfg = random_cfg(rng, small=False)
        r = estimate(cfg, parallelism=int(rng.integers(1, 9)))
        gate, content = branch_latency(r.stages, GATE_BRANCH), branch_latency(r.stages, CONTENT_BRANCH)
        serial = sum(s.stage_latency for s in r.stages) - gate - content
        assert r.total_latency_cycles == serial + max(gate, content)
        assert r.total_latency_cycles < sum(s.stage_latency for s in r.stages)


def test_monotone_in_parallelism_and_size(rng):
    for _ in range(50):
        cfg = random_cfg(rng, small=False)
        p = int(rng.integers(1, 8))
        base = estimate(cfg, p)
        assert estimate(cfg, p + 1).total_latency_cycles <= base.total_latency_cycles
        assert estimate(cfg, p, fill_cycles=6).total_latency_cycles >= base.total_latency_cycles
        bigger = replace(cfg, content_channels=cfg.content_channels + 1)
        assert estimate(bigger, p).total_latency_cycles >= base.total_latency_cycles
        wider = replace(cfg, embed_dim=cfg.embed_dim + 1)
        assert estimate(wider, p).total_latency_cycles >= base.total_latency_cycles


def test_per_stage_parallelism():
    cfg = GateCNNConfig()
    uniform = estimate(cfg, 1)
    boosted = estimate(cfg, {"cascade2": 16})
    assert boosted.total_latency_cycles < uniform.total_latency_cycles
    assert [s.initiation_interval for s in boosted.stages if s.name != "cascade2"] == \
           [s.initiation_interval for s in uniform.stages if s.name != "cascade2"]
    with pytest.raises(ValueError, match="cascade1"):
        estimate(cfg, {"cascade1": 0})


def test_default_is_realtime():
    r = estimate(GateCNNConfig())
    assert r.realtime_ok
    assert r.latency_seconds < 0.020


def test_budget_violation_detected():
    r = estimate(GateCNNConfig(), clock_hz=1e6)
    assert r.latency_seconds == r.total_latency_cycles / 1e6
    assert r.realtime_ok == (r.latency_seconds < 0.020)
    slow = PipelineReport.from_cycles(3_000_000, 100e6)
    assert not slow.realtime_ok


def test_compare_to_reference_text():
    r = PipelineReport.from_cycles(21_500)
    assert cycle_ratio(r) == 2.0
    assert compare_to_reference(r).endswith("ratio 2.00")


def test_report_text_fields():
    text = estimate(GateCNNConfig()).to_text()
    for key in ("total_latency_cycles", "latency_seconds", "throughput_inf_per_s", "realtime_ok true"):
        assert key in text
    assert text.splitlines()[1].split()[0] == "fuse"


def test_invalid_arguments():
    with pytest.raises(ValueError):
        estimate(GateCNNConfig(), clock_hz=0)
    with pytest.raises(ValueError):
        estimate(GateCNNConfig(), fill_cycles=-1)
    with pytest.raises(ValueError):
        estimate(GateCNNConfig(), parallelism=0)


def test_mac_totals_match_layer_costs():
    cfg = GateCNNConfig()
    assert sum(s.mac_count for s in estimate(cfg).stages) == sum(lc.macs for lc in layer_costs(cfg))
    # fuse, embed, gate, content, cascade x3, average, classify
    assert sum(lc.macs for lc in layer_costs(cfg)) == (840 + 840 + 392 + 392 + 12_600 + 113_400 + 12_600
                                                       + 56 + 84)
