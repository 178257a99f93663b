"""First-order latency/throughput model of a streaming dataflow accelerator.

Each stage consumes a whole frame before handing it on.  A stage with ``m``
MACs, ``e`` elementwise ops and ``p`` MAC units needs
``ceil(m / p) + e`` busy cycles (its initiation interval) and finishes
``fill_cycles`` later.  The gate branch and the content branch (time conv
plus the three cascade convs) run concurrently, so the critical path takes
the longer of the two.  Stage overlap inside a frame is ignored, which makes
the total an upper bound for a streamed implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import GateCNNConfig, layer_costs

DEFAULT_CLOCK_HZ = 100_000_000
DEFAULT_FILL_CYCLES = 5
REALTIME_BUDGET_S = 0.020  # one 20 ms spectrogram time bin

# measured prototype: 107.5 us at 100 MHz
REFERENCE_LATENCY_CYCLES = 10_750
REFERENCE_CLOCK_HZ = 100_000_000

GATE_BRANCH = ("gate",)
CONTENT_BRANCH = ("content", "cascade1", "cascade2", "cascade3")


@dataclass(frozen=True)
class StageCost:
    name: str
    mac_count: int
    elementwise_count: int
    initiation_interval: int
    stage_latency: int


@dataclass(frozen=True)
class PipelineReport:
    stages: tuple[StageCost, ...]
    total_latency_cycles: int
    clock_hz: float
    initiation_interval_cycles: int

    @property
    def latency_seconds(self) -> float:
        return self.total_latency_cycles / self.clock_hz

    @property
    def throughput_inf_per_s(self) -> float:
        return self.clock_hz / self.initiation_interval_cycles

    @property
    def realtime_ok(self) -> bool:
        return self.latency_seconds < REALTIME_BUDGET_S

    @classmethod
    def from_cycles(cls, total_latency_cycles: int, clock_hz: float = DEFAULT_CLOCK_HZ,
                    initiation_interval_cycles: int | None = None) -> PipelineReport:
        """A report with no stage breakdown; by default one frame in flight at a time."""
        if clock_hz <= 0:
            raise ValueError("clock_hz must be > 0")
        ii = total_latency_cycles if initiation_interval_cycles is None else initiation_interval_cycles
        return cls((), int(total_latency_cycles), clock_hz, int(ii))

    def to_text(self) -> str:
        rows = [f"{'stage':<10} {'MACs':>9} {'elem':>7} {'II':>9} {'latency':>9}"]
        for s in self.stages:
            rows.append(f"{s.name:<10} {s.mac_count:>9} {s.elementwise_count:>7} "
                        f"{s.initiation_interval:>9} {s.stage_latency:>9}")
        rows += [
            f"total_latency_cycles {self.total_latency_cycles}",
            f"clock_hz {self.clock_hz:g}",
            f"latency_seconds {self.latency_seconds:.9g}",
            f"initiation_interval_cycles {self.initiation_interval_cycles}",
            f"throughput_inf_per_s {self.throughput_inf_per_s:.1f}",
            f"realtime_ok {str(self.realtime_ok).lower()} (budget {REALTIME_BUDGET_S * 1e3:g} ms)",
        ]
        return "\n".join(rows)


def _parallelism_for(parallelism, name: str) -> int:
    p = parallelism.get(name, 1) if isinstance(parallelism, dict) else parallelism
    if int(p) < 1:
        raise ValueError(f"parallelism for stage {name} must be >= 1, got {p}")
    return int(p)


def estimate(cfg: GateCNNConfig, parallelism: int | dict[str, int] = 1,
             clock_hz: float = DEFAULT_CLOCK_HZ, fill_cycles: int = DEFAULT_FILL_CYCLES) -> PipelineReport:
    """``parallelism`` is MAC units per stage, either one int or a per-stage dict."""
    if clock_hz <= 0:
        raise ValueError("clock_hz must be > 0")
    if fill_cycles < 0:
        raise ValueError("fill_cycles must be >= 0")
    stages = []
    for lc in layer_costs(cfg):
        p = _parallelism_for(parallelism, lc.name)
        elem = lc.elementwise + lc.compares
        ii = math.ceil(lc.macs / p) + elem
        stages.append(StageCost(lc.name, lc.macs, elem, ii, ii + fill_cycles))
    branched = set(GATE_BRANCH) | set(CONTENT_BRANCH)
    serial = sum(s.stage_latency for s in stages if s.name not in branched)
    total = serial + max(branch_latency(stages, GATE_BRANCH), branch_latency(stages, CONTENT_BRANCH))
    return PipelineReport(tuple(stages), total, clock_hz, max(s.initiation_interval for s in stages))


def branch_latency(stages, names) -> int:
    return sum(s.stage_latency for s in stages if s.name in names)


def compare_to_reference(report: PipelineReport) -> str:
    """Modeled cycles next to the measured prototype latency (cycles, so clock-independent)."""
    ratio = report.total_latency_cycles / REFERENCE_LATENCY_CYCLES
    ref_us = REFERENCE_LATENCY_CYCLES / REFERENCE_CLOCK_HZ * 1e6
    return (f"modeled {report.total_latency_cycles} cycles vs reference {REFERENCE_LATENCY_CYCLES} cycles "
            f"({ref_us:g} us at {REFERENCE_CLOCK_HZ / 1e6:g} MHz): ratio {ratio:.2f}")


def cycle_ratio(report: PipelineReport) -> float:
    return report.total_latency_cycles / REFERENCE_LATENCY_CYCLES
