import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gatecnn import kernels  # noqa: E402
from gatecnn.model import GateCNNConfig  # noqa: E402

_ACCEPTANCE = []


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = kernels.get_backend(request.param)
    monkeypatch.setattr(kernels, "active", mod)
    return mod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_cfg():
    return GateCNNConfig(doppler_bins=6, time_steps=8, embed_dim=3, content_channels=2,
                         gate_taps=3, fuse_kernel=(3, 3), cascade_kernel=(3, 3), num_classes=3)


def random_cfg(rng, small=True):
    ph, pw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    hp, wp = int(rng.integers(2, 6 if small else 16)), int(rng.integers(2, 6 if small else 15))
    return GateCNNConfig(
        in_channels=int(rng.integers(1, 3)),
        doppler_bins=hp * ph,
        time_steps=wp * pw,
        fuse_channels=int(rng.integers(1, 3)),
        fuse_kernel=(int(rng.choice([1, 3])), int(rng.choice([1, 3]))),
        pool=(ph, pw),
        embed_dim=int(rng.integers(1, 5)),
        gate_taps=int(rng.choice([1, 3, 5])),
        content_channels=int(rng.integers(1, 4)),
        cascade_kernel=(int(rng.choice([1, 3])), int(rng.choice([1, 3, 5]))),
        num_classes=int(rng.integers(2, 5)),
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.get_closest_marker("criterion")
    if crit is not None and (rep.when == "call" or rep.outcome != "passed"):
        if rep.when == "call" or rep.when == "setup":
            _ACCEPTANCE.append((crit.args[0], crit.args[1], rep.outcome))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, outcome in sorted(_ACCEPTANCE):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {verdict}  {title}")
