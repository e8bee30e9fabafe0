import numpy as np
import pytest

from isacsim import scenarios
from isacsim.ofdm import qpsk_symbols, strip_symbols, synthesize


def stripped(scene, ofdm, snr_db=None, seed=0):
    """Symbol-stripped tensor with a fresh QPSK grid."""
    rng = np.random.default_rng(seed)
    b = qpsk_symbols(ofdm.num_subcarriers, ofdm.num_symbols, rng)
    return strip_symbols(synthesize(scene, ofdm, b, snr_db=snr_db, seed=rng), b)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


@pytest.fixture(scope="session")
def ofdm():
    return scenarios.baseline_ofdm()


@pytest.fixture(scope="session")
def three():
    return scenarios.three_targets()


@pytest.fixture(scope="session")
def three_clean(three, ofdm):
    return stripped(three, ofdm)


_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line criterion verdict for the terminal summary, then assert it."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(n, ok, detail):
        lines.append((n, f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"))
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
