import numpy as np
import pytest

from tunnelqrng.source import SourceModel, sample_intervals

# the reference configuration used by the acceptance runs
P0, AP_A, AP_B, HOLDOFF = 1e-3, 5e-5, 0.01, 9
MAIN_SEED = 12345
FIT_SEEDS = (12345, 1, 2, 3, 4)
MAIN_COUNT = 12_000_000
ACCEPT_COUNT = 10_000_000

ACCEPTANCE_LINES = {}


def reference_model(**kw):
    base = dict(p0=P0, ap_amplitude=AP_A, ap_decay=AP_B, clock_period=2e-9, holdoff_periods=HOLDOFF)
    base.update(kw)
    return SourceModel(**base)


@pytest.fixture(scope="session")
def model():
    return reference_model()


@pytest.fixture(scope="session")
def main_stream(model):
    """1.2e7 intervals; the generator is prefix-stable, so the first 1e7 are the acceptance run."""
    return sample_intervals(model, MAIN_COUNT, MAIN_SEED)


@pytest.fixture(scope="session")
def accept_stream(main_stream):
    return main_stream.with_intervals(main_stream.intervals[:ACCEPT_COUNT])


@pytest.fixture(scope="session")
def seed_streams(model, accept_stream):
    out = {MAIN_SEED: accept_stream}
    for s in FIT_SEEDS:
        if s not in out:
            out[s] = sample_intervals(model, ACCEPT_COUNT, s)
    return out


@pytest.fixture(scope="session")
def geometric_stream():
    return sample_intervals(SourceModel(P0, holdoff_periods=0), 1_000_000, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def record(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def accept_fit(accept_stream):
    from tunnelqrng.afterpulse import fit_afterpulse
    return fit_afterpulse(accept_stream)


@pytest.fixture(scope="session")
def accept_selected(accept_stream, accept_fit):
    from tunnelqrng.afterpulse import preselect
    return preselect(accept_stream, accept_fit, seed=2)
