import numpy as np
import pytest

from spconf import _pykernels

try:
    from spconf import _ckernels
except ImportError:  # extension not built
    _ckernels = None

KERNEL_MODULES = [_pykernels] + ([_ckernels] if _ckernels is not None else [])


@pytest.fixture(params=KERNEL_MODULES, ids=lambda m: m.BACKEND)
def kernel_module(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_spd(rng, n, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = np.exp(rng.uniform(0, np.log(cond), n))
    m = (q * vals) @ q.T
    return (m + m.T) / 2


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(label, passed, detail):
    line = f"{label} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
