import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dchain", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dchain")


def zscore(estimate: float, target: float, stderr: float) -> float:
    return (estimate - target) / stderr


def var_stderr(x: np.ndarray) -> float:
    """Standard error of the sample variance (fourth-moment formula)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = x - x.mean()
    m2 = np.mean(c ** 2)
    m4 = np.mean(c ** 4)
    return float(np.sqrt((m4 - m2 ** 2 * (n - 3) / (n - 1)) / n))


@pytest.fixture
def mean_revert():
    from dchain.drift import DriftKernel
    return DriftKernel.mean_revert()


_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """``record(k, ok, detail)`` prints one line per criterion and stores it for the summary."""
    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {k:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
