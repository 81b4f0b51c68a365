import numpy as np
import pytest


def central_difference(f, x, eps=1e-6):
    """Gradient of scalar f at array x by central differences (x is restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def max_rel_error(analytic, numeric):
    """Largest entrywise deviation relative to the gradient's scale.

    ``max|a - n| / max(max|a|, max|n|)``; entrywise ratios on near-zero
    entries would only measure finite-difference truncation error.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-300)
    return float(np.max(np.abs(a - n)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20241014)


_acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        _acceptance.append((marker.args[0], report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed in _acceptance:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")
