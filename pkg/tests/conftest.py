import numpy as np
import pytest

from xlamaml import autodiff as ad


def max_rel_err(a, b, floor=1e-6):
    """Largest |a-b| / max(|a|, |b|, floor) over all coordinates of two gradient maps."""
    worst = 0.0
    for k in a:
        x, y = np.asarray(a[k], dtype=float), np.asarray(b[k], dtype=float)
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)) if x.size else 0.0)
    return worst


def value_fn(build):
    """Turn ``build(nodes) -> scalar Node`` into ``f(arrays) -> float`` for the FD oracle."""
    def f(arrays):
        with ad.no_grad():
            return float(build({k: ad.const(v) for k, v in arrays.items()}).value)
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion at the end of the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((label, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {label}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {label}: {detail}")
