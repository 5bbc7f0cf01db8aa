import contextlib
import time

import numpy as np
import pytest

from sentinel import synth
from sentinel.features import xpcs_matrix


@pytest.fixture(scope="session")
def xpcs_bench():
    return synth.xpcs_benchmark(2021)


@pytest.fixture(scope="session")
def xpcs_X(xpcs_bench):
    return xpcs_matrix(xpcs_bench.items)


@pytest.fixture(scope="session")
def xafs_bench():
    return synth.xafs_benchmark(2021)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ee_pipeline(xpcs_bench, xpcs_X):
    from sentinel.anomaly import fit_pipeline
    from sentinel.core import Status
    normal = [i for i, b in enumerate(xpcs_bench.items) if b.label is Status.NORMAL]
    return fit_pipeline("ee", xpcs_X[normal[:300]], 6, 0.05, seed=0)


@pytest.fixture(scope="session")
def knn_classifier(xafs_bench):
    from sentinel.classify import train_classifier
    return train_classifier(xafs_bench.items, "k-Neighbors", "engineered")


# --- acceptance reporting ----------------------------------------------------------

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        t0 = time.perf_counter()
        detail: dict = {}
        try:
            yield detail
        except BaseException as exc:
            line = (f"FAIL criterion {number:>2}: {title} ({time.perf_counter() - t0:.1f} s) "
                    f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            _ACCEPTANCE.append(line)
            print(line)
            raise
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = (f"PASS criterion {number:>2}: {title} ({time.perf_counter() - t0:.1f} s)"
                + (f" [{extra}]" if extra else ""))
        _ACCEPTANCE.append(line)
        print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
