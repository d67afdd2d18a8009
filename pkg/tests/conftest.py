import numpy as np
import pytest

from dpvlearn.data import ExperimentDataset


def make_dataset(X, is_test, y=None, ids=None, ts=None):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    return ExperimentDataset(
        ids=tuple(ids) if ids is not None else tuple(f"r{i:04d}" for i in range(n)),
        timestamps=np.asarray(ts if ts is not None else np.arange(n), dtype=np.int64),
        is_test=np.asarray(is_test, dtype=bool),
        metric=np.zeros(n) if y is None else np.asarray(y, dtype=np.float64),
        X=X,
        feature_names=tuple(f"f{j + 1}" for j in range(X.shape[1])),
    )


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the acceptance summary."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
