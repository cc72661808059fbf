import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from ondev_lct.tensor import kernels

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

BACKENDS = sorted(kernels.available_backends())
MNIST_DIR = Path(os.environ.get("LCT_MNIST_DIR", "/root/data/mnist"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    previous = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(previous)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def mnist_paths():
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
             "t10k-labels-idx1-ubyte")
    paths = []
    for n in names:
        p = MNIST_DIR / n
        if not p.exists() and (MNIST_DIR / f"{n}.gz").exists():
            p = MNIST_DIR / f"{n}.gz"
        paths.append(p)
    return paths if all(p.exists() for p in paths) else None


# -- acceptance report -----------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    _CRITERIA[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
