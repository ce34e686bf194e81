import os
from pathlib import Path

import numpy as np
import pytest

from qnnbench.datasets import write_idx


def _mnist_csv() -> Path:
    mlxtend = pytest.importorskip("mlxtend")
    path = Path(os.path.dirname(mlxtend.__file__)) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        pytest.skip("mlxtend MNIST sample not available")
    return path


@pytest.fixture(scope="session")
def mnist_arrays():
    """5000 MNIST digits (500 per class) shipped with mlxtend, as uint8 images and labels."""
    data = np.loadtxt(_mnist_csv(), delimiter=",")
    return data[:, :-1].reshape(-1, 28, 28).astype(np.uint8), data[:, -1].astype(np.uint8)


@pytest.fixture(scope="session")
def mnist_root(tmp_path_factory, mnist_arrays):
    """Data root holding the sample as gzip-compressed IDX files under ``mnist/``."""
    root = tmp_path_factory.mktemp("data_root")
    (root / "mnist").mkdir()
    images, labels = mnist_arrays
    write_idx(root / "mnist" / "train-images-idx3-ubyte.gz", images)
    write_idx(root / "mnist" / "train-labels-idx1-ubyte.gz", labels)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None and (report.when == "call" or (report.when == "setup" and not report.passed)):
        number, title = marker.args
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        item.config.stash[_ACCEPTANCE].append((number, f"criterion {number:2d} {outcome}  {title} "
                                                       f"({report.duration:.1f} s)"))
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(_ACCEPTANCE, []))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
