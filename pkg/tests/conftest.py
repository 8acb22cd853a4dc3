import numpy as np
import pytest

from fedfewshot.data import build_pool, generate_synthetic, default_class_specs
from fedfewshot.fewshot import LabeledPool


@pytest.fixture(scope="session")
def synthetic_small():
    """4 synthetic classes x 16 clips at 16 kHz, MFCC images (40, 14)."""
    ds = generate_synthetic(default_class_specs(4), per_class=16, seed=3)
    return ds, build_pool(ds.clips)


@pytest.fixture
def blob_pool():
    """Gaussian blobs shaped like MFCC images; class c is shifted by c."""
    rng = np.random.default_rng(0)
    labels = np.repeat(["a", "b", "c", "d"], 12)
    X = rng.normal(size=(len(labels), 8, 6)).astype(np.float32)
    for c, lab in enumerate("abcd"):
        X[labels == lab] += 1.5 * c
    return LabeledPool(X, labels)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
