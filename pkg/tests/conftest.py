import numpy as np
import pytest

from chromashape.classifier import Dense, Flatten, Model, reference_model


def linear_model(weight, bias=None, height=1, width=1):
    """Flatten + Dense over a (3, height, width) input; logits = W x + b."""
    weight = np.asarray(weight, dtype=np.float64)
    k = weight.shape[0]
    bias = np.zeros(k) if bias is None else np.asarray(bias, dtype=np.float64)
    return Model((Flatten(), Dense(weight, bias)), (3, height, width), tuple(f"c{i}" for i in range(k)))


@pytest.fixture(scope="session")
def ref_model():
    return reference_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
