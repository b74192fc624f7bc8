import numpy as np
import pytest

from aghnsim.model import Batch, DenseNet, DenseNetSpec


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def random_batch(gen, n, input_dim, num_classes):
    return Batch(gen.normal(size=(n, input_dim)), gen.integers(0, num_classes, size=n))


@pytest.fixture
def tiny_net():
    spec = DenseNetSpec(input_dim=4, hidden_dims=(5, 3), num_classes=3)
    return DenseNet(spec)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion and print it."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
