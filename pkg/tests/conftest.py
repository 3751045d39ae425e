import numpy as np
import pytest

from dggf.mlp import init_mlp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_net(sizes, activation="tanh", seed=0, bias_scale=0.5):
    """Glorot net with nonzero biases, so bias paths get exercised."""
    net = init_mlp(sizes, activation, seed)
    r = np.random.default_rng(seed + 1)
    return net.with_params(
        [p if p.ndim == 2 else bias_scale * r.standard_normal(p.shape) for p in net.params()]
    )


ACCEPTANCE_LINES: dict = {}


def record(criterion: int, name: str, passed: bool, detail: str) -> bool:
    """Remember one acceptance result; the terminal summary prints them in order."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:>2} {name}: {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
