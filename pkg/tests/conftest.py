import numpy as np
import pytest

from sgld_privacy.net_core import MlpArchitecture, ModelParams, init_params


def random_net(rng: np.random.Generator, activation: str | None = None, scale: float = 0.5) -> ModelParams:
    """Small MLP with random widths and N(0, scale^2) parameters."""
    n_in = int(rng.integers(1, 5))
    hidden = tuple(int(h) for h in rng.integers(1, 6, size=int(rng.integers(1, 3))))
    n_out = int(rng.integers(2, 5))
    act = activation or str(rng.choice(["relu", "tanh"]))
    arch = MlpArchitecture((n_in, *hidden, n_out), act)
    return ModelParams(arch, rng.normal(0.0, scale, arch.n_params))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_params():
    return init_params(MlpArchitecture((3, 4, 2)), seed=0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
