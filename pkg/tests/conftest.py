import numpy as np
import pytest
import torch

from lfa.models import ArchitectureConfig

# acceptance results are collected here and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _single_thread():
    # keep parallel BLAS out of the way: tiny workloads + reproducibility
    torch.set_num_threads(1)


@pytest.fixture
def toy_arch() -> ArchitectureConfig:
    return ArchitectureConfig.toy()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def toy_pixels(rng) -> np.ndarray:
    """16 random 8x8 patches in [-1, 1]."""
    return rng.uniform(-1.0, 1.0, size=(16, 8, 8)).astype(np.float32)
