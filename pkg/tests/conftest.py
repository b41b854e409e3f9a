import numpy as np
import pytest

from moescope.moe import MoeConfig, MoeModel
from moescope.pipeline import synth_corpus

CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    return MoeConfig(num_experts=4, top_k=2, base_width=16, input_size=16, shared_widths=(4, 6), gate_width=4,
                     proj_dim=8)


@pytest.fixture
def tiny_model(tiny_config):
    return MoeModel(tiny_config, seed=3)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(120, size=16, dims=6, seed=5)
