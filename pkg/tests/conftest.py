import numpy as np
import pytest
from hypothesis import settings

from ionnode import pipeline

# one line per acceptance check, echoed in the terminal summary
ACCEPTANCE_LINES = []

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(rng, rank=4):
    a = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture(scope="session")
def quick_config():
    """Noise-free source and fixed motion so the model builds in about a second."""
    return pipeline.RunConfig(cavity_jitter_2pi_khz=0.0, a_com_um=(0.0,) * 10, ripple_nm=0.0,
                              attempts_per_setting=1500, mc_replicates=0, tomography_starts=3)


@pytest.fixture(scope="session")
def quick_model(quick_config):
    return pipeline.build_model(quick_config)


@pytest.fixture(scope="session")
def quick_run(quick_config, quick_model):
    clicks, outcomes = pipeline.run_experiment(quick_config, quick_model)
    return clicks, outcomes


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
