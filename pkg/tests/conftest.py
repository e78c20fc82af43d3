import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import _criteria
from qsdsim.model import ModelParams, build_operators, temperature_for_nbar

settings.register_profile(
    "suite", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@pytest.fixture(scope="session")
def warm_params():
    # gamma=0.2, nbar=0.5: both damping channels active
    return ModelParams(m=1.0, omega=1.0, gamma=0.2,
                       temperature=temperature_for_nbar(0.5))


@pytest.fixture(scope="session")
def ops20(warm_params):
    return build_operators(warm_params, 20)


def random_states(n: int, dim: int, seed: int) -> np.ndarray:
    """(n, dim) normalized complex states, reproducible."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria.results:
        return
    terminalreporter.section("acceptance criteria")
    for num, desc, ok in sorted(_criteria.results):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {desc}")
