import numpy as np
import pytest

from crmlab import kernels
from crmlab.bandit_env import make_environment, make_split, sample_logged_data
from crmlab.learners import SoftmaxPolicy

kernels.tune_allocator()

_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """criterion number -> (passed, detail); printed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_env():
    return make_environment(5, 3, beta=5.0, seed=11)


@pytest.fixture(scope="session")
def small_data(small_env):
    return sample_logged_data(small_env, 400, np.random.default_rng(3))


@pytest.fixture(scope="session")
def small_split(small_env):
    return make_split(small_env, 600, np.random.default_rng(4))


@pytest.fixture
def small_policy(small_env):
    return SoftmaxPolicy.create(small_env.context_dim, small_env.n_actions, np.random.default_rng(5))
