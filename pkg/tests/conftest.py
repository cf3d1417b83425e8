import numpy as np
import pytest

from dualplan.env.base import DialogueEnv
from dualplan.env.scripted import ScriptedBackend, load_scripted_spec, make_cases
from dualplan.tasks import load_task


@pytest.fixture(scope="session")
def esconv():
    return load_task("esconv")


@pytest.fixture(scope="session")
def cima():
    return load_task("cima")


@pytest.fixture(scope="session")
def cb():
    return load_task("cb")


@pytest.fixture(scope="session")
def two_phase():
    return load_scripted_spec("two_phase")


@pytest.fixture
def two_phase_env(esconv, two_phase):
    return DialogueEnv(esconv, ScriptedBackend(two_phase, seed=0))


@pytest.fixture
def two_phase_case(two_phase):
    return make_cases(two_phase, 1, seed=0)[0]


class FixedBackend:
    """Backend whose critic always says the same thing; counts nothing itself."""

    def __init__(self, verdict="The Patient feels the same.", system="ok", user="hmm"):
        self.verdict = verdict
        self.system = system
        self.user = user

    def system_respond(self, state, strategy):
        return f"{self.system} {strategy.id}"

    def user_respond(self, state):
        return self.user

    def critic_judge(self, state, sample=0):
        return self.verdict(state) if callable(self.verdict) else self.verdict


@pytest.fixture
def fixed_backend():
    return FixedBackend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
