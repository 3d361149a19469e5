import numpy as np
import pytest

from convexpg import PolicyParams, UtilitySpec
from convexpg.envs import chain, random_mdp
from convexpg.exact import occupancy_exact

ACCEPTANCE_LINES = []


def suite_instances(n_mdps=20, n_thetas=5, n_states=5, n_actions=3, gamma=0.9):
    """The seeded 20 x 5 (MDP, theta) suite used across the acceptance criteria."""
    out = []
    for i in range(n_mdps):
        mdp = random_mdp(n_states, n_actions, gamma, seed=1000 + i)
        for j in range(n_thetas):
            out.append((mdp, PolicyParams.random(mdp, seed=10_000 * (i + 1) + j)))
    return out


def utilities_for(mdp, seed=0):
    """One utility of each kind, with a realizable apprenticeship target."""
    expert = PolicyParams.random(mdp, seed=seed + 77)
    return {
        "linear": UtilitySpec.linear(mdp.reward),
        "neg_entropy": UtilitySpec.neg_entropy(),
        "apprenticeship_l2": UtilitySpec.apprenticeship(occupancy_exact(mdp, expert).state_action),
    }


@pytest.fixture(scope="session")
def suite():
    return suite_instances()


@pytest.fixture
def mdp53():
    return random_mdp(5, 3, 0.9, seed=7)


@pytest.fixture
def theta53(mdp53):
    return PolicyParams.random(mdp53, seed=11)


@pytest.fixture
def self_loop():
    from convexpg import TabularMdp

    return TabularMdp(1, 1, 0.9, np.ones((1, 1, 1)), np.ones(1))


@pytest.fixture
def sym_chain():
    return chain(2, 0.9)


@pytest.fixture
def record():
    def _record(name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
