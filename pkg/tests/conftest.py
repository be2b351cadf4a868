import numpy as np
import pytest

from safepd.mdp_core import Trajectory
from safepd.nav_env import Circle, NavScenario, Obstacle, Rectangle
from safepd.tabular import TabularCmdp


def two_state_cmdp(gamma=0.5, c=1.2):
    """2 states, 2 actions, state 1 unsafe."""
    P = np.array([[[0.9, 0.1], [0.2, 0.8]],
                  [[0.7, 0.3], [0.1, 0.9]]])
    r = np.array([[1.0, 0.0], [0.5, 2.0]])
    ind = np.array([[1.0], [0.0]])
    return TabularCmdp(P, r, ind, gamma, np.array([0.6, 0.4]), np.array([c]))


def random_cmdp(rng, n_states=3, n_actions=2, m=1, gamma=0.9):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-1, 1, (n_states, n_actions))
    ind = (rng.random((n_states, m)) < 0.7).astype(float)
    p0 = rng.dirichlet(np.ones(n_states))
    p0 /= p0.sum()
    c = rng.uniform(0, 0.5 / (1 - gamma), m)
    return TabularCmdp(P, r, ind, gamma, p0, c)


def make_traj(rewards, indicators, states=None, actions=None, mode=None):
    rewards = np.asarray(rewards, dtype=float)
    n = len(rewards)
    ind = np.asarray(indicators, dtype=bool).reshape(n, -1)
    states = np.zeros((n, 2)) if states is None else np.asarray(states)
    actions = np.zeros((n, 2)) if actions is None else np.asarray(actions)
    return Trajectory(states, actions, rewards, ind, n - 1, mode)


class IdentityEnv:
    """step = identity; one constraint that is always satisfied."""

    n_constraints = 1

    def __init__(self, start=(3.0, 4.0)):
        self.start = np.asarray(start, dtype=float)

    def initial_states(self, n, rng):
        return np.tile(self.start, (n, 1))

    def step(self, states, actions, rng=None):
        return states.copy()

    def reward(self, states, actions):
        return np.zeros(states.shape[0])

    def safe(self, states):
        return np.ones((states.shape[0], 1), dtype=bool)

    def contains(self, states):
        return np.ones(states.shape[0], dtype=bool)


@pytest.fixture
def small_scenario():
    obs = (Obstacle("disk", Circle((5.0, 5.0), 1.0)),
           Obstacle("wall", Rectangle((2.0, 2.0), (3.0, 3.0))))
    return NavScenario(goal=(8.5, 1.5), obstacles=obs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def geometric_trajectories(mdp, policy, n, seed, mode="continuing"):
    """``n`` uncapped geometric-horizon rollouts on a tabular CMDP."""
    from safepd.mdp_core import HorizonSampler, Streams, simulate_ragged
    from safepd.tabular import TabularEnv
    st = Streams.from_seed(seed)
    hs = HorizonSampler(mdp.gamma, cap=10 ** 9)
    Ts = [hs(st.horizon) for _ in range(n)]
    return simulate_ragged(TabularEnv(mdp), policy, Ts, st.policy, init_rng=st.initial,
                           env_rng=st.env, mode=mode)


def tabular_specs(mdp):
    from safepd.constraints import ConstraintSpec
    return [ConstraintSpec.raw(i, f"c{i}", c, "continuing", gamma=mdp.gamma)
            for i, c in enumerate(mdp.c)]


def within_se(samples, target, k=3.0):
    samples = np.asarray(samples, dtype=float)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    return np.abs(samples.mean(axis=0) - target) <= k * se


@pytest.fixture(scope="session")
def verification_gap():
    """Duality-gap report for the shipped verification instance (brute force at resolution 200)."""
    from safepd.tabular import duality_gap, verification_cmdp
    return duality_gap(verification_cmdp(), resolution=200)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record and print a PASS/FAIL line for an acceptance criterion, then assert it."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        store[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
