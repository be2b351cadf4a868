import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safepd.constraints import ConstraintSpec
from safepd.errors import ConfigError, InvalidInputError, InvalidParameterError
from safepd.lagrangian import (estimate_constraint, estimate_dual_gradient,
                               estimate_primal_gradient, lagrangian_return, penalized_reward)
from safepd.mdp_core import Mode
from safepd.policy import SoftmaxTabularPolicy
from safepd.tabular import exact_lagrangian, exact_q, exact_values

from conftest import (geometric_trajectories, make_traj, tabular_specs, two_state_cmdp,
                      within_se)


def test_penalized_reward_arithmetic():
    assert penalized_reward(-2.0, [1.0], [1.0], [0.99]) == pytest.approx(-1.99, abs=1e-15)


def test_penalized_reward_zero_multiplier():
    r = np.array([-3.0, 1.5])
    ind = np.array([[1, 0], [0, 0]], dtype=bool)
    assert np.array_equal(penalized_reward(r, ind, [0.0, 0.0], [0.5, 0.7]), r)


def test_penalized_reward_two_constraints_hand_sum(rng):
    r, ind = rng.normal(), rng.integers(0, 2, 2).astype(float)
    lam, c = rng.uniform(0, 5, 2), rng.uniform(0, 1, 2)
    hand = r + lam[0] * (ind[0] - c[0]) + lam[1] * (ind[1] - c[1])
    assert penalized_reward(r, ind, lam, c) == pytest.approx(hand, abs=1e-15)


def test_penalized_reward_dimension_and_sign_checks():
    with pytest.raises(InvalidInputError):
        penalized_reward(0.0, [1.0, 0.0], [1.0], [0.5])
    with pytest.raises(InvalidInputError):
        penalized_reward(0.0, [1.0], [1.0, 2.0], [0.5, 0.5])
    with pytest.raises(InvalidParameterError):
        penalized_reward(0.0, [1.0], [-1.0], [0.5])


def _spec(mode="continuing", c=0.99, gamma=0.95):
    if mode == "episodic":
        return ConstraintSpec.raw(0, "a", c, "episodic")
    return ConstraintSpec.raw(0, "a", c, "continuing", gamma=gamma)


def test_lagrangian_return_zero_multiplier_is_plain_sum():
    tr = make_traj([1.0, -2.0, 0.5], [1, 0, 1])
    out = lagrangian_return(tr, [0.0], [_spec()], "continuing")
    assert out.total == out.plain == -0.5
    assert out.horizon_used == 2


def test_lagrangian_return_single_step():
    tr = make_traj([-1.5], [0])
    spec = _spec(c=10.0, gamma=0.9)
    out = lagrangian_return(tr, [2.0], [spec], "continuing")
    assert out.total == pytest.approx(-1.5 + 2.0 * (0 - spec.c_per_step), abs=1e-15)


def test_lagrangian_return_mode_mismatch():
    tr = make_traj([1.0], [1], mode=Mode.EPISODIC)
    with pytest.raises(InvalidInputError):
        lagrangian_return(tr, [1.0], [_spec()], "continuing")


def test_constraint_estimates():
    ten = make_traj(np.zeros(10), np.ones(10))
    assert estimate_constraint(ten, "episodic")[0] == 1.0
    thirteen = make_traj(np.zeros(13), np.ones(13))
    assert estimate_constraint(thirteen, "continuing")[0] == 13.0


def test_dual_gradient_thresholds():
    tr = make_traj(np.zeros(5), [1, 1, 0, 1, 1])
    spec = _spec(c=10.0, gamma=0.9)
    assert estimate_dual_gradient(tr, [spec], "continuing")[0] == pytest.approx(4 - 10.0)
    hm = estimate_dual_gradient(tr, [spec], "continuing", threshold="horizon-matched")[0]
    assert hm == pytest.approx(4 - 5 * 10.0 * 0.1, abs=1e-12)
    with pytest.raises(ConfigError):
        estimate_dual_gradient(tr, [spec], "continuing", threshold="nope")


def test_primal_gradient_zero_return_is_zero():
    pol = SoftmaxTabularPolicy(np.array([[0.2, -0.1], [0.0, 0.3]]))
    tr = make_traj([0.0, 0.0], [[1], [1]], states=[0, 1], actions=[1, 0])
    spec = ConstraintSpec.raw(0, "a", 1.0, "episodic")
    g = estimate_primal_gradient(tr, pol, [3.0], [spec], "episodic")
    assert np.all(g == 0)


def test_primal_gradient_variants_by_hand():
    pol = SoftmaxTabularPolicy(np.array([[0.2, -0.1], [0.0, 0.3]]))
    tr = make_traj([1.0, 2.0, -1.0], [[1], [0], [1]], states=[0, 1, 1], actions=[1, 0, 1])
    spec = _spec(c=5.0, gamma=0.9)
    lam = 0.7
    rl = np.array([1.0, 2.0, -1.0]) + lam * (np.array([1, 0, 1]) - spec.c_per_step)
    paper = estimate_primal_gradient(tr, pol, [lam], [spec], "continuing")
    assert np.allclose(paper, rl.sum() * pol.score(0, 1), atol=1e-14)
    full = estimate_primal_gradient(tr, pol, [lam], [spec], "continuing", variant="full-reinforce")
    hand = rl.sum() * pol.score(0, 1) + rl[1:].sum() * pol.score(1, 0) + rl[2] * pol.score(1, 1)
    assert np.allclose(full, hand, atol=1e-14)
    with pytest.raises(ConfigError):
        estimate_primal_gradient(tr, pol, [lam], [spec], "continuing", variant="other")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.sampled_from(["paper", "full-reinforce"]))
def test_zero_multiplier_reduces_to_unconstrained_estimator(rewards, variant):
    pol = SoftmaxTabularPolicy(np.array([[0.5, -0.5], [1.0, 0.0]]))
    n = len(rewards)
    states, actions = np.arange(n) % 2, (np.arange(n) // 2) % 2
    tr = make_traj(rewards, np.zeros((n, 1)), states=states, actions=actions)
    with_c = estimate_primal_gradient(tr, pol, [0.0], [_spec(c=3.0)], "continuing", variant=variant)
    free = make_traj(rewards, np.zeros((n, 0)), states=states, actions=actions)
    plain = estimate_primal_gradient(free, pol, np.zeros(0), [], "continuing", variant=variant)
    assert np.array_equal(with_c, plain)


@pytest.fixture(scope="module")
def sampled():
    mdp = two_state_cmdp()
    pol = SoftmaxTabularPolicy(np.array([[0.4, -0.3], [-0.2, 0.6]]))
    return mdp, pol, geometric_trajectories(mdp, pol, 100_000, seed=21)


def test_sampled_lagrangian_return_is_unbiased(sampled):
    mdp, pol, trajs = sampled
    specs, lam = tabular_specs(mdp), np.array([1.3])
    L = [lagrangian_return(t, lam, specs, "continuing").total for t in trajs]
    assert within_se(L, exact_lagrangian(mdp, pol.table(), lam)).all()


def test_sampled_constraint_value_is_unbiased(sampled):
    mdp, pol, trajs = sampled
    U_hat = np.array([estimate_constraint(t, "continuing") for t in trajs])
    # exact discounted occupancy of the safe state by matrix powers
    P_pi = np.einsum("sa,sat->st", pol.table(), mdp.P)
    marg, U = mdp.p0.copy(), 0.0
    for t in range(200):
        U += mdp.gamma ** t * (marg @ mdp.ind[:, 0])
        marg = marg @ P_pi
    assert U == pytest.approx(exact_values(mdp, pol.table())[1][0], rel=1e-12)
    assert within_se(U_hat[:, 0], U).all()


def test_horizon_matched_dual_gradient_is_unbiased(sampled):
    mdp, pol, trajs = sampled
    specs = tabular_specs(mdp)
    g = np.array([estimate_dual_gradient(t, specs, "continuing", "horizon-matched") for t in trajs])
    U = exact_values(mdp, pol.table())[1]
    assert within_se(g[:, 0], U[0] - mdp.c[0]).all()


def test_paper_estimator_matches_first_step_gradient(sampled):
    mdp, pol, trajs = sampled
    specs, lam = tabular_specs(mdp), np.array([1.3])
    G = np.array([estimate_primal_gradient(t, pol, lam, specs, "continuing").ravel() for t in trajs])
    pi = pol.table()
    Q = exact_q(mdp, pi, mdp.penalized_reward(lam))
    target = sum(mdp.p0[s] * pi[s, a] * pol.score(s, a) * Q[s, a]
                 for s in range(2) for a in range(2)).ravel()
    assert within_se(G, target).all()
