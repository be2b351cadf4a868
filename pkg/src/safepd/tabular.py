"""Exact computations on small finite constrained MDPs.

Values come from the linear fixed point ``(I - gamma P_pi) v = r_pi``; the dual
function ``d(lambda) = max_pi V(pi) + lambda^T (U(pi) - c)`` is an unconstrained
MDP with reward ``r + sum_i lambda_i (ind_i - c_i (1 - gamma))`` and is solved by
value or policy iteration. The constrained optimum is approximated by brute
force over a grid of randomized stationary policies.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .algorithms import dual_update
from .errors import ConfigError, EnumerationBudgetError, InvalidInputError, InvalidParameterError
from .yamlio import LocatedDoc, load_yaml, parse_yaml, validate

TABULAR_VERSION = 1
MAX_STATE_ACTIONS = 64
MAX_CONSTRAINTS = 3


@dataclass
class TabularCmdp:
    P: np.ndarray       # (S, A, S) transition probabilities
    r: np.ndarray       # (S, A) rewards
    ind: np.ndarray     # (S, m) safe-set membership bits
    gamma: float
    p0: np.ndarray      # (S,) initial distribution
    c: np.ndarray       # (m,) thresholds on the discounted indicator sums

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.ind = np.asarray(self.ind, dtype=float).reshape(self.P.shape[0], -1)
        self.p0 = np.asarray(self.p0, dtype=float)
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        S, A = self.r.shape
        if self.P.shape != (S, A, S):
            raise InvalidInputError(f"transition tensor has shape {self.P.shape}, expected {(S, A, S)}")
        if S * A > MAX_STATE_ACTIONS:
            raise InvalidInputError(f"n_states * n_actions = {S * A} exceeds {MAX_STATE_ACTIONS}")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > 1e-12:
            raise InvalidInputError("every transition row must be a probability vector (sum 1 within 1e-12)")
        if not np.all((self.ind == 0) | (self.ind == 1)):
            raise InvalidInputError("indicator entries must be 0 or 1")
        if self.ind.shape[1] > MAX_CONSTRAINTS or self.c.shape != (self.ind.shape[1],):
            raise InvalidInputError(
                f"need one threshold per constraint and at most {MAX_CONSTRAINTS} constraints")
        if not (0.0 < self.gamma < 1.0):
            raise InvalidParameterError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if self.p0.shape != (S,) or np.any(self.p0 < 0) or abs(self.p0.sum() - 1.0) > 1e-12:
            raise InvalidInputError("initial distribution must be a probability vector over states")

    @property
    def n_states(self) -> int:
        return self.r.shape[0]

    @property
    def n_actions(self) -> int:
        return self.r.shape[1]

    @property
    def m(self) -> int:
        return self.ind.shape[1]

    def penalized_reward(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return self.r + ((self.ind - self.c * (1.0 - self.gamma)) @ lam)[:, None]

    def with_thresholds(self, c) -> "TabularCmdp":
        return TabularCmdp(self.P, self.r, self.ind, self.gamma, self.p0, c)


def _check_policy(mdp: TabularCmdp, pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(f"policy table has shape {pi.shape}, expected {mdp.r.shape}")
    if np.any(pi < -1e-12) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-9:
        raise InvalidInputError("policy rows must lie on the probability simplex")
    return pi


def _solve_values(mdp: TabularCmdp, pi: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """State values for a batch of policies: ``pi`` is (B, S, A), ``rewards`` (S, A, k)."""
    P_pi = np.einsum("bsa,sat->bst", pi, mdp.P)
    R_pi = np.einsum("bsa,sak->bsk", pi, rewards)
    M = np.eye(mdp.n_states) - mdp.gamma * P_pi
    return np.linalg.solve(M, R_pi)


def _value_rewards(mdp: TabularCmdp) -> np.ndarray:
    ind = np.broadcast_to(mdp.ind[:, None, :], (mdp.n_states, mdp.n_actions, mdp.m))
    return np.concatenate([mdp.r[:, :, None], ind], axis=2)


def exact_values(mdp: TabularCmdp, pi) -> tuple[float, np.ndarray]:
    """``(V, U)``: discounted reward and indicator values averaged over ``p0``."""
    pi = _check_policy(mdp, pi)
    v = _solve_values(mdp, pi[None], _value_rewards(mdp))[0]
    out = mdp.p0 @ v
    return float(out[0]), out[1:]


def exact_lagrangian(mdp: TabularCmdp, pi, lam) -> float:
    V, U = exact_values(mdp, pi)
    return V + float(np.asarray(lam, dtype=float) @ (U - mdp.c))


def exact_q(mdp: TabularCmdp, pi, reward: Optional[np.ndarray] = None) -> np.ndarray:
    """Action values ``Q(s, a)`` of ``pi`` for ``reward`` (default: the MDP reward)."""
    pi = _check_policy(mdp, pi)
    reward = mdp.r if reward is None else np.asarray(reward, dtype=float)
    v = _solve_values(mdp, pi[None], reward[:, :, None])[0, :, 0]
    return reward + mdp.gamma * mdp.P @ v


def _deterministic(mdp: TabularCmdp, actions) -> np.ndarray:
    pi = np.zeros(mdp.r.shape)
    pi[np.arange(mdp.n_states), actions] = 1.0
    return pi


def _value_iteration(mdp: TabularCmdp, reward, tol=1e-10, max_iter=1_000_000) -> np.ndarray:
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = reward + mdp.gamma * mdp.P @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            return np.argmax(reward + mdp.gamma * mdp.P @ v_new, axis=1)
        v = v_new
    raise RuntimeError("value iteration did not converge")


def _policy_iteration(mdp: TabularCmdp, reward, start=None, max_iter=10_000) -> np.ndarray:
    S = np.arange(mdp.n_states)
    a = np.argmax(reward, axis=1) if start is None else np.asarray(start)
    I = np.eye(mdp.n_states)
    for _ in range(max_iter):
        v = np.linalg.solve(I - mdp.gamma * mdp.P[S, a], reward[S, a])
        q = reward + mdp.gamma * mdp.P @ v
        best = q.max(axis=1)
        # keep the incumbent action on (near) ties so the loop terminates
        keep = q[S, a] >= best - 1e-12 * (1.0 + np.abs(best))
        a_new = np.where(keep, a, np.argmax(q, axis=1))
        if np.array_equal(a_new, a):
            return a
        a = a_new
    raise RuntimeError("policy iteration did not converge")


@dataclass
class DualPoint:
    value: float            # d(lambda)
    policy: np.ndarray      # greedy deterministic maximizer, (S, A) one-hot
    actions: np.ndarray     # its action per state
    V: float
    U: np.ndarray


def exact_dual(mdp: TabularCmdp, lam, method: str = "value_iteration", start=None) -> DualPoint:
    """``d(lambda) = max_pi L(pi, lambda)`` and a maximizing deterministic policy.

    The maximizer is found by value iteration (tolerance 1e-10) or policy
    iteration; ``d`` is then the exact Lagrangian of that policy, so it equals
    ``V + lambda^T (U - c)`` to solver precision.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float)) if mdp.m else np.zeros(0)
    if lam.shape != (mdp.m,):
        raise InvalidInputError(f"expected {mdp.m} multipliers, got shape {lam.shape}")
    if np.any(lam < 0):
        raise InvalidParameterError("multipliers must be nonnegative")
    reward = mdp.penalized_reward(lam)
    if method == "value_iteration":
        a = _value_iteration(mdp, reward)
    elif method == "policy_iteration":
        a = _policy_iteration(mdp, reward, start)
    else:
        raise InvalidParameterError(f"unknown method {method!r}")
    pi = _deterministic(mdp, a)
    V, U = exact_values(mdp, pi)
    return DualPoint(V + float(lam @ (U - mdp.c)), pi, a, V, U)


def optimal_value(mdp: TabularCmdp, reward) -> tuple[float, np.ndarray]:
    """Best discounted value of an arbitrary reward table and a maximizing policy."""
    a = _policy_iteration(mdp, np.asarray(reward, dtype=float))
    pi = _deterministic(mdp, a)
    v = _solve_values(mdp, pi[None], np.asarray(reward, dtype=float)[:, :, None])[0, :, 0]
    return float(mdp.p0 @ v), pi


# -- brute-force primal ----------------------------------------------------------

def simplex_grid(n_actions: int, resolution: int) -> np.ndarray:
    """All distributions over ``n_actions`` with entries in ``{0, 1/R, ..., 1}``."""
    if resolution < 1:
        raise InvalidParameterError("grid resolution must be a positive integer")
    pts = []
    for cuts in itertools.combinations(range(resolution + n_actions - 1), n_actions - 1):
        bounds = (-1,) + cuts + (resolution + n_actions - 1,)
        pts.append([bounds[i + 1] - bounds[i] - 1 for i in range(n_actions)])
    return np.asarray(pts, dtype=float) / resolution


@dataclass
class PrimalResult:
    value: Optional[float]          # None when no grid policy is feasible
    policy: Optional[np.ndarray]
    U: Optional[np.ndarray]
    feasible: bool
    n_policies: int
    slater_slack: float             # max over the grid of min_i (U_i - c_i)
    slater_policy: Optional[np.ndarray] = None
    slater_value: Optional[float] = None


def brute_force_primal(mdp: TabularCmdp, resolution: int = 200, max_policies: int = 20_000_000,
                       chunk: int = 100_000) -> PrimalResult:
    """Best feasible value over stationary policies on a simplex grid.

    Raises :class:`EnumerationBudgetError` when the grid holds more than
    ``max_policies`` policies; nothing is enumerated in that case.
    """
    grid = simplex_grid(mdp.n_actions, resolution)
    g, S = grid.shape[0], mdp.n_states
    total = g ** S
    if total > max_policies:
        raise EnumerationBudgetError(
            f"{total} grid policies exceed the budget of {max_policies}", best=None)
    rewards = _value_rewards(mdp)
    best_v, best_idx, best_u = -np.inf, None, None
    sl_best, sl_idx, sl_v = -np.inf, None, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        choice = np.stack(np.unravel_index(idx, (g,) * S), axis=1)
        pis = grid[choice]
        vals = np.einsum("s,bsk->bk", mdp.p0, _solve_values(mdp, pis, rewards))
        V, U = vals[:, 0], vals[:, 1:]
        margin = (U - mdp.c).min(axis=1) if mdp.m else np.full(len(idx), np.inf)
        j = int(np.argmax(margin))
        if margin[j] > sl_best:
            sl_best, sl_idx, sl_v = float(margin[j]), idx[j], float(V[j])
        ok = margin >= 0
        if ok.any():
            k = int(np.argmax(np.where(ok, V, -np.inf)))
            if V[k] > best_v:
                best_v, best_idx, best_u = float(V[k]), idx[k], U[k]
    to_policy = lambda i: grid[np.array(np.unravel_index(i, (g,) * S))]
    sl_pi = None if sl_idx is None else to_policy(sl_idx)
    if best_idx is None:
        return PrimalResult(None, None, None, False, total, sl_best, sl_pi, sl_v)
    pi = to_policy(best_idx)
    V, U = exact_values(mdp, pi)
    return PrimalResult(V, pi, U, True, total, sl_best, sl_pi, sl_v)


# -- dual minimization -------------------------------------------------------------

@dataclass
class DualMinimum:
    value: float
    lam: np.ndarray
    iterations: int
    history: list = field(default_factory=list)


def minimize_dual(mdp: TabularCmdp, restarts: int = 10, step: float = 0.01, iters: int = 10_000,
                  grad_tol: float = 1e-6, lam_scale: float = 10.0, seed: int = 0,
                  patience: int = 2_000) -> DualMinimum:
    """Projected subgradient descent on ``d`` with the Danskin gradient ``U(pi^dagger) - c``.

    The first start is ``lambda = 0``, the others uniform in ``[0, lam_scale]^m``.
    The best dual value visited is returned; a start stops early once the
    projected gradient vanishes or after ``patience`` steps without improvement.
    """
    if mdp.m == 0:
        d = exact_dual(mdp, np.zeros(0), method="policy_iteration")
        return DualMinimum(d.value, np.zeros(0), 0)
    rng = np.random.default_rng(seed)
    best = DualMinimum(np.inf, np.zeros(mdp.m), 0)
    for r in range(restarts):
        lam = np.zeros(mdp.m) if r == 0 else rng.uniform(0.0, lam_scale, mdp.m)
        start, since = None, 0
        for k in range(iters):
            d = exact_dual(mdp, lam, method="policy_iteration", start=start)
            start = d.actions
            best.iterations += 1
            if d.value < best.value - 1e-15:
                best.value, best.lam = d.value, lam.copy()
                since = 0
            else:
                since += 1
            g = d.U - mdp.c
            moving = (lam > 0) | (g < 0)
            if np.linalg.norm(g[moving]) < grad_tol or since >= patience:
                break
            lam = dual_update(lam, d.U, mdp.c, step)
        best.history.append(best.value)
    return best


@dataclass
class GapReport:
    status: str                 # PASS | FAIL | INFEASIBLE | NOT_VERIFIABLE
    D_star: Optional[float]
    P_star: Optional[float]
    gap: Optional[float]
    relative_gap: Optional[float]
    tolerance: float
    lam_star: Optional[np.ndarray] = None
    slater_slack: Optional[float] = None
    n_policies: int = 0

    def lines(self) -> list[str]:
        fmt = lambda x: "none" if x is None else repr(float(x))
        out = [f"status={self.status}", f"D_star={fmt(self.D_star)}", f"P_star={fmt(self.P_star)}",
               f"gap={fmt(self.gap)}", f"relative_gap={fmt(self.relative_gap)}",
               f"tolerance={fmt(self.tolerance)}", f"slater_slack={fmt(self.slater_slack)}",
               f"grid_policies={self.n_policies}"]
        if self.lam_star is not None:
            out.append("lambda_star=" + ",".join(repr(float(x)) for x in self.lam_star))
        return out


def duality_gap(mdp: TabularCmdp, resolution: int = 200, restarts: int = 10, step: float = 0.01,
                iters: int = 10_000, rel_tol: float = 0.05, seed: int = 0,
                max_policies: int = 20_000_000) -> GapReport:
    """Compare the dual minimum ``D*`` with the brute-force constrained optimum ``P*``.

    Constraints with ``c_i <= 0`` hold for every policy; an instance made only of
    those is unconstrained, and ``D* = P* = max V`` with a zero gap.
    """
    if np.any(mdp.c > 1.0 / (1.0 - mdp.gamma)):
        return GapReport("INFEASIBLE", None, None, None, None, rel_tol)
    if mdp.m == 0 or np.all(mdp.c <= 0):
        d = exact_dual(mdp, np.zeros(mdp.m), method="policy_iteration")
        return GapReport("PASS", d.value, d.value, 0.0, 0.0, rel_tol, np.zeros(mdp.m), None, 0)
    bf = brute_force_primal(mdp, resolution, max_policies)
    if not bf.feasible:
        return GapReport("INFEASIBLE", None, None, None, None, rel_tol,
                         slater_slack=bf.slater_slack, n_policies=bf.n_policies)
    if bf.slater_slack <= 0:
        return GapReport("NOT_VERIFIABLE", None, bf.value, None, None, rel_tol,
                         slater_slack=bf.slater_slack, n_policies=bf.n_policies)
    # any multiplier beyond (max V - V(slater policy)) / slack cannot be optimal
    v_max = exact_dual(mdp, np.zeros(mdp.m), method="policy_iteration").value
    scale = max((v_max - bf.slater_value) / bf.slater_slack, 1e-6)
    dm = minimize_dual(mdp, restarts, step, iters, lam_scale=scale, seed=seed)
    gap = dm.value - bf.value
    rel = abs(gap) / max(abs(bf.value), 1e-300)
    status = "PASS" if abs(gap) <= rel_tol * abs(bf.value) else "FAIL"
    return GapReport(status, dm.value, bf.value, gap, rel, rel_tol, dm.lam, bf.slater_slack,
                     bf.n_policies)


# -- exact dual descent ------------------------------------------------------------

def dual_bound_B(mdp: TabularCmdp) -> float:
    """``B = sum_i (1/(1-gamma) - c_i)^2``, a bound on the squared dual gradient norm."""
    return float(np.sum((1.0 / (1.0 - mdp.gamma) - mdp.c) ** 2))


@dataclass
class DescentResult:
    K: int
    lam: np.ndarray
    d_final: float
    target: float
    reached: bool
    d_history: list = field(default_factory=list)


def exact_dual_descent(mdp: TabularCmdp, eta: float, eps: float, P_star: float, lam0=None,
                       max_iter: int = 1_000_000) -> DescentResult:
    """Dual descent with an exact inner maximization.

    Stops at the first ``k`` with ``d(lambda^k) <= P* + eta B / 2 + eps``.
    """
    lam = np.zeros(mdp.m) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    target = P_star + eta * dual_bound_B(mdp) / 2.0 + eps
    hist, start = [], None
    for k in range(max_iter + 1):
        d = exact_dual(mdp, lam, method="policy_iteration", start=start)
        start = d.actions
        hist.append(d.value)
        if d.value <= target:
            return DescentResult(k, lam, d.value, target, True, hist)
        if k == max_iter:
            break
        lam = dual_update(lam, d.U, mdp.c, eta)
    return DescentResult(max_iter, lam, hist[-1], target, False, hist)


# -- sampling adapter ----------------------------------------------------------------

class TabularEnv:
    """Batch environment over a :class:`TabularCmdp`; states are integer indices."""

    def __init__(self, mdp: TabularCmdp):
        self.mdp = mdp
        self.n_constraints = mdp.m
        self._cdf = np.cumsum(mdp.P, axis=2)
        self._p0_cdf = np.cumsum(mdp.p0)

    def contains(self, states) -> np.ndarray:
        s = np.asarray(states)
        return (s >= 0) & (s < self.mdp.n_states)

    def initial_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n)
        return np.minimum((self._p0_cdf[None, :] < u[:, None]).sum(axis=1), self.mdp.n_states - 1)

    def step(self, states, actions, rng: np.random.Generator) -> np.ndarray:
        cdf = self._cdf[states, actions]
        u = rng.random(cdf.shape[0])
        return np.minimum((cdf < u[:, None]).sum(axis=1), self.mdp.n_states - 1)

    def reward(self, states, actions) -> np.ndarray:
        return self.mdp.r[states, actions]

    def safe(self, states) -> np.ndarray:
        return self.mdp.ind[np.asarray(states, dtype=int)].astype(bool)


# -- instance files ------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class _Generation(_Strict):
    seed: int
    reward_scale: float


class TabularModel(_Strict):
    format_version: Literal[1]
    kind: Literal["tabular-cmdp"] = "tabular-cmdp"
    gamma: float = Field(gt=0, lt=1)
    transitions: list[list[list[float]]]
    rewards: list[list[float]]
    indicators: list[list[int]]
    thresholds: list[float]
    initial: list[float]
    generation: Optional[_Generation] = None


def tabular_from_doc(doc: LocatedDoc) -> TabularCmdp:
    model = validate(doc, TabularModel)
    try:
        return TabularCmdp(P=np.asarray(model.transitions), r=np.asarray(model.rewards),
                           ind=np.asarray(model.indicators, dtype=float), gamma=model.gamma,
                           p0=np.asarray(model.initial), c=np.asarray(model.thresholds))
    except (InvalidInputError, InvalidParameterError, ValueError) as exc:
        raise doc.error((), str(exc)) from None


def load_tabular(path) -> TabularCmdp:
    return tabular_from_doc(load_yaml(path))


def parse_tabular(text: str, source: str = "<string>") -> TabularCmdp:
    return tabular_from_doc(parse_yaml(text, source))


def tabular_to_dict(mdp: TabularCmdp, generation: Optional[dict] = None) -> dict:
    doc = {"format_version": TABULAR_VERSION, "kind": "tabular-cmdp", "gamma": float(mdp.gamma),
           "transitions": mdp.P.tolist(), "rewards": mdp.r.tolist(),
           "indicators": mdp.ind.astype(int).tolist(), "thresholds": mdp.c.tolist(),
           "initial": mdp.p0.tolist()}
    if generation is not None:
        doc["generation"] = dict(generation)
    return doc


def dump_tabular(mdp: TabularCmdp, generation: Optional[dict] = None) -> str:
    import yaml
    return yaml.safe_dump(tabular_to_dict(mdp, generation), sort_keys=False,
                          default_flow_style=None)


VERIFICATION_SEED = 0
VERIFICATION_REWARD_SCALE = 10.0


def generate_verification_cmdp(seed: int = VERIFICATION_SEED, n_states: int = 3, n_actions: int = 2,
                               gamma: float = 0.9,
                               reward_scale: float = VERIFICATION_REWARD_SCALE) -> TabularCmdp:
    """Random CMDP with one binding constraint.

    Transitions and the initial distribution are Dirichlet(1) draws, rewards are
    uniform on ``[0, reward_scale)``, and exactly one state is unsafe. The
    threshold sits halfway between the constraint value of the unconstrained
    optimum and the largest attainable constraint value, so it binds while a
    strictly feasible policy exists.
    """
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = reward_scale * rng.random((n_states, n_actions))
    ind = np.ones((n_states, 1))
    ind[rng.integers(n_states), 0] = 0.0
    p0 = rng.dirichlet(np.ones(n_states))
    p0 /= p0.sum()
    base = TabularCmdp(P, r, ind, gamma, p0, np.zeros(1))
    u_free = exact_dual(base, np.zeros(1), method="policy_iteration").U[0]
    u_max, _ = optimal_value(base, np.broadcast_to(ind, (n_states, n_actions)))
    return base.with_thresholds([0.5 * (u_free + u_max)])


def verification_cmdp_text() -> str:
    return resources.files("safepd.data").joinpath("verification_cmdp.yaml").read_text()


def verification_cmdp() -> TabularCmdp:
    return parse_tabular(verification_cmdp_text(), "verification_cmdp.yaml")
