"""Environment interface, trajectories, rollouts and random-horizon sampling.

Environments and policies are batch-first: every state-dependent method takes
an array whose leading axis indexes independent rollouts. A single rollout is
simply a batch of one.

Sampling the horizon ``T`` from ``P(T = t) = (1 - gamma) gamma**t`` gives
``P(T >= t) = gamma**t``, so the *undiscounted* sum of a per-step quantity over
``t = 0..T`` is an unbiased estimate of its discounted infinite sum.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol

import numpy as np

from .errors import InvalidInputError, InvalidParameterError


class Mode(str, Enum):
    EPISODIC = "episodic"
    CONTINUING = "continuing"


class Environment(Protocol):
    """What the rollout machinery needs from an MDP.

    ``safe`` returns an ``(n, m)`` boolean array, one column per safe set.
    """

    n_constraints: int

    def initial_states(self, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, states: np.ndarray, actions: np.ndarray,
             rng: np.random.Generator) -> np.ndarray: ...

    def reward(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray: ...

    def safe(self, states: np.ndarray) -> np.ndarray: ...

    def contains(self, states: np.ndarray) -> np.ndarray: ...


class StochasticPolicy(Protocol):
    theta: np.ndarray

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def log_density(self, state, action) -> float: ...

    def score(self, state, action) -> np.ndarray: ...

    def weighted_score_sum(self, states, actions, weights) -> np.ndarray: ...


@dataclass
class Trajectory:
    """One rollout of ``horizon + 1`` steps indexed ``0..horizon``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    indicators: np.ndarray
    horizon: int
    mode: Optional[Mode] = None

    def __post_init__(self):
        n = self.horizon + 1
        for name in ("states", "actions", "rewards", "indicators"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(
                    f"trajectory field {name!r} has length {len(getattr(self, name))}, "
                    f"expected horizon + 1 = {n}")
        if self.indicators.ndim != 2:
            raise InvalidInputError("indicators must be a (horizon + 1, m) array")

    @property
    def n_constraints(self) -> int:
        return self.indicators.shape[1]


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for the named purpose, derived from one 64-bit seed."""
    key = (zlib.crc32(name.encode()),) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass
class Streams:
    """Named random streams so that each consumer draws independently of the others."""

    horizon: np.random.Generator
    policy: np.random.Generator
    initial: np.random.Generator
    env: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, *extra: int) -> "Streams":
        return cls(horizon=substream(seed, "horizon", *extra),
                   policy=substream(seed, "policy", *extra),
                   initial=substream(seed, "initial", *extra),
                   env=substream(seed, "env", *extra))


def _check_gamma(gamma: float) -> None:
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError(f"gamma must lie in (0, 1), got {gamma!r}")


def default_horizon_cap(gamma: float) -> int:
    """Hard cap on geometric horizons: ten times the mean ``gamma / (1 - gamma)``."""
    _check_gamma(gamma)
    return max(1, int(np.ceil(10.0 * gamma / (1.0 - gamma))))


def sample_geometric_horizon(gamma: float, rng: np.random.Generator,
                             cap: Optional[int] = None) -> int:
    """Draw ``T >= 0`` with ``P(T = t) = (1 - gamma) * gamma**t``.

    When ``cap`` is given the draw is truncated to ``min(T, cap)``; callers that
    need to count truncations compare the result with the cap themselves.
    """
    _check_gamma(gamma)
    # numpy's geometric counts trials up to the first success (support >= 1)
    t = int(rng.geometric(1.0 - gamma)) - 1
    if cap is not None:
        t = min(t, int(cap))
    return t


class HorizonSampler:
    """Geometric horizon sampler with a hard cap and a truncation counter."""

    def __init__(self, gamma: float, cap: Optional[int] = None):
        _check_gamma(gamma)
        self.gamma = gamma
        self.cap = default_horizon_cap(gamma) if cap is None else int(cap)
        self.truncations = 0
        self.draws = 0

    def __call__(self, rng: np.random.Generator) -> int:
        t = sample_geometric_horizon(self.gamma, rng)
        self.draws += 1
        if t > self.cap:
            self.truncations += 1
            t = self.cap
        return t


def simulate(env: Environment, policy: StochasticPolicy, horizon: int, n: int,
             rng: np.random.Generator, *, init_rng: Optional[np.random.Generator] = None,
             env_rng: Optional[np.random.Generator] = None,
             initial_states: Optional[np.ndarray] = None):
    """Run ``n`` rollouts of ``horizon + 1`` steps in lockstep.

    Returns ``(states, actions, rewards, indicators)`` with a leading batch axis
    and a time axis of length ``horizon + 1``.
    """
    if horizon < 0:
        raise InvalidParameterError(f"horizon must be nonnegative, got {horizon}")
    init_rng = rng if init_rng is None else init_rng
    env_rng = rng if env_rng is None else env_rng
    s = (env.initial_states(n, init_rng) if initial_states is None
         else np.asarray(initial_states))
    states, actions, rewards, inds = [], [], [], []
    for t in range(horizon + 1):
        a = policy.sample(s, rng)
        states.append(s)
        actions.append(a)
        rewards.append(env.reward(s, a))
        inds.append(env.safe(s))
        if t < horizon:
            s = env.step(s, a, env_rng)
    return (np.stack(states, axis=1), np.stack(actions, axis=1),
            np.stack(rewards, axis=1), np.stack(inds, axis=1))


def simulate_ragged(env: Environment, policy: StochasticPolicy, horizons, rng: np.random.Generator,
                    *, init_rng: Optional[np.random.Generator] = None,
                    env_rng: Optional[np.random.Generator] = None, mode: Optional[Mode] = None):
    """Rollouts with individual horizons, advanced in lockstep while still running.

    Rollouts are ordered by decreasing horizon internally so the running ones
    always form a prefix of the batch; no work is spent past a rollout's
    horizon. Returns a list of :class:`Trajectory` in the order of ``horizons``.
    """
    Ts = np.asarray(horizons, dtype=int)
    if Ts.ndim != 1 or Ts.size == 0 or np.any(Ts < 0):
        raise InvalidParameterError("horizons must be a non-empty list of nonnegative integers")
    init_rng = rng if init_rng is None else init_rng
    env_rng = rng if env_rng is None else env_rng
    n, H = Ts.shape[0], int(Ts.max())
    order = np.argsort(-Ts, kind="stable")
    live = (Ts[order][None, :] >= np.arange(H + 1)[:, None]).sum(axis=1)
    s = np.asarray(env.initial_states(n, init_rng))[order]
    S = A = R = I = None
    for t in range(H + 1):
        k = live[t]
        s = s[:k]
        a = policy.sample(s, rng)
        r, ind = env.reward(s, a), env.safe(s)
        if S is None:
            S = np.zeros((n, H + 1) + s.shape[1:], dtype=s.dtype)
            A = np.zeros((n, H + 1) + a.shape[1:], dtype=a.dtype)
            R = np.zeros((n, H + 1))
            I = np.zeros((n, H + 1) + ind.shape[1:], dtype=bool)
        S[:k, t], A[:k, t], R[:k, t], I[:k, t] = s, a, r, ind
        if t < H:
            nxt = live[t + 1]
            s = env.step(s[:nxt], a[:nxt], env_rng)
    out = [None] * n
    for p, i in enumerate(order):
        T = int(Ts[i])
        out[i] = Trajectory(states=S[p, :T + 1], actions=A[p, :T + 1], rewards=R[p, :T + 1],
                            indicators=I[p, :T + 1], horizon=T,
                            mode=None if mode is None else Mode(mode))
    return out


def rollout(env: Environment, policy: StochasticPolicy, horizon: int,
            rng: np.random.Generator, *, init_rng: Optional[np.random.Generator] = None,
            env_rng: Optional[np.random.Generator] = None, initial_state=None,
            mode: Optional[Mode] = None) -> Trajectory:
    """Simulate a single trajectory of ``horizon + 1`` steps under ``policy``."""
    s0 = None if initial_state is None else np.asarray(initial_state)[None]
    S, A, R, I = simulate(env, policy, horizon, 1, rng, init_rng=init_rng,
                          env_rng=env_rng, initial_states=s0)
    return Trajectory(states=S[0], actions=A[0], rewards=R[0], indicators=I[0],
                      horizon=int(horizon), mode=None if mode is None else Mode(mode))
