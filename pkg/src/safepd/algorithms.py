"""Dual descent and stochastic primal-dual training.

Both algorithms maximize the Lagrangian in ``theta`` by score-function policy
gradient and move the multipliers by projected descent on the dual,

    lambda <- max(0, lambda - eta_lambda * (U_hat - c)),

so a violated constraint (``U_hat < c``) raises its multiplier.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .constraints import ConstraintSpec, as_multipliers, per_step_thresholds, thresholds
from .errors import ConfigError, InvalidInputError, InvalidParameterError, NonFiniteError
from .lagrangian import (DUAL_THRESHOLDS, ESTIMATORS, estimate_constraint,
                         estimate_primal_gradient, lagrangian_return)
from .mdp_core import HorizonSampler, Mode, Streams, rollout, simulate_ragged


@dataclass
class TrainConfig:
    mode: Mode = Mode.CONTINUING
    gamma: float = 0.95
    eta_theta: float = 0.1
    eta_lambda: float = 0.05
    iterations: int = 40000
    inner_iterations: int = 500
    seed: int = 0
    estimator: str = "paper"
    eval_every: int = 4000
    batch_size: int = 1
    horizon: Optional[int] = None        # fixed T for episodic mode
    horizon_cap: Optional[int] = None    # geometric-horizon cap; default 10 gamma/(1-gamma)
    step_decay: bool = False             # scale both step sizes by 1/sqrt(k+1)
    baseline: Optional[float] = None     # constant subtracted from returns
    grad_clip: Optional[float] = None    # max Frobenius norm of the primal gradient estimate
    dual_threshold: str = "fixed"        # or "horizon-matched" (continuing mode)
    fixed_lambda: Optional[float] = None  # freeze all multipliers; disables the dual update

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not (0.0 < self.gamma < 1.0):
            raise InvalidParameterError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        for name in ("eta_theta", "eta_lambda"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be strictly positive")
        if self.iterations < 0 or self.inner_iterations < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidParameterError("iteration counts and batch size must be positive")
        if self.mode is Mode.EPISODIC and (self.horizon is None or self.horizon < 0):
            raise InvalidParameterError("episodic mode needs a nonnegative horizon")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if self.dual_threshold not in DUAL_THRESHOLDS:
            raise ConfigError(f"unknown dual threshold {self.dual_threshold!r}")
        if self.fixed_lambda is not None and self.fixed_lambda < 0:
            raise InvalidParameterError("fixed multiplier value must be nonnegative")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InvalidParameterError("grad_clip must be positive")
        if self.eta_theta < self.eta_lambda:
            warnings.warn("eta_theta < eta_lambda: the primal step is not on the faster timescale",
                          stacklevel=2)


@dataclass
class TraceRecord:
    """One row of the training trace.

    ``kind`` is "iter" for an optimizer step and "eval" for an evaluation
    block. ``lam`` is the multiplier vector after the step.
    """

    kind: str
    iteration: int
    lam: np.ndarray
    u_hat: Optional[np.ndarray] = None
    lagrangian_return: Optional[float] = None
    plain_return: Optional[float] = None
    horizon: Optional[float] = None
    evaluation: Optional[dict] = None


@dataclass
class TrainResult:
    policy: object
    lam: np.ndarray
    trace: list = field(default_factory=list)
    truncations: int = 0
    horizon_draws: int = 0


def dual_update(lam, u_hat, c, eta_lambda: float) -> np.ndarray:
    """Projected dual step ``max(0, lam - eta_lambda (u_hat - c))``."""
    lam = as_multipliers(lam)
    u_hat = np.atleast_1d(np.asarray(u_hat, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if not (lam.shape == u_hat.shape == c.shape):
        raise InvalidInputError(f"dimension mismatch: lambda {lam.shape}, u_hat {u_hat.shape}, c {c.shape}")
    return np.maximum(0.0, lam - eta_lambda * (u_hat - c))


def primal_update(theta, g_hat, eta_theta: float) -> np.ndarray:
    """Gradient ascent step ``theta + eta_theta * g_hat``."""
    theta = np.asarray(theta, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if theta.shape != g_hat.shape:
        raise InvalidInputError(f"shape mismatch: theta {theta.shape}, gradient {g_hat.shape}")
    return theta + eta_theta * g_hat


class _Sampler:
    """Draws trajectories and the per-trajectory estimates both algorithms need."""

    def __init__(self, env, specs, config: TrainConfig):
        self.env = env
        self.specs = list(specs)
        self.config = config
        self.streams = Streams.from_seed(config.seed)
        self.horizons = (HorizonSampler(config.gamma, config.horizon_cap)
                         if config.mode is Mode.CONTINUING else None)
        self.c = thresholds(self.specs)
        self.c_step = per_step_thresholds(self.specs)

    def trajectories(self, policy, n):
        """``n`` rollouts, each with its own horizon."""
        cfg = self.config
        if self.horizons:
            Ts = [self.horizons(self.streams.horizon) for _ in range(n)]
        else:
            Ts = [cfg.horizon] * n
        if n == 1:
            return [rollout(self.env, policy, Ts[0], self.streams.policy,
                            init_rng=self.streams.initial, env_rng=self.streams.env, mode=cfg.mode)]
        return simulate_ragged(self.env, policy, Ts, self.streams.policy,
                               init_rng=self.streams.initial, env_rng=self.streams.env, mode=cfg.mode)

    def dual_terms(self, traj):
        """``(u_hat, c_eff)`` whose difference estimates ``U - c``."""
        u_hat = estimate_constraint(traj, self.config.mode)
        if self.config.mode is Mode.CONTINUING and self.config.dual_threshold == "horizon-matched":
            return u_hat, (traj.horizon + 1) * self.c_step
        return u_hat, self.c

    def batch(self, policy, lam, with_gradient=True):
        cfg = self.config
        g = None
        u_sum = np.zeros(len(self.specs))
        c_sum = np.zeros(len(self.specs))
        L = P = H = 0.0
        for traj in self.trajectories(policy, cfg.batch_size):
            if with_gradient:
                gi = estimate_primal_gradient(traj, policy, lam, self.specs, cfg.mode,
                                              variant=cfg.estimator, baseline=cfg.baseline)
                g = gi if g is None else g + gi
            u, c = self.dual_terms(traj)
            u_sum += u
            c_sum += c
            lr = lagrangian_return(traj, lam, self.specs, cfg.mode)
            L += lr.total
            P += lr.plain
            H += traj.horizon
        n = cfg.batch_size
        if g is not None:
            g = g / n
            if cfg.grad_clip is not None:
                norm = float(np.linalg.norm(g))
                if norm > cfg.grad_clip:
                    g = g * (cfg.grad_clip / norm)
        return g, u_sum / n, c_sum / n, L / n, P / n, H / n


def _initial_multipliers(m: int, config: TrainConfig) -> np.ndarray:
    if config.fixed_lambda is not None:
        return np.full(m, float(config.fixed_lambda))
    return np.zeros(m)


def _step_sizes(config: TrainConfig, k: int) -> tuple[float, float]:
    if config.step_decay:
        s = 1.0 / math.sqrt(k + 1)
        return config.eta_theta * s, config.eta_lambda * s
    return config.eta_theta, config.eta_lambda


def _guard(policy, lam, trace, k):
    if not (np.all(np.isfinite(policy.theta)) and np.all(np.isfinite(lam))):
        raise NonFiniteError(f"non-finite parameters or multipliers at iteration {k}", trace)


def _emit(record, trace, sink):
    if np.any(record.lam < 0):
        raise AssertionError(f"negative multiplier recorded at iteration {record.iteration}")
    trace.append(record)
    if sink is not None:
        sink(record)


def _maybe_evaluate(k, config, policy, lam, evaluate, trace, sink):
    done = k + 1
    if evaluate is not None and (done % config.eval_every == 0 or done == config.iterations):
        _emit(TraceRecord("eval", done, lam.copy(), evaluation=evaluate(policy, done)), trace, sink)


def run_stochastic_primal_dual(env, policy, specs: Sequence[ConstraintSpec], config: TrainConfig,
                               *, evaluate: Optional[Callable] = None,
                               sink: Optional[Callable] = None) -> TrainResult:
    """Simultaneous primal ascent and dual descent, one batch of trajectories per step.

    ``policy`` is updated in place. ``evaluate(policy, iteration)`` runs every
    ``eval_every`` iterations and at the end; its dict lands in the trace.
    """
    sampler = _Sampler(env, specs, config)
    lam = _initial_multipliers(len(sampler.specs), config)
    trace: list = []
    for k in range(config.iterations):
        eta_t, eta_l = _step_sizes(config, k)
        g, u, c, L, P, H = sampler.batch(policy, lam)
        policy.theta = primal_update(policy.theta, g, eta_t)
        if config.fixed_lambda is None:
            lam = dual_update(lam, u, c, eta_l)
        _guard(policy, lam, trace, k)
        _emit(TraceRecord("iter", k, lam.copy(), u, L, P, H), trace, sink)
        _maybe_evaluate(k, config, policy, lam, evaluate, trace, sink)
    h = sampler.horizons
    return TrainResult(policy, lam, trace, h.truncations if h else 0, h.draws if h else 0)


def run_dual_descent(env, policy, specs: Sequence[ConstraintSpec], config: TrainConfig,
                     *, evaluate: Optional[Callable] = None,
                     sink: Optional[Callable] = None) -> TrainResult:
    """Outer dual descent; each outer step approximately maximizes the Lagrangian.

    The inner maximization is ``inner_iterations`` policy-gradient steps at the
    current multipliers. The dual step then uses a fresh batch estimate of
    ``U`` at the new parameters.
    """
    sampler = _Sampler(env, specs, config)
    lam = _initial_multipliers(len(sampler.specs), config)
    trace: list = []
    for k in range(config.iterations):
        eta_t, eta_l = _step_sizes(config, k)
        for _ in range(config.inner_iterations):
            g = sampler.batch(policy, lam)[0]
            policy.theta = primal_update(policy.theta, g, eta_t)
        _, u, c, L, P, H = sampler.batch(policy, lam, with_gradient=False)
        if config.fixed_lambda is None:
            lam = dual_update(lam, u, c, eta_l)
        _guard(policy, lam, trace, k)
        _emit(TraceRecord("iter", k, lam.copy(), u, L, P, H), trace, sink)
        _maybe_evaluate(k, config, policy, lam, evaluate, trace, sink)
    h = sampler.horizons
    return TrainResult(policy, lam, trace, h.truncations if h else 0, h.draws if h else 0)
