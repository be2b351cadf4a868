"""Safety constraints, their slacks and thresholds, and joint-safety certificates.

Episodic constraints bound the time-averaged membership probability,
``(1/(T+1)) sum_t P(s_t in S_i) >= c``; with slack ``eps = delta T/(T+1)`` the
threshold is ``c = 1 - delta/(T+1)`` and any feasible policy stays in ``S_i``
for all ``t <= T`` with probability at least ``1 - delta``.

Discounted constraints bound ``sum_t gamma^t P(s_t in S_i) >= c`` with
``c = (1 - delta + eps)/(1 - gamma)`` and ``eps = delta (1 - gamma^T_i (1 - gamma))``;
feasible policies are then ``(1 - delta)``-safe up to time ``T_i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, PreconditionError
from .mdp_core import Mode


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0):
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta!r}")


def slack_episodic(delta: float, T: int) -> tuple[float, float]:
    """Return ``(epsilon, c)`` for an episodic constraint over steps ``0..T``."""
    _check_delta(delta)
    if T < 0 or int(T) != T:
        raise InvalidParameterError(f"T must be a nonnegative integer, got {T!r}")
    eps = delta * T / (T + 1)
    return eps, 1.0 - delta / (T + 1)


def slack_discounted(delta: float, gamma: float, T_safe: int) -> tuple[float, float]:
    """Return ``(epsilon, c)`` for a discounted constraint guaranteeing safety up to ``T_safe``."""
    _check_delta(delta)
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError(f"gamma must lie in (0, 1), got {gamma!r}")
    if T_safe < 0 or int(T_safe) != T_safe:
        raise InvalidParameterError(f"T_safe must be a nonnegative integer, got {T_safe!r}")
    eps = delta * (1.0 - gamma ** T_safe * (1.0 - gamma))
    return eps, (1.0 - delta + eps) / (1.0 - gamma)


@dataclass(frozen=True)
class ConstraintSpec:
    """One safe set with its threshold.

    ``source`` records whether ``c`` came from the slack formulas ("slack")
    or was supplied directly ("raw"); raw specs may leave ``delta`` unset.
    """

    index: int
    name: str
    mode: Mode
    c: float
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    T: Optional[int] = None
    gamma: Optional[float] = None
    T_safe: Optional[int] = None
    source: str = "slack"

    def __post_init__(self):
        if self.delta is not None:
            _check_delta(self.delta)
            if self.epsilon is not None and not (0.0 <= self.epsilon < self.delta):
                raise InvalidParameterError("epsilon must lie in [0, delta)")
        if self.mode is Mode.CONTINUING:
            if self.gamma is None or not (0.0 < self.gamma < 1.0):
                raise InvalidParameterError("discounted constraints need gamma in (0, 1)")
            if not self.c < 1.0 / (1.0 - self.gamma):
                raise InvalidParameterError(
                    f"threshold c={self.c!r} is not below 1/(1-gamma)={1.0 / (1.0 - self.gamma)!r}; "
                    "no policy can satisfy it")
        elif not self.c <= 1.0:
            raise InvalidParameterError(f"episodic threshold c={self.c!r} exceeds 1")

    @classmethod
    def episodic(cls, index: int, name: str, delta: float, T: int) -> "ConstraintSpec":
        eps, c = slack_episodic(delta, T)
        return cls(index=index, name=name, mode=Mode.EPISODIC, c=c, delta=delta,
                   epsilon=eps, T=int(T))

    @classmethod
    def discounted(cls, index: int, name: str, delta: float, gamma: float,
                   T_safe: int) -> "ConstraintSpec":
        eps, c = slack_discounted(delta, gamma, T_safe)
        return cls(index=index, name=name, mode=Mode.CONTINUING, c=c, delta=delta,
                   epsilon=eps, gamma=gamma, T_safe=int(T_safe))

    @classmethod
    def raw(cls, index: int, name: str, c: float, mode, gamma: Optional[float] = None,
            delta: Optional[float] = None, T: Optional[int] = None) -> "ConstraintSpec":
        return cls(index=index, name=name, mode=Mode(mode), c=float(c), delta=delta,
                   gamma=gamma, T=T, source="raw")

    @property
    def c_per_step(self) -> float:
        """Per-step share of the threshold used in the penalized reward."""
        if self.mode is Mode.CONTINUING:
            return self.c * (1.0 - self.gamma)
        return self.c

    def to_dict(self) -> dict:
        return {"index": self.index, "name": self.name, "mode": self.mode.value, "c": self.c,
                "delta": self.delta, "epsilon": self.epsilon, "T": self.T,
                "gamma": self.gamma, "T_safe": self.T_safe, "source": self.source}


def thresholds(specs: Sequence[ConstraintSpec]) -> np.ndarray:
    return np.array([s.c for s in specs], dtype=float)


def per_step_thresholds(specs: Sequence[ConstraintSpec]) -> np.ndarray:
    return np.array([s.c_per_step for s in specs], dtype=float)


def as_multipliers(lam, m: Optional[int] = None) -> np.ndarray:
    """Validate a multiplier vector: finite, nonnegative, of length ``m``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1 or (m is not None and lam.shape[0] != m):
        raise InvalidInputError(f"expected {m} multipliers, got shape {lam.shape}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise InvalidParameterError("multipliers must be finite and nonnegative")
    return lam


def certify_joint_safety(mu, probs, mu_prime: float, k: int) -> float:
    """Certified ``delta`` such that ``P(E_0 and ... and E_k) >= 1 - delta``.

    Given non-increasing positive weights ``mu_t`` and event probabilities
    ``P(E_t)``, the smallest ``delta`` satisfying
    ``sum mu_t P(E_t) >= sum mu_t - mu_prime * delta`` is
    ``(sum mu_t - sum mu_t P(E_t)) / mu_prime``; it is valid whenever
    ``mu_prime <= mu_k``.
    """
    mu = np.asarray(mu, dtype=float)
    p = np.asarray(probs, dtype=float)
    if mu.ndim != 1 or mu.shape != p.shape:
        raise InvalidInputError("weights and probabilities must be 1-d and of equal length")
    if not (0 <= k < mu.shape[0]):
        raise PreconditionError(f"k={k} outside 0..{mu.shape[0] - 1}")
    if np.any(mu <= 0) or np.any(np.diff(mu) > 0):
        raise PreconditionError("weights must be positive and non-increasing")
    if not (0 < mu_prime <= mu[k]):
        raise PreconditionError(f"mu_prime={mu_prime!r} must lie in (0, mu[k]={mu[k]!r}]")
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    return float(np.sum(mu * (1.0 - p)) / mu_prime)
