"""Gaussian policies with a radial-basis-function mean, plus a tabular softmax policy.

The RBF policy draws ``a ~ Normal(mu(s), Sigma)`` with

    mu(s) = theta.T @ phi(s),   phi_i(s) = exp(-||s - center_i||^2 / (2 sigma^2))

``theta`` has one row per center and one column per action dimension. The
covariance is diagonal and fixed; only ``theta`` is learned.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, InvalidInputError, InvalidParameterError

CHECKPOINT_FORMAT = "safepd-policy"
CHECKPOINT_VERSION = 1


@dataclass
class RbfGrid:
    centers: np.ndarray
    sigma: float
    cutoff: Optional[float] = None  # features below this are zeroed (opt-in)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if self.centers.shape[0] == 0:
            raise InvalidParameterError("RBF grid needs at least one center")
        if not self.sigma > 0:
            raise InvalidParameterError(f"RBF bandwidth must be positive, got {self.sigma!r}")
        self._c2 = (self.centers * self.centers).sum(axis=1)

    @classmethod
    def lattice(cls, low: Sequence[float], high: Sequence[float], spacing: float,
                sigma: float, cutoff: Optional[float] = None) -> "RbfGrid":
        """Uniform lattice over the box ``[low, high]``, both ends included."""
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        if spacing <= 0:
            raise InvalidParameterError(f"spacing must be positive, got {spacing!r}")
        axes = []
        for lo, hi in zip(low, high):
            k = int(round((hi - lo) / spacing))
            axes.append(lo + spacing * np.arange(k + 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(centers=centers, sigma=float(sigma), cutoff=cutoff)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def features(self, states) -> np.ndarray:
        """Feature matrix of shape ``(n, num_centers)`` for a batch of states."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        # ||s - c||^2 expanded so the cross term is one matrix product
        d2 = (s * s).sum(axis=1)[:, None] + self._c2[None, :] - 2.0 * (s @ self.centers.T)
        phi = np.exp(-np.maximum(d2, 0.0) / (2.0 * self.sigma ** 2))
        if self.cutoff is not None:
            phi[phi < self.cutoff] = 0.0
        return phi


def rbf_features(state, grid: RbfGrid) -> np.ndarray:
    return grid.features(np.asarray(state, dtype=float)[None])[0]


@dataclass
class RbfGaussianPolicy:
    grid: RbfGrid
    theta: np.ndarray
    cov_diag: np.ndarray
    mean_only: bool = False

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.cov_diag = np.asarray(self.cov_diag, dtype=float)
        if self.theta.ndim != 2 or self.theta.shape[0] != self.grid.size:
            raise InvalidInputError(
                f"theta must have shape (num_centers={self.grid.size}, action_dim), "
                f"got {self.theta.shape}")
        if self.cov_diag.shape != (self.theta.shape[1],):
            raise InvalidInputError("covariance diagonal must have one entry per action dimension")
        if not np.all(self.cov_diag > 0):
            raise InvalidParameterError("covariance diagonal entries must be strictly positive")

    @classmethod
    def zeros(cls, grid: RbfGrid, action_dim: int, cov_diag, **kw) -> "RbfGaussianPolicy":
        return cls(grid=grid, theta=np.zeros((grid.size, action_dim)), cov_diag=cov_diag, **kw)

    @property
    def action_dim(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> "RbfGaussianPolicy":
        return RbfGaussianPolicy(self.grid, self.theta.copy(), self.cov_diag.copy(), self.mean_only)

    def mean(self, states) -> np.ndarray:
        return self.grid.features(states) @ self.theta

    def sample(self, states, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(states)
        if self.mean_only:
            return mu
        return mu + np.sqrt(self.cov_diag) * rng.standard_normal(mu.shape)

    def log_density(self, state, action) -> float:
        z = np.asarray(action, dtype=float) - self.mean(np.asarray(state)[None])[0]
        d = self.action_dim
        return float(-0.5 * (d * np.log(2.0 * np.pi) + np.sum(np.log(self.cov_diag))
                             + np.sum(z * z / self.cov_diag)))

    def score(self, state, action) -> np.ndarray:
        """Gradient of ``log_density`` with respect to ``theta``."""
        phi = rbf_features(state, self.grid)
        z = (np.asarray(action, dtype=float) - phi @ self.theta) / self.cov_diag
        return np.outer(phi, z)

    def weighted_score_sum(self, states, actions, weights) -> np.ndarray:
        """``sum_t weights[t] * score(states[t], actions[t])`` in one pass."""
        phi = self.grid.features(states)
        z = (np.asarray(actions, dtype=float) - phi @ self.theta) / self.cov_diag
        return phi.T @ (np.asarray(weights, dtype=float)[:, None] * z)


def mean_action(policy: RbfGaussianPolicy, state) -> np.ndarray:
    return policy.mean(np.asarray(state)[None])[0]


def sample_action(policy: RbfGaussianPolicy, state, rng: np.random.Generator) -> np.ndarray:
    return policy.sample(np.asarray(state)[None], rng)[0]


def log_density(policy, state, action) -> float:
    return policy.log_density(state, action)


def score(policy, state, action) -> np.ndarray:
    return policy.score(state, action)


@dataclass
class SoftmaxTabularPolicy:
    """Softmax over per-state logits ``theta[s, a]``; used on finite test MDPs."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 2:
            raise InvalidInputError("tabular logits must be an (n_states, n_actions) array")

    def copy(self) -> "SoftmaxTabularPolicy":
        return SoftmaxTabularPolicy(self.theta.copy())

    def table(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def probs(self, states) -> np.ndarray:
        return self.table()[np.asarray(states, dtype=int)]

    def sample(self, states, rng: np.random.Generator) -> np.ndarray:
        p = self.probs(states)
        u = rng.random(p.shape[0])
        a = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
        return np.minimum(a, p.shape[1] - 1)

    def log_density(self, state, action) -> float:
        return float(np.log(self.table()[int(state), int(action)]))

    def score(self, state, action) -> np.ndarray:
        g = np.zeros_like(self.theta)
        g[int(state)] = -self.table()[int(state)]
        g[int(state), int(action)] += 1.0
        return g

    def weighted_score_sum(self, states, actions, weights) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        w = np.asarray(weights, dtype=float)
        g = np.zeros_like(self.theta)
        np.add.at(g, states, -w[:, None] * self.table()[states])
        np.add.at(g, (states, actions), w)
        return g


# -- checkpoints ---------------------------------------------------------------

def policy_to_dict(policy: RbfGaussianPolicy) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "kind": "rbf_gaussian",
        "grid": {"sigma": policy.grid.sigma, "cutoff": policy.grid.cutoff,
                 "centers": policy.grid.centers.tolist()},
        "covariance_diag": policy.cov_diag.tolist(),
        "num_centers": policy.grid.size,
        "action_dim": policy.action_dim,
        "theta": policy.theta.ravel(order="C").tolist(),
    }


def policy_from_dict(doc: dict) -> RbfGaussianPolicy:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a policy checkpoint")
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"incompatible checkpoint format_version {version!r} (this build reads {CHECKPOINT_VERSION})")
    if doc.get("kind") != "rbf_gaussian":
        raise CheckpointError(f"unsupported policy kind {doc.get('kind')!r}")
    try:
        g = doc["grid"]
        grid = RbfGrid(centers=np.asarray(g["centers"], dtype=float), sigma=float(g["sigma"]),
                       cutoff=g.get("cutoff"))
        k, d = int(doc["num_centers"]), int(doc["action_dim"])
        flat = np.asarray(doc["theta"], dtype=float)
        if grid.size != k or flat.size != k * d:
            raise CheckpointError(
                f"theta has {flat.size} entries, expected num_centers * action_dim = {k * d}")
        policy = RbfGaussianPolicy(grid=grid, theta=flat.reshape(k, d),
                                   cov_diag=np.asarray(doc["covariance_diag"], dtype=float))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint: {exc}") from exc
    if not (np.all(np.isfinite(policy.theta)) and np.all(np.isfinite(grid.centers))):
        raise CheckpointError("corrupted checkpoint: non-finite parameters")
    return policy


def save_checkpoint(policy: RbfGaussianPolicy, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(policy_to_dict(policy)))
    tmp.replace(path)


def load_checkpoint(path) -> RbfGaussianPolicy:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return policy_from_dict(doc)
