"""Gaussian policies over linear feature maps and factored composition.

The policy mean is ``W @ phi(state)`` where ``W`` is ``action_dim x feature_dim``
and ``phi`` is one of the registered feature maps. Parameters are handled as a
flat vector ``theta`` (row-major flattening of ``W``), which is what the
factored representation ``theta = L @ s`` operates on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

FEATURE_MAPS = ("raw_state", "state_bias")


def feature_dim(feature_map_id: str, state_dim: int) -> int:
    if feature_map_id == "raw_state":
        return state_dim
    if feature_map_id == "state_bias":
        return state_dim + 1
    raise ValueError(f"unknown feature map {feature_map_id!r}")


def features(feature_map_id: str, state: np.ndarray) -> np.ndarray:
    """Map a state (or a stacked batch of states) to policy features."""
    state = np.asarray(state, dtype=float)
    if feature_map_id == "raw_state":
        return state
    if feature_map_id == "state_bias":
        if state.ndim == 1:
            return np.concatenate([state, [1.0]])
        return np.concatenate([state, np.ones((state.shape[0], 1))], axis=1)
    raise ValueError(f"unknown feature map {feature_map_id!r}")


@dataclass(frozen=True)
class PolicyParams:
    """Flat-parameter linear Gaussian policy.

    ``theta`` is the row-major flattening of the ``action_dim x feature_dim``
    weight matrix; ``sigma`` is a single exploration scale shared across
    action dimensions and excluded from ``theta``.
    """

    theta: np.ndarray
    sigma: float
    action_dim: int
    feature_map_id: str = "raw_state"

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1:
            raise ValueError("theta must be a flat vector")
        if theta.size % self.action_dim != 0:
            raise ValueError("theta size incompatible with action_dim")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta entries must be finite")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def feature_dim(self) -> int:
        return self.theta.size // self.action_dim

    @property
    def weights(self) -> np.ndarray:
        return self.theta.reshape(self.action_dim, self.feature_dim)

    def mean_action(self, feats: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(feats, dtype=float)

    def sample(self, feats: np.ndarray, rng: np.random.Generator):
        """Draw an action and return it with its log-probability."""
        mean = self.mean_action(feats)
        action = mean + self.sigma * rng.standard_normal(self.action_dim)
        return action, self.log_prob(feats, action)

    def act(self, state: np.ndarray, rng: np.random.Generator):
        """Sample an action directly from a raw state."""
        return self.sample(features(self.feature_map_id, state), rng)

    def log_prob(self, feats: np.ndarray, action: np.ndarray) -> float:
        mean = self.mean_action(feats)
        z = (np.asarray(action, dtype=float) - mean) / self.sigma
        m = self.action_dim
        return float(-0.5 * (z @ z) - m * math.log(self.sigma) - 0.5 * m * LOG_2PI)

    def grad_log_prob(self, feats: np.ndarray, action: np.ndarray) -> np.ndarray:
        """Score vector w.r.t. theta, row-major layout."""
        feats = np.asarray(feats, dtype=float)
        mean = self.mean_action(feats)
        resid = (np.asarray(action, dtype=float) - mean) / self.sigma**2
        return np.outer(resid, feats).ravel()

    def score_matrix(self, feats_batch: np.ndarray, actions_batch: np.ndarray) -> np.ndarray:
        """Scores for a stacked batch: returns (n_steps, d)."""
        feats_batch = np.asarray(feats_batch, dtype=float)
        actions_batch = np.asarray(actions_batch, dtype=float)
        resid = (actions_batch - feats_batch @ self.weights.T) / self.sigma**2
        return np.einsum("na,nf->naf", resid, feats_batch).reshape(feats_batch.shape[0], -1)

    def with_theta(self, theta: np.ndarray) -> "PolicyParams":
        return PolicyParams(theta=np.asarray(theta, dtype=float), sigma=self.sigma,
                            action_dim=self.action_dim, feature_map_id=self.feature_map_id)

    def to_json(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "sigma": self.sigma,
            "action_dim": self.action_dim,
            "feature_map_id": self.feature_map_id,
        }

    @staticmethod
    def from_json(obj: dict) -> "PolicyParams":
        return PolicyParams(theta=np.asarray(obj["theta"], dtype=float), sigma=obj["sigma"],
                            action_dim=obj["action_dim"], feature_map_id=obj["feature_map_id"])


@dataclass
class FactoredPolicy:
    """Dictionary-factored parameters theta = L @ s (+ epsilon during init)."""

    L: np.ndarray
    s: np.ndarray
    sigma: float
    epsilon: np.ndarray | None = None

    def compose(self) -> np.ndarray:
        theta = self.L @ self.s if self.L.size else np.zeros(self.L.shape[0])
        if self.epsilon is not None:
            theta = theta + self.epsilon
        return theta


def compose_policy(L: np.ndarray, s: np.ndarray, epsilon: np.ndarray | None,
                   sigma: float, action_dim: int, feature_map_id: str = "raw_state") -> PolicyParams:
    """Build a flat policy from dictionary L, coefficients s and optional epsilon."""
    L = np.asarray(L, dtype=float)
    s = np.asarray(s, dtype=float)
    if L.ndim != 2 or s.ndim != 1 or L.shape[1] != s.size:
        raise ValueError(f"shape mismatch: L {L.shape}, s {s.shape}")
    theta = L @ s if s.size else np.zeros(L.shape[0])
    if epsilon is not None:
        epsilon = np.asarray(epsilon, dtype=float)
        if epsilon.shape != (L.shape[0],):
            raise ValueError(f"shape mismatch: epsilon {epsilon.shape}, d={L.shape[0]}")
        theta = theta + epsilon
    return PolicyParams(theta=theta, sigma=sigma, action_dim=action_dim,
                        feature_map_id=feature_map_id)


class MlpPolicy:
    """Two-layer tanh Gaussian policy behind the same flat-parameter layout.

    Smoke-test configuration only; the linear policy is the supported path.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: int, sigma: float,
                 theta: np.ndarray | None = None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self.sigma = sigma
        self.n_w1 = hidden * state_dim
        self.n_b1 = hidden
        self.n_w2 = action_dim * hidden
        self.n_b2 = action_dim
        self.d = self.n_w1 + self.n_b1 + self.n_w2 + self.n_b2
        self.theta = np.zeros(self.d) if theta is None else np.asarray(theta, dtype=float)

    def _unpack(self):
        t = self.theta
        i = 0
        w1 = t[i:i + self.n_w1].reshape(self.hidden, self.state_dim); i += self.n_w1
        b1 = t[i:i + self.n_b1]; i += self.n_b1
        w2 = t[i:i + self.n_w2].reshape(self.action_dim, self.hidden); i += self.n_w2
        b2 = t[i:i + self.n_b2]
        return w1, b1, w2, b2

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack()
        h = np.tanh(w1 @ state + b1)
        return w2 @ h + b2

    def sample(self, state: np.ndarray, rng: np.random.Generator):
        mean = self.mean_action(state)
        action = mean + self.sigma * rng.standard_normal(self.action_dim)
        return action, self.log_prob(state, action)

    def act(self, state: np.ndarray, rng: np.random.Generator):
        return self.sample(state, rng)

    def log_prob(self, state: np.ndarray, action: np.ndarray) -> float:
        z = (np.asarray(action, dtype=float) - self.mean_action(state)) / self.sigma
        m = self.action_dim
        return float(-0.5 * (z @ z) - m * math.log(self.sigma) - 0.5 * m * LOG_2PI)

    def grad_log_prob(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack()
        pre = w1 @ state + b1
        h = np.tanh(pre)
        mean = w2 @ h + b2
        dmean = (np.asarray(action, dtype=float) - mean) / self.sigma**2
        g_w2 = np.outer(dmean, h)
        g_b2 = dmean
        dh = w2.T @ dmean
        dpre = dh * (1.0 - h**2)
        g_w1 = np.outer(dpre, state)
        g_b1 = dpre
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])

    def with_theta(self, theta: np.ndarray) -> "MlpPolicy":
        return MlpPolicy(self.state_dim, self.action_dim, self.hidden, self.sigma, theta)
