"""Base policy-gradient machinery: value baseline, GAE, REINFORCE gradient,
Fisher matrix, natural-gradient step, and the two Hessian constructions used
for dictionary consolidation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .families import TaskInstance, Trajectory, rollout
from .policies import PolicyParams, features

RIDGE_COEFF = 1e-6
VANISHING_GRAD_TOL = 1e-300


@dataclass
class NPGConfig:
    """Hyper-parameters of the natural policy gradient learner."""

    delta: float = 0.05
    gae_lambda: float = 0.97
    gamma: float = 0.995
    fisher_damping: float | None = None  # None -> scale-aware default

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.fisher_damping is not None and self.fisher_damping <= 0:
            raise ValueError("fisher_damping must be positive")


@dataclass
class ValueBaseline:
    """Linear value predictor over state features, squares, time index, bias."""

    weights: np.ndarray

    def predict(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.weights


@dataclass
class PGBatch:
    """A batch of trajectories with (optionally) filled advantages."""

    trajectories: list[Trajectory]
    task_id: int = 0
    advantages: list[np.ndarray] | None = None

    @property
    def n_traj(self) -> int:
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def stacked_states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories], axis=0)

    def stacked_actions(self) -> np.ndarray:
        return np.concatenate([t.actions for t in self.trajectories], axis=0)

    def stacked_advantages(self) -> np.ndarray:
        if self.advantages is None:
            raise ValueError("advantages not filled")
        return np.concatenate(self.advantages)

    def mean_return(self, gamma: float) -> float:
        from .families import discounted_return
        return float(np.mean([discounted_return(t, gamma) for t in self.trajectories]))


def collect_batch(task: TaskInstance, policy, n_traj: int, rng: np.random.Generator,
                  horizon: int | None = None) -> PGBatch:
    horizon = task.family.horizon if horizon is None else horizon
    trajs = [rollout(task, policy, horizon, rng) for _ in range(n_traj)]
    return PGBatch(trajectories=trajs, task_id=task.task_id)


def value_features(states: np.ndarray, horizon: int) -> np.ndarray:
    """Per-step features for the value fit: state, state^2, t/horizon, 1."""
    n = states.shape[0]
    t_norm = (np.arange(n) / max(horizon, 1)).reshape(-1, 1)
    return np.concatenate([states, states**2, t_norm, np.ones((n, 1))], axis=1)


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def fit_value_baseline(batch: PGBatch, gamma: float) -> ValueBaseline:
    """Ridge-regularized least squares of discounted returns-to-go."""
    if batch.n_traj == 0:
        raise ValueError("empty batch")
    horizon = max(len(t) for t in batch.trajectories)
    X = np.concatenate([value_features(t.states, horizon) for t in batch.trajectories], axis=0)
    y = np.concatenate([returns_to_go(t.rewards, gamma) for t in batch.trajectories])
    w = np.linalg.solve(X.T @ X + RIDGE_COEFF * np.eye(X.shape[1]), X.T @ y)
    return ValueBaseline(weights=w)


def gae_advantages(traj: Trajectory, baseline: ValueBaseline, gamma: float,
                   gae_lambda: float) -> np.ndarray:
    """Raw (unnormalized) GAE advantages for one trajectory; terminal V = 0."""
    horizon = len(traj)
    values = baseline.predict(value_features(traj.states, horizon))
    next_values = np.concatenate([values[1:], [0.0]])
    deltas = traj.rewards + gamma * next_values - values
    adv = np.empty(horizon)
    acc = 0.0
    for i in range(horizon - 1, -1, -1):
        acc = deltas[i] + gamma * gae_lambda * acc
        adv[i] = acc
    return adv


def fill_advantages(batch: PGBatch, baseline: ValueBaseline, cfg: NPGConfig) -> PGBatch:
    """Fill GAE advantages, normalized to mean 0 / std 1 across the batch."""
    raw = [gae_advantages(t, baseline, cfg.gamma, cfg.gae_lambda) for t in batch.trajectories]
    flat = np.concatenate(raw)
    mean, std = flat.mean(), flat.std()
    batch.advantages = [(a - mean) / max(std, 1e-8) for a in raw]
    return batch


def pg_gradient(batch: PGBatch, p: PolicyParams) -> np.ndarray:
    """Episodic REINFORCE estimator: mean over trajectories of sum_i score_i A_i."""
    feats = features(p.feature_map_id, batch.stacked_states())
    scores = p.score_matrix(feats, batch.stacked_actions())
    return scores.T @ batch.stacked_advantages() / batch.n_traj


def default_damping(F_raw: np.ndarray) -> float:
    d = F_raw.shape[0]
    return 1e-6 * np.trace(F_raw) / d + 1e-8


def fisher(batch: PGBatch, p: PolicyParams, damping: float | None = None) -> np.ndarray:
    """Mean score outer product plus damping; symmetric positive definite."""
    feats = features(p.feature_map_id, batch.stacked_states())
    scores = p.score_matrix(feats, batch.stacked_actions())
    F = scores.T @ scores / scores.shape[0]
    if damping is None:
        damping = default_damping(F)
    return F + damping * np.eye(F.shape[0])


def npg_step(g: np.ndarray, F: np.ndarray, delta: float) -> tuple[np.ndarray, float]:
    """Trust-region natural-gradient step; step^T F step = delta when nonzero."""
    y = np.linalg.solve(F, g)
    gy = float(g @ y)
    if gy <= VANISHING_GRAD_TOL:
        return np.zeros_like(g), 0.0
    eta = float(np.sqrt(delta / gy))
    return eta * y, eta


def reinforce_hessian(batch: PGBatch, p: PolicyParams) -> np.ndarray:
    """Linear-Gaussian curvature: block-diagonal over action rows with
    identical blocks -(1/2 sigma^2) (1/N_traj) sum phi phi^T A.

    Not guaranteed negative definite.
    """
    feats = features(p.feature_map_id, batch.stacked_states())
    adv = batch.stacked_advantages()
    block = -(feats.T * adv) @ feats / (2.0 * p.sigma**2 * batch.n_traj)
    d = p.d
    H = np.zeros((d, d))
    f = p.feature_dim
    for j in range(p.action_dim):
        H[j * f:(j + 1) * f, j * f:(j + 1) * f] = block
    return H


def npg_hessian(F: np.ndarray, eta: float) -> np.ndarray:
    """Negative-definite curvature -(1/eta) F from the soft trust-region model."""
    if eta <= 0:
        raise ValueError("no step taken")
    return -F / eta


def stl_train(task: TaskInstance, p0: PolicyParams, cfg: NPGConfig, n_iters: int,
              traj_per_iter: int, rng: np.random.Generator,
              hessian_kind: str = "npg"):
    """Single-task NPG training loop.

    Returns (final policy, learning curve of per-iteration mean returns,
    final gradient g, final curvature H), with (g, H) estimated from one
    fresh batch at the final parameters.
    """
    policy = p0
    curve = []
    for _ in range(n_iters):
        batch = collect_batch(task, policy, traj_per_iter, rng)
        curve.append(batch.mean_return(cfg.gamma))
        baseline = fit_value_baseline(batch, cfg.gamma)
        fill_advantages(batch, baseline, cfg)
        g = pg_gradient(batch, policy)
        F = fisher(batch, policy, cfg.fisher_damping)
        step_vec, _ = npg_step(g, F, cfg.delta)
        policy = policy.with_theta(policy.theta + step_vec)
    g, H = final_grad_and_hess(task, policy, cfg, traj_per_iter, rng, hessian_kind)
    return policy, np.asarray(curve), g, H


def final_grad_and_hess(task: TaskInstance, policy: PolicyParams, cfg: NPGConfig,
                        traj_per_iter: int, rng: np.random.Generator,
                        hessian_kind: str = "npg"):
    """(g, H) at the current parameters from one fresh batch."""
    batch = collect_batch(task, policy, traj_per_iter, rng)
    baseline = fit_value_baseline(batch, cfg.gamma)
    fill_advantages(batch, baseline, cfg)
    g = pg_gradient(batch, policy)
    if hessian_kind == "reinforce":
        return g, reinforce_hessian(batch, policy)
    if hessian_kind != "npg":
        raise ValueError(f"unknown hessian kind {hessian_kind!r}")
    F = fisher(batch, policy, cfg.fisher_damping)
    _, eta = npg_step(g, F, cfg.delta)
    if eta == 0.0:
        # vanished gradient: fall back to unit step scale so H stays definite
        eta = 1.0
    return g, npg_hessian(F, eta)
