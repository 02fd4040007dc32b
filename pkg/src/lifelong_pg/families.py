"""Self-contained continuous-control task families.

Two families with parametric variation:

* ``lqr`` -- linear dynamics with quadratic cost. Admits an exact
  optimal-policy oracle via discounted Riccati value iteration, which the
  benchmark uses as ground truth.
* ``point_mass`` -- a 2-D point mass under scaled gravity, semi-implicit
  Euler integration, velocity-bonus-minus-control-cost reward.

Tasks are drawn i.i.d. from a family by sampling each variation coefficient
uniformly from its declared interval. Rollouts are pure functions of
(task, policy, seed) and safe to run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policies import PolicyParams, feature_dim

POINT_MASS_DT = 0.05
POINT_MASS_HORIZON = 100
GRAVITY = 9.81

RICCATI_TOL = 1e-10
RICCATI_MAX_ITERS = 10_000
MAX_SAMPLE_ATTEMPTS = 100


class DegenerateTaskFamilyError(RuntimeError):
    """Raised when a family keeps producing non-stabilizable draws."""


class UnstabilizableInstanceError(RuntimeError):
    """Raised when Riccati value iteration fails to converge."""


class NumericalDivergenceError(RuntimeError):
    """Raised when a state or action stops being finite."""


@dataclass(frozen=True)
class TaskFamilySpec:
    """A parametric distribution over MDPs.

    ``variation_ranges`` maps coefficient names to [lower, upper] intervals;
    each task draws every coefficient independently and uniformly.
    """

    family_id: str
    state_dim: int
    action_dim: int
    horizon: int
    variation_ranges: dict[str, tuple[float, float]]
    noise_std: float = 0.0
    reward_spec: dict[str, float] = field(default_factory=dict)
    policy_sigma: float = 0.5
    feature_map_id: str = "raw_state"
    init_state_mean: tuple[float, ...] | None = None
    init_state_std: float = 1.0

    def __post_init__(self):
        if self.family_id not in ("lqr", "point_mass"):
            raise ValueError(f"unknown family {self.family_id!r}")
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        for name, (lo, hi) in self.variation_ranges.items():
            if lo > hi:
                raise ValueError(f"variation interval for {name!r} has lower > upper")
        if self.family_id == "point_mass" and (self.state_dim != 4 or self.action_dim != 2):
            raise ValueError("point_mass family is 4-state, 2-action")

    @property
    def policy_feature_dim(self) -> int:
        return feature_dim(self.feature_map_id, self.state_dim)

    @property
    def policy_dim(self) -> int:
        return self.action_dim * self.policy_feature_dim

    def to_json(self) -> dict:
        return {
            "family_id": self.family_id,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "horizon": self.horizon,
            "variation_ranges": {k: list(v) for k, v in self.variation_ranges.items()},
            "noise_std": self.noise_std,
            "reward_spec": dict(self.reward_spec),
            "policy_sigma": self.policy_sigma,
            "feature_map_id": self.feature_map_id,
            "init_state_mean": None if self.init_state_mean is None else list(self.init_state_mean),
            "init_state_std": self.init_state_std,
        }

    @staticmethod
    def from_json(obj: dict) -> "TaskFamilySpec":
        return TaskFamilySpec(
            family_id=obj["family_id"],
            state_dim=obj["state_dim"],
            action_dim=obj["action_dim"],
            horizon=obj["horizon"],
            variation_ranges={k: (v[0], v[1]) for k, v in obj["variation_ranges"].items()},
            noise_std=obj.get("noise_std", 0.0),
            reward_spec=obj.get("reward_spec", {}),
            policy_sigma=obj.get("policy_sigma", 0.5),
            feature_map_id=obj.get("feature_map_id", "raw_state"),
            init_state_mean=None if obj.get("init_state_mean") is None else tuple(obj["init_state_mean"]),
            init_state_std=obj.get("init_state_std", 1.0),
        )


@dataclass(frozen=True)
class TaskInstance:
    """One MDP drawn from a family; immutable after construction."""

    task_id: int
    family: TaskFamilySpec
    coefficients: dict[str, float]
    A_dyn: np.ndarray | None = None
    B_dyn: np.ndarray | None = None
    Q_cost: np.ndarray | None = None
    R_cost: np.ndarray | None = None

    @property
    def init_mean(self) -> np.ndarray:
        if self.family.init_state_mean is not None:
            return np.asarray(self.family.init_state_mean, dtype=float)
        return np.zeros(self.family.state_dim)

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return self.init_mean + self.family.init_state_std * rng.standard_normal(self.family.state_dim)

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "family": self.family.to_json(),
            "coefficients": dict(self.coefficients),
            "A_dyn": None if self.A_dyn is None else self.A_dyn.tolist(),
            "B_dyn": None if self.B_dyn is None else self.B_dyn.tolist(),
            "Q_cost": None if self.Q_cost is None else self.Q_cost.tolist(),
            "R_cost": None if self.R_cost is None else self.R_cost.tolist(),
        }


@dataclass(frozen=True)
class Trajectory:
    """Rollout record; all sequences share the same length."""

    states: np.ndarray    # (T, state_dim)
    actions: np.ndarray   # (T, action_dim)
    rewards: np.ndarray   # (T,)
    log_probs: np.ndarray  # (T,)

    def __post_init__(self):
        n = self.states.shape[0]
        if not (self.actions.shape[0] == self.rewards.shape[0] == self.log_probs.shape[0] == n):
            raise ValueError("trajectory sequences must have equal length")
        for arr in (self.states, self.actions, self.rewards, self.log_probs):
            if not np.all(np.isfinite(arr)):
                raise NumericalDivergenceError("numerical divergence")

    def __len__(self) -> int:
        return self.states.shape[0]


def lqr_nominal_matrices(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Base (A, B) pair for the lqr family before variation scaling.

    The nominal dynamics stay open-loop stable across a +-50% scale range
    (upper-triangular, spectral radius 0.65) so short training budgets
    suffice; the oracle gain still varies strongly with the drawn scales.
    """
    A = 0.65 * np.eye(n)
    for i in range(n - 1):
        A[i, i + 1] = 0.2
    B = np.eye(n)[:, :m].copy()
    return A, B


def sample_task(family: TaskFamilySpec, rng: np.random.Generator, task_id: int = 0) -> TaskInstance:
    """Draw one task i.i.d. from the family.

    lqr draws are rejection-sampled until the discounted Riccati iteration
    converges (stabilizability check); after MAX_SAMPLE_ATTEMPTS failures the
    family is declared degenerate.
    """
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        coeffs = {name: float(rng.uniform(lo, hi))
                  for name, (lo, hi) in sorted(family.variation_ranges.items())}
        task = _build_task(family, coeffs, task_id)
        if family.family_id != "lqr":
            return task
        try:
            solve_riccati(task.A_dyn, task.B_dyn, task.Q_cost, task.R_cost, gamma=0.995)
            return task
        except UnstabilizableInstanceError:
            continue
    raise DegenerateTaskFamilyError("degenerate task family")


def _build_task(family: TaskFamilySpec, coeffs: dict[str, float], task_id: int) -> TaskInstance:
    if family.family_id == "lqr":
        A0, B0 = lqr_nominal_matrices(family.state_dim, family.action_dim)
        A = coeffs.get("dyn_scale", 1.0) * A0
        B = coeffs.get("input_scale", 1.0) * B0
        q = family.reward_spec.get("q", 1.0) * coeffs.get("q_scale", 1.0)
        r = family.reward_spec.get("r", 0.1) * coeffs.get("r_scale", 1.0)
        if q <= 0 or r <= 0:
            raise ValueError("quadratic cost weights must stay positive")
        Q = q * np.eye(family.state_dim)
        R = r * np.eye(family.action_dim)
        return TaskInstance(task_id=task_id, family=family, coefficients=coeffs,
                            A_dyn=A, B_dyn=B, Q_cost=Q, R_cost=R)
    return TaskInstance(task_id=task_id, family=family, coefficients=coeffs)


def task_from_json(obj: dict) -> TaskInstance:
    """Rebuild a task from its manifest entry (family + drawn coefficients)."""
    family = TaskFamilySpec.from_json(obj["family"])
    return _build_task(family, dict(obj["coefficients"]), obj["task_id"])


def step(task: TaskInstance, state: np.ndarray, action: np.ndarray,
         rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One environment transition; returns (next_state, reward)."""
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action))):
        raise NumericalDivergenceError("numerical divergence")
    fam = task.family
    if state.shape != (fam.state_dim,) or action.shape != (fam.action_dim,):
        raise ValueError("state/action dimensions do not match task")

    if fam.family_id == "lqr":
        nxt = task.A_dyn @ state + task.B_dyn @ action
        if fam.noise_std > 0:
            nxt = nxt + fam.noise_std * rng.standard_normal(fam.state_dim)
        reward = -(state @ task.Q_cost @ state + action @ task.R_cost @ action)
        return nxt, float(reward)

    # point_mass: state = (px, py, vx, vy), action = planar force
    g_scale = task.coefficients.get("gravity_scale", 1.0)
    mass = task.coefficients.get("mass_scale", 1.0)
    w_vel = fam.reward_spec.get("velocity_bonus", 1.0)
    w_ctrl = fam.reward_spec.get("control_cost", 0.1)
    pos, vel = state[:2], state[2:]
    accel = action / mass + np.array([0.0, -g_scale * GRAVITY])
    vel = vel + POINT_MASS_DT * accel
    pos = pos + POINT_MASS_DT * vel
    nxt = np.concatenate([pos, vel])
    if fam.noise_std > 0:
        nxt = nxt + fam.noise_std * rng.standard_normal(fam.state_dim)
    reward = w_vel * vel[0] - w_ctrl * float(action @ action)
    return nxt, float(reward)


def rollout(task: TaskInstance, policy, horizon: int, rng: np.random.Generator) -> Trajectory:
    """Collect exactly ``horizon`` steps under the policy (no early termination)."""
    fam = task.family
    state = task.sample_initial_state(rng)
    states = np.empty((horizon, fam.state_dim))
    actions = np.empty((horizon, fam.action_dim))
    rewards = np.empty(horizon)
    log_probs = np.empty(horizon)
    for i in range(horizon):
        action, logp = policy.act(state, rng)
        states[i] = state
        actions[i] = action
        log_probs[i] = logp
        state, rewards[i] = step(task, state, action, rng)
    return Trajectory(states=states, actions=actions, rewards=rewards, log_probs=log_probs)


def solve_riccati(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                  gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted Riccati value iteration to fixed point.

    Returns (P, K) with value xPx and optimal linear gain u = K x.
    """
    n = A.shape[0]
    P = Q.copy()
    for _ in range(RICCATI_MAX_ITERS):
        if np.max(np.abs(P)) > 1e100:   # diverging: bail before overflow
            raise UnstabilizableInstanceError("unstabilizable instance")
        BtP = B.T @ P
        K = -gamma * np.linalg.solve(R + gamma * BtP @ B, BtP @ A)
        P_next = Q + gamma * A.T @ P @ A - gamma**2 * A.T @ P @ B @ np.linalg.solve(
            R + gamma * BtP @ B, BtP @ A)
        if not np.all(np.isfinite(P_next)):
            raise UnstabilizableInstanceError("unstabilizable instance")
        if np.max(np.abs(P_next - P)) < RICCATI_TOL:
            BtP = B.T @ P_next
            K = -gamma * np.linalg.solve(R + gamma * BtP @ B, BtP @ A)
            return P_next, K
        P = P_next
    raise UnstabilizableInstanceError("unstabilizable instance")


def optimal_lqr_policy(task: TaskInstance, gamma: float) -> PolicyParams:
    """Exact discounted-LQR optimal policy in the family's parameter layout."""
    if task.family.family_id != "lqr":
        raise ValueError("oracle only defined for the lqr family")
    _, K = solve_riccati(task.A_dyn, task.B_dyn, task.Q_cost, task.R_cost, gamma)
    fam = task.family
    W = np.zeros((fam.action_dim, fam.policy_feature_dim))
    W[:, :fam.state_dim] = K
    return PolicyParams(theta=W.ravel(), sigma=fam.policy_sigma,
                        action_dim=fam.action_dim, feature_map_id=fam.feature_map_id)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """Sum of gamma^i r_i over the trajectory."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    return float(traj.rewards @ np.power(gamma, np.arange(len(traj))))
