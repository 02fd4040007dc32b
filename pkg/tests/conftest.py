"""Shared helpers: random matrices, small task families, finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from lifelong_pg.families import TaskFamilySpec, sample_task


def rand_negdef(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    """Random symmetric negative-definite matrix with eigenvalues <= -0.1*scale."""
    A = rng.standard_normal((d, d))
    return -(A @ A.T + 0.1 * scale * np.eye(d))


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.empty_like(x, dtype=float)
    for i in range(x.size):
        e = np.zeros_like(x, dtype=float)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def fd_hess(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    d = x.size
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        H[:, i] = (fd_grad(f, x + e, h) - fd_grad(f, x - e, h)) / (2 * h)
    return 0.5 * (H + H.T)


def lqr_family(state_dim: int = 1, action_dim: int = 1, horizon: int = 15,
               noise_std: float = 0.05, policy_sigma: float = 0.3,
               dyn_range=(0.5, 1.5), r_range=(0.5, 1.5),
               feature_map_id: str = "raw_state", init_state_std: float = 1.0,
               init_state_mean=None) -> TaskFamilySpec:
    return TaskFamilySpec(
        family_id="lqr", state_dim=state_dim, action_dim=action_dim, horizon=horizon,
        variation_ranges={"dyn_scale": dyn_range, "r_scale": r_range},
        noise_std=noise_std, reward_spec={"q": 1.0, "r": 0.1},
        policy_sigma=policy_sigma, feature_map_id=feature_map_id,
        init_state_mean=init_state_mean, init_state_std=init_state_std)


def point_mass_family(horizon: int = 30, **kwargs) -> TaskFamilySpec:
    defaults = dict(
        family_id="point_mass", state_dim=4, action_dim=2, horizon=horizon,
        variation_ranges={"gravity_scale": (0.5, 1.5)}, noise_std=0.0,
        reward_spec={"velocity_bonus": 1.0, "control_cost": 0.1}, policy_sigma=0.3,
        feature_map_id="state_bias", init_state_std=0.1)
    defaults.update(kwargs)
    return TaskFamilySpec(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scalar_task(rng):
    return sample_task(lqr_family(), rng, task_id=0)
