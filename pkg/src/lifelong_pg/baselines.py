"""Comparison learners sharing the NPG core.

* STL lives in :mod:`lifelong_pg.pg` (``stl_train``).
* EWC: a single shared policy with a curvature-weighted quadratic penalty
  toward previous tasks' parameters, in six variants (three penalty forms
  crossed with shared / per-task exploration scale).
* PG-ELLA: two-stage factored baseline -- STL per task, then a sparse
  factorization of the STL solution (its surrogate has no linear term).

Sign convention: curvatures H are negative definite, so the penalty added to
the maximized objective is lambda * (theta-alpha)^T H (theta-alpha) <= 0,
maximal at the anchor; its gradient 2 lambda H (theta-alpha) points toward
the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .families import TaskInstance
from . import pg
from .pg import NPGConfig, collect_batch, fill_advantages, fit_value_baseline, npg_step
from .lpg_ftw import KnowledgeBase, TaskRecord, solve_L
from .policies import PolicyParams

EWC_PENALTY_FORMS = ("huszar", "scaled", "original")
EWC_SIGMA_MODES = ("shared_sigma", "task_sigma")


@dataclass
class EwcState:
    """Anchors and penalty bookkeeping for one EWC run."""

    penalty_form: str = "original"
    sigma_mode: str = "shared_sigma"
    lambda_ewc: float = 1e-6
    anchors: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    running_alpha: np.ndarray | None = None   # huszar form keeps one pair
    running_H: np.ndarray | None = None

    def __post_init__(self):
        if self.penalty_form not in EWC_PENALTY_FORMS:
            raise ValueError(f"unknown penalty form {self.penalty_form!r}")
        if self.sigma_mode not in EWC_SIGMA_MODES:
            raise ValueError(f"unknown sigma mode {self.sigma_mode!r}")
        if self.lambda_ewc < 0:
            raise ValueError("lambda_ewc must be nonnegative")

    def _active_anchors(self, t: int) -> tuple[list[tuple[np.ndarray, np.ndarray]], float]:
        """Anchor list and penalty scale for task index t (1-based)."""
        if self.penalty_form == "huszar":
            if self.running_alpha is None:
                return [], self.lambda_ewc
            return [(self.running_alpha, self.running_H)], self.lambda_ewc
        if not self.anchors:
            return [], self.lambda_ewc
        scale = self.lambda_ewc / (t - 1) if self.penalty_form == "scaled" else self.lambda_ewc
        return self.anchors, scale

    def record_task(self, theta: np.ndarray, H: np.ndarray) -> None:
        if self.penalty_form == "huszar":
            self.running_alpha = theta.copy()
            self.running_H = H.copy() if self.running_H is None else self.running_H + H
        else:
            self.anchors.append((theta.copy(), H.copy()))


def ewc_state_to_json(state: EwcState) -> dict:
    from .serialize import encode_array

    return {
        "variant": "ewc",
        "penalty_form": state.penalty_form,
        "sigma_mode": state.sigma_mode,
        "lambda_ewc": state.lambda_ewc,
        "anchors": [{"alpha": encode_array(a), "H": encode_array(H)}
                    for a, H in state.anchors],
        "running_alpha": None if state.running_alpha is None
        else encode_array(state.running_alpha),
        "running_H": None if state.running_H is None else encode_array(state.running_H),
    }


def ewc_state_from_json(obj: dict) -> EwcState:
    from .serialize import decode_array

    state = EwcState(penalty_form=obj["penalty_form"], sigma_mode=obj["sigma_mode"],
                     lambda_ewc=obj["lambda_ewc"])
    state.anchors = [(decode_array(e["alpha"]), decode_array(e["H"]))
                     for e in obj["anchors"]]
    if obj["running_alpha"] is not None:
        state.running_alpha = decode_array(obj["running_alpha"])
        state.running_H = decode_array(obj["running_H"])
    return state


def ewc_penalty_grad(state: EwcState, theta: np.ndarray, t: int) -> tuple[float, np.ndarray]:
    """Penalty value and its analytic gradient at theta (task index t, 1-based)."""
    anchors, scale = state._active_anchors(t)
    penalty = 0.0
    grad = np.zeros_like(theta)
    for alpha, H in anchors:
        dv = theta - alpha
        penalty += scale * float(dv @ H @ dv)
        grad += 2.0 * scale * (H @ dv)
    return penalty, grad


def ewc_penalty_hessian(state: EwcState, d: int, t: int) -> np.ndarray:
    """Constant Hessian of the penalty (negative semidefinite)."""
    anchors, scale = state._active_anchors(t)
    H_pen = np.zeros((d, d))
    for _, H in anchors:
        H_pen += 2.0 * scale * H
    return H_pen


def ewc_train(task: TaskInstance, state: EwcState, p0: PolicyParams, cfg: NPGConfig,
              n_iters: int, traj_per_iter: int, rng: np.random.Generator, t: int):
    """NPG with penalty-augmented gradient and curvature.

    The penalty Hessian is folded into the step's quadratic model by
    augmenting the Fisher with its sign-flipped (positive-definite) form.
    Returns (final policy, updated state, learning curve).
    """
    sigma = p0.sigma if state.sigma_mode == "shared_sigma" else task.family.policy_sigma
    policy = PolicyParams(theta=p0.theta, sigma=sigma, action_dim=p0.action_dim,
                          feature_map_id=p0.feature_map_id)
    d = policy.d
    curve = np.empty(n_iters)
    for i in range(n_iters):
        batch = collect_batch(task, policy, traj_per_iter, rng)
        curve[i] = batch.mean_return(cfg.gamma)
        baseline = fit_value_baseline(batch, cfg.gamma)
        fill_advantages(batch, baseline, cfg)
        g = pg.pg_gradient(batch, policy)
        F = pg.fisher(batch, policy, cfg.fisher_damping)
        _, pen_grad = ewc_penalty_grad(state, policy.theta, t)
        F_aug = F - ewc_penalty_hessian(state, d, t)
        step_vec, _ = npg_step(g + pen_grad, F_aug, cfg.delta)
        policy = policy.with_theta(policy.theta + step_vec)
    g, H = pg.final_grad_and_hess(task, policy, cfg, traj_per_iter, rng, hessian_kind="npg")
    state.record_task(policy.theta, H)
    return policy, state, curve


def solve_sparse_coeffs(L: np.ndarray, alpha: np.ndarray, H: np.ndarray, mu: float,
                        tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    """Coordinate-wise maximization of (alpha - L s)^T H (alpha - L s) - mu ||s||_1.

    H must be negative definite so the problem is a concave (lasso-style)
    program; coordinates update by soft thresholding until convergence.
    """
    k = L.shape[1]
    G = -L.T @ H @ L
    c = -L.T @ H @ alpha
    s = np.zeros(k)
    for _ in range(max_iters):
        max_change = 0.0
        for j in range(k):
            if G[j, j] < 1e-12:
                new = 0.0
            else:
                rho = c[j] - G[j] @ s + G[j, j] * s[j]
                new = np.sign(rho) * max(abs(rho) - mu / 2.0, 0.0) / G[j, j]
            max_change = max(max_change, abs(new - s[j]))
            s[j] = new
        if max_change < tol:
            return s
    return s


def sparse_coeff_optimality(L: np.ndarray, s: np.ndarray, alpha: np.ndarray,
                            H: np.ndarray, mu: float) -> float:
    """Max violation of the active-set stationarity conditions of the s-solve."""
    rho = L.T @ (2.0 * H @ (L @ s - alpha))
    violation = 0.0
    for j in range(L.shape[1]):
        if abs(s[j]) > 1e-10:
            violation = max(violation, abs(rho[j] - mu * np.sign(s[j])))
        else:
            violation = max(violation, max(abs(rho[j]) - mu, 0.0))
    return float(violation)


@dataclass
class PgEllaState:
    """Dictionary state for PG-ELLA; accumulators as in the lifelong learner
    but populated from STL solutions and without the linear gradient term."""

    kb: KnowledgeBase

    @property
    def L(self) -> np.ndarray:
        return self.kb.L


def pg_ella_train(task: TaskInstance, state: PgEllaState, cfg: NPGConfig, n_iters: int,
                  traj_per_iter: int, rng: np.random.Generator):
    """Two-stage PG-ELLA update for one task.

    Stage 1 is plain STL (shared code path, hence identical curves under the
    same seed); stage 2 fits sparse coefficients to the STL solution; stage 3
    updates the accumulators (b contribution s (x) 2 H alpha, no gradient
    term) and re-solves L once the first k columns are filled.
    """
    kb = state.kb
    fam = task.family
    p0 = PolicyParams(theta=np.zeros(fam.policy_dim), sigma=fam.policy_sigma,
                      action_dim=fam.action_dim, feature_map_id=fam.feature_map_id)
    policy, curve, g, H = pg.stl_train(task, p0, cfg, n_iters, traj_per_iter, rng,
                                       hessian_kind="npg")
    alpha = policy.theta

    if kb.n_columns < kb.k:
        s = np.zeros(kb.k)
        s[kb.n_columns] = 1.0
        kb.L = np.concatenate([kb.L, alpha.reshape(-1, 1)], axis=1)
    else:
        s = solve_sparse_coeffs(kb.L, alpha, H, kb.mu_reg)

    record = TaskRecord(task_id=task.task_id, s=s, alpha=alpha, H=H, g=g,
                        L_snapshot=kb.L.copy())
    dA = 2.0 * np.kron(np.outer(s, s), H)
    db = np.kron(s, 2.0 * H @ alpha)
    kb.A_acc += dA
    kb.b_acc += db
    kb.T += 1
    record.incorporated = True
    kb.records[task.task_id] = record
    if kb.n_columns == kb.k:
        kb.phase = "main"
        kb.L = solve_L(kb)
    kb.L_history.append(kb.L.copy())
    return record, state, curve
