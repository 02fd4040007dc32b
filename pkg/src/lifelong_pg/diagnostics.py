"""Runtime checks of the theory behind the consolidation step.

These are reports and trend statistics, not hard assertions: dictionary
stability over tasks, surrogate-objective settling, active-set stationarity
of trained coefficients, curvature eigenvalue bounds, and the cross-task
diversity gap. All functions are pure and replayable from checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .families import TaskInstance, discounted_return, rollout
from .lpg_ftw import TaskRecord, hat_ell

ACTIVE_SET_TOL = 1e-10


@dataclass
class StabilitySeries:
    """Per-task dictionary movement and its t-scaled version."""

    diffs: np.ndarray         # ||L_t - L_{t-1}||_F, t = 1..n-1
    scaled: np.ndarray        # t * ||L_t - L_{t-1}||_F
    summary_max_scaled: float


@dataclass
class OptimalityReport:
    """Active-set stationarity of one task's trained coefficients."""

    rho: np.ndarray
    active_set: np.ndarray
    max_violation: float
    active_curvature_max_eig: float
    vacuous: bool = False


def _pad_columns(L: np.ndarray, k: int) -> np.ndarray:
    if L.shape[1] == k:
        return L
    out = np.zeros((L.shape[0], k))
    out[:, :L.shape[1]] = L
    return out


def stability_series(L_history: list[np.ndarray]) -> StabilitySeries:
    """Movement of the dictionary between consecutive snapshots.

    Snapshots taken while columns were still being added are zero-padded to
    the final width so differences stay well defined.
    """
    if len(L_history) < 3:
        raise ValueError("need at least 3 snapshots")
    k = max(L.shape[1] for L in L_history)
    padded = [_pad_columns(L, k) for L in L_history]
    diffs = np.array([np.linalg.norm(padded[t] - padded[t - 1])
                      for t in range(1, len(padded))])
    t_idx = np.arange(1, len(padded))
    scaled = (t_idx + 1) * diffs
    tail = scaled[k:] if len(scaled) > k else scaled
    return StabilitySeries(diffs=diffs, scaled=scaled,
                           summary_max_scaled=float(tail.max()))


def check_lemma2(L: np.ndarray, s: np.ndarray, alpha: np.ndarray, H: np.ndarray,
                 g: np.ndarray, mu: float, tol: float = 1e-6) -> OptimalityReport:
    """Stationarity transfer from coefficient training to the surrogate.

    rho_j = l_j^T [2 H (L s - alpha) + g]; at an exactly recorded anchor the
    first term vanishes and rho_j reduces to l_j^T g. Violations measure how
    converged the coefficient training was.
    """
    rho = L.T @ (2.0 * H @ (L @ s - alpha) + g)
    active = np.abs(s) > ACTIVE_SET_TOL
    violation = 0.0
    for j in range(L.shape[1]):
        if active[j]:
            violation = max(violation, abs(rho[j] - mu * np.sign(s[j])))
        else:
            violation = max(violation, max(abs(rho[j]) - mu, 0.0))
    return OptimalityReport(rho=rho, active_set=active, max_violation=float(violation),
                            active_curvature_max_eig=check_assumption_d(L, H, s))


def check_assumption_d(L: np.ndarray, H: np.ndarray, s: np.ndarray) -> float:
    """Largest eigenvalue of the curvature restricted to the active columns.

    Negative values certify strict concavity of the coefficient subproblem;
    an empty active set makes the check vacuous (returns 0).
    """
    active = np.abs(np.asarray(s)) > ACTIVE_SET_TOL
    if not active.any():
        return 0.0
    L_gamma = L[:, active]
    return float(np.linalg.eigvalsh(L_gamma.T @ H @ L_gamma).max())


def surrogate_series(L_history: list[np.ndarray], records: list[TaskRecord],
                     lambda_reg: float, mu_reg: float = 0.0) -> np.ndarray:
    """Running surrogate objective evaluated at each dictionary snapshot.

    Entry t is -lambda ||L_t||_F^2 + (1/(t+1)) sum over the first t+1 records
    of their second-order surrogates.
    """
    if len(L_history) != len(records):
        raise ValueError("need one snapshot per record")
    k = max(L.shape[1] for L in L_history)
    values = np.empty(len(records))
    for t, L in enumerate(L_history):
        Lp = _pad_columns(L, k)
        total = sum(hat_ell(Lp, r.s, r.alpha, r.H, r.g, mu_reg) for r in records[:t + 1])
        values[t] = -lambda_reg * np.linalg.norm(Lp)**2 + total / (t + 1)
    return values


def diversity_gap(policies: list, tasks: list[TaskInstance], n_eval: int,
                  gamma: float, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Cross-evaluation matrix and mean percent gap between own and foreign
    policies; larger gaps mean more diverse tasks."""
    n = len(tasks)
    if len(policies) != n:
        raise ValueError("one policy per task required")
    M = np.empty((n, n))
    for i, task in enumerate(tasks):
        for j, policy in enumerate(policies):
            returns = [discounted_return(rollout(task, policy, task.family.horizon, rng), gamma)
                       for _ in range(n_eval)]
            M[i, j] = np.mean(returns)
    gaps = []
    for i in range(n):
        others = np.mean([M[i, j] for j in range(n) if j != i]) if n > 1 else M[i, i]
        denom = abs(M[i, i]) if M[i, i] != 0 else 1.0
        gaps.append((M[i, i] - others) / denom)
    return M, float(100.0 * np.mean(gaps))
