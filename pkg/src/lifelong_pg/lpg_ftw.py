"""Lifelong factored policy-gradient learner.

Maintains a shared dictionary L of policy factors. Each task trains only its
coefficient vector s (natural policy gradient restricted to span(L)); the
dictionary is consolidated by maximizing the running average of second-order
surrogates of all seen tasks' objectives, which has a closed-form solution in
vec(L) through Kronecker-structured accumulators.

Kronecker layout: vec(L) stacks the columns of L, so (s s^T) (x) H matches
d-major blocks and np.kron applies directly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .families import TaskInstance
from . import pg
from .pg import NPGConfig, PGBatch, collect_batch, default_damping, fill_advantages, \
    fit_value_baseline, npg_step
from .policies import PolicyParams, compose_policy

COND_LIMIT = 1e14


class IllConditionedConsolidationError(RuntimeError):
    """Consolidation system numerically singular despite ridge term."""

    def __init__(self, cond: float):
        super().__init__(f"ill-conditioned consolidation (condition estimate {cond:.3e})")
        self.cond = cond


@dataclass
class TaskRecord:
    """Per-task artifacts consumed by the dictionary consolidation."""

    task_id: int
    s: np.ndarray          # length k, zero-padded for columns added later
    alpha: np.ndarray      # L_snapshot @ s at record time
    H: np.ndarray
    g: np.ndarray
    L_snapshot: np.ndarray
    incorporated: bool = False

    @property
    def snapshot_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.L_snapshot).tobytes()).hexdigest()


@dataclass
class KnowledgeBase:
    """Dictionary plus running consolidation accumulators.

    ``A_acc`` and ``b_acc`` store the unscaled running sums
    2 sum (s s^T) (x) H  and  sum s (x) (-g + 2 H alpha); the -2 lambda I and
    1/T scaling are applied at solve time.
    """

    d: int
    k: int
    lambda_reg: float
    mu_reg: float = 0.0
    L: np.ndarray = None
    A_acc: np.ndarray = None
    b_acc: np.ndarray = None
    T: int = 0
    phase: str = "initializing"
    records: dict[int, TaskRecord] = field(default_factory=dict)
    L_history: list[np.ndarray] = field(default_factory=list)
    keep_hessians: bool = True

    def __post_init__(self):
        if self.lambda_reg <= 0:
            raise ValueError("lambda_reg must be positive")
        if self.mu_reg < 0:
            raise ValueError("mu_reg must be nonnegative")
        if self.L is None:
            self.L = np.zeros((self.d, 0))
        if self.A_acc is None:
            self.A_acc = np.zeros((self.d * self.k, self.d * self.k))
        if self.b_acc is None:
            self.b_acc = np.zeros(self.d * self.k)

    @property
    def n_columns(self) -> int:
        return self.L.shape[1]

    def pad_s(self, s: np.ndarray) -> np.ndarray:
        """Zero-pad coefficients on the right to the full capacity k."""
        s = np.asarray(s, dtype=float)
        if s.size > self.k:
            raise ValueError("coefficient vector longer than capacity")
        return np.concatenate([s, np.zeros(self.k - s.size)])


def kb_to_json(kb: KnowledgeBase, variant: str = "lpg_ftw") -> dict:
    """Checkpoint form of the knowledge base; H/g retained per ``keep_hessians``."""
    from .serialize import encode_array

    records = []
    for rec in kb.records.values():
        entry = {"task_id": rec.task_id, "s": encode_array(rec.s),
                 "alpha": encode_array(rec.alpha), "incorporated": rec.incorporated}
        if kb.keep_hessians:
            entry["H"] = encode_array(rec.H)
            entry["g"] = encode_array(rec.g)
            entry["L_snapshot"] = encode_array(rec.L_snapshot)
        records.append(entry)
    return {
        "variant": variant,
        "d": kb.d, "k": kb.k,
        "lambda_reg": kb.lambda_reg, "mu_reg": kb.mu_reg,
        "T": kb.T, "phase": kb.phase,
        "keep_hessians": kb.keep_hessians,
        "L": encode_array(kb.L),
        "A_acc": encode_array(kb.A_acc),
        "b_acc": encode_array(kb.b_acc),
        "L_history": [encode_array(L) for L in kb.L_history],
        "records": records,
    }


def kb_from_json(obj: dict) -> KnowledgeBase:
    """Rebuild a knowledge base from its checkpoint form (resume / revisit)."""
    from .serialize import decode_array

    kb = KnowledgeBase(d=obj["d"], k=obj["k"], lambda_reg=obj["lambda_reg"],
                       mu_reg=obj["mu_reg"], L=decode_array(obj["L"]),
                       A_acc=decode_array(obj["A_acc"]), b_acc=decode_array(obj["b_acc"]),
                       T=obj["T"], phase=obj["phase"],
                       keep_hessians=obj["keep_hessians"])
    kb.L_history = [decode_array(e) for e in obj["L_history"]]
    for entry in obj["records"]:
        has_h = "H" in entry
        rec = TaskRecord(
            task_id=entry["task_id"], s=decode_array(entry["s"]),
            alpha=decode_array(entry["alpha"]),
            H=decode_array(entry["H"]) if has_h else None,
            g=decode_array(entry["g"]) if has_h else None,
            L_snapshot=decode_array(entry["L_snapshot"]) if has_h else None,
            incorporated=entry["incorporated"])
        kb.records[rec.task_id] = rec
    return kb


def init_task_coeffs(k_current: int) -> np.ndarray:
    """Fresh coefficients are all-zero, so the initial policy is the zero policy."""
    if k_current < 0:
        raise ValueError("k_current must be nonnegative")
    return np.zeros(k_current)


def hat_ell(L: np.ndarray, s: np.ndarray, alpha: np.ndarray, H: np.ndarray,
            g: np.ndarray, mu: float) -> float:
    """Second-order surrogate of one task's objective around its anchor alpha.

    The quadratic form is signed: with negative-definite H the surrogate is
    concave and maximal when L s reproduces alpha.
    """
    resid = alpha - L @ s
    return float(-mu * np.sum(np.abs(s)) + resid @ H @ resid + g @ (L @ s - alpha))


def _contribution(rec: TaskRecord) -> tuple[np.ndarray, np.ndarray]:
    dA = 2.0 * np.kron(np.outer(rec.s, rec.s), rec.H)
    db = np.kron(rec.s, -rec.g + 2.0 * rec.H @ rec.alpha)
    return dA, db


def add_task_to_accumulators(kb: KnowledgeBase, rec: TaskRecord) -> None:
    if rec.incorporated:
        raise ValueError("task record already incorporated")
    dA, db = _contribution(rec)
    kb.A_acc += dA
    kb.b_acc += db
    kb.T += 1
    rec.incorporated = True


def remove_task_from_accumulators(kb: KnowledgeBase, rec: TaskRecord) -> None:
    if not rec.incorporated:
        raise ValueError("task record not incorporated")
    dA, db = _contribution(rec)
    kb.A_acc -= dA
    kb.b_acc -= db
    kb.T -= 1
    rec.incorporated = False


def solve_L(kb: KnowledgeBase, A: np.ndarray | None = None, b: np.ndarray | None = None,
            T: int | None = None) -> np.ndarray:
    """Closed-form dictionary update.

    Solves ((1/T) A - 2 lambda I) vec(L) = (1/T) b with one step of iterative
    refinement; falls back to least squares when the symmetric solve fails.
    """
    A = kb.A_acc if A is None else A
    b = kb.b_acc if b is None else b
    T = kb.T if T is None else T
    if T < 1:
        raise ValueError("no tasks incorporated")
    M = A / T - 2.0 * kb.lambda_reg * np.eye(A.shape[0])
    rhs = b / T
    try:
        x = scipy.linalg.solve(M, rhs, assume_a="sym")
        x = x + scipy.linalg.solve(M, rhs - M @ x, assume_a="sym")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
        x = np.linalg.lstsq(M, rhs, rcond=None)[0]
    if not np.all(np.isfinite(x)):
        raise IllConditionedConsolidationError(float(np.linalg.cond(M)))
    return x.reshape((kb.d, kb.k), order="F")


def surrogate_grad_norm(kb: KnowledgeBase, L: np.ndarray | None = None) -> float:
    """Frobenius norm of the surrogate-objective gradient at L (0 at the solve)."""
    L = kb.L if L is None else L
    vecL = np.zeros(kb.d * kb.k)
    vecL[:L.size] = L.ravel(order="F")
    grad = (kb.A_acc / kb.T - 2.0 * kb.lambda_reg * np.eye(kb.d * kb.k)) @ vecL - kb.b_acc / kb.T
    return float(np.linalg.norm(grad))


def s_npg_step(L: np.ndarray, s: np.ndarray, batch: PGBatch, cfg: NPGConfig,
               mu: float, policy: PolicyParams) -> np.ndarray:
    """One natural-gradient step on the task coefficients in span(L).

    The batch must have been collected under the policy theta = L s that is
    passed in; gradient and Fisher are projected through L by the chain rule.
    """
    g_theta = pg.pg_gradient(batch, policy)
    F_raw = pg.fisher(batch, policy, 0.0)   # project first, damp once after
    g_s = L.T @ g_theta - mu * np.sign(s)
    F_proj = L.T @ F_raw @ L
    damping = cfg.fisher_damping if cfg.fisher_damping is not None else default_damping(F_proj)
    F_s = F_proj + damping * np.eye(L.shape[1])
    step, _ = npg_step(g_s, F_s, cfg.delta)
    return s + step


def grad_and_hess(task: TaskInstance, L: np.ndarray, s: np.ndarray, cfg: NPGConfig,
                  traj_per_iter: int, rng: np.random.Generator,
                  sigma: float, learner: str = "npg"):
    """(g, H) at alpha = L s from one fresh batch."""
    policy = compose_policy(L, s, None, sigma, task.family.action_dim,
                            task.family.feature_map_id)
    return pg.final_grad_and_hess(task, policy, cfg, traj_per_iter, rng, hessian_kind=learner)


def train_task(kb: KnowledgeBase, task: TaskInstance, cfg: NPGConfig, N: int, M: int,
               traj_per_iter: int, rng: np.random.Generator,
               learner: str = "npg") -> tuple[TaskRecord, np.ndarray]:
    """Train one task in the main phase, consolidating L every M iterations.

    Tentative accumulators built mid-task become permanent only at task end,
    so the in-progress task is never double-counted. Revisited tasks are first
    removed from the accumulators and resume from their stored coefficients.
    """
    if kb.phase != "main":
        raise ValueError("knowledge base still initializing")
    if N < 1 or M < 1:
        raise ValueError("N and M must be >= 1")
    fam = task.family
    sigma = fam.policy_sigma

    if task.task_id in kb.records and kb.records[task.task_id].incorporated:
        old = kb.records[task.task_id]
        remove_task_from_accumulators(kb, old)
        s = old.s.copy()
    else:
        s = init_task_coeffs(kb.k)
    T_solve = kb.T + 1  # count the in-progress task at solve time

    curve = np.empty(N)
    record = None
    for i in range(1, N + 1):
        policy = compose_policy(kb.L, s, None, sigma, fam.action_dim, fam.feature_map_id)
        batch = collect_batch(task, policy, traj_per_iter, rng)
        curve[i - 1] = batch.mean_return(cfg.gamma)
        baseline = fit_value_baseline(batch, cfg.gamma)
        fill_advantages(batch, baseline, cfg)
        s = s_npg_step(kb.L, s, batch, cfg, kb.mu_reg, policy)
        if i % M == 0 or i == N:
            alpha = kb.L @ s
            g, H = grad_and_hess(task, kb.L, s, cfg, traj_per_iter, rng, sigma, learner)
            record = TaskRecord(task_id=task.task_id, s=s.copy(), alpha=alpha,
                                H=H, g=g, L_snapshot=kb.L.copy())
            dA, db = _contribution(record)
            kb.L = solve_L(kb, kb.A_acc + dA, kb.b_acc + db, T_solve)
    add_task_to_accumulators(kb, record)
    kb.records[task.task_id] = record
    kb.L_history.append(kb.L.copy())
    return record, curve


def initialize_kb(kb: KnowledgeBase, tasks: list[TaskInstance], cfg: NPGConfig, N: int,
                  traj_per_iter: int, rng: np.random.Generator,
                  learner: str = "npg") -> list[np.ndarray]:
    """Column-growing initialization for the first k tasks.

    Each task trains (s, epsilon) jointly by NPG on the concatenated variable;
    the trained epsilon becomes a new dictionary column with its coefficient
    set to 1, so alpha = L_new s_ext = L_old s + epsilon exactly. No dictionary
    solve happens during initialization.
    """
    if kb.phase != "initializing":
        raise ValueError("knowledge base not in initializing phase")
    if len(tasks) > kb.k - kb.n_columns:
        raise ValueError("more tasks than remaining dictionary capacity")
    curves = []
    for task in tasks:
        fam = task.family
        sigma = fam.policy_sigma
        k_cur = kb.n_columns
        s = init_task_coeffs(k_cur)
        eps = np.zeros(kb.d)
        J = np.concatenate([kb.L, np.eye(kb.d)], axis=1)  # theta = [L | I] (s; eps)
        curve = np.empty(N)
        for i in range(N):
            policy = compose_policy(kb.L, s, eps, sigma, fam.action_dim, fam.feature_map_id)
            batch = collect_batch(task, policy, traj_per_iter, rng)
            curve[i] = batch.mean_return(cfg.gamma)
            baseline = fit_value_baseline(batch, cfg.gamma)
            fill_advantages(batch, baseline, cfg)
            g_theta = pg.pg_gradient(batch, policy)
            F_raw = pg.fisher(batch, policy, 0.0)
            g_z = np.concatenate([kb.L.T @ g_theta - kb.mu_reg * np.sign(s),
                                  g_theta - 2.0 * kb.lambda_reg * eps])
            F_proj = J.T @ F_raw @ J
            damping = cfg.fisher_damping if cfg.fisher_damping is not None \
                else default_damping(F_proj)
            F_z = F_proj + damping * np.eye(J.shape[1])
            step, _ = npg_step(g_z, F_z, cfg.delta)
            s = s + step[:k_cur]
            eps = eps + step[k_cur:]
        kb.L = np.concatenate([kb.L, eps.reshape(-1, 1)], axis=1)
        s_ext = np.concatenate([s, [1.0]])
        alpha = kb.L @ s_ext
        g, H = grad_and_hess(task, kb.L, s_ext, cfg, traj_per_iter, rng, sigma, learner)
        record = TaskRecord(task_id=task.task_id, s=kb.pad_s(s_ext), alpha=alpha,
                            H=H, g=g, L_snapshot=kb.L.copy())
        add_task_to_accumulators(kb, record)
        kb.records[task.task_id] = record
        kb.L_history.append(kb.L.copy())
        curves.append(curve)
        if kb.n_columns == kb.k:
            kb.phase = "main"
    return curves
