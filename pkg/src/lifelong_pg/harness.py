"""Configuration-driven lifelong experiment runner.

Implements the four-phase evaluation protocol (start / tune / update / final)
over a sequence of tasks sampled from one family, for each of several seeds,
and emits CSV metrics, JSON summaries, checkpoints, a diagnostics report, and
SVG plots. Everything except wall-clock fields is a deterministic function of
(config, seed): evaluations for the four phases of one (seed, task) pair share
an evaluation seed so phase comparisons are paired.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import pg
from .baselines import (EWC_PENALTY_FORMS, EWC_SIGMA_MODES, EwcState, PgEllaState,
                        ewc_state_to_json, ewc_train, pg_ella_train,
                        sparse_coeff_optimality)
from .diagnostics import check_assumption_d, check_lemma2, stability_series, surrogate_series
from .families import TaskFamilySpec, TaskInstance, discounted_return, rollout, sample_task
from .lpg_ftw import (KnowledgeBase, initialize_kb, kb_to_json, surrogate_grad_norm,
                      train_task)
from .pg import NPGConfig
from .policies import PolicyParams, compose_policy
from .serialize import encode_array

METHODS = ("lpg_ftw", "stl", "ewc", "pg_ella")
FACTORED_METHODS = ("lpg_ftw", "pg_ella")
METRICS_COLUMNS = ("seed", "task_index", "task_id", "start_return", "tune_return",
                   "update_return", "final_return", "env_steps_used")
CURVES_COLUMNS = ("seed", "task_index", "iteration", "mean_return")

_ALLOWED_METHOD_PARAMS = {
    "lpg_ftw": {"k", "lambda_reg", "mu_reg", "M"},
    "pg_ella": {"k", "lambda_reg", "mu_reg"},
    "stl": set(),
    "ewc": {"lambda_ewc", "penalty_form", "sigma_mode"},
}


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one lifelong experiment."""

    method: str
    family: TaskFamilySpec
    method_params: dict = field(default_factory=dict)
    T_max: int = 20
    n_iters: int = 50
    traj_per_iter: int = 10
    npg: NPGConfig = field(default_factory=NPGConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_rollouts: int = 50
    output_dir: str = "runs/out"
    keep_hessians: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        unknown = set(self.method_params) - _ALLOWED_METHOD_PARAMS[self.method]
        if unknown:
            raise ConfigError(f"unknown method_params for {self.method}: {sorted(unknown)}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.T_max < 1 or self.n_iters < 1 or self.traj_per_iter < 1:
            raise ConfigError("T_max, n_iters, traj_per_iter must be >= 1")
        if self.eval_rollouts < 1:
            raise ConfigError("eval_rollouts must be >= 1")
        if self.method in FACTORED_METHODS and self.T_max < self.k:
            raise ConfigError("T_max must be >= k for factored methods")
        if self.method == "ewc":
            if self.method_params.get("penalty_form", "original") not in EWC_PENALTY_FORMS:
                raise ConfigError("unknown EWC penalty form")
            if self.method_params.get("sigma_mode", "shared_sigma") not in EWC_SIGMA_MODES:
                raise ConfigError("unknown EWC sigma mode")

    @property
    def k(self) -> int:
        return int(self.method_params.get("k", 5))

    @property
    def lambda_reg(self) -> float:
        return float(self.method_params.get("lambda_reg", 1e-5))

    @property
    def mu_reg(self) -> float:
        return float(self.method_params.get("mu_reg", 1e-5))

    @property
    def M(self) -> int:
        return int(self.method_params.get("M", self.n_iters))

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "method_params": dict(self.method_params),
            "family": self.family.to_json(),
            "T_max": self.T_max,
            "n_iters": self.n_iters,
            "traj_per_iter": self.traj_per_iter,
            "npg": {"delta": self.npg.delta, "gae_lambda": self.npg.gae_lambda,
                    "gamma": self.npg.gamma, "fisher_damping": self.npg.fisher_damping},
            "seeds": list(self.seeds),
            "eval_rollouts": self.eval_rollouts,
            "output_dir": self.output_dir,
            "keep_hessians": self.keep_hessians,
        }

    @staticmethod
    def from_json(obj: dict) -> "ExperimentConfig":
        known = {"method", "method_params", "family", "T_max", "n_iters",
                 "traj_per_iter", "npg", "seeds", "eval_rollouts", "output_dir",
                 "keep_hessians"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "method" not in obj or "family" not in obj:
            raise ConfigError("config requires 'method' and 'family'")
        npg_obj = obj.get("npg", {})
        npg_known = {"delta", "gae_lambda", "gamma", "fisher_damping"}
        if set(npg_obj) - npg_known:
            raise ConfigError(f"unknown npg keys: {sorted(set(npg_obj) - npg_known)}")
        try:
            npg = NPGConfig(**npg_obj)
            family = TaskFamilySpec.from_json(obj["family"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        kwargs = {key: obj[key] for key in
                  ("method_params", "T_max", "n_iters", "traj_per_iter", "seeds",
                   "eval_rollouts", "output_dir", "keep_hessians") if key in obj}
        return ExperimentConfig(method=obj["method"], family=family, npg=npg, **kwargs)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def sample_task_set(family: TaskFamilySpec, T_max: int) -> list[TaskInstance]:
    """The task set is a function of the family alone, so different methods and
    seeds on the same family face the same tasks (only the ordering varies)."""
    fam_hash = hashlib.sha256(
        json.dumps(family.to_json(), sort_keys=True).encode()).hexdigest()
    rng = np.random.default_rng(int(fam_hash[:16], 16))
    return [sample_task(family, rng, task_id=i) for i in range(T_max)]


def _eval_rng(seed: int, task_index: int) -> np.random.Generator:
    return np.random.default_rng([1_000_003, seed, task_index])


def evaluate_policy(task: TaskInstance, policy, n_rollouts: int, gamma: float,
                    rng: np.random.Generator) -> tuple[float, float]:
    """Mean and standard error of the discounted return under the policy's
    own exploration noise."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    returns = np.array([discounted_return(rollout(task, policy, task.family.horizon, rng),
                                          gamma)
                        for _ in range(n_rollouts)])
    stderr = float(returns.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return float(returns.mean()), stderr


def _zero_policy(family: TaskFamilySpec) -> PolicyParams:
    return PolicyParams(theta=np.zeros(family.policy_dim), sigma=family.policy_sigma,
                        action_dim=family.action_dim, feature_map_id=family.feature_map_id)


def _theta_policy(theta: np.ndarray, family: TaskFamilySpec) -> PolicyParams:
    return PolicyParams(theta=theta, sigma=family.policy_sigma,
                        action_dim=family.action_dim, feature_map_id=family.feature_map_id)


@dataclass
class SeedResult:
    seed: int
    rows: list[dict] = field(default_factory=list)
    curve_rows: list[dict] = field(default_factory=list)
    checkpoint: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None
    wall_clock: float = 0.0


def _factored_diag(kb: KnowledgeBase, grad_norms: list[float], method: str) -> dict:
    """Diagnostics block shared by the factored methods; pure in kb state."""
    order = list(kb.records.values())
    diag: dict = {"surrogate_grad_norms": grad_norms}
    if len(kb.L_history) >= 3:
        stab = stability_series(kb.L_history)
        scaled = stab.scaled
        tail = scaled[-10:] if len(scaled) >= 10 else scaled
        median = float(np.median(tail))
        diag["stability"] = {
            "diffs": stab.diffs.tolist(),
            "scaled": scaled.tolist(),
            "tail_max": float(tail.max()),
            "tail_median": median,
            "tail_max_over_median": float(tail.max() / median) if median > 0 else float("inf"),
        }
    if kb.keep_hessians and order and order[0].H is not None:
        diag["surrogate_series"] = surrogate_series(
            kb.L_history, order, kb.lambda_reg, kb.mu_reg).tolist()
        lemma2 = []
        assum_d = []
        for rec in order:
            n_cols = rec.L_snapshot.shape[1]
            s = rec.s[:n_cols]
            if method == "pg_ella":
                violation = sparse_coeff_optimality(rec.L_snapshot, s, rec.alpha,
                                                    rec.H, kb.mu_reg)
            else:
                report = check_lemma2(rec.L_snapshot, s, rec.alpha, rec.H, rec.g, kb.mu_reg)
                violation = report.max_violation
            lemma2.append({"task_id": rec.task_id, "max_violation": violation,
                           "g_inf": float(np.abs(rec.g).max())})
            assum_d.append({"task_id": rec.task_id,
                            "max_eig": check_assumption_d(rec.L_snapshot, rec.H, s)})
        diag["lemma2"] = lemma2
        diag["assumption_d"] = assum_d
    return diag


def _run_seed(cfg: ExperimentConfig, seed: int, tasks: list[TaskInstance]) -> SeedResult:
    fam = cfg.family
    order = np.random.default_rng([seed, 0]).permutation(cfg.T_max)
    train_rng = np.random.default_rng([seed, 1])
    N, tp, h = cfg.n_iters, cfg.traj_per_iter, fam.horizon
    result = SeedResult(seed=seed)
    result.diagnostics["task_order"] = order.tolist()

    def evaluate(task, policy, task_index):
        mean, _ = evaluate_policy(task, policy, cfg.eval_rollouts, cfg.npg.gamma,
                                  _eval_rng(seed, task_index))
        return mean

    def add_curve(task_index, curve):
        for it, val in enumerate(curve):
            result.curve_rows.append({"seed": seed, "task_index": task_index,
                                      "iteration": it, "mean_return": float(val)})

    rows_by_index: dict[int, dict] = {}

    if cfg.method == "lpg_ftw":
        kb = KnowledgeBase(d=fam.policy_dim, k=cfg.k, lambda_reg=cfg.lambda_reg,
                           mu_reg=cfg.mu_reg, keep_hessians=cfg.keep_hessians)
        grad_norms: list[float] = []
        n_consol = N // cfg.M + (1 if N % cfg.M else 0)
        for t_idx in order:
            task = tasks[t_idx]
            start_policy = compose_policy(kb.L, np.zeros(kb.n_columns), None,
                                          fam.policy_sigma, fam.action_dim,
                                          fam.feature_map_id)
            start = evaluate(task, start_policy, int(t_idx))
            if kb.phase == "initializing":
                curve = initialize_kb(kb, [task], cfg.npg, N, tp, train_rng)[0]
                rec = kb.records[task.task_id]
                tuned = _theta_policy(rec.alpha, fam)
                tune = evaluate(task, tuned, int(t_idx))
                update = evaluate(task, tuned, int(t_idx))   # no solve yet
                steps = (N + 1) * tp * h
            else:
                rec, curve = train_task(kb, task, cfg.npg, N, cfg.M, tp, train_rng)
                grad_norms.append(surrogate_grad_norm(kb))
                tune = evaluate(task, _theta_policy(rec.alpha, fam), int(t_idx))
                updated = compose_policy(kb.L, rec.s, None, fam.policy_sigma,
                                         fam.action_dim, fam.feature_map_id)
                update = evaluate(task, updated, int(t_idx))
                steps = (N + n_consol) * tp * h
            add_curve(int(t_idx), curve)
            rows_by_index[int(t_idx)] = {
                "seed": seed, "task_index": int(t_idx), "task_id": task.task_id,
                "start_return": start, "tune_return": tune, "update_return": update,
                "env_steps_used": steps}
        for t_idx in order:
            rec = kb.records[tasks[t_idx].task_id]
            final_policy = compose_policy(kb.L, rec.s, None, fam.policy_sigma,
                                          fam.action_dim, fam.feature_map_id)
            rows_by_index[int(t_idx)]["final_return"] = evaluate(
                tasks[t_idx], final_policy, int(t_idx))
        result.checkpoint = kb_to_json(kb, variant="lpg_ftw")
        result.diagnostics.update(_factored_diag(kb, grad_norms, "lpg_ftw"))

    elif cfg.method == "stl":
        thetas: dict[int, np.ndarray] = {}
        for t_idx in order:
            task = tasks[t_idx]
            start = evaluate(task, _zero_policy(fam), int(t_idx))
            policy, curve, _, _ = pg.stl_train(task, _zero_policy(fam), cfg.npg, N, tp,
                                               train_rng)
            thetas[task.task_id] = policy.theta
            tune = evaluate(task, policy, int(t_idx))
            add_curve(int(t_idx), curve)
            rows_by_index[int(t_idx)] = {
                "seed": seed, "task_index": int(t_idx), "task_id": task.task_id,
                "start_return": start, "tune_return": tune, "update_return": tune,
                "env_steps_used": (N + 1) * tp * h}
        for t_idx in order:
            task = tasks[t_idx]
            rows_by_index[int(t_idx)]["final_return"] = evaluate(
                task, _theta_policy(thetas[task.task_id], fam), int(t_idx))
        result.checkpoint = {
            "variant": "stl", "sigma": fam.policy_sigma,
            "policies": {str(tid): encode_array(th) for tid, th in thetas.items()}}

    elif cfg.method == "ewc":
        params = cfg.method_params
        state = EwcState(penalty_form=params.get("penalty_form", "original"),
                         sigma_mode=params.get("sigma_mode", "shared_sigma"),
                         lambda_ewc=float(params.get("lambda_ewc", 1e-6)))
        policy = _zero_policy(fam)
        for t_count, t_idx in enumerate(order, start=1):
            task = tasks[t_idx]
            start = evaluate(task, policy, int(t_idx))
            policy, state, curve = ewc_train(task, state, policy, cfg.npg, N, tp,
                                             train_rng, t=t_count)
            tune = evaluate(task, policy, int(t_idx))
            add_curve(int(t_idx), curve)
            rows_by_index[int(t_idx)] = {
                "seed": seed, "task_index": int(t_idx), "task_id": task.task_id,
                "start_return": start, "tune_return": tune, "update_return": tune,
                "env_steps_used": (N + 1) * tp * h}
        for t_idx in order:
            rows_by_index[int(t_idx)]["final_return"] = evaluate(
                tasks[t_idx], policy, int(t_idx))
        ckpt = ewc_state_to_json(state)
        ckpt["theta"] = encode_array(policy.theta)
        ckpt["sigma"] = policy.sigma
        result.checkpoint = ckpt

    elif cfg.method == "pg_ella":
        state = PgEllaState(kb=KnowledgeBase(
            d=fam.policy_dim, k=cfg.k, lambda_reg=cfg.lambda_reg, mu_reg=cfg.mu_reg,
            keep_hessians=cfg.keep_hessians))
        grad_norms = []
        for t_idx in order:
            task = tasks[t_idx]
            start = evaluate(task, _zero_policy(fam), int(t_idx))
            rec, state, curve = pg_ella_train(task, state, cfg.npg, N, tp, train_rng)
            kb = state.kb
            if kb.phase == "main":
                grad_norms.append(surrogate_grad_norm(kb))
            tune = evaluate(task, _theta_policy(rec.alpha, fam), int(t_idx))
            s_cur = rec.s[:kb.n_columns]
            updated = compose_policy(kb.L, s_cur, None, fam.policy_sigma,
                                     fam.action_dim, fam.feature_map_id)
            update = evaluate(task, updated, int(t_idx))
            add_curve(int(t_idx), curve)
            rows_by_index[int(t_idx)] = {
                "seed": seed, "task_index": int(t_idx), "task_id": task.task_id,
                "start_return": start, "tune_return": tune, "update_return": update,
                "env_steps_used": (N + 1) * tp * h}
        kb = state.kb
        for t_idx in order:
            rec = kb.records[tasks[t_idx].task_id]
            final_policy = compose_policy(kb.L, rec.s, None, fam.policy_sigma,
                                          fam.action_dim, fam.feature_map_id)
            rows_by_index[int(t_idx)]["final_return"] = evaluate(
                tasks[t_idx], final_policy, int(t_idx))
        result.checkpoint = kb_to_json(kb, variant="pg_ella")
        result.diagnostics.update(_factored_diag(kb, grad_norms, "pg_ella"))

    result.rows = [rows_by_index[int(t)] for t in order]
    return result


def run_lifelong(cfg: ExperimentConfig) -> dict:
    """Run all seeds sequentially; a failing seed yields one failure row and
    an entry in the failure list, and the remaining seeds still run."""
    tasks = sample_task_set(cfg.family, cfg.T_max)
    results: list[SeedResult] = []
    failures: list[dict] = []
    for seed in cfg.seeds:
        started = time.perf_counter()
        try:
            res = _run_seed(cfg, seed, tasks)
        except Exception as exc:  # noqa: BLE001 - seed isolation is the contract
            res = SeedResult(seed=seed, error=f"{type(exc).__name__}: {exc}")
            res.rows = [{"seed": seed, "task_index": -1, "task_id": -1,
                         "start_return": float("nan"), "tune_return": float("nan"),
                         "update_return": float("nan"), "final_return": float("nan"),
                         "env_steps_used": 0}]
            failures.append({"seed": seed, "error": res.error})
        res.wall_clock = time.perf_counter() - started
        results.append(res)
    return {"config": cfg, "tasks": tasks, "seed_results": results, "failures": failures}


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def _csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(
            str(row[c]) if isinstance(row[c], int) else repr(float(row[c]))
            for c in columns))
    return "\n".join(lines) + "\n"


def _aggregate(rows: list[dict], phase: str) -> tuple[float, float]:
    """Mean over all rows; standard error across per-seed means."""
    by_seed: dict[int, list[float]] = {}
    for row in rows:
        val = float(row[phase])
        if np.isfinite(val):
            by_seed.setdefault(int(row["seed"]), []).append(val)
    if not by_seed:
        return float("nan"), float("nan")
    seed_means = np.array([np.mean(v) for v in by_seed.values()])
    stderr = float(seed_means.std(ddof=1) / np.sqrt(len(seed_means))) \
        if len(seed_means) > 1 else 0.0
    return float(seed_means.mean()), stderr


def emit_outputs(run: dict, out_dir: str) -> None:
    cfg: ExperimentConfig = run["config"]
    os.makedirs(out_dir, exist_ok=True)
    rows = [row for res in run["seed_results"] for row in res.rows]
    curve_rows = [row for res in run["seed_results"] for row in res.curve_rows]

    _atomic_write(os.path.join(out_dir, "lifelong_metrics.csv"),
                  _csv_text(METRICS_COLUMNS, rows))
    _atomic_write(os.path.join(out_dir, "curves.csv"),
                  _csv_text(CURVES_COLUMNS, curve_rows))

    diagnostics = {"method": cfg.method,
                   "per_seed": {str(res.seed): res.diagnostics
                                for res in run["seed_results"] if res.error is None}}
    _atomic_write(os.path.join(out_dir, "diagnostics.json"),
                  json.dumps(diagnostics, indent=1, sort_keys=True))

    checkpoint = {"method": cfg.method, "config_hash": config_hash(cfg),
                  "seeds": {str(res.seed): res.checkpoint
                            for res in run["seed_results"] if res.checkpoint is not None}}
    _atomic_write(os.path.join(out_dir, "checkpoint.json"), json.dumps(checkpoint))

    manifest = {"family": cfg.family.to_json(),
                "tasks": [t.to_json() for t in run["tasks"]],
                "orderings": {str(res.seed): res.diagnostics.get("task_order")
                              for res in run["seed_results"]}}
    _atomic_write(os.path.join(out_dir, "tasks.json"), json.dumps(manifest, indent=1))

    summary = {
        "config": cfg.to_json(),
        "config_hash": config_hash(cfg),
        "aggregates": {phase: dict(zip(("mean", "stderr"), _aggregate(rows, phase)))
                       for phase in ("start_return", "tune_return",
                                     "update_return", "final_return")},
        "diagnostics_trends": _diag_trends(diagnostics),
        "failures": run["failures"],
        "wall_clock_seconds": {str(res.seed): res.wall_clock
                               for res in run["seed_results"]},
    }
    _atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=1))

    plot_learning_curves(out_dir)
    plot_phase_bars(out_dir)


def _diag_trends(diagnostics: dict) -> dict:
    trends: dict = {}
    stab_ratios, grad_maxes, lemma_maxes, d_maxes = [], [], [], []
    for diag in diagnostics["per_seed"].values():
        if "stability" in diag:
            stab_ratios.append(diag["stability"]["tail_max_over_median"])
        if diag.get("surrogate_grad_norms"):
            grad_maxes.append(max(diag["surrogate_grad_norms"]))
        for entry in diag.get("lemma2", []):
            lemma_maxes.append(entry["max_violation"])
        for entry in diag.get("assumption_d", []):
            d_maxes.append(entry["max_eig"])
    if stab_ratios:
        trends["stability_tail_max_over_median"] = stab_ratios
    if grad_maxes:
        trends["max_surrogate_grad_norm"] = max(grad_maxes)
    if lemma_maxes:
        trends["max_lemma2_violation"] = max(lemma_maxes)
    if d_maxes:
        trends["max_assumption_d_eig"] = max(d_maxes)
    return trends


def read_csv_rows(path: str) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def learning_curve_aggregate(run_dir: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-iteration mean return (over seeds and tasks) with a standard-error
    band across per-seed means, recomputed from curves.csv."""
    rows = read_csv_rows(os.path.join(run_dir, "curves.csv"))
    if not rows:
        return np.array([]), np.array([]), np.array([])
    per_seed_iter: dict[tuple[int, int], list[float]] = {}
    for row in rows:
        key = (int(row["seed"]), int(row["iteration"]))
        per_seed_iter.setdefault(key, []).append(float(row["mean_return"]))
    iters = sorted({it for _, it in per_seed_iter})
    seeds = sorted({sd for sd, _ in per_seed_iter})
    means, errs = [], []
    for it in iters:
        seed_means = np.array([np.mean(per_seed_iter[(sd, it)]) for sd in seeds
                               if (sd, it) in per_seed_iter])
        means.append(seed_means.mean())
        errs.append(seed_means.std(ddof=1) / np.sqrt(len(seed_means))
                    if len(seed_means) > 1 else 0.0)
    return np.array(iters), np.array(means), np.array(errs)


def _savefig(fig, path: str) -> None:
    import matplotlib
    # strip the creation date and fix element-id salting for byte determinism
    matplotlib.rcParams["svg.hashsalt"] = "lifelong-pg"
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_learning_curves(run_dir: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    iters, means, errs = learning_curve_aggregate(run_dir)
    fig, ax = plt.subplots(figsize=(6, 4))
    if iters.size:
        ax.plot(iters, means, color="C0", label="mean over seeds and tasks")
        ax.fill_between(iters, means - errs, means + errs, color="C0", alpha=0.3,
                        label="standard error across seeds")
        ax.legend()
    ax.set_xlabel("training iteration")
    ax.set_ylabel("mean return")
    _savefig(fig, os.path.join(run_dir, "learning_curves.svg"))
    plt.close(fig)
    return iters, means, errs


def plot_phase_bars(run_dir: str) -> dict:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv_rows(os.path.join(run_dir, "lifelong_metrics.csv"))
    phases = ("start_return", "tune_return", "update_return", "final_return")
    stats = {}
    for phase in phases:
        mean, err = _aggregate(
            [{**r, "seed": int(r["seed"])} for r in rows], phase) if rows \
            else (float("nan"), float("nan"))
        stats[phase] = (mean, err)
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [p.replace("_return", "") for p in phases]
    values = [stats[p][0] for p in phases]
    errors = [stats[p][1] for p in phases]
    if rows:
        ax.bar(labels, values, yerr=errors, color=["C7", "C0", "C1", "C2"], capsize=4)
    ax.set_ylabel("mean return")
    _savefig(fig, os.path.join(run_dir, "phase_bars.svg"))
    plt.close(fig)
    return stats
