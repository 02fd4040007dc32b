"""Acceptance suite: ten end-to-end criteria, one printed verdict line each.

Shared full-scale runs: a 20-task LQR family with +-50% dynamics variation
(criteria 3, 5, 6, 8) and a widened variant whose input gain can flip sign
(criterion 7) so that no single shared policy can serve every task while the
per-task coefficients of the factored learners still can.
"""

import collections
import os
import time

import numpy as np
import pytest

from conftest import fd_grad, fd_hess, lqr_family
from test_lpg_ftw import dense_quadratic_maximizer, make_record
from test_pg import fixed_policy, make_batch

from lifelong_pg.baselines import (EwcState, PgEllaState, ewc_penalty_grad,
                                   pg_ella_train, solve_sparse_coeffs,
                                   sparse_coeff_optimality)
from lifelong_pg.diagnostics import check_lemma2
from lifelong_pg.families import (TaskFamilySpec, optimal_lqr_policy, sample_task)
from lifelong_pg.harness import (ExperimentConfig, emit_outputs, evaluate_policy,
                                 run_lifelong)
from lifelong_pg.lpg_ftw import (KnowledgeBase, add_task_to_accumulators,
                                 kb_from_json, solve_L)
from lifelong_pg.pg import (NPGConfig, collect_batch, fill_advantages, fisher,
                            fit_value_baseline, npg_step, pg_gradient,
                            reinforce_hessian, stl_train)
from lifelong_pg.policies import PolicyParams

SEEDS = [0, 1, 2, 3, 4]
EWC_LAMBDA_GRID = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3)

MAIN_FAMILY = lqr_family(state_dim=4, action_dim=2, horizon=15,
                         feature_map_id="state_bias")

# input gain spanning both signs: conflicting feedback directions that a
# single policy cannot cover, while s-vectors can negate dictionary columns
WIDE_FAMILY = TaskFamilySpec(
    family_id="lqr", state_dim=4, action_dim=2, horizon=15,
    variation_ranges={"dyn_scale": (0.5, 1.5), "input_scale": (-1.5, 1.5)},
    noise_std=0.05, reward_spec={"q": 1.0, "r": 0.1},
    policy_sigma=0.3, feature_map_id="state_bias")


def _verdict(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" [{detail}]"
    print(line)
    assert ok, line


def _make_config(family, method, **method_params):
    return ExperimentConfig(method=method, family=family,
                            method_params=method_params, T_max=20, n_iters=30,
                            traj_per_iter=10, seeds=list(SEEDS), eval_rollouts=30)


def _rows(run):
    return [row for res in run["seed_results"] for row in res.rows]


def _seed_rows(run, seed):
    return [row for row in _rows(run) if row["seed"] == seed]


def _degradation(run, seed) -> float:
    """Per-seed forgetting: mean drop from update to final, relative to the
    mean update magnitude."""
    rows = _seed_rows(run, seed)
    drop = np.mean([r["update_return"] - r["final_return"] for r in rows])
    return float(drop / np.mean([abs(r["update_return"]) for r in rows]))


def _task_auc(run, seed, skip_first: int) -> float:
    """Mean area under the learning curve over tasks trained after position
    ``skip_first`` in the seed's training order."""
    res = [r for r in run["seed_results"] if r.seed == seed][0]
    late = set(res.diagnostics["task_order"][skip_first:])
    per_task = collections.defaultdict(float)
    for row in res.curve_rows:
        if row["task_index"] in late:
            per_task[row["task_index"]] += row["mean_return"]
    return float(np.mean(list(per_task.values())))


@pytest.fixture(scope="module")
def main_runs():
    started = time.perf_counter()
    lpg = run_lifelong(_make_config(MAIN_FAMILY, "lpg_ftw", k=5))
    stl = run_lifelong(_make_config(MAIN_FAMILY, "stl"))
    elapsed = time.perf_counter() - started
    assert not lpg["failures"] and not stl["failures"]
    return {"lpg": lpg, "stl": stl, "elapsed": elapsed}


@pytest.fixture(scope="module")
def wide_runs():
    lpg = run_lifelong(_make_config(WIDE_FAMILY, "lpg_ftw", k=5))
    assert not lpg["failures"]
    ewc = {}
    for lam in EWC_LAMBDA_GRID:
        run = run_lifelong(_make_config(WIDE_FAMILY, "ewc", lambda_ewc=lam,
                                        penalty_form="original"))
        assert not run["failures"]
        ewc[lam] = run
    best = max(EWC_LAMBDA_GRID,
               key=lambda lam: np.mean([r["final_return"] for r in _rows(ewc[lam])]))
    return {"lpg": lpg, "ewc_best": ewc[best], "best_lambda": best}


def test_criterion_01_keystone_oracle_equivalence():
    rng = np.random.default_rng(20260823)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 7))
        k = int(rng.integers(1, 3))
        T = int(rng.integers(1, 5))
        lam = float(rng.uniform(1e-4, 1e-1))
        kb = KnowledgeBase(d=d, k=k, lambda_reg=lam)
        recs = [make_record(rng, d, k, task_id=i) for i in range(T)]
        for rec in recs:
            add_task_to_accumulators(kb, rec)
        L = solve_L(kb)

        def objective(vec, recs=recs, d=d, k=k, lam=lam, T=T):
            Lm = vec.reshape((d, k), order="F")
            total = sum((r.alpha - Lm @ r.s) @ r.H @ (r.alpha - Lm @ r.s)
                        + r.g @ (Lm @ r.s - r.alpha) for r in recs)
            return -lam * vec @ vec + total / T

        L_star = dense_quadratic_maximizer(objective, d * k).reshape((d, k), order="F")
        err = np.linalg.norm(L - L_star) / max(np.linalg.norm(L_star), 1e-12)
        worst = max(worst, err)
    elapsed = time.perf_counter() - started
    _verdict(1, "keystone oracle equivalence", worst < 1e-6 and elapsed < 10.0,
             f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_gradient_hessian_correctness():
    rng = np.random.default_rng(11)
    started = time.perf_counter()
    ok = True

    for _ in range(5):
        batch = make_batch(rng)
        batch.advantages = [rng.standard_normal(6) for _ in range(4)]
        policy = fixed_policy(rng)

        def surrogate(theta, batch=batch, policy=policy):
            q = policy.with_theta(theta)
            total = 0.0
            for traj, adv in zip(batch.trajectories, batch.advantages):
                for i in range(len(traj)):
                    total += q.log_prob(traj.states[i], traj.actions[i]) * adv[i]
            return total / batch.n_traj

        g = pg_gradient(batch, policy)
        g_fd = fd_grad(surrogate, policy.theta.copy())
        ok &= np.allclose(g, g_fd, rtol=1e-6, atol=1e-9 * max(np.abs(g).max(), 1.0))

        # quadratic-model convention: the surrogate carries the Taylor 1/2
        # inside the quadratic form, so the curvature is half the FD Hessian
        H = reinforce_hessian(batch, policy)
        H_fd = 0.5 * fd_hess(surrogate, policy.theta.copy())
        ok &= np.allclose(H, H_fd, rtol=1e-4, atol=1e-6 * np.abs(H).max())

    for form in ("huszar", "scaled", "original"):
        state = EwcState(penalty_form=form, lambda_ewc=0.3)
        for _ in range(3):
            A = rng.standard_normal((4, 4))
            state.record_task(rng.standard_normal(4), -(A @ A.T + 0.1 * np.eye(4)))
        theta = rng.standard_normal(4)
        _, grad = ewc_penalty_grad(state, theta, t=4)
        grad_fd = fd_grad(lambda th: ewc_penalty_grad(state, th, 4)[0], theta)
        ok &= np.allclose(grad, grad_fd, rtol=1e-6, atol=1e-9)

    elapsed = time.perf_counter() - started
    _verdict(2, "gradient/Hessian finite-difference correctness",
             ok and elapsed < 30.0, f"{elapsed:.1f}s")


def test_criterion_03_npg_contract(main_runs):
    cfg = NPGConfig()
    rng = np.random.default_rng(5)
    worst_rel = 0.0
    for i in range(10):
        task = sample_task(MAIN_FAMILY, rng, task_id=i)
        policy = PolicyParams(theta=0.1 * rng.standard_normal(MAIN_FAMILY.policy_dim),
                              sigma=MAIN_FAMILY.policy_sigma, action_dim=2,
                              feature_map_id="state_bias")
        for _ in range(3):
            batch = collect_batch(task, policy, 10, rng)
            fill_advantages(batch, fit_value_baseline(batch, cfg.gamma), cfg)
            g = pg_gradient(batch, policy)
            F = fisher(batch, policy, cfg.fisher_damping)
            step, _ = npg_step(g, F, cfg.delta)
            if np.any(step):
                worst_rel = max(worst_rel, abs(step @ F @ step - cfg.delta) / cfg.delta)
            policy = policy.with_theta(policy.theta + step)

    max_eig = -np.inf
    for res in main_runs["lpg"]["seed_results"]:
        kb = kb_from_json(res.checkpoint)
        for rec in kb.records.values():
            max_eig = max(max_eig, float(np.linalg.eigvalsh(rec.H).max()))

    _verdict(3, "NPG trust-region and curvature contract",
             worst_rel < 1e-8 and max_eig < 0.0,
             f"max |s'Fs - delta|/delta {worst_rel:.2e}, max H eig {max_eig:.2e}")


def test_criterion_04_stl_proficiency():
    started = time.perf_counter()
    gaps = {}
    for state_dim in (1, 2):
        fam = lqr_family(state_dim=state_dim, action_dim=1, horizon=15)
        task = sample_task(fam, np.random.default_rng(7), task_id=0)
        oracle_return, _ = evaluate_policy(task, optimal_lqr_policy(task, 0.995),
                                           200, 0.995, np.random.default_rng(99))
        finals = []
        for seed in SEEDS:
            p0 = PolicyParams(theta=np.zeros(fam.policy_dim), sigma=fam.policy_sigma,
                              action_dim=1, feature_map_id=fam.feature_map_id)
            policy, _, _, _ = stl_train(task, p0, NPGConfig(), 50, 10,
                                        np.random.default_rng(seed))
            ret, _ = evaluate_policy(task, policy, 200, 0.995,
                                     np.random.default_rng(99))
            finals.append(ret)
        gaps[state_dim] = abs(np.median(finals) - oracle_return) / abs(oracle_return)
    elapsed = time.perf_counter() - started
    _verdict(4, "STL proficiency vs Riccati oracle",
             all(gap <= 0.15 for gap in gaps.values()) and elapsed < 120.0,
             f"median gaps {gaps[1]:.1%} / {gaps[2]:.1%}, {elapsed:.0f}s")


def test_criterion_05_faster_training(main_runs):
    k = 5
    wins = sum(_task_auc(main_runs["lpg"], seed, k) > _task_auc(main_runs["stl"], seed, k)
               for seed in SEEDS)
    _verdict(5, "faster training than STL",
             wins >= 4 and main_runs["elapsed"] < 900.0,
             f"{wins}/5 seeds, {main_runs['elapsed']:.0f}s")


def test_criterion_06_no_hindrance(main_runs):
    rows = _rows(main_runs["lpg"])
    gap = np.mean([r["update_return"] - r["tune_return"] for r in rows])
    floor = -0.02 * np.mean([abs(r["tune_return"]) for r in rows])
    _verdict(6, "consolidation never hinders", gap >= floor,
             f"mean(update-tune) {gap:.3f} >= {floor:.3f}")


def test_criterion_07_no_forgetting(wide_runs):
    rows = _rows(wide_runs["lpg"])
    gap = np.mean([r["final_return"] - r["update_return"] for r in rows])
    floor = -0.05 * np.mean([abs(r["update_return"]) for r in rows])
    wins = sum(_degradation(wide_runs["ewc_best"], seed) > _degradation(wide_runs["lpg"], seed)
               for seed in SEEDS)
    _verdict(7, "no forgetting (and EWC best-lambda forgets more)",
             gap >= floor and wins >= 4,
             f"mean(final-update) {gap:.3f} >= {floor:.3f}; EWC worse in {wins}/5 "
             f"(lambda={wide_runs['best_lambda']:g})")


def test_criterion_08_theory_diagnostics(main_runs):
    stable_seeds = 0
    grad_max = 0.0
    lemma_ok = True
    assum_ok = True
    for res in main_runs["lpg"]["seed_results"]:
        diag = res.diagnostics
        if diag["stability"]["tail_max_over_median"] <= 3.0:
            stable_seeds += 1
        grad_max = max(grad_max, max(diag["surrogate_grad_norms"]))
        assum_ok &= all(e["max_eig"] < 0 for e in diag["assumption_d"])
        # stationarity transfer at fully converged coefficients: absorb the
        # linear term into the anchor and solve the coefficient subproblem
        kb = kb_from_json(res.checkpoint)
        for rec in kb.records.values():
            shifted = rec.alpha - 0.5 * np.linalg.solve(rec.H, rec.g)
            s_star = solve_sparse_coeffs(rec.L_snapshot, shifted, rec.H, kb.mu_reg,
                                         tol=1e-13)
            report = check_lemma2(rec.L_snapshot, s_star, rec.alpha, rec.H, rec.g,
                                  kb.mu_reg)
            lemma_ok &= report.max_violation <= 1e-2 * np.abs(rec.g).max()
    _verdict(8, "theory diagnostics",
             stable_seeds >= 4 and grad_max <= 1e-6 and lemma_ok and assum_ok,
             f"stable {stable_seeds}/5, max grad norm {grad_max:.2e}")


def test_criterion_09_byte_determinism(tmp_path):
    cfg = ExperimentConfig(method="lpg_ftw", family=lqr_family(state_dim=2, horizon=8),
                           method_params={"k": 2}, T_max=3, n_iters=3,
                           traj_per_iter=4, seeds=[0, 1], eval_rollouts=5)
    contents = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        emit_outputs(run_lifelong(cfg), out)
        blob = {}
        for artifact in ("lifelong_metrics.csv", "curves.csv"):
            with open(os.path.join(out, artifact), "rb") as fh:
                blob[artifact] = fh.read()
        contents.append(blob)
    _verdict(9, "byte-identical CSV outputs", contents[0] == contents[1])


def test_criterion_10_pg_ella_fidelity():
    fam = lqr_family(state_dim=2, action_dim=1, horizon=10)
    cfg = NPGConfig()
    state = PgEllaState(kb=KnowledgeBase(d=2, k=2, lambda_reg=1e-5, mu_reg=1e-5))

    identical = True
    rho_max = 0.0
    for i in range(6):
        task = sample_task(fam, np.random.default_rng(100 + i), task_id=i)
        p0 = PolicyParams(theta=np.zeros(2), sigma=fam.policy_sigma, action_dim=1)
        _, stl_curve, _, _ = stl_train(task, p0, cfg, 5, 5, np.random.default_rng(i))
        post_fill = state.kb.n_columns == state.kb.k
        rec, state, ella_curve = pg_ella_train(task, state, cfg, 5, 5,
                                               np.random.default_rng(i))
        identical &= np.array_equal(stl_curve, ella_curve)
        if post_fill:   # stage-2 solves only happen once the dictionary is full
            rho_max = max(rho_max, sparse_coeff_optimality(
                rec.L_snapshot, rec.s, rec.alpha, rec.H, state.kb.mu_reg))
    _verdict(10, "PG-ELLA stage fidelity", identical and rho_max <= 1e-6,
             f"stage-1 identical: {identical}, max rho violation {rho_max:.2e}")
