"""Command-line entry point: run / eval / diag / plot.

Exit codes: 0 success, 1 any failed seed or runtime failure, 2 config error
(unparseable or invalid inputs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .families import task_from_json
from .harness import (ConfigError, ExperimentConfig, _factored_diag, emit_outputs,
                      evaluate_policy, plot_learning_curves, plot_phase_bars,
                      run_lifelong)
from .lpg_ftw import kb_from_json, surrogate_grad_norm
from .policies import PolicyParams, compose_policy
from .serialize import decode_array


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(_load_json(args.config))
    if args.seed_offset:
        cfg = ExperimentConfig.from_json(
            {**cfg.to_json(), "seeds": [s + args.seed_offset for s in cfg.seeds]})
    out_dir = args.out if args.out else cfg.output_dir
    run = run_lifelong(cfg)
    emit_outputs(run, out_dir)
    if run["failures"]:
        for failure in run["failures"]:
            print(f"seed {failure['seed']} failed: {failure['error']}", file=sys.stderr)
        return 1
    return 0


def _checkpoint_policies(state: dict, family) -> dict:
    """Map task_id -> policy for one seed's checkpoint state; for ewc the same
    shared policy is returned for every requested task (key None)."""
    variant = state["variant"]
    if variant in ("lpg_ftw", "pg_ella"):
        kb = kb_from_json(state)
        return {tid: compose_policy(kb.L, rec.s[:kb.n_columns], None,
                                    family.policy_sigma, family.action_dim,
                                    family.feature_map_id)
                for tid, rec in kb.records.items()}
    if variant == "stl":
        return {int(tid): PolicyParams(theta=decode_array(enc), sigma=state["sigma"],
                                       action_dim=family.action_dim,
                                       feature_map_id=family.feature_map_id)
                for tid, enc in state["policies"].items()}
    if variant == "ewc":
        shared = PolicyParams(theta=decode_array(state["theta"]), sigma=state["sigma"],
                              action_dim=family.action_dim,
                              feature_map_id=family.feature_map_id)
        return {None: shared}
    raise ConfigError(f"unknown checkpoint variant {variant!r}")


def _cmd_eval(args) -> int:
    checkpoint = _load_json(args.checkpoint)
    manifest = _load_json(args.tasks)
    tasks = [task_from_json(obj) for obj in manifest["tasks"]]
    family = tasks[0].family if tasks else None
    print("seed,task_id,mean_return,stderr")
    failed = False
    for seed_key, state in sorted(checkpoint["seeds"].items(), key=lambda kv: int(kv[0])):
        policies = _checkpoint_policies(state, family)
        for task in tasks:
            policy = policies.get(task.task_id, policies.get(None))
            if policy is None:
                print(f"no policy for task {task.task_id} (seed {seed_key})",
                      file=sys.stderr)
                failed = True
                continue
            rng = np.random.default_rng([int(seed_key), task.task_id, 99])
            mean, err = evaluate_policy(task, policy, args.rollouts, args.gamma, rng)
            print(f"{seed_key},{task.task_id},{mean!r},{err!r}")
    return 1 if failed else 0


def _cmd_diag(args) -> int:
    checkpoint = _load_json(os.path.join(args.run_dir, "checkpoint.json"))
    per_seed = {}
    for seed_key, state in checkpoint["seeds"].items():
        if state["variant"] not in ("lpg_ftw", "pg_ella"):
            continue
        kb = kb_from_json(state)
        grad_norms = [surrogate_grad_norm(kb)] if kb.phase == "main" else []
        per_seed[seed_key] = _factored_diag(kb, grad_norms, state["variant"])
    report = {"method": checkpoint["method"], "replayed_from_checkpoint": True,
              "per_seed": per_seed}
    path = os.path.join(args.run_dir, "diagnostics.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    print(f"wrote {path}")
    return 0


def _cmd_plot(args) -> int:
    for name in ("curves.csv", "lifelong_metrics.csv"):
        if not os.path.exists(os.path.join(args.run_dir, name)):
            raise ConfigError(f"missing {name} in {args.run_dir}")
    plot_learning_curves(args.run_dir)
    plot_phase_bars(args.run_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifelong-pg",
                                     description="Lifelong policy-gradient benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a lifelong experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a task manifest")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--tasks", required=True)
    p_eval.add_argument("--rollouts", type=int, default=50)
    p_eval.add_argument("--gamma", type=float, default=0.995)
    p_eval.set_defaults(func=_cmd_eval)

    p_diag = sub.add_parser("diag", help="recompute diagnostics from a run directory")
    p_diag.add_argument("--run-dir", required=True)
    p_diag.set_defaults(func=_cmd_diag)

    p_plot = sub.add_parser("plot", help="regenerate plots from a run directory")
    p_plot.add_argument("--run-dir", required=True)
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
