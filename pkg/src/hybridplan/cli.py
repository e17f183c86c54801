"""Command-line front end: run scenarios, solver batches, verification suites.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .planners import SOLVERS, PlannerConfig
from .scenarios import (
    SCENARIO_NAMES,
    ScenarioConfig,
    build_scenario,
    ground_truth_for,
    load_scenario,
    run_trial,
)
from . import verification as verif

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_RUNTIME = 3

CSV_COLUMNS = [
    "trial",
    "step",
    "action",
    "reward",
    "cumulative_reward",
    "n_hypotheses",
    "max_weight",
    "wall_ms",
]

_DEFAULTS = PlannerConfig()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    p = _Parser(
        prog="hybridplan",
        description="Hybrid-belief POMDP planning scenarios and verification suites.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def planner_flags(sp):
        g = sp.add_argument_group("planner")
        g.add_argument("--iterations", type=int, default=None,
                       help="search iterations per planning step (default 2000)")
        g.add_argument("--time-budget-s", type=float, default=None,
                       help="wall-clock seconds per planning step (excludes --iterations)")
        g.add_argument("--horizon", type=int, default=_DEFAULTS.horizon,
                       help="lookahead horizon (default: %(default)s)")
        g.add_argument("--ucb-c", type=float, default=_DEFAULTS.ucb_c,
                       help="UCB exploration constant (default: %(default)s)")
        g.add_argument("--n-particles", type=int, default=_DEFAULTS.n_particles,
                       help="state particles per belief node (default: %(default)s)")
        g.add_argument("--k-obs", type=float, default=_DEFAULTS.k_obs,
                       help="observation widening multiplier (default: %(default)s)")
        g.add_argument("--alpha-obs", type=float, default=_DEFAULTS.alpha_obs,
                       help="observation widening exponent (default: %(default)s)")
        g.add_argument("--prune-budget", type=int, default=_DEFAULTS.prune_budget,
                       help="hypothesis budget of the pruning baselines (default: %(default)s)")

    def scenario_flags(sp):
        g = sp.add_argument_group("scenario")
        g.add_argument("--scenario", choices=SCENARIO_NAMES, help="built-in scenario name")
        g.add_argument("--config", help="scenario config file (YAML)")
        g.add_argument("--scale", type=float, default=1.0,
                       help="world scale for built-in scenarios (default: %(default)s)")
        g.add_argument("--episode-len", type=int, default=None,
                       help="macro steps per episode (default: scenario default)")
        g.add_argument("--trials", type=int, default=1, help="trial count (default: %(default)s)")
        g.add_argument("--seed", type=int, default=0, help="base seed (default: %(default)s)")
        g.add_argument("--jobs", type=int, default=1,
                       help="parallel trial workers (default: %(default)s)")
        g.add_argument("--out", default=None, help="output directory for CSV/JSON records")

    run = sub.add_parser("run", help="run one solver on a scenario",
                         formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    scenario_flags(run)
    planner_flags(run)
    run.add_argument("--solver", choices=sorted(SOLVERS), required=True)

    batch = sub.add_parser("batch", help="compare solvers on one scenario",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    scenario_flags(batch)
    planner_flags(batch)
    batch.add_argument("--solvers", default="hbmcp,vanilla,pftdpw,dabsp",
                       help="comma-separated solver list (default: %(default)s)")

    ver = sub.add_parser("verify", help="run verification suites against the oracles")
    ver.add_argument("--suite", choices=("lemmas", "table1", "all"), default="lemmas")
    ver.add_argument("--runs", type=int, default=10000,
                     help="Monte Carlo runs per estimator check (default: %(default)s)")
    ver.add_argument("--seed", type=int, default=0)

    enum = sub.add_parser("enumerate", help="print exact oracle values for a toy fixture")
    enum.add_argument("--fixture", default="toy_estimators.yaml",
                      help="fixture name or YAML path (default: %(default)s)")
    enum.add_argument("--horizon", type=int, default=2)

    return p


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------


class _UsageError(Exception):
    pass


def _resolve_scenario(args) -> ScenarioConfig:
    if bool(args.scenario) == bool(args.config):
        raise _UsageError("exactly one of --scenario/--config is required")
    if args.config:
        config = load_scenario(args.config)
    else:
        config, _ = build_scenario(args.scenario, scale=args.scale, seed=args.seed,
                                   episode_len=args.episode_len)
    if args.episode_len is not None and config.episode_len != args.episode_len:
        config = replace(config, episode_len=args.episode_len)
    return config


def _planner_config(args) -> PlannerConfig:
    iterations = args.iterations
    if iterations is None and args.time_budget_s is None:
        iterations = 2000
    return PlannerConfig(
        ucb_c=args.ucb_c,
        horizon=args.horizon,
        k_obs=args.k_obs,
        alpha_obs=args.alpha_obs,
        n_particles=args.n_particles,
        iterations=iterations,
        time_budget_s=args.time_budget_s,
        prune_budget=args.prune_budget,
    )


def _one_trial(payload):
    config, solver, pc, trial_index, base_seed = payload
    trial_seed = base_seed + trial_index
    gt = ground_truth_for(config, trial_seed)
    record = run_trial(config, gt, solver, pc, trial_seed)
    return trial_index, record


def _run_trials(config, solver, pc, trials, base_seed, jobs):
    payloads = [(config, solver, pc, i, base_seed) for i in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_trial, payloads))
    else:
        results = [_one_trial(p) for p in payloads]
    results.sort(key=lambda r: r[0])
    return [rec for _, rec in results]


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_outputs(out_dir, solver, records):
    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for i, rec in enumerate(records):
        for s in rec.steps:
            writer.writerow(
                [i, s.step, s.action, repr(s.reward), repr(s.cumulative_reward),
                 s.n_hypotheses, repr(s.max_weight), repr(s.wall_ms)]
            )
    _atomic_write(os.path.join(out_dir, f"{solver}_trials.csv"), buf.getvalue())
    for i, rec in enumerate(records):
        _atomic_write(os.path.join(out_dir, f"{solver}_trial_{i:03d}.json"), rec.to_json())


def _summary(records):
    done = [r for r in records if r.failure is None and r.steps]
    rewards = np.array([r.cumulative_reward for r in done]) if done else np.array([])
    return {
        "n_trials": len(records),
        "n_failed": sum(1 for r in records if r.failure is not None),
        "mean_cumulative_reward": float(rewards.mean()) if rewards.size else math.nan,
        "std_cumulative_reward": float(rewards.std(ddof=1)) if rewards.size > 1 else 0.0,
    }


def cmd_run(args) -> int:
    try:
        config = _resolve_scenario(args)
    except (FileNotFoundError, _UsageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    pc = _planner_config(args)
    records = _run_trials(config, args.solver, pc, args.trials, args.seed, args.jobs)
    if args.out:
        _write_outputs(args.out, args.solver, records)
        _atomic_write(
            os.path.join(args.out, f"{args.solver}_summary.json"),
            json.dumps({"solver": args.solver, "planner": records[0].planner_defaults if records else {},
                        **_summary(records)}, indent=2, sort_keys=True),
        )
    s = _summary(records)
    print(f"{config.name} scale={config.scale} solver={args.solver} trials={s['n_trials']} "
          f"failed={s['n_failed']}")
    print(f"cumulative reward: {s['mean_cumulative_reward']:.1f} "
          f"+/- {s['std_cumulative_reward']:.1f}")
    if s["n_failed"] == s["n_trials"]:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_batch(args) -> int:
    try:
        config = _resolve_scenario(args)
    except (FileNotFoundError, _UsageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    unknown = [s for s in solvers if s not in SOLVERS]
    if unknown:
        sys.stderr.write(f"error: unknown solvers {unknown}\n")
        return EXIT_USAGE
    pc = _planner_config(args)
    rows = []
    for solver in solvers:
        records = _run_trials(config, solver, pc, args.trials, args.seed, args.jobs)
        if args.out:
            _write_outputs(args.out, solver, records)
        s = _summary(records)
        rows.append((solver, s))
    print(f"{config.name} scale={config.scale} trials={args.trials}")
    print(f"{'solver':<10} {'mean':>10} {'std':>10} {'failed':>7}")
    for solver, s in rows:
        print(f"{solver:<10} {s['mean_cumulative_reward']:>10.1f} "
              f"{s['std_cumulative_reward']:>10.1f} {s['n_failed']:>7d}")
    if args.out:
        _atomic_write(
            os.path.join(args.out, "batch_summary.json"),
            json.dumps({solver: s for solver, s in rows}, indent=2, sort_keys=True),
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------


def _check(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def cmd_verify(args) -> int:
    ok = True
    rng = lambda salt: np.random.default_rng(np.random.SeedSequence([args.seed, salt]))
    if args.suite in ("lemmas", "all"):
        toy = verif.load_fixture("toy_estimators.yaml")
        res = verif.bias_experiment(toy, "hbmcp_sir", args.runs, rng(1), n_paths=16)
        ok &= _check("sir reward unbiased", abs(res.z_score) < 3,
                     f"mean={res.mean:.4f} exact={res.exact:.4f} z={res.z_score:.2f}")
        res = verif.bias_experiment(toy, "pruned", args.runs, rng(2), prune_budget=1)
        gap, mass = verif.pruned_bias_gap(toy, 1)
        gap_ok = abs(res.mean - res.exact - gap) < 3 * res.std_error
        ok &= _check("pruned estimator biased", abs(res.z_score) > 5 and mass >= 0.3 and gap_ok,
                     f"z={res.z_score:.1f} pruned_mass={mass:.2f} "
                     f"bias={res.mean - res.exact:.4f} analytic={gap:.4f}")
        res = verif.bias_experiment(toy, "hbmcp_sir", args.runs, rng(3), target="value", horizon=2)
        ok &= _check("value estimator unbiased", abs(res.z_score) < 3,
                     f"mean={res.mean:.4f} exact={res.exact:.4f} z={res.z_score:.2f}")
        cons = verif.load_fixture("toy_consistency.yaml")
        curve = verif.consistency_experiment(cons, [100, 400, 1600], 400, rng(4))
        ratio = curve[0][1] / curve[-1][1]
        ok &= _check("frequency-weight consistency", 2.0 <= ratio <= 8.0,
                     f"rmse={['%.4f' % r for _, r in curve]} ratio={ratio:.2f}")
    if args.suite in ("table1", "all"):
        from .association import table1_rows

        rows = table1_rows()
        expect = {
            (False, False, True): ("f", 1.0),
            (False, False, False): (0.0, 0.0),
            (True, True, False): (1.0, 1.0),
            (True, True, True): (0.0, 0.0),
            (False, True, True): ("f", 0.0),
            (False, True, False): (0.0, 1.0),
            (True, False, False): (1.0, 0.0),
            (True, False, True): (0.0, 1.0),
        }
        good = all(
            (expect[k][0] == "f" and v[0] > 0 or expect[k][0] == v[0])
            and expect[k][1] == v[1]
            for k, v in rows.items()
        )
        ok &= _check("negative-information table", good, f"{len(rows)} rows checked")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_enumerate(args) -> int:
    path = args.fixture
    if not os.path.exists(path):
        path = verif.fixture_path(args.fixture)
    toy = verif.load_toy(path)
    f = verif.exact_filter(toy)
    policy = [toy.eval_action] * args.horizon
    enum = verif.enumerate_exact(toy, policy, args.horizon)
    backward = verif.value_backward_induction(toy, policy, args.horizon)
    doc = {
        "fixture": args.fixture,
        "posterior_paths": ["/".join(map(str, p)) for p in f.paths[-1]],
        "posterior_weights": [float(w) for w in f.weights[-1]],
        "expected_reward_per_stage": [float(r) for r in f.step_rewards],
        "value": enum.value,
        "value_backward_induction": backward,
        "leaf_probability": enum.leaf_probability,
        "n_leaves": enum.n_leaves,
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "batch":
            return cmd_batch(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "enumerate":
            return cmd_enumerate(args)
    except SystemExit:
        raise
    except Exception as exc:  # runtime failure contract
        sys.stderr.write(f"runtime failure: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
