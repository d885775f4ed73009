"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 failed dominance check,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config
from .divergence import exact_violation_prob, estimate_violation_rate, markov_kld_bound
from .engine import METRIC_COLUMNS, POLICY_NAMES, STAGEWISE, run_experiment
from .plan_a import li_long_client_d
from .scenario import generate_scenario

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_IO = 0, 2, 3, 4
INF_MARK = "inf"

log = logging.getLogger("stagewise_hfl")


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    for key in ("seed", "global_rounds", "target_accuracy"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfg.replace(**overrides) if overrides else cfg


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_run(result, config: ScenarioConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for m in result.metrics:
            w.writerow(m.row())
    manifest = {"policy": result.policy, "seed": config.seed, "version": version_string(),
                "config": config.to_dict(), "plan_a_time": result.plan_a_time,
                "plan_a_feasible": None if result.plan_a is None else bool(result.plan_a.feasible),
                "rounds_to_target": _fmt_rounds(result.rounds_to_target(config.target_accuracy))}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    _write_jsonl(out_dir / "decisions.jsonl", result.decisions)
    _write_jsonl(out_dir / "repairs.jsonl", result.rounds)
    return out_dir


def _fmt_rounds(r):
    return INF_MARK if math.isinf(r) else int(r)


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run_experiment(cfg, args.policy)
    run_id = args.run_id or f"{args.policy}-seed{cfg.seed}"
    out = write_run(result, cfg, Path(args.out) / run_id)
    print(f"{len(result.metrics)} rounds written to {out}")
    return EXIT_OK


def total_cost_to_target(result, target):
    rounds = result.rounds_to_target(target)
    if math.isinf(rounds):
        return math.inf
    return float(sum(m.cost for m in result.metrics[:int(rounds)]))


def cmd_bench(args) -> int:
    cfg = _config(args)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        if p not in POLICY_NAMES:
            raise ConfigError("policies", f"unknown policy {p!r}")
    target = cfg.target_accuracy
    rows = []
    for policy in policies:
        rtt, costs, dts = [], [], []
        for k in range(args.seeds):
            res = run_experiment(cfg, policy, seed=cfg.seed + k, log_decisions=False)
            rtt.append(res.rounds_to_target(target))
            costs.append(total_cost_to_target(res, target))
            dts.extend(m.decision_time for m in res.metrics)
        rows.append({"policy": policy, "median_rounds_to_target": float(np.median(rtt)),
                     "median_total_cost": float(np.median(costs)),
                     "mean_decision_time": float(np.mean(dts)) if dts else 0.0})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["policy", "median_rounds_to_target", "median_total_cost", "mean_decision_time"]
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (INF_MARK if isinstance(v, float) and math.isinf(v) else v) for k, v in r.items()})
    print(format_table(rows, cols))
    by = {r["policy"]: r for r in rows}
    if STAGEWISE in by and "orig_prob_solver" in by and by[STAGEWISE]["mean_decision_time"] > 0:
        ratio = by["orig_prob_solver"]["mean_decision_time"] / by[STAGEWISE]["mean_decision_time"]
        print(f"decision-time ratio orig_prob_solver / stagewise: {ratio:.1f}x")
    return EXIT_OK


def format_table(rows, cols) -> str:
    def cell(v):
        if isinstance(v, float):
            return "∞" if math.isinf(v) else f"{v:.4g}"
        return str(v)

    table = [cols] + [[cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(line[k]) for line in table) for k in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(line, widths)) for line in table)


def validate_bounds(cfg: ScenarioConfig, trials: int, seed: int, max_sub: int = 10) -> dict:
    """Monte-Carlo violation rates of the Plan-A solution plus exact dominance checks."""
    scenario = generate_scenario(cfg)
    thr = cfg.thresholds
    plan = li_long_client_d(scenario, cfg)
    delta_hat, eps_hat = estimate_violation_rate(plan.assoc, scenario, thr, trials, seed)
    rng = np.random.default_rng(seed)
    checks, failures = 0, []
    p, y, d, q = scenario.online_prob, scenario.labels, scenario.data, scenario.reference
    for j in range(scenario.n_edges):
        members = plan.assoc.members(j)
        if len(members) == 0:
            continue
        if len(members) > max_sub:
            members = np.sort(rng.choice(members, size=max_sub, replace=False))
        exact_k = exact_violation_prob(p[members], y[members], d[members], q, "kld", thr)
        bound_k = markov_kld_bound(p[members], y[members], d[members], q, thr)
        exact_d = exact_violation_prob(p[members], y[members], d[members], q, "data", thr)
        floor_d = 1.0 - float(p[members] @ d[members]) / thr.data_limit
        checks += 2
        if exact_k > bound_k + 1e-12:
            failures.append({"edge": j, "kind": "kld", "exact": exact_k, "bound": bound_k})
        if exact_d < floor_d - 1e-12:
            failures.append({"edge": j, "kind": "data", "exact": exact_d, "bound": floor_d})
    return {"delta": thr.delta_risk, "delta_hat": delta_hat, "epsilon": thr.epsilon_risk,
            "epsilon_hat": eps_hat, "plan_a_feasible": bool(plan.feasible),
            "dominance_checks": checks, "dominance_failures": failures}


def cmd_validate_bounds(args) -> int:
    cfg = _config(args)
    report = validate_bounds(cfg, args.trials, cfg.seed)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_ASSERT if report["dominance_failures"] else EXIT_OK


def cmd_plot_data(args) -> int:
    acc_rows, cost_rows = [], []
    for run in args.runs:
        run = Path(run)
        manifest = json.loads((run / "manifest.json").read_text(encoding="utf-8"))
        with open(run / "metrics.csv", newline="", encoding="utf-8") as fh:
            metrics = list(csv.DictReader(fh))
        for m in metrics:
            acc_rows.append({"policy": manifest["policy"], "seed": manifest["seed"],
                             "round": int(m["round"]), "accuracy": float(m["accuracy"])})
        cost_rows.append({"policy": manifest["policy"], "seed": manifest["seed"],
                          "total_cost": sum(float(m["cost"]) for m in metrics),
                          "total_delay": sum(float(m["delay"]) for m in metrics),
                          "total_energy": sum(float(m["energy"]) for m in metrics)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in (("accuracy_vs_round.csv", acc_rows), ("cost_vs_policy.csv", cost_rows)):
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["policy"])
            w.writeheader()
            w.writerows(rows)
    print(f"wrote {len(acc_rows)} accuracy rows and {len(cost_rows)} cost rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stagewise-hfl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="flat TOML config (defaults used when omitted)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run one policy and write metrics")
    common(p)
    p.add_argument("--policy", default=STAGEWISE, choices=POLICY_NAMES)
    p.add_argument("--global-rounds", dest="global_rounds", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare policies over several seeds")
    common(p)
    p.add_argument("--policies", default=",".join(POLICY_NAMES))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--target-accuracy", dest="target_accuracy", type=float)
    p.add_argument("--global-rounds", dest="global_rounds", type=int)
    p.add_argument("--out", default="out/bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate-bounds", help="Monte-Carlo and exact checks of the chance-constraint bounds")
    common(p)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate_bounds)

    p = sub.add_parser("plot-data", help="collect plot-ready CSV series from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default="out/plot-data")
    p.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
