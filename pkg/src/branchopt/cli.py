"""Command-line harness.

Verbs:
  solve       solve one formulation, write the solution bundle (JSON)
  simulate    closed-loop rollout of a saved bundle, write the trace (CSV)
  montecarlo  robustness study over the wall/restitution box (JSON/CSV)
  tradeoff    rejoining-horizon cost/time sweep vs. the tree (JSON/CSV)
  sweep       arm-catch relative-speed sweep over drop heights (JSON/CSV)
  gains       print the tracking gains designed for the configured plant

Every verb takes ``--config`` (YAML, see config.py for the schema); the
master seed and worker count may be overridden by ``--seed``/``--workers``
or the BRANCHOPT_SEED / BRANCHOPT_WORKERS environment variables.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import bench
from . import config as cfgmod
from . import control
from . import pipeline
from . import simulation
from . import transcription as tr


def _load(args) -> cfgmod.RunConfig:
    overrides = {}
    env_seed = os.environ.get("BRANCHOPT_SEED")
    env_workers = os.environ.get("BRANCHOPT_WORKERS")
    if env_seed is not None:
        overrides["seed"] = int(env_seed)
    if env_workers is not None:
        overrides["workers"] = int(env_workers)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return cfgmod.load_config(args.config, overrides)


def _progress(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_solve(args):
    run = _load(args)
    adapter, p, env = cfgmod.build_plant(run)
    conditions = run.conditions
    x_init = conditions[args.condition]
    if run.plant_name == "cartpole":
        x_end = bench.X_END
    else:
        x_end = x_init
    cfg = cfgmod.transcription_config(run, args.variant, x_init, x_end)
    opts = cfgmod.solver_opts(run)
    if args.variant == "nominal":
        res = pipeline.solve_nominal(adapter, cfg, opts)
    elif args.variant == "sure":
        res = pipeline.solve_sure(adapter, cfg, opts)
    elif args.variant == "tree":
        res = pipeline.solve_tree(adapter, cfg, opts)
    else:
        raise SystemExit(f"unknown variant {args.variant!r}")
    s = res.solution
    _progress(f"{args.variant}: {s.status} cost {s.objective_value:.6f} "
              f"kkt(viol) {max(s.kkt.eq_viol, s.kkt.ineq_viol):.2e} "
              f"wall {s.wall_time:.1f}s")
    bundle = res.bundle
    bundle.cost = float(s.objective_value)
    payload = {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "plant": run.plant_name,
        "variant": args.variant,
        "status": s.status,
        "objective_value": float(s.objective_value),
        "bundle": tr.bundle_to_dict(bundle),
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(args.out)
    return 0 if s.status == "converged" else 1


def cmd_simulate(args):
    run = _load(args)
    with open(args.solution) as fh:
        payload = json.load(fh)
    if payload.get("plant", "cartpole") != "cartpole":
        raise SystemExit("simulate supports the cart-pole plant")
    bundle = tr.bundle_from_dict(payload["bundle"])
    from .plants import cartpole
    import dataclasses as dc
    p = dc.replace(cartpole.CartPoleParams(),
                   **(run.plant.get("params", {}) or {}))
    env = dc.replace(cartpole.env_from_params(p),
                     **(run.plant.get("env", {}) or {}))
    if args.x_wall is not None:
        env = dc.replace(env, x_wall=args.x_wall)
    if args.e is not None:
        env = dc.replace(env, e=args.e)
    sys_def = cartpole.make_system(p, env)
    gains = bench._controller_gains(run, p, env)
    ref = bundle if args.reference == "scheduling" else (
        tr.robust_nominal_branch(bundle, dt_impact=p.dt_impact)
        if args.reference == "robust_nominal" and bundle.branches
        else bundle.common)
    controller = control.TrackingController(ref, gains)
    x0 = run.conditions[args.condition]
    trace = simulation.simulate(
        sys_def, controller, x0, env=env,
        horizon=float(run.exp("horizon", 10.0)),
        dt_sim=float(run.exp("dt_sim", 1e-3)))
    trace.to_csv(args.out)
    _progress(f"{len(trace.contact_events)} contact event(s), "
              f"termination: {trace.termination}")
    print(args.out)
    return 0


def cmd_montecarlo(args):
    run = _load(args)
    report = bench.montecarlo(run, progress=_progress)
    bench.export(report, args.out, format="json")
    if args.csv:
        bench.export(report, args.csv, format="csv")
    for ref in bench.REFERENCE_TYPES:
        print(f"{ref:16s} {report.totals[ref]:6.2f}%  "
              f"(published analog {bench.PAPER_TOTALS[ref]:.1f}%)")
    print(args.out)
    return 0


def cmd_tradeoff(args):
    run = _load(args)
    table = bench.tradeoff(run, include_baseline=args.baseline,
                           progress=_progress)
    bench.export(table, args.out, format="json")
    if args.csv:
        bench.export(table, args.csv, format="csv")
    for row in table["rows"]:
        print(f"N_r={row['n_r']:3d}  cost {row['cost']:.4f}  "
              f"time {row['wall_time']:.1f}s")
    t = table["tree"]
    print(f"tree     cost {t['cost']:.4f}  time {t['wall_time']:.1f}s")
    print(f"N_r=7 vs tree: cost {table['n_r7_cost_pct']:+.2f}%  "
          f"time ratio {table['n_r7_time_ratio']:.2f}")
    print(args.out)
    return 0


def cmd_sweep(args):
    run = _load(args)
    table = bench.velocity_sweep(run, progress=_progress)
    bench.export(table, args.out, format="json")
    if args.csv:
        bench.export(table, args.csv, format="csv")
    print(f"max |dv|: nominal {table['max_dv']['nominal']:.3f} m/s, "
          f"robust {table['max_dv']['robust_nominal']:.3f} m/s "
          f"(v_lim {table['v_lim']:.3f})")
    print(args.out)
    return 0


def cmd_gains(args):
    run = _load(args)
    if run.plant_name != "cartpole":
        raise SystemExit("gain design is defined for the cart-pole plant")
    adapter, p, env = cfgmod.build_plant(run)
    gains = bench._controller_gains(run, p, env)
    print("k_p:", np.array2string(gains.k_p, precision=6))
    print("k_d:", np.array2string(gains.k_d, precision=6))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="branchopt",
        description="trajectory optimization and benchmarks for hybrid "
                    "systems with uncertain contact timing")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", default=None, help="YAML run config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("solve", help="solve one formulation")
    common(sp, "solution.json")
    sp.add_argument("--variant", choices=["nominal", "sure", "tree"],
                    default="sure")
    sp.add_argument("--condition", type=int, default=0,
                    help="index into experiment.conditions")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("simulate", help="roll out a saved solution")
    common(sp, "trace.csv")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--reference",
                    choices=["nominal", "robust_nominal", "scheduling"],
                    default="scheduling")
    sp.add_argument("--condition", type=int, default=0)
    sp.add_argument("--x-wall", type=float, default=None)
    sp.add_argument("--e", type=float, default=None)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("montecarlo", help="robustness study")
    common(sp, "montecarlo.json")
    sp.add_argument("--csv", default=None, help="also write sample CSV")
    sp.set_defaults(fn=cmd_montecarlo)

    sp = sub.add_parser("tradeoff", help="cost/time sweep vs. tree")
    common(sp, "tradeoff.json")
    sp.add_argument("--csv", default=None)
    sp.add_argument("--baseline", action="store_true",
                    help="also solve the exact-knowledge cost baseline")
    sp.set_defaults(fn=cmd_tradeoff)

    sp = sub.add_parser("sweep", help="arm catch-speed sweep")
    common(sp, "sweep.json")
    sp.add_argument("--csv", default=None)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("gains", help="print tracking gains")
    common(sp, "-")
    sp.set_defaults(fn=cmd_gains)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
