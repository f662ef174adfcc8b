"""Benchmark studies: robustness Monte-Carlo, optimality/computation
trade-off, and catch-speed sweep.

Every study is deterministic under a master seed: per-trial generators
are spawned from ``SeedSequence(master, spawn_key=(condition, reference,
index))`` so any cell can be reproduced in isolation, and reports are
sorted before writing.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from . import control
from . import nlp
from . import pipeline
from . import simulation
from . import transcription as tr

__all__ = [
    "TrialSpec", "TrialReport", "MonteCarloReport",
    "evaluate_trial", "montecarlo", "tradeoff", "velocity_sweep", "export",
    "REFERENCE_TYPES", "PAPER_TOTALS",
]

REFERENCE_TYPES = ("nominal", "robust_nominal", "scheduling")

# published totals for the corresponding study, reported alongside ours
# for context (not asserted)
PAPER_TOTALS = {"nominal": 44.8, "robust_nominal": 55.3, "scheduling": 66.4}

X_END = np.array([0.0, math.pi, 0.0, 0.0])


# -- trial domain ------------------------------------------------------------


@dataclass(frozen=True)
class TrialSpec:
    condition_id: int
    reference: str
    x_wall: float
    e: float
    seed: int
    index: int

    def validate(self, x_wall_range, e_range):
        if not (x_wall_range[0] <= self.x_wall <= x_wall_range[1]):
            raise ValueError("x_wall outside sampling box")
        if not (e_range[0] <= self.e <= e_range[1]):
            raise ValueError("restitution outside sampling box")
        if self.reference not in REFERENCE_TYPES:
            raise ValueError(f"unknown reference type {self.reference!r}")


@dataclass
class TrialReport:
    spec: TrialSpec
    reached_target: bool        # (i)  final state within tolerance
    single_contact: bool        # (ii) debounced contact count <= 1
    stayed_up: bool             # (iii) pole never departs the half circle
    no_penetration: bool        # (iv) cart edge clear of the wall
    contact_count: int
    final_error: list
    min_clearance: float
    termination: str

    @property
    def success(self):
        return (self.reached_target and self.single_contact
                and self.stayed_up and self.no_penetration)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["spec"] = dataclasses.asdict(self.spec)
        d["success"] = self.success
        return d


@dataclass
class MonteCarloReport:
    seed: int
    n_samples: int
    totals: dict                 # reference -> success rate (percent)
    per_condition: dict          # reference -> list of rates per condition
    paper_totals: dict = field(default_factory=lambda: dict(PAPER_TOTALS))
    samples: list = field(default_factory=list)  # TrialReport dicts

    def to_dict(self):
        return {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "totals": self.totals,
            "per_condition": self.per_condition,
            "paper_totals": self.paper_totals,
            "samples": self.samples,
        }


def _debounced_count(event_times, window):
    count = 0
    last = -math.inf
    for t in sorted(event_times):
        if t - last > window:
            count += 1
        last = t
    return count


def _wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def evaluate_trial(trace, spec: TrialSpec, tolerances, params,
                   x_end=None, debounce_window=0.05) -> TrialReport:
    """Apply the four success criteria to a finished rollout.

    (i) final state within ``tolerances`` of the target; (ii) at most one
    debounced wall contact; (iii) the pole never leaves the upper half
    circle; (iv) the cart edge never crosses the wall plane.
    """
    x_end = X_END if x_end is None else np.asarray(x_end, dtype=float)
    tol = np.asarray(tolerances, dtype=float)
    states = trace.states

    err = states[-1] - x_end
    err[1] = _wrap_angle(err[1])
    reached = bool(np.all(np.abs(err) <= tol)) and trace.termination == "horizon"

    n_contacts = _debounced_count(
        [ev.time for ev in trace.contact_events], debounce_window)
    single_contact = n_contacts <= 1

    theta_dev = np.abs(states[:, 1] - math.pi)
    stayed_up = bool(np.max(theta_dev) <= 0.5 * math.pi)

    clearance = states[:, 0] - 0.5 * params.w_cart - spec.x_wall
    min_clearance = float(np.min(clearance))
    no_penetration = min_clearance > 0.0

    return TrialReport(
        spec=spec,
        reached_target=reached,
        single_contact=single_contact,
        stayed_up=stayed_up,
        no_penetration=no_penetration,
        contact_count=n_contacts,
        final_error=[float(v) for v in err],
        min_clearance=min_clearance,
        termination=trace.termination,
    )


# -- reference construction --------------------------------------------------


def _solve_condition(args):
    """Solve the unbranched and branched problems for one initial condition.

    Returns picklable reference material: the unbranched trajectory, the
    robust single reference, and the full branched bundle.
    """
    plant_dict, env_dict, tcfg_dict, solver_dict, x_init = args
    run = cfgmod.RunConfig(
        plant={"name": "cartpole", "params": plant_dict, "env": env_dict},
        transcription=tcfg_dict, solver=solver_dict)
    adapter, p, env = cfgmod.build_plant(run)
    opts = cfgmod.solver_opts(run)
    cfg = cfgmod.transcription_config(run, "sure", x_init, X_END)
    res = pipeline.solve_sure(adapter, cfg, opts)
    if res.solution.status != "converged":
        raise RuntimeError(
            f"branched solve failed ({res.solution.status}) for "
            f"condition {np.array2string(np.asarray(x_init))}")
    nom_cfg = pipeline.nominal_stage_config(cfg)
    nom = pipeline.solve_nominal(adapter, nom_cfg, opts)
    if nom.solution.status != "converged":
        raise RuntimeError(
            f"unbranched solve failed ({nom.solution.status}) for "
            f"condition {np.array2string(np.asarray(x_init))}")
    robust = tr.robust_nominal_branch(res.bundle, dt_impact=p.dt_impact)
    return nom.bundle.common, robust, res.bundle


def _run_trial(args):
    (plant_dict, spec, reference, gains_kp, gains_kd,
     horizon, dt_sim, tolerances, debounce_window, x_end) = args
    from .plants import cartpole

    p = dataclasses.replace(cartpole.CartPoleParams(), **plant_dict)
    env = dataclasses.replace(
        cartpole.env_from_params(p), x_wall=spec.x_wall, e=spec.e)
    sys = cartpole.make_system(p, env)
    gains = control.Gains(np.asarray(gains_kp), np.asarray(gains_kd))
    controller = control.TrackingController(reference, gains)

    def stop(t, state, n_events):
        if abs(_wrap_angle(state[1] - math.pi)) > 0.5 * math.pi:
            return "fell"
        return None

    trace = simulation.simulate(
        sys, controller, spec.condition_state, env=env,
        horizon=horizon, dt_sim=dt_sim, stop_condition=stop)
    return evaluate_trial(trace, spec, tolerances, p, x_end,
                          debounce_window).to_dict()


@dataclass(frozen=True)
class _SampledSpec(TrialSpec):
    condition_state: tuple = ()


def _sample_specs(master_seed, conditions, n_samples, x_wall_range, e_range):
    specs = []
    for ci, state in enumerate(conditions):
        for ri, ref in enumerate(REFERENCE_TYPES):
            for idx in range(n_samples):
                ss = np.random.SeedSequence(
                    master_seed, spawn_key=(ci, ri, idx))
                rng = np.random.default_rng(ss)
                x_wall = float(rng.uniform(*x_wall_range))
                e = float(rng.uniform(*e_range))
                specs.append(_SampledSpec(
                    condition_id=ci, reference=ref, x_wall=x_wall, e=e,
                    seed=int(ss.generate_state(1)[0]), index=idx,
                    condition_state=tuple(float(v) for v in state)))
    return specs


def montecarlo(run: cfgmod.RunConfig, progress=None) -> MonteCarloReport:
    """Robustness study: seeded trials over the wall/restitution box.

    For each initial condition and reference type, ``n_samples`` closed
    -loop rollouts are run against environments sampled uniformly from
    the configured box, and the four-criteria success rate is aggregated.
    """
    conditions = run.conditions
    n_samples = int(run.exp("n_samples", 200))
    x_wall_range = tuple(run.exp("x_wall_range", (-0.7, -0.3)))
    e_range = tuple(run.exp("e_range", (0.7, 0.9)))
    horizon = float(run.exp("horizon", 10.0))
    dt_sim = float(run.exp("dt_sim", 1e-3))
    tolerances = list(run.exp("final_tol", (0.05, 0.05, 0.1, 0.1)))
    debounce = float(run.exp("debounce_window", 0.05))
    plant_dict = dict(run.plant.get("params", {}) or {})
    env_dict = dict(run.plant.get("env", {}) or {})

    # references: one branched + one unbranched solve per condition
    solve_args = [
        (plant_dict, env_dict, dict(run.transcription), dict(run.solver),
         [float(v) for v in state])
        for state in conditions
    ]
    refs = _pmap(_solve_condition, solve_args, run.workers)
    ref_by_cond = {}
    for ci, (nominal_traj, robust_traj, bundle) in enumerate(refs):
        ref_by_cond[ci] = {
            "nominal": nominal_traj,
            "robust_nominal": robust_traj,
            "scheduling": bundle,
        }
        if progress:
            progress(f"references for condition {ci} solved")

    adapter, p, env = cfgmod.build_plant(run)
    gains = _controller_gains(run, p, env)

    specs = _sample_specs(run.seed, conditions, n_samples,
                          x_wall_range, e_range)
    for s in specs:
        s.validate(x_wall_range, e_range)
    trial_args = [
        (plant_dict, s, ref_by_cond[s.condition_id][s.reference],
         gains.k_p, gains.k_d, horizon, dt_sim, tolerances, debounce,
         list(X_END))
        for s in specs
    ]
    results = _pmap(_run_trial, trial_args, run.workers)
    results.sort(key=lambda d: (d["spec"]["condition_id"],
                                d["spec"]["reference"], d["spec"]["index"]))

    totals = {}
    per_condition = {}
    for ref in REFERENCE_TYPES:
        rows = [d for d in results if d["spec"]["reference"] == ref]
        totals[ref] = round(100.0 * np.mean([d["success"] for d in rows]), 2)
        per_condition[ref] = [
            round(100.0 * np.mean(
                [d["success"] for d in rows
                 if d["spec"]["condition_id"] == ci]), 2)
            for ci in range(len(conditions))
        ]
    return MonteCarloReport(
        seed=run.seed, n_samples=n_samples, totals=totals,
        per_condition=per_condition, samples=results)


def _controller_gains(run: cfgmod.RunConfig, p, env):
    from .plants import cartpole
    sys = cartpole.make_system(p, env)
    q_diag = run.controller.get("q_diag", None)
    r = run.controller.get("r", None)
    q = np.diag(np.asarray(q_diag, dtype=float)) if q_diag is not None else None
    return control.design_gains(sys, cartpole.X_EQ,
                                Q=q, r=float(r) if r is not None else 0.1)


def _pmap(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# -- optimality / computation trade-off --------------------------------------


def _tradeoff_cell(args):
    """One (condition, formulation) solve for the trade-off sweep."""
    plant_dict, env_dict, tcfg_dict, solver_dict, x_init, kind, n_r = args
    run = cfgmod.RunConfig(
        plant={"name": "cartpole", "params": plant_dict, "env": env_dict},
        transcription=tcfg_dict, solver=solver_dict)
    adapter, p, env = cfgmod.build_plant(run)
    opts = cfgmod.solver_opts(run)
    budget = int(tcfg_dict.get("post_impact_budget", 100))
    k_first = int(tcfg_dict.get("k_first", 18))
    k_last = int(tcfg_dict.get("k_last", 22))
    if kind == "sure":
        n_final = budget - n_r
        cfg = cfgmod.transcription_config(
            run, "sure", x_init, X_END,
            N=k_last + 1 + n_final, n_rejoin=n_r,
            k_first=k_first, k_last=k_last)
        res = pipeline.solve_sure(adapter, cfg, opts)
    elif kind == "tree":
        cfg = cfgmod.transcription_config(
            run, "tree", x_init, X_END,
            N=k_last + 1 + budget, n_branch_full=budget,
            k_first=k_first, k_last=k_last)
        res = pipeline.solve_tree(adapter, cfg, opts)
    elif kind == "baseline":
        # exact-knowledge reference: contact node known in advance
        cfg = cfgmod.transcription_config(
            run, "nominal", x_init, X_END,
            N=n_r + 1 + budget, contact_node=n_r)
        res = pipeline.solve_nominal(adapter, cfg, opts)
    else:
        raise ValueError(kind)
    s = res.solution
    return {"kind": kind, "n_r": n_r, "cost": float(s.objective_value),
            "wall_time": float(s.wall_time), "status": s.status}


def tradeoff(run: cfgmod.RunConfig, include_baseline=False, progress=None):
    """Cost/solve-time sweep of the rejoining horizon against the tree.

    Post-impact node budget is fixed; each rejoining variant spends
    ``n_r`` of it per branch and the rest on the shared final segment,
    while the tree spends the whole budget on every branch.  Costs and
    cumulative (warm-start included) wall times are averaged over the
    configured initial conditions.
    """
    conditions = run.conditions
    n_r_values = [int(v) for v in run.exp("n_r_values", (7, 12, 20, 40, 70))]
    tdict = dict(run.transcription)
    tdict["post_impact_budget"] = int(run.exp("post_impact_budget", 100))
    plant_dict = dict(run.plant.get("params", {}) or {})
    env_dict = dict(run.plant.get("env", {}) or {})

    cells = []
    for state in conditions:
        x0 = [float(v) for v in state]
        for n_r in n_r_values:
            cells.append((plant_dict, env_dict, tdict, dict(run.solver),
                          x0, "sure", n_r))
        cells.append((plant_dict, env_dict, tdict, dict(run.solver),
                      x0, "tree", tdict["post_impact_budget"]))
        if include_baseline:
            k_first = int(tdict.get("k_first", 18))
            k_last = int(tdict.get("k_last", 22))
            for node in range(k_first, k_last + 1):
                cells.append((plant_dict, env_dict, tdict, dict(run.solver),
                              x0, "baseline", node))
    results = _pmap(_tradeoff_cell, cells, run.workers)
    if progress:
        for r in results:
            progress(f"{r['kind']} n_r={r['n_r']}: cost {r['cost']:.4f} "
                     f"({r['status']}, {r['wall_time']:.0f}s)")

    rows = []
    for n_r in n_r_values:
        cell = [r for r in results if r["kind"] == "sure" and r["n_r"] == n_r]
        rows.append(_avg_row("sure", n_r, cell))
    tree_rows = [r for r in results if r["kind"] == "tree"]
    tree = _avg_row("tree", tdict["post_impact_budget"], tree_rows)
    out = {"rows": rows, "tree": tree,
           "paper_comparison": {"cost_pct": 4.87, "time_pct": -55.85}}
    if include_baseline:
        base = [r for r in results if r["kind"] == "baseline"]
        out["baseline_cost"] = float(np.mean([r["cost"] for r in base]))
    first = rows[0]
    out["n_r7_cost_pct"] = 100.0 * (first["cost"] - tree["cost"]) / tree["cost"]
    out["n_r7_time_ratio"] = first["wall_time"] / tree["wall_time"]
    return out


def _avg_row(kind, n_r, cell):
    return {
        "kind": kind,
        "n_r": n_r,
        "cost": float(np.mean([r["cost"] for r in cell])),
        "wall_time": float(np.mean([r["wall_time"] for r in cell])),
        "statuses": sorted(r["status"] for r in cell),
    }


# -- catch-speed sweep (arm plant) -------------------------------------------


def _arm_rollout(p, reference, gains, z0, dt_sim=1e-3, horizon=1.5):
    """Track ``reference`` while a ball falls from height ``z0``.

    The ball follows its closed form; the guard (ball above the
    end-effector) is monitored directly so contact timing reflects the
    actual drop height, not the planned one.
    """
    from .plants import arm

    n_q = 3
    state = np.concatenate([reference.states[0][:n_q],
                            reference.states[0][n_q:]])
    p0 = (p.p_ball0[0], z0)

    def guard_at(t, s):
        (_, bz), _ = arm.ball_state(t, p0, p.v_ball0, p.g)
        _, _, (_, pz) = arm.tip_positions(s[:n_q], p)
        return float(bz) - p.r_ball - float(pz)

    def deriv(s, u):
        qdd = arm.forward_dynamics(s[:n_q], s[n_q:], u, p)
        return np.concatenate([s[n_q:], qdd])

    t = 0.0
    g_prev = guard_at(t, state)
    n_steps = int(round(horizon / dt_sim))
    for _ in range(n_steps):
        q_des, qd_des, tau_des = control.sample_reference(reference, t, n_q)
        tau = (gains.k_p * (q_des - state[:n_q])
               + gains.k_d * (qd_des - state[n_q:]) + tau_des)
        new = simulation.rk4_step(deriv, state, tau, dt_sim)
        t_new = t + dt_sim
        g_new = guard_at(t_new, new)
        if g_prev > 0.0 >= g_new:
            # bisect the crossing time on linearly interpolated states
            lo, hi = t, t_new
            s_lo, s_hi = state, new
            for _ in range(60):
                tm = 0.5 * (lo + hi)
                sm = s_lo + (tm - t) / dt_sim * (s_hi - s_lo)
                if guard_at(tm, sm) > 0:
                    lo = tm
                else:
                    hi = tm
            tc = 0.5 * (lo + hi)
            sc = state + (tc - t) / dt_sim * (new - state)
            (_, _), (bvx, bvz) = arm.ball_state(tc, p0, p.v_ball0, p.g)
            vx, vz = arm.ee_velocity(sc[:n_q], sc[n_q:], p)
            return tc, float(math.hypot(bvx - vx, bvz - vz))
        state, t, g_prev = new, t_new, g_new
    return None, None


def velocity_sweep(run: cfgmod.RunConfig, progress=None):
    """Catch speed over a range of drop heights, planned vs. robust.

    Solves the arm-catch problem once per formulation at the configured
    drop height, then replays both references against balls released from
    heights spanning the configured half-range, recording the relative
    speed at contact.
    """
    from .plants import arm

    arm_params = (run.plant.get("params", {}) or {}
                  if run.plant_name == "arm" else {})
    arm_run = cfgmod.RunConfig(plant={"name": "arm", "params": arm_params})
    adapter, p, _ = cfgmod.build_plant(arm_run)
    opts = cfgmod.solver_opts(run)
    n_heights = int(run.exp("sweep_heights", 11))
    half = float(run.exp("sweep_half_range", 0.2))
    dt_sim = float(run.exp("dt_sim", 1e-3))

    q0 = arm.level_configuration(
        tuple(run.exp("catch_target", (0.0, 0.3))), p)
    x0 = np.concatenate([q0, np.zeros(3)])
    tdefaults = dict(N=40, contact_node=20, dt_min=1e-3, dt_max=5e-2)
    tdefaults.update(run.transcription)
    nom_cfg = cfgmod.transcription_config(
        cfgmod.RunConfig(transcription=tdefaults), "nominal", x0, x0)
    nom = pipeline.solve_nominal(adapter, nom_cfg, opts)
    if progress:
        progress(f"nominal arm solve: {nom.solution.status} "
                 f"cost {nom.solution.objective_value:.4f}")

    sdefaults = dict(tdefaults)
    sdefaults.pop("contact_node", None)
    sdefaults.setdefault("k_first", 16)
    sdefaults.setdefault("k_last", 24)
    sdefaults.setdefault("d_fixed", run.exp("sweep_d", 0.20))
    sure_cfg = cfgmod.transcription_config(
        cfgmod.RunConfig(transcription=sdefaults), "sure", x0, x0)
    sure = pipeline.solve_sure(adapter, sure_cfg, opts)
    if progress:
        progress(f"robust arm solve: {sure.solution.status} "
                 f"cost {sure.solution.objective_value:.4f}")
    for res, label in ((nom, "unbranched"), (sure, "branched")):
        if res.solution.status != "converged":
            raise RuntimeError(f"{label} arm solve failed "
                               f"({res.solution.status})")
    v_lim = float(sure.solution.x[sure.layout.arrays["vlim"][0]])

    refs = {
        "nominal": nom.bundle.common,
        "robust_nominal": tr.robust_nominal_branch(sure.bundle,
                                                   dt_impact=1e-3),
    }
    gains = control.Gains(np.full(3, float(run.controller.get("arm_kp", 80.0))),
                          np.full(3, float(run.controller.get("arm_kd", 12.0))))
    z_nom = p.p_ball0[1]
    heights = np.linspace(z_nom - half, z_nom + half, n_heights)
    rows = []
    for name, ref in refs.items():
        for h0 in heights:
            tc, dv = _arm_rollout(p, ref, gains, float(h0), dt_sim)
            rows.append({"reference": name, "h0": round(float(h0), 6),
                         "contact_time": tc, "dv": dv})
            if progress:
                progress(f"{name} h0={h0:.3f}: t_c={tc} |dv|={dv}")
    result = {
        "rows": rows,
        "v_lim": v_lim,
        "max_dv": {
            name: max(r["dv"] for r in rows
                      if r["reference"] == name and r["dv"] is not None)
            for name in refs
        },
        "paper_comparison": {"nominal": 3.93, "robust_nominal": 2.67},
    }
    return result


# -- persistence --------------------------------------------------------------


def export(report, path, format="json"):
    """Write a report to disk; JSON keeps full structure, CSV flattens
    the sample/row table."""
    data = report.to_dict() if hasattr(report, "to_dict") else report
    if format == "json":
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if format != "csv":
        raise ValueError(f"unknown export format {format!r}")
    rows = data.get("samples") or data.get("rows") or []
    flat = [_flatten(r) for r in rows]
    keys = sorted({k for r in flat for k in r})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in flat:
            writer.writerow(r)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            for i, vi in enumerate(v):
                out[f"{key}.{i}"] = vi
        else:
            out[key] = v
    return out
