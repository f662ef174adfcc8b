"""Staged solving of the branched optimal-control formulations.

Branched problems (branching window, rejoin or tree) rarely converge from
an interpolated cold start: the feasibility phase has to discover the
impact transition on its own.  Solving the unbranched problem first and
transplanting its trajectory — common part copied, each branch seeded by
the plant's transition map applied at its branching node — makes the
remaining correction local and cheap.  Reported wall time is cumulative
over all stages.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import nlp
from . import transcription as tr

__all__ = [
    "PipelineResult",
    "nominal_stage_config",
    "sure_guess_from_nominal",
    "tree_guess_from_nominal",
    "solve_nominal",
    "solve_sure",
    "solve_tree",
]


@dataclass
class PipelineResult:
    solution: nlp.NlpSolution
    bundle: tr.SolutionBundle
    layout: tr.TranscriptionLayout
    problem: nlp.NlpProblem


def nominal_stage_config(cfg: tr.TranscriptionConfig) -> tr.TranscriptionConfig:
    """Unbranched counterpart of a branched config.

    Contact is placed at the middle of the branching window, the same
    node the robust reference branches from.
    """
    return dataclasses.replace(
        cfg,
        variant="nominal",
        contact_node=tr.middle_branch_index(cfg.k_first, cfg.k_last),
        k_first=None,
        k_last=None,
    )


def _resample(states, inputs, dts, n_new, dt_min, dt_max):
    """Re-grid a trajectory onto n_new uniform-in-time intervals."""
    if len(dts) == n_new:
        return states, inputs, np.clip(dts, dt_min, dt_max)
    t = np.concatenate([[0.0], np.cumsum(dts)])
    duration = t[-1]
    t_new = np.linspace(0.0, duration, n_new + 1)
    out_x = np.column_stack(
        [np.interp(t_new, t, states[:, j]) for j in range(states.shape[1])]
    )
    # inputs are piecewise-constant per interval; sample at interval starts
    t_u = t[:-1]
    out_u = np.column_stack(
        [
            np.interp(t_new[:-1], t_u, inputs[:, j])
            for j in range(inputs.shape[1])
        ]
    )
    out_dt = np.full(n_new, np.clip(duration / n_new, dt_min, dt_max))
    return out_x, out_u, out_dt


def _free_step(adapter, x, u, dt):
    """One contact-free integration step, recovered from the defect.

    Defects have the explicit form x_next - step(x, u, dt), so evaluating
    them with x_next := x isolates the step.
    """
    d = adapter.dynamics_defect(x, np.atleast_1d(u), float(dt), x)
    return x - np.array([float(di) for di in d])


def _window_free_states(adapter, nom, c, last):
    """Common-part states with the post-transition tail replaced by a
    contact-free continuation from node c (the window is a ghost segment:
    transition constraints live on the branches, not the common part)."""
    states = np.array(nom.states[: last + 1])
    for i in range(c, last):
        states[i + 1] = _free_step(adapter, states[i], nom.inputs[i], nom.dts[i])
    return states


def _seed_branch_extras(layout, x0, k, extras):
    for name, row in extras.items():
        if name in layout.arrays:
            x0[layout.arrays[name][k]] = row


def sure_guess_from_nominal(adapter, layout, nominal_bundle, contact_node=None):
    """Initial vector for the rejoining formulation from an unbranched solve.

    The unbranched horizon may exceed the branched common horizon (e.g. a
    single branch standing in for the whole post-contact tail); the extra
    tail is then re-gridded into the branches.
    """
    cfg = layout.cfg
    nom = nominal_bundle.common
    n_nom = len(nom.dts)
    x0 = tr.default_initial_guess(adapter, layout)
    x0[layout.arrays["x"]] = nom.states[: cfg.N + 1]
    x0[layout.arrays["u"]] = nom.inputs[: cfg.N]
    x0[layout.arrays["dt"]] = nom.dts[: cfg.N]
    tail_mode = n_nom > cfg.N
    if tail_mode:
        # rejoin node sits at the truncated horizon's end; keep its
        # boundary value rather than the unbranched mid-trajectory state
        x0[layout.x_idx(cfg.N)] = np.asarray(cfg.x_end, dtype=float)
    rejoin = x0[layout.x_idx(cfg.k_last + 1)]
    c = contact_node if contact_node is not None else tr.middle_branch_index(
        cfg.k_first, cfg.k_last
    )
    if not tail_mode and cfg.k_last > c:
        free = _window_free_states(adapter, nom, c, cfg.k_last)
        for i in range(c + 1, cfg.k_last + 1):
            x0[layout.x_idx(i)] = free[i]
    else:
        free = nom.states
    # recompute plant-specific slots (elapsed times, force seeds, ...) from
    # the transplanted time steps before the per-branch seeds overwrite them
    adapter.initial_guess_extras(layout, cfg, x0)
    for k, i in enumerate(cfg.branch_nodes):
        post, extras = adapter.branch_seed(free[i], nom.inputs[i], cfg)
        if tail_mode:
            # branch node 0 is the post-transition state, standing in for
            # the unbranched node c+1; the rest follows the unbranched tail
            seq_x = np.vstack([post, nom.states[c + 2 :]])
            seq_u = nom.inputs[c + 1 :]
            seq_dt = nom.dts[c + 1 :]
            bx, bu, bdt = _resample(
                seq_x, seq_u, seq_dt, layout.branch_len, cfg.dt_min, cfg.dt_max
            )
            x0[layout.arrays["bx"][k]] = bx
            x0[layout.arrays["bu"][k]] = bu
            x0[layout.arrays["bdt"][k]] = bdt
        else:
            for j in range(layout.branch_len + 1):
                s = j / max(layout.branch_len, 1)
                x0[layout.bx_idx(k, j)] = (1 - s) * post + s * rejoin
            x0[layout.arrays["bu"][k]] = nom.inputs[min(i, n_nom - 1)]
            x0[layout.arrays["bdt"][k]] = nom.dts[min(i, n_nom - 1)]
        _seed_branch_extras(layout, x0, k, extras)
    if layout.d_idx is not None:
        x0[layout.d_idx] = 0.5 * (cfg.d_bounds[0] + cfg.d_bounds[1])
    return x0


def tree_guess_from_nominal(adapter, layout, nominal_bundle, contact_node):
    """Initial vector for the tree formulation from an unbranched solve.

    Each branch is seeded with the plant's transition at its own root
    followed by the unbranched post-contact tail, re-gridded onto the
    branch's node budget.
    """
    cfg = layout.cfg
    nom = nominal_bundle.common
    x0 = tr.default_initial_guess(adapter, layout)
    n_c = layout.n_common  # tree common part ends at k_last
    c = contact_node
    free = _window_free_states(adapter, nom, c, n_c)
    x0[layout.arrays["x"]] = free
    x0[layout.arrays["u"]] = nom.inputs[: len(layout.arrays["u"])]
    x0[layout.arrays["dt"]] = nom.dts[:n_c]
    adapter.initial_guess_extras(layout, cfg, x0)
    for k, i in enumerate(cfg.branch_nodes):
        post, extras = adapter.branch_seed(free[i], nom.inputs[i], cfg)
        # branch node 0 replaces the unbranched node c+1
        seq_x = np.vstack([post, nom.states[c + 2 :]])
        seq_u = nom.inputs[c + 1 :]
        seq_dt = nom.dts[c + 1 :]
        bx, bu, bdt = _resample(
            seq_x, seq_u, seq_dt, layout.branch_len, cfg.dt_min, cfg.dt_max
        )
        x0[layout.arrays["bx"][k]] = bx
        x0[layout.arrays["bu"][k]] = bu
        x0[layout.arrays["bdt"][k]] = bdt
        _seed_branch_extras(layout, x0, k, extras)
    if layout.d_idx is not None:
        x0[layout.d_idx] = 0.5 * (cfg.d_bounds[0] + cfg.d_bounds[1])
    return x0


def solve_nominal(adapter, cfg, opts=None, x0=None) -> PipelineResult:
    problem, layout = tr.build_nominal(adapter, cfg)
    if x0 is None:
        x0 = tr.default_initial_guess(adapter, layout)
    sol = nlp.solve(problem, x0, opts)
    return PipelineResult(sol, tr.extract_solution(layout, sol.x), layout, problem)


def _solve_branched(adapter, cfg, build, transfer_factory, opts, nominal_cfg):
    nom_cfg = nominal_cfg if nominal_cfg is not None else nominal_stage_config(cfg)
    nom_problem, nom_layout = tr.build_nominal(adapter, nom_cfg)
    problem, layout = build(adapter, cfg)

    def transfer(x_nom):
        bundle = tr.extract_solution(nom_layout, x_nom)
        return transfer_factory(layout, bundle, nom_cfg)

    x0 = tr.default_initial_guess(adapter, nom_layout)
    sol = nlp.warm_start_chain(
        [(nom_problem, None), (problem, transfer)], x0, opts
    )
    return PipelineResult(sol, tr.extract_solution(layout, sol.x), layout, problem)


def solve_sure(adapter, cfg, opts=None, nominal_cfg=None) -> PipelineResult:
    """Unbranched solve, then the rejoining formulation warm-started from it."""

    def factory(layout, bundle, nom_cfg):
        return sure_guess_from_nominal(
            adapter, layout, bundle, nom_cfg.contact_node
        )

    return _solve_branched(adapter, cfg, tr.build_sure, factory, opts, nominal_cfg)


def solve_tree(adapter, cfg, opts=None, nominal_cfg=None) -> PipelineResult:
    """Unbranched solve, then the tree formulation warm-started from it."""

    def factory(layout, bundle, nom_cfg):
        return tree_guess_from_nominal(
            adapter, layout, bundle, nom_cfg.contact_node
        )

    return _solve_branched(adapter, cfg, tr.build_tree, factory, opts, nominal_cfg)
