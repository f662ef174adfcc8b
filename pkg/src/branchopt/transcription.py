"""Transcription of hybrid optimal-control problems into block NLPs.

Three variants are supported:

* ``nominal``   -- single contact at a fixed node index.
* ``sure``      -- a branching window of possible contact nodes; each
                   branch gets a short post-impact trajectory that is
                   pinned back onto the common trajectory (rejoining).
* ``tree``      -- the brute-force baseline: every branch runs
                   independently all the way to the terminal state.

Plant specifics (dynamics defects, costs, guard, impact transition,
path constraints) are supplied by a :class:`PlantOcp` adapter; this
module owns the decision-vector layout and the shared constraint
scaffolding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .nlp import Block, NlpProblem

STRICT_EPS = 1e-6  # strict inequalities g > a become g >= a + STRICT_EPS


@dataclass
class TranscriptionConfig:
    N: int
    variant: str = "nominal"  # nominal | sure | tree
    contact_node: Optional[int] = None  # nominal contact index c
    k_first: Optional[int] = None  # first branching node
    k_last: Optional[int] = None  # last branching node
    n_rejoin: int = 7  # nodes per rejoining branch
    n_branch_full: int = 100  # per-branch horizon for the tree variant
    dt_min: float = 1e-3
    dt_max: float = 5e-2
    x_init: np.ndarray = None
    x_end: np.ndarray = None
    d_fixed: Optional[float] = 0.05
    d_bounds: Optional[tuple] = None  # (d_min, d_max) => d is a decision var
    branch_weight_mode: str = "average"  # average | sum
    branch_cost_time_scaled: bool = True
    contact_enabled: bool = True
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("nominal", "sure", "tree"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "nominal" and self.contact_enabled:
            if self.contact_node is None or not 0 < self.contact_node < self.N:
                raise ValueError("contact_node must lie strictly inside (0, N)")
        if self.variant in ("sure", "tree"):
            if self.k_first is None or self.k_last is None:
                raise ValueError("branching window (k_first, k_last) required")
            if not 0 < self.k_first <= self.k_last < self.N:
                raise ValueError("need 0 < k_first <= k_last < N")
            if self.variant == "sure" and self.k_last + 1 > self.N:
                raise ValueError("rejoin node k_last+1 exceeds horizon")
        if self.d_bounds is not None and self.d_bounds[0] > self.d_bounds[1]:
            raise ValueError("d bounds must satisfy d_min <= d_max")

    @property
    def branch_nodes(self):
        return list(range(self.k_first, self.k_last + 1))

    @property
    def n_branches(self):
        return self.k_last - self.k_first + 1

    @property
    def branch_weight(self):
        if self.branch_weight_mode == "sum":
            return 1.0
        return 1.0 / self.n_branches


class LayoutBuilder:
    def __init__(self):
        self.names = {}
        self.n_vars = 0

    def add(self, name, shape):
        size = int(np.prod(shape))
        idx = np.arange(self.n_vars, self.n_vars + size).reshape(shape)
        self.names[name] = idx
        self.n_vars += size
        return idx


@dataclass
class TranscriptionLayout:
    """Index map from (phase, node, branch) to decision-vector slices."""

    cfg: TranscriptionConfig
    n_x: int
    n_u: int
    n_vars: int
    arrays: dict  # name -> int index array
    n_common: int  # highest common node index (inclusive count is +1)
    branch_len: int  # nodes per branch beyond the branch root

    def x_idx(self, i):
        return self.arrays["x"][i]

    def u_idx(self, i):
        return self.arrays["u"][i]

    def dt_idx(self, i):
        return self.arrays["dt"][i]

    def bx_idx(self, k, j):
        return self.arrays["bx"][k, j]

    def bu_idx(self, k, j):
        return self.arrays["bu"][k, j]

    def bdt_idx(self, k, j):
        return self.arrays["bdt"][k, j]

    @property
    def d_idx(self):
        arr = self.arrays.get("d")
        return int(arr[0]) if arr is not None else None

    @property
    def n_branches(self):
        return self.arrays["bx"].shape[0] if "bx" in self.arrays else 0

    def covers_all_variables(self):
        seen = np.concatenate([a.ravel() for a in self.arrays.values()])
        return (len(seen) == self.n_vars
                and len(np.unique(seen)) == self.n_vars)


@dataclass
class Trajectory:
    states: np.ndarray  # (n+1, n_x)
    inputs: np.ndarray  # (n, n_u)
    dts: np.ndarray  # (n,)

    @property
    def node_times(self):
        return np.concatenate([[0.0], np.cumsum(self.dts)])

    @property
    def duration(self):
        return float(np.sum(self.dts))


@dataclass
class SolutionBundle:
    common: Trajectory
    branches: list  # Trajectory per branch, ordered by branch node index
    branch_nodes: list  # common-node index each branch departs from
    rejoin_index: Optional[int]
    d: Optional[float]
    cost: Optional[float] = None
    extras: dict = field(default_factory=dict)


def _traj_to_dict(traj: Trajectory):
    return {
        "states": traj.states.tolist(),
        "inputs": traj.inputs.tolist(),
        "dts": traj.dts.tolist(),
    }


def _traj_from_dict(d) -> Trajectory:
    return Trajectory(
        states=np.asarray(d["states"], dtype=float),
        inputs=np.asarray(d["inputs"], dtype=float),
        dts=np.asarray(d["dts"], dtype=float),
    )


def bundle_to_dict(bundle: SolutionBundle) -> dict:
    """JSON-ready form of a solution bundle (inverse of bundle_from_dict)."""
    return {
        "common": _traj_to_dict(bundle.common),
        "branches": [_traj_to_dict(b) for b in bundle.branches],
        "branch_nodes": [int(i) for i in bundle.branch_nodes],
        "rejoin_index": (None if bundle.rejoin_index is None
                         else int(bundle.rejoin_index)),
        "d": None if bundle.d is None else float(bundle.d),
        "cost": None if bundle.cost is None else float(bundle.cost),
        "extras": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                   for k, v in bundle.extras.items()},
    }


def bundle_from_dict(d) -> SolutionBundle:
    return SolutionBundle(
        common=_traj_from_dict(d["common"]),
        branches=[_traj_from_dict(b) for b in d["branches"]],
        branch_nodes=list(d["branch_nodes"]),
        rejoin_index=d["rejoin_index"],
        d=d["d"],
        cost=d.get("cost"),
        extras=dict(d.get("extras", {})),
    )


class ProblemBuilder:
    """Collects bounds and blocks while a transcription is assembled."""

    def __init__(self, n_vars):
        self.n_vars = n_vars
        self.lower = np.full(n_vars, -np.inf)
        self.upper = np.full(n_vars, np.inf)
        self.cost_blocks = []
        self.eq_blocks = []
        self.ineq_blocks = []

    def add_cost(self, name, fun, indices, n_out=1):
        self.cost_blocks.append(Block(name, fun, np.atleast_2d(indices), n_out))

    def add_eq(self, name, fun, indices, n_out):
        self.eq_blocks.append(Block(name, fun, np.atleast_2d(indices), n_out))

    def add_ineq(self, name, fun, indices, n_out):
        self.ineq_blocks.append(Block(name, fun, np.atleast_2d(indices), n_out))

    def set_bounds(self, idx, lo, hi):
        self.lower[idx] = lo
        self.upper[idx] = hi

    def fix(self, idx, values):
        self.lower[idx] = values
        self.upper[idx] = values

    def finish(self, layout):
        return NlpProblem(
            n_vars=self.n_vars,
            lower=self.lower,
            upper=self.upper,
            cost_blocks=self.cost_blocks,
            eq_blocks=self.eq_blocks,
            ineq_blocks=self.ineq_blocks,
            layout=layout,
        )


class PlantOcp:
    """Adapter interface a plant implements to participate in transcription.

    Subclasses provide the residual callbacks (all dual-evaluable) plus
    the plant-specific transition machinery.
    """

    n_x: int
    n_u: int
    # outputs per cost block row; costs are least-squares residuals
    n_running_residuals: int = 1
    n_branch_residuals: int = 1
    # inequality clearance after the rejoin node (g > d for i > k_last)
    clearance_after_rejoin = True
    # inequality clearance at post-contact nodes of the unbranched problem;
    # False for plants whose guard loses meaning after contact (attachment)
    clearance_after_contact = True

    def register_variables(self, lb: LayoutBuilder, cfg, variant):
        """Claim plant-specific auxiliary variables (forces, times, ...)."""

    def configure_bounds(self, builder, layout, cfg):
        """Bounds/initial fixes for plant-specific auxiliary variables."""

    def dynamics_defect(self, x, u, dt, x_next):
        raise NotImplementedError

    def running_cost(self, x, u, dt):
        raise NotImplementedError

    def branch_node_cost(self, x, u, dt, weight, time_scaled):
        raise NotImplementedError

    def guard_local_indices(self, layout, i):
        """Decision-vector indices the guard at common node i depends on."""
        return list(layout.x_idx(i))

    def guard_expr(self, local_vars):
        raise NotImplementedError

    def path_constraints(self):
        """List of (name, fun(x_vars)->outputs, n_out) state-only path ineqs."""
        return []

    def emit_transition(self, builder, layout, cfg, pre_nodes, post_idx_rows,
                        branch_rows):
        """Impact/reset blocks from common pre-impact nodes to post states."""
        raise NotImplementedError

    def emit_extra_blocks(self, builder, layout, cfg, variant):
        """Anything beyond the shared scaffolding (time chains, v_lim, ...)."""

    def branch_seed(self, x_pre, u_pre, cfg):
        """Post-transition state guess and per-branch auxiliary guesses.

        Returns ``(x_post, extras)`` where ``extras`` maps plant array
        names (as registered in the layout) to per-branch row values.
        Used to seed branch variables when warm-starting a branched
        problem from an unbranched solution.  Default: identity reset.
        """
        return np.asarray(x_pre, dtype=float).copy(), {}

    def initial_guess_extras(self, layout, cfg, x0):
        """Fill plant-specific slots of the initial guess in place."""


# -- layout construction ------------------------------------------------------


def _make_layout(adapter: PlantOcp, cfg: TranscriptionConfig):
    lb = LayoutBuilder()
    variant = cfg.variant
    if variant == "tree":
        n_common = cfg.k_last  # common trajectory ends at the latest contact
        branch_len = cfg.n_branch_full
    elif variant == "sure":
        n_common = cfg.N
        branch_len = cfg.n_rejoin
    else:
        n_common = cfg.N
        branch_len = 0

    lb.add("x", (n_common + 1, adapter.n_x))
    # the tree's common part ends at the last branching node, whose input
    # still exists (it feeds that branch's transition), so it keeps one
    # more input slot than it has intervals
    n_inputs = n_common + 1 if variant == "tree" else n_common
    lb.add("u", (n_inputs, adapter.n_u))
    lb.add("dt", (n_common,))
    if variant in ("sure", "tree"):
        K = cfg.n_branches
        lb.add("bx", (K, branch_len + 1, adapter.n_x))
        lb.add("bu", (K, branch_len, adapter.n_u))
        lb.add("bdt", (K, branch_len))
        if cfg.d_bounds is not None:
            lb.add("d", (1,))
    adapter.register_variables(lb, cfg, variant)
    return TranscriptionLayout(
        cfg=cfg,
        n_x=adapter.n_x,
        n_u=adapter.n_u,
        n_vars=lb.n_vars,
        arrays=lb.names,
        n_common=n_common,
        branch_len=branch_len,
    )


def core_variable_count(cfg: TranscriptionConfig, n_x, n_u):
    """Size of the shared layout, before plant-specific auxiliaries."""
    if cfg.variant == "nominal":
        return (cfg.N + 1) * n_x + cfg.N * n_u + cfg.N
    if cfg.variant == "sure":
        n = (cfg.N + 1) * n_x + cfg.N * n_u + cfg.N
        n += cfg.n_branches * ((cfg.n_rejoin + 1) * n_x + cfg.n_rejoin * (n_u + 1))
        return n + (1 if cfg.d_bounds is not None else 0)
    n = (cfg.k_last + 1) * n_x + (cfg.k_last + 1) * n_u + cfg.k_last
    n += cfg.n_branches * (
        (cfg.n_branch_full + 1) * n_x + cfg.n_branch_full * (n_u + 1)
    )
    return n + (1 if cfg.d_bounds is not None else 0)


# -- shared scaffolding -------------------------------------------------------


def _stack_rows(rows):
    return np.array(rows, dtype=int)


def _skip_node(cfg):
    """Common node whose outgoing interval is replaced by the impact.

    Its time step drives nothing (no dynamics defect uses it), so it is
    excluded from the running cost and pinned by the builder.
    """
    if cfg.variant == "nominal":
        return cfg.contact_node if cfg.contact_enabled else None
    if cfg.variant == "sure":
        return cfg.k_last
    return None


def _dynamics_rows(adapter, layout, nodes, branch=None):
    rows = []
    for i in nodes:
        if branch is None:
            rows.append(
                list(layout.x_idx(i)) + list(layout.u_idx(i))
                + [layout.dt_idx(i)] + list(layout.x_idx(i + 1))
            )
        else:
            rows.append(
                list(layout.bx_idx(branch, i)) + list(layout.bu_idx(branch, i))
                + [layout.bdt_idx(branch, i)] + list(layout.bx_idx(branch, i + 1))
            )
    return _stack_rows(rows)


def _emit_dynamics(builder, adapter, layout, cfg):
    n_x, n_u = adapter.n_x, adapter.n_u

    def defect(v):
        x = v[:n_x]
        u = v[n_x : n_x + n_u]
        dt = v[n_x + n_u]
        x_next = v[n_x + n_u + 1 :]
        return adapter.dynamics_defect(x, u, dt, x_next)

    variant = cfg.variant
    if variant == "nominal":
        skip = {cfg.contact_node} if cfg.contact_enabled else set()
        nodes = [i for i in range(layout.n_common) if i not in skip]
    elif variant == "sure":
        nodes = [i for i in range(layout.n_common) if i != cfg.k_last]
    else:
        nodes = list(range(layout.n_common))  # 0 .. k_last-1
    if nodes:
        builder.add_eq("common_dynamics", defect, _dynamics_rows(adapter, layout, nodes), n_x)

    if layout.n_branches:
        rows = []
        for k in range(layout.n_branches):
            rows.extend(
                _dynamics_rows(adapter, layout, range(layout.branch_len), branch=k)
            )
        builder.add_eq("branch_dynamics", defect, _stack_rows(rows), n_x)


def _emit_costs(builder, adapter, layout, cfg):
    n_x, n_u = adapter.n_x, adapter.n_u

    def running(v):
        return adapter.running_cost(v[:n_x], v[n_x : n_x + n_u], v[n_x + n_u])

    nodes = [i for i in range(layout.n_common) if i != _skip_node(cfg)]
    rows = [
        list(layout.x_idx(i)) + list(layout.u_idx(i)) + [layout.dt_idx(i)]
        for i in nodes
    ]
    builder.add_cost("common_running_cost", running, _stack_rows(rows),
                     adapter.n_running_residuals)

    if layout.n_branches:
        w = cfg.branch_weight

        def branch_cost(v):
            return adapter.branch_node_cost(
                v[:n_x], v[n_x : n_x + n_u], v[n_x + n_u], w,
                cfg.branch_cost_time_scaled,
            )

        rows = []
        for k in range(layout.n_branches):
            for j in range(layout.branch_len):
                rows.append(
                    list(layout.bx_idx(k, j)) + list(layout.bu_idx(k, j))
                    + [layout.bdt_idx(k, j)]
                )
        builder.add_cost("branch_running_cost", branch_cost, _stack_rows(rows),
                         adapter.n_branch_residuals)


def _guard_block_fun(adapter, offset=0.0, sign=1.0, d_col=None):
    """guard(x)*sign - offset - sign_d*d as a residual callback."""

    def fun(v):
        g = adapter.guard_expr(v if d_col is None else v[:d_col])
        expr = g * sign - offset
        if d_col is not None:
            expr = expr - v[d_col]
        return [expr]

    return fun


def _emit_guard_blocks(builder, adapter, layout, cfg):
    variant = cfg.variant
    if variant == "nominal":
        if not cfg.contact_enabled:
            return
        c = cfg.contact_node
        builder.add_eq(
            "guard_zero_at_contact",
            lambda v: [adapter.guard_expr(v)],
            _stack_rows([adapter.guard_local_indices(layout, c)]),
            1,
        )
        if adapter.clearance_after_contact:
            free_nodes = [i for i in range(cfg.N + 1) if i not in (c, cfg.N)]
        else:
            free_nodes = list(range(c))
        rows = [adapter.guard_local_indices(layout, i) for i in free_nodes]
        # strict g > 0 as  -g + eps <= 0
        builder.add_ineq(
            "guard_clearance",
            lambda v: [STRICT_EPS - adapter.guard_expr(v)],
            _stack_rows(rows),
            1,
        )
        return

    # sure / tree: guard pinned to +d / -d at the window edges, clearance
    # beyond the broadened region elsewhere.
    d_decision = cfg.d_bounds is not None

    def pin_rows(i):
        row = adapter.guard_local_indices(layout, i)
        if d_decision:
            row = row + [layout.d_idx]
        return _stack_rows([row])

    d_col = len(adapter.guard_local_indices(layout, cfg.k_first)) if d_decision else None

    if d_decision:
        builder.add_eq(
            "guard_pin_window_entry",
            lambda v: [adapter.guard_expr(v[:-1]) - v[-1]],
            pin_rows(cfg.k_first), 1)
        builder.add_eq(
            "guard_pin_window_exit",
            lambda v: [adapter.guard_expr(v[:-1]) + v[-1]],
            pin_rows(cfg.k_last), 1)
    else:
        d = cfg.d_fixed
        builder.add_eq(
            "guard_pin_window_entry",
            lambda v: [adapter.guard_expr(v) - d], pin_rows(cfg.k_first), 1)
        builder.add_eq(
            "guard_pin_window_exit",
            lambda v: [adapter.guard_expr(v) + d], pin_rows(cfg.k_last), 1)

    clear_nodes = list(range(cfg.k_first))
    if adapter.clearance_after_rejoin and cfg.variant == "sure":
        clear_nodes += list(range(cfg.k_last + 1, cfg.N + 1))
    if clear_nodes:
        rows = []
        for i in clear_nodes:
            row = adapter.guard_local_indices(layout, i)
            if d_decision:
                row = row + [layout.d_idx]
            rows.append(row)
        if d_decision:
            builder.add_ineq(
                "guard_clearance_beyond_window",
                lambda v: [v[-1] + STRICT_EPS - adapter.guard_expr(v[:-1])],
                _stack_rows(rows), 1)
        else:
            d = cfg.d_fixed
            builder.add_ineq(
                "guard_clearance_beyond_window",
                lambda v: [d + STRICT_EPS - adapter.guard_expr(v)],
                _stack_rows(rows), 1)


def _emit_path_constraints(builder, adapter, layout, cfg):
    for name, fun, n_out in adapter.path_constraints():
        rows = [list(layout.x_idx(i)) for i in range(layout.n_common + 1)]
        for k in range(layout.n_branches):
            for j in range(layout.branch_len + 1):
                rows.append(list(layout.bx_idx(k, j)))
        builder.add_ineq(name, fun, _stack_rows(rows), n_out)


def _emit_rejoin(builder, adapter, layout, cfg):
    n_x = adapter.n_x
    rejoin = cfg.k_last + 1
    rows = []
    for k in range(layout.n_branches):
        rows.append(
            list(layout.bx_idx(k, layout.branch_len)) + list(layout.x_idx(rejoin))
        )
    builder.add_eq(
        "branch_rejoin_pinning",
        lambda v: [v[i] - v[n_x + i] for i in range(n_x)],
        _stack_rows(rows),
        n_x,
    )


# -- builders -----------------------------------------------------------------


def _build(adapter: PlantOcp, cfg: TranscriptionConfig):
    layout = _make_layout(adapter, cfg)
    builder = ProblemBuilder(layout.n_vars)

    # time steps and boundary conditions
    skip = _skip_node(cfg)
    for i in range(layout.n_common):
        builder.set_bounds(layout.dt_idx(i), cfg.dt_min, cfg.dt_max)
    if skip is not None:
        builder.fix(layout.dt_idx(skip), cfg.dt_min)
    for k in range(layout.n_branches):
        builder.set_bounds(layout.arrays["bdt"][k], cfg.dt_min, cfg.dt_max)
    if layout.d_idx is not None:
        builder.set_bounds(layout.d_idx, cfg.d_bounds[0], cfg.d_bounds[1])
    builder.fix(layout.x_idx(0), np.asarray(cfg.x_init, dtype=float))
    if cfg.variant in ("nominal", "sure"):
        builder.fix(layout.x_idx(cfg.N), np.asarray(cfg.x_end, dtype=float))
    else:
        for k in range(layout.n_branches):
            builder.fix(layout.bx_idx(k, layout.branch_len),
                        np.asarray(cfg.x_end, dtype=float))

    _emit_costs(builder, adapter, layout, cfg)
    _emit_dynamics(builder, adapter, layout, cfg)
    _emit_guard_blocks(builder, adapter, layout, cfg)
    _emit_path_constraints(builder, adapter, layout, cfg)

    if cfg.variant == "nominal" and cfg.contact_enabled:
        adapter.emit_transition(
            builder, layout, cfg,
            pre_nodes=[cfg.contact_node],
            post_idx_rows=[list(layout.x_idx(cfg.contact_node + 1))],
            branch_rows=None,
        )
    elif cfg.variant in ("sure", "tree"):
        adapter.emit_transition(
            builder, layout, cfg,
            pre_nodes=cfg.branch_nodes,
            post_idx_rows=[list(layout.bx_idx(k, 0))
                           for k in range(layout.n_branches)],
            branch_rows=list(range(layout.n_branches)),
        )
        if cfg.variant == "sure":
            _emit_rejoin(builder, adapter, layout, cfg)

    adapter.configure_bounds(builder, layout, cfg)
    adapter.emit_extra_blocks(builder, layout, cfg, cfg.variant)
    return builder.finish(layout), layout


def build_nominal(adapter: PlantOcp, cfg: TranscriptionConfig):
    if cfg.variant != "nominal":
        raise ValueError("cfg.variant must be 'nominal'")
    return _build(adapter, cfg)


def build_sure(adapter: PlantOcp, cfg: TranscriptionConfig):
    if cfg.variant != "sure":
        raise ValueError("cfg.variant must be 'sure'")
    return _build(adapter, cfg)


def build_tree(adapter: PlantOcp, cfg: TranscriptionConfig):
    if cfg.variant != "tree":
        raise ValueError("cfg.variant must be 'tree'")
    return _build(adapter, cfg)


def build(adapter: PlantOcp, cfg: TranscriptionConfig):
    return _build(adapter, cfg)


# -- packing / extraction -----------------------------------------------------


def default_initial_guess(adapter: PlantOcp, layout: TranscriptionLayout):
    """Linear state interpolation, zero inputs, midpoint time steps."""
    cfg = layout.cfg
    x0 = np.zeros(layout.n_vars)
    xi = np.asarray(cfg.x_init, dtype=float)
    xe = np.asarray(cfg.x_end, dtype=float)
    n_c = layout.n_common
    for i in range(n_c + 1):
        s = i / max(n_c, 1)
        x0[layout.x_idx(i)] = (1 - s) * xi + s * xe
    dt_mid = 0.5 * (cfg.dt_min + cfg.dt_max)
    for i in range(n_c):
        x0[layout.dt_idx(i)] = dt_mid
    for k in range(layout.n_branches):
        root = cfg.branch_nodes[k]
        start = x0[layout.x_idx(min(root, n_c))]
        if cfg.variant == "sure":
            target = x0[layout.x_idx(cfg.k_last + 1)]
        else:
            target = xe
        for j in range(layout.branch_len + 1):
            s = j / max(layout.branch_len, 1)
            x0[layout.bx_idx(k, j)] = (1 - s) * start + s * target
        x0[layout.arrays["bdt"][k]] = dt_mid
    if layout.d_idx is not None:
        x0[layout.d_idx] = 0.5 * (cfg.d_bounds[0] + cfg.d_bounds[1])
    adapter.initial_guess_extras(layout, cfg, x0)
    return x0


def extract_solution(layout: TranscriptionLayout, x_raw) -> SolutionBundle:
    """Pure reshaping of a raw decision vector; inverse of pack_solution."""
    x_raw = np.asarray(x_raw, dtype=float)
    if x_raw.size != layout.n_vars:
        raise ValueError(
            f"decision vector has size {x_raw.size}, layout needs {layout.n_vars}"
        )
    cfg = layout.cfg
    common = Trajectory(
        states=x_raw[layout.arrays["x"]].copy(),
        inputs=x_raw[layout.arrays["u"]].copy(),
        dts=x_raw[layout.arrays["dt"]].copy(),
    )
    branches = []
    if layout.n_branches:
        for k in range(layout.n_branches):
            branches.append(
                Trajectory(
                    states=x_raw[layout.arrays["bx"][k]].copy(),
                    inputs=x_raw[layout.arrays["bu"][k]].copy(),
                    dts=x_raw[layout.arrays["bdt"][k]].copy(),
                )
            )
    if layout.d_idx is not None:
        d = float(x_raw[layout.d_idx])
    elif cfg.variant in ("sure", "tree"):
        d = cfg.d_fixed
    else:
        d = None
    return SolutionBundle(
        common=common,
        branches=branches,
        branch_nodes=cfg.branch_nodes if layout.n_branches else [],
        rejoin_index=cfg.k_last + 1 if cfg.variant == "sure" else None,
        d=d,
    )


def pack_solution(layout: TranscriptionLayout, bundle: SolutionBundle):
    x = np.zeros(layout.n_vars)
    x[layout.arrays["x"]] = bundle.common.states
    x[layout.arrays["u"]] = bundle.common.inputs
    x[layout.arrays["dt"]] = bundle.common.dts
    for k, br in enumerate(bundle.branches):
        x[layout.arrays["bx"][k]] = br.states
        x[layout.arrays["bu"][k]] = br.inputs
        x[layout.arrays["bdt"][k]] = br.dts
    if layout.d_idx is not None and bundle.d is not None:
        x[layout.d_idx] = bundle.d
    return x


def middle_branch_index(k_first, k_last):
    """Common-node index the worst-case-balanced branch departs from."""
    return math.ceil((k_first + k_last) / 2)


def robust_nominal_branch(bundle: SolutionBundle, dt_impact=1e-3) -> Trajectory:
    """Single playable reference assembled from the middle branch.

    Concatenates the common trajectory up to the middle branching node,
    the middle branch through its rejoin state, then the common final
    segment.  The impact transition occupies one dt_impact interval.
    """
    if not bundle.branches:
        raise ValueError("bundle has no branches")
    if len(bundle.branches) == 1:
        k_mid = bundle.branch_nodes[0]
    else:
        k_mid = middle_branch_index(bundle.branch_nodes[0], bundle.branch_nodes[-1])
    return branch_reference(bundle, k_mid, dt_impact)


def branch_reference(bundle: SolutionBundle, branch_node, dt_impact=1e-3):
    """Playable reference that follows the branch departing at branch_node."""
    k = bundle.branch_nodes.index(branch_node)
    br = bundle.branches[k]
    com = bundle.common
    i = branch_node
    if bundle.rejoin_index is not None:
        r = bundle.rejoin_index
        states = np.vstack([com.states[: i + 1], br.states, com.states[r + 1 :]])
        inputs = np.vstack(
            [com.inputs[:i], com.inputs[i : i + 1], br.inputs, com.inputs[r:]]
        )
        dts = np.concatenate([com.dts[:i], [dt_impact], br.dts, com.dts[r:]])
    else:
        states = np.vstack([com.states[: i + 1], br.states])
        inputs = np.vstack([com.inputs[:i], com.inputs[i : i + 1], br.inputs])
        dts = np.concatenate([com.dts[:i], [dt_impact], br.dts])
    return Trajectory(states=states, inputs=inputs, dts=dts)
