"""Global solution of the inverse-belief MICP by best-first branch and bound.

Branching is on region assignments: one-of-R per measurement slot first (the
choices that change the cost weights), then, in free-space mode, one-of-R
per state slot picked by largest violation in the relaxed QP. Every node QP
is the relaxation with optimistic weights, so its value bounds all
completions from below.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..model import FREE_SPACE, PARTITION, ScenarioSpec
from ..qp import MAX_ITERATIONS, OPTIMAL, PRIMAL_INFEASIBLE, solve_qp
from .assembly import RegionAssignment, TreeQP, TrajectoryTree, build_tree

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6


class SolverError(RuntimeError):
    pass


class InfeasibleError(SolverError):
    pass


class BudgetExceeded(SolverError):
    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


class GuardExceeded(SolverError):
    pass


class PreconditionError(SolverError):
    pass


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 200_000
    gap_rel: float = 1e-6
    max_nodes: Optional[int] = None
    time_limit: Optional[float] = None
    workers: int = 1
    backend: Optional[str] = None

    def gap(self, incumbent: float) -> float:
        return self.gap_rel * (1.0 + abs(incumbent))


@dataclass
class Solution:
    tree: TrajectoryTree
    assignment: RegionAssignment
    cost: float
    gap: float = 0.0
    status: str = "optimal"
    stats: dict = field(default_factory=dict)
    qp_objective: float = float("nan")


def check_assumptions(spec: ScenarioSpec):
    if not spec.trans.is_static:
        raise PreconditionError("the MICP solver requires a static environment (identity transition)")
    if np.any(spec.b0 <= 0):
        raise PreconditionError("b0 must be strictly positive")


@dataclass
class _Eval:
    assignment: RegionAssignment
    status: str
    value: float
    x: Optional[np.ndarray]
    weights: object
    qp_iters: int = 0


class _Engine:
    def __init__(self, spec: ScenarioSpec, config: SolverConfig, tq: Optional[TreeQP] = None):
        self.spec = spec
        self.config = config
        self.tq = tq or TreeQP(spec)
        self.qps = 0

    def evaluate(self, assignment: RegionAssignment, x0=None, z0=None, warm=None) -> _Eval:
        asm = self.tq.assemble(assignment, x0=x0, z0=z0)
        cfg = self.config
        sol = solve_qp(asm.qp, tol=cfg.tol, max_iter=cfg.max_iter, backend=cfg.backend,
                       warm_x=warm)
        self.qps += 1
        if sol.status == MAX_ITERATIONS:
            # one retry from the returned iterate before giving up on this node
            sol2 = solve_qp(asm.qp, tol=cfg.tol, max_iter=5 * cfg.max_iter, backend=cfg.backend,
                            warm_x=sol.x, warm_y=sol.y)
            self.qps += 1
            sol = sol2
        if sol.status == PRIMAL_INFEASIBLE:
            return _Eval(assignment, PRIMAL_INFEASIBLE, math.inf, None, asm.weights, sol.iterations)
        value = sol.objective + asm.constant
        return _Eval(assignment, sol.status, value, sol.x, asm.weights, sol.iterations)

    def solution(self, ev: _Eval, status="optimal", gap=0.0, stats=None, x0=None) -> Solution:
        tree = build_tree(self.tq, ev.x, ev.weights, x0=x0, cost=ev.value)
        return Solution(tree, ev.assignment, ev.value, gap, status, stats or {}, ev.value)


def _slot_violations(tq: TreeQP, x: np.ndarray, slot) -> np.ndarray:
    st = x[tq.layout.x(slot.node, slot.step)]
    return np.array([reg.violation(st) for reg in tq.spec.partition.regions])


def complete_from_relaxation(tq: TreeQP, assignment: RegionAssignment, x: np.ndarray):
    """Fill unassigned slots with the lowest-index region containing the relaxed
    state (within FEAS_TOL). Returns None if some state lies in no region."""
    regs = list(assignment.regions)
    for i, (slot, r) in enumerate(zip(assignment.slots, regs)):
        if r is not None:
            continue
        viol = _slot_violations(tq, x, slot)
        inside = np.flatnonzero(viol <= FEAS_TOL)
        if inside.size == 0:
            return None
        regs[i] = int(inside[0])
    return RegionAssignment(assignment.slots, tuple(regs))


def lower_bound(spec: ScenarioSpec, partial: RegionAssignment, topology=None,
                config: Optional[SolverConfig] = None) -> float:
    """Relaxation value of a partial assignment (+inf when infeasible)."""
    tq = TreeQP(spec, topology)
    eng = _Engine(spec, config or SolverConfig(), tq)
    if partial.slots != tq.slots:
        partial = RegionAssignment(tq.slots, _remap(partial, tq.slots))
    return eng.evaluate(partial).value


def _remap(assignment, slots):
    lookup = assignment.as_dict()
    return tuple(lookup.get((s.node, s.step)) for s in slots)


def solve_micp(spec: ScenarioSpec, config: Optional[SolverConfig] = None,
               topology=None) -> Solution:
    """Best-first branch and bound over region assignments."""
    check_assumptions(spec)
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    tq = TreeQP(spec, topology)
    eng = _Engine(spec, cfg, tq)
    slots = tq.slots
    meas_idx = [i for i, s in enumerate(slots) if s.measurement]
    free_space = spec.partition.coverage_mode == FREE_SPACE
    counter = itertools.count()

    incumbent: Optional[_Eval] = None
    inc_node = None
    parents = {}
    bounds = {}
    heap = []
    explored = 0
    unresolved = []  # bounds of nodes whose QP hit the iteration cap
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def run(assignments, warm=None):
        if pool is None:
            return [eng.evaluate(a, warm=warm) for a in assignments]
        return list(pool.map(lambda a: eng.evaluate(a, warm=warm), assignments))

    def push(ev: _Eval, depth: int, parent_id, parent_bound: float):
        nid = next(counter)
        parents[nid] = parent_id
        if ev.status == PRIMAL_INFEASIBLE:
            bounds[nid] = math.inf
            return
        bound = ev.value
        if ev.status != OPTIMAL:
            bound = parent_bound
        bounds[nid] = bound
        heapq.heappush(heap, (bound, -depth, nid, ev, ev.status == OPTIMAL))

    def try_incumbent(ev: _Eval, nid):
        nonlocal incumbent, inc_node
        if incumbent is None or ev.value < incumbent.value:
            incumbent = ev
            inc_node = nid
            log.debug("incumbent %.10g at node %d", ev.value, nid)

    root_ev = run([RegionAssignment.empty(slots)])[0]
    push(root_ev, 0, None, -math.inf)
    status = "optimal"
    try:
        while heap:
            bound, negdepth, nid, ev, reliable = heapq.heappop(heap)
            if incumbent is not None and bound >= incumbent.value - cfg.gap(incumbent.value):
                continue
            if cfg.max_nodes is not None and explored >= cfg.max_nodes:
                heapq.heappush(heap, (bound, negdepth, nid, ev, reliable))
                status = "budget"
                break
            if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
                heapq.heappush(heap, (bound, negdepth, nid, ev, reliable))
                status = "budget"
                break
            explored += 1
            a = ev.assignment
            meas_open = [i for i in meas_idx if a.regions[i] is None]
            if ev.x is None:
                unresolved.append(bound)
                continue
            if not meas_open:
                done = a if a.complete else complete_from_relaxation(tq, a, ev.x)
                if done is not None and reliable:
                    if done is not a:
                        # pin the remaining slots and re-solve exactly
                        leaf = eng.evaluate(done, warm=ev.x)
                        lid = next(counter)
                        parents[lid] = nid
                        bounds[lid] = leaf.value
                        if leaf.status == OPTIMAL:
                            try_incumbent(leaf, lid)
                        continue
                    try_incumbent(ev, nid)
                    continue
                if done is not None and not reliable and a.complete:
                    unresolved.append(bound)
                    continue
            # choose the branching slot
            if meas_open:
                k = meas_open[0]
            else:
                open_idx = [i for i, r in enumerate(a.regions) if r is None]
                if not open_idx:
                    unresolved.append(bound)
                    continue
                worst = [(_slot_violations(tq, ev.x, slots[i]).min(), -i) for i in open_idx]
                k = -max(worst)[1]
            viol = _slot_violations(tq, ev.x, slots[k])
            order = sorted(range(spec.R), key=lambda r: (max(viol[r], 0.0), r))
            children = [a.with_region(k, r) for r in order]
            depth = a.num_assigned + 1
            for child_ev in run(children, warm=ev.x):
                push(child_ev, depth, nid, bound)
    finally:
        if pool is not None:
            pool.shutdown()

    open_bounds = [b for b, *_ in heap] + unresolved
    elapsed = time.perf_counter() - t0
    stats = {"nodes": explored, "qps": eng.qps, "time_s": elapsed}
    if incumbent is None:
        if status == "budget" or unresolved:
            raise BudgetExceeded("node/time budget exhausted without a feasible assignment")
        raise InfeasibleError("no region assignment admits a feasible trajectory tree")
    best_open = min(open_bounds) if open_bounds else math.inf
    gap = max(0.0, incumbent.value - best_open) if math.isfinite(best_open) else 0.0
    if unresolved and status == "optimal" and gap > cfg.gap(incumbent.value):
        status = "budget"
    if status == "optimal":
        gap = min(gap, cfg.gap(incumbent.value))
    # bounds along the incumbent's ancestry must not exceed its cost
    cur = inc_node
    while cur is not None:
        b = bounds.get(cur, -math.inf)
        if b > incumbent.value + cfg.gap(incumbent.value) + 1e-6 * (1 + abs(incumbent.value)):
            raise AssertionError(f"bound {b} at node {cur} exceeds final cost {incumbent.value}")
        cur = parents.get(cur)
    stats["gap"] = gap
    return eng.solution(incumbent, status=status, gap=gap, stats=stats)


def solve_convex_constant_obs(spec: ScenarioSpec, config: Optional[SolverConfig] = None,
                              x0=None, z0=None) -> Solution:
    """Single QP when the observation model does not depend on the state.

    ``x0``/``z0`` override the initial state and inverse belief (``z0 = 1/b0``
    by default), which lets callers sample the value function V(x, z).
    """
    check_assumptions(spec)
    if not spec.obs.is_constant():
        raise PreconditionError("observation tables differ across regions")
    if spec.partition.coverage_mode != PARTITION and (spec.R > 1 or spec.obstacles):
        raise PreconditionError("free-space disjunctions need branch and bound")
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    tq = TreeQP(spec)
    eng = _Engine(spec, cfg, tq)
    # identical tables make the worst-case weights of the empty assignment exact
    empty = RegionAssignment.empty(tq.slots)
    asm = tq.assemble(empty, x0=x0, z0=z0)
    sol = solve_qp(asm.qp, tol=cfg.tol, max_iter=cfg.max_iter, backend=cfg.backend)
    eng.qps += 1
    if sol.status == PRIMAL_INFEASIBLE:
        raise InfeasibleError("constant-observation problem is infeasible")
    if sol.status != OPTIMAL:
        raise BudgetExceeded("QP iteration limit reached")
    ev = _Eval(empty, OPTIMAL, sol.objective + asm.constant, sol.x, asm.weights)
    regs = []
    for s in tq.slots:
        st = sol.x[tq.layout.x(s.node, s.step)]
        inside = [i for i, reg in enumerate(spec.partition.regions) if reg.contains(st, FEAS_TOL)]
        regs.append(inside[0] if inside else 0)
    ev.assignment = RegionAssignment(tq.slots, tuple(regs))
    stats = {"nodes": 0, "qps": 1, "time_s": time.perf_counter() - t0, "gap": 0.0}
    return eng.solution(ev, stats=stats, x0=x0)


def enumerate_oracle(spec: ScenarioSpec, config: Optional[SolverConfig] = None,
                     guard: int = 100_000) -> Solution:
    """Solve one QP per complete region assignment and keep the cheapest."""
    check_assumptions(spec)
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    tq = TreeQP(spec)
    eng = _Engine(spec, cfg, tq)
    count = spec.R ** len(tq.slots)
    if count > guard:
        raise GuardExceeded(f"{count} assignments exceed the enumeration guard {guard}")
    best: Optional[_Eval] = None
    for regs in itertools.product(range(spec.R), repeat=len(tq.slots)):
        ev = eng.evaluate(RegionAssignment(tq.slots, regs))
        if ev.status != OPTIMAL:
            if ev.status == MAX_ITERATIONS:
                raise SolverError(f"QP for assignment {regs} did not converge")
            continue
        if best is None or ev.value < best.value:
            best = ev
    if best is None:
        raise InfeasibleError("every region assignment is infeasible")
    stats = {"nodes": count, "qps": eng.qps, "time_s": time.perf_counter() - t0, "gap": 0.0}
    return eng.solution(best, stats=stats)
