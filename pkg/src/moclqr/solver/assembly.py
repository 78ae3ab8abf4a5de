"""Tree-coupled QP for a (partial) region assignment.

With every measurement-slot region fixed, the inverse beliefs along the tree
are constants, so the objective ``sum h / z`` is a weighted sum of convex
quadratics in the stacked states and inputs. Uncommitted measurement slots
get the smallest weight any completion could produce, which keeps the value
a valid lower bound for all completions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .. import belief
from ..model import FREE_SPACE, ScenarioSpec
from ..qp import QpProblem
from ..tree import Layout, Topology, build_topology


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    """A tree state that needs a region decision."""

    node: int
    step: int  # local step in [1, Nb]
    measurement: bool


def make_slots(spec: ScenarioSpec, topo: Topology) -> tuple:
    """Measurement slots (internal-node terminal states, breadth first) come first.

    In free-space mode every owned state is a slot, because each one must be
    placed in some free region.
    """
    Nb = topo.Nb
    meas = [Slot(nid, Nb, True) for nid in topo.internal_nodes]
    if spec.partition.coverage_mode != FREE_SPACE:
        return tuple(meas)
    taken = {(s.node, s.step) for s in meas}
    space = [Slot(nd.id, i, False) for nd in topo for i in range(1, Nb + 1)
             if (nd.id, i) not in taken]
    return tuple(meas + space)


@dataclass(frozen=True)
class RegionAssignment:
    slots: tuple
    regions: tuple  # region index or None per slot

    @classmethod
    def empty(cls, slots) -> "RegionAssignment":
        return cls(tuple(slots), (None,) * len(slots))

    def with_region(self, idx: int, region: int) -> "RegionAssignment":
        regs = list(self.regions)
        regs[idx] = region
        return RegionAssignment(self.slots, tuple(regs))

    @property
    def complete(self) -> bool:
        return all(r is not None for r in self.regions)

    @property
    def num_assigned(self) -> int:
        return sum(r is not None for r in self.regions)

    def as_dict(self) -> dict:
        return {(s.node, s.step): r for s, r in zip(self.slots, self.regions) if r is not None}

    def measurement_regions(self) -> dict:
        """node id -> region of its terminal (measurement) state, or None."""
        return {s.node: r for s, r in zip(self.slots, self.regions) if s.measurement}

    def validate(self, num_regions: int):
        for r in self.regions:
            if r is not None and not 0 <= r < num_regions:
                raise AssignmentError(f"region index {r} out of range [0, {num_regions})")


@dataclass
class WeightTable:
    """Per-node inverse beliefs and the objective weights ``1/z``."""

    z: np.ndarray  # nodes x |E|
    exact: np.ndarray  # bool per node: all ancestor slots committed

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.z


def weight_table(spec: ScenarioSpec, topo: Topology, assignment: RegionAssignment,
                 z0: Optional[np.ndarray] = None) -> WeightTable:
    """Propagate inverse beliefs down the tree.

    An uncommitted parent slot multiplies by the largest ``1/M_i(e, o)`` over
    regions, the elementwise worst case, so ``1/z`` is a lower bound on the
    weight of every completion.
    """
    obs = spec.obs
    z0 = 1.0 / spec.b0 if z0 is None else np.asarray(z0, dtype=float)
    meas = assignment.measurement_regions()
    worst = 1.0 / np.min(obs.tables, axis=0)  # |E| x |O|
    E = spec.num_env_states
    z = np.empty((len(topo), E))
    exact = np.ones(len(topo), dtype=bool)
    z[0] = z0
    for nd in topo.nodes[1:]:
        o = nd.obs_label
        r = meas.get(nd.parent)
        if r is None:
            z[nd.id] = z[nd.parent] * worst[:, o]
            exact[nd.id] = False
        else:
            z[nd.id] = belief.inverse_update(obs, z[nd.parent], r, o)
            exact[nd.id] = exact[nd.parent]
        bound = belief.z_upper_bound(spec, z0, nd.depth + 1)
        if np.any(z[nd.id] > bound * (1.0 + 1e-12)):
            raise AssertionError(f"inverse belief of node {nd.id} exceeds its a-priori bound")
    return WeightTable(z, exact)


def _dedupe_rows(H, h, base_H, base_h):
    """Drop rows of (H, h) that repeat a row of (base_H, base_h) after normalisation."""
    if base_H.shape[0] == 0 or H.shape[0] == 0:
        return H, h

    def norm(M, v):
        s = np.max(np.abs(M), axis=1)
        return np.round(np.hstack([M / s[:, None], (v / s)[:, None]]), 12)

    base = {tuple(r) for r in norm(base_H, base_h)}
    keep = [i for i, r in enumerate(norm(H, h)) if tuple(r) not in base]
    return H[keep], h[keep]


@dataclass
class AssembledQP:
    qp: QpProblem
    constant: float
    weights: WeightTable
    assignment: RegionAssignment


class TreeQP:
    """Reusable assembler for one scenario and branching period."""

    def __init__(self, spec: ScenarioSpec, topo: Optional[Topology] = None):
        self.spec = spec
        self.topo = topo or build_topology(spec.horizon, spec.num_observations)
        n, d = spec.n, spec.d
        self.layout = Layout(self.topo, n, d)
        self.slots = make_slots(spec, self.topo)
        self.num_vars = self.layout.size
        self._build_constraints()
        self._build_cost_terms()
        self._region_rows = [
            _dedupe_rows(reg.H, reg.tightened(), spec.state_set.H, spec.state_set.h)
            for reg in spec.partition.regions
        ]

    # -- constraints ---------------------------------------------------
    def _build_constraints(self):
        spec, lay, topo = self.spec, self.layout, self.topo
        n, d, Nb = spec.n, spec.d, topo.Nb
        A, B = spec.system.A, spec.system.B
        rows, cols, vals = [], [], []
        lo, hi = [], []
        r0 = 0

        def put(block, row0, col0):
            bi, bj = np.nonzero(block)
            rows.append(bi + row0)
            cols.append(bj + col0)
            vals.append(block[bi, bj])

        self.x0_rows = []
        for nd in topo:
            for i in range(Nb):
                # x_{i+1} - A x_i - B u_i = 0
                put(np.eye(n), r0, lay.x(nd.id, i + 1).start)
                put(-B, r0, lay.u(nd.id, i).start)
                if i == 0:
                    st = lay.start_state(nd.id)
                    if st is None:
                        self.x0_rows.append(r0)
                    else:
                        put(-A, r0, st.start)
                else:
                    put(-A, r0, lay.x(nd.id, i).start)
                lo.append(np.zeros(n))
                hi.append(np.zeros(n))
                r0 += n
        self.num_dyn_rows = r0
        HX, hX = spec.state_set.H, spec.state_set.h
        HU, hU = spec.input_set.H, spec.input_set.h
        for nd in topo:
            for i in range(Nb):
                if HU.shape[0]:
                    put(HU, r0, lay.u(nd.id, i).start)
                    lo.append(np.full(hU.size, -np.inf))
                    hi.append(hU.copy())
                    r0 += hU.size
                if HX.shape[0]:
                    put(HX, r0, lay.x(nd.id, i + 1).start)
                    lo.append(np.full(hX.size, -np.inf))
                    hi.append(hX.copy())
                    r0 += hX.size
        self.A_base = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(r0, self.num_vars))
        self.l_base = np.concatenate(lo)
        self.u_base = np.concatenate(hi)

    def _bounds_for_x0(self, x0):
        l = self.l_base.copy()
        u = self.u_base.copy()
        ax0 = self.spec.system.A @ x0
        for r in self.x0_rows:
            l[r:r + self.spec.n] = ax0
            u[r:r + self.spec.n] = ax0
        return l, u

    def region_block(self, assignment: RegionAssignment):
        rows, cols, vals, ub = [], [], [], []
        r0 = 0
        for slot, reg in zip(assignment.slots, assignment.regions):
            if reg is None:
                continue
            H, h = self._region_rows[reg]
            if H.shape[0] == 0:
                continue
            bi, bj = np.nonzero(H)
            rows.append(bi + r0)
            cols.append(bj + self.layout.x(slot.node, slot.step).start)
            vals.append(H[bi, bj])
            ub.append(h)
            r0 += h.size
        if not r0:
            return sp.csc_matrix((0, self.num_vars)), np.zeros(0)
        M = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(r0, self.num_vars))
        return M, np.concatenate(ub)

    # -- objective -----------------------------------------------------
    def _build_cost_terms(self):
        """Collect (variable offset, matrix kind, node) triples for every quadratic term."""
        lay, topo, Nb = self.layout, self.topo, self.topo.Nb
        terms = []  # (start index, kind, node)
        self.root_x0_term = True
        for nd in topo:
            for i in range(Nb):
                terms.append((lay.u(nd.id, i).start, "R", nd.id))
                if i == 0:
                    st = lay.start_state(nd.id)
                    if st is not None:
                        terms.append((st.start, "Q", nd.id))
                else:
                    terms.append((lay.x(nd.id, i).start, "Q", nd.id))
            if not nd.children:
                terms.append((lay.x(nd.id, Nb).start, "QN", nd.id))
        self.terms = terms
        c = self.spec.cost
        mats = {"Q": c.Q, "R": c.R, "QN": c.QN}
        goals = {"Q": c.x_goals, "R": c.u_goals, "QN": c.x_goals}
        self._mats, self._goals = mats, goals
        rows, cols, data_idx = [], [], []
        kinds = []
        for start, kind, nid in terms:
            M = mats[kind]
            k = M.shape[0]
            ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
            rows.append((ii + start).ravel())
            cols.append((jj + start).ravel())
            kinds.append((kind, nid, k * k))
        self._P_rows = np.concatenate(rows)
        self._P_cols = np.concatenate(cols)
        self._P_kinds = kinds

    def objective(self, w: np.ndarray, x0: np.ndarray):
        """(P, q, constant) for node weights ``w`` (nodes x |E|)."""
        W = w.sum(axis=1)
        data = []
        q = np.zeros(self.num_vars)
        const = 0.0
        for (start, kind, nid), (_, _, kk) in zip(self.terms, self._P_kinds):
            M = self._mats[kind]
            G = self._goals[kind]
            data.append(2.0 * W[nid] * M.ravel())
            wg = w[nid] @ G
            q[start:start + M.shape[0]] -= 2.0 * (M @ wg)
            const += float(np.einsum("e,ei,ij,ej->", w[nid], G, M, G))
        P = sp.csc_matrix((np.concatenate(data), (self._P_rows, self._P_cols)),
                          shape=(self.num_vars, self.num_vars))
        P.sum_duplicates()
        # stage cost of the fixed initial state
        c = self.spec.cost
        dx = x0[None, :] - c.x_goals
        const += float(w[0] @ np.einsum("ei,ij,ej->e", dx, c.Q, dx))
        return P, q, const

    # -- full problem --------------------------------------------------
    def assemble(self, assignment: RegionAssignment, *, x0=None, z0=None) -> AssembledQP:
        assignment.validate(self.spec.R)
        x0 = self.spec.x0 if x0 is None else np.asarray(x0, dtype=float)
        wt = weight_table(self.spec, self.topo, assignment, z0)
        P, q, const = self.objective(wt.weights, x0)
        l, u = self._bounds_for_x0(x0)
        Mreg, hreg = self.region_block(assignment)
        A = sp.vstack([self.A_base, Mreg], format="csc")
        l = np.concatenate([l, np.full(hreg.size, -np.inf)])
        u = np.concatenate([u, hreg])
        return AssembledQP(QpProblem(P, q, A, l, u), const, wt, assignment)


@dataclass
class TrajectoryTree:
    topology: Topology
    states: list  # per node (Nb+1) x n, row 0 is the start state
    inputs: list  # per node Nb x d
    beliefs: np.ndarray  # nodes x |E| normalized belief at segment start
    v: np.ndarray
    z: np.ndarray
    cost: float = float("nan")

    def path_states(self, leaf: int) -> np.ndarray:
        topo = self.topology
        chain = topo.ancestors(leaf)
        rows = [self.states[chain[0]][0]]
        for nid in chain:
            rows.extend(self.states[nid][1:])
        return np.array(rows)

    def path_inputs(self, leaf: int) -> np.ndarray:
        return np.vstack([self.inputs[nid] for nid in self.topology.ancestors(leaf)])

    def all_states(self) -> np.ndarray:
        return np.vstack([s[1:] for s in self.states])


def build_tree(tq: TreeQP, xsol: np.ndarray, wt: WeightTable, x0=None, cost=float("nan")) -> TrajectoryTree:
    x0 = tq.spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    lay = tq.layout
    states = [lay.states(xsol, nd.id, x0) for nd in tq.topo]
    inputs = [lay.inputs(xsol, nd.id) for nd in tq.topo]
    v = wt.weights
    b = v / v.sum(axis=1, keepdims=True)
    return TrajectoryTree(tq.topo, states, inputs, b, v.copy(), wt.z.copy(), cost)
