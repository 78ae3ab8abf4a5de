"""Observation-indexed trajectory-tree topology and decision-vector layout.

A node at depth ``j`` covers plan steps ``[j*Nb, (j+1)*Nb)``. It owns the
``Nb`` inputs applied in that range and the ``Nb`` states reached by them;
its start state is the parent's last state (or ``x0`` at the root). Nodes
are numbered breadth first with siblings ordered by observation label.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import HorizonSpec


@dataclass(frozen=True)
class BranchSchedule:
    N: int
    Nb: int
    num_obs: int

    @property
    def P(self) -> int:
        return self.N // self.Nb

    def j(self, k: int) -> int:
        return k // self.Nb

    def is_measurement_step(self, k: int) -> bool:
        return 0 < k < self.N and k % self.Nb == 0


@dataclass(frozen=True)
class TreeNode:
    id: int
    depth: int
    path: tuple
    parent: Optional[int]
    children: tuple = field(default=())

    @property
    def obs_label(self) -> Optional[int]:
        return self.path[-1] if self.path else None


class Topology:
    """Complete |O|-ary tree of depth P - 1."""

    def __init__(self, horizon: HorizonSpec, num_obs: int):
        if num_obs < 1:
            raise ValueError("num_obs must be >= 1")
        self.schedule = BranchSchedule(horizon.N, horizon.Nb, num_obs)
        self.N = horizon.N
        self.Nb = horizon.Nb
        self.P = horizon.P
        self.num_obs = num_obs
        nodes = []
        self._ids = {}
        for depth in range(self.P):
            for path in itertools.product(range(num_obs), repeat=depth):
                nid = len(nodes)
                parent = self._ids[path[:-1]] if depth else None
                nodes.append([nid, depth, path, parent, []])
                self._ids[path] = nid
                if parent is not None:
                    nodes[parent][4].append(nid)
        self.nodes = tuple(TreeNode(i, dep, p, par, tuple(ch)) for i, dep, p, par, ch in nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, i) -> TreeNode:
        return self.nodes[i]

    def node_id(self, path) -> int:
        return self._ids[tuple(path)]

    def step_range(self, nid: int) -> range:
        j = self.nodes[nid].depth
        return range(j * self.Nb, (j + 1) * self.Nb)

    @property
    def internal_nodes(self) -> list:
        return [nd.id for nd in self.nodes if nd.children]

    @property
    def leaves(self) -> list:
        return [nd.id for nd in self.nodes if not nd.children]

    def ancestors(self, nid: int) -> list:
        """Node ids from the root down to ``nid`` inclusive."""
        out = []
        cur = nid
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur].parent
        return out[::-1]

    @property
    def total_control_steps(self) -> int:
        return len(self.nodes) * self.Nb


def build_topology(horizon: HorizonSpec, num_obs: int) -> Topology:
    return Topology(horizon, num_obs)


def count_exact_variables(N: int, num_obs: int, d: int) -> int:
    """Input count of the un-approximated tree: ``d * sum_{k<N} |O|^k``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return d * sum(num_obs ** k for k in range(N))


def leaf_paths(topology: Topology) -> list:
    return [topology[i].path for i in topology.leaves]


class Layout:
    """Bijection between (node, local step, kind) and decision-vector indices.

    Each node block is ``Nb`` repetitions of ``[u_i (d entries), x_{i+1} (n entries)]``.
    """

    def __init__(self, topology: Topology, n: int, d: int):
        self.topology = topology
        self.n = n
        self.d = d
        self.Nb = topology.Nb
        self.step_size = n + d
        self.block = self.Nb * self.step_size
        self.size = len(topology) * self.block

    def u(self, nid: int, i: int) -> slice:
        """Input applied at local step i in [0, Nb)."""
        if not 0 <= i < self.Nb:
            raise IndexError(i)
        s = nid * self.block + i * self.step_size
        return slice(s, s + self.d)

    def x(self, nid: int, i: int) -> slice:
        """Owned state at local step i in [1, Nb]."""
        if not 1 <= i <= self.Nb:
            raise IndexError(i)
        s = nid * self.block + (i - 1) * self.step_size + self.d
        return slice(s, s + self.n)

    def start_state(self, nid: int) -> Optional[slice]:
        """Slice of the state a node starts from; None at the root (x0 is data)."""
        parent = self.topology[nid].parent
        return None if parent is None else self.x(parent, self.Nb)

    def locate(self, index: int) -> tuple:
        """Inverse map: flat index -> (node, local step, 'u' | 'x', component)."""
        if not 0 <= index < self.size:
            raise IndexError(index)
        nid, rem = divmod(index, self.block)
        i, off = divmod(rem, self.step_size)
        if off < self.d:
            return nid, i, "u", off
        return nid, i + 1, "x", off - self.d

    def index(self, nid: int, i: int, kind: str, comp: int) -> int:
        sl = self.u(nid, i) if kind == "u" else self.x(nid, i)
        return sl.start + comp

    def states(self, sol: np.ndarray, nid: int, x0: np.ndarray) -> np.ndarray:
        """(Nb + 1) x n states of a node including its start state."""
        st = self.start_state(nid)
        first = np.asarray(x0) if st is None else sol[st]
        rows = [first] + [sol[self.x(nid, i)] for i in range(1, self.Nb + 1)]
        return np.array(rows)

    def inputs(self, sol: np.ndarray, nid: int) -> np.ndarray:
        return np.array([sol[self.u(nid, i)] for i in range(self.Nb)])
