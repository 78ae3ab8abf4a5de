"""Closed-loop Monte-Carlo rollouts of a planned trajectory tree.

A rollout draws the true environment state ``e*`` from ``b0`` and then, at
every branching step, draws an observation from the table of the region that
physically contains the current state. The matching child branch is followed
to a leaf and the realized cost is ``sum_k h(x_k, u_k, e*) + h_N(x_N, e*)``.

Random streams: ``SeedSequence(seed)`` is spawned into one child per shard of
``SHARD_SIZE`` consecutive rollouts, and each shard draws from its own PCG64
generator. Shard boundaries do not depend on the worker count, so a given
``(seed, rollouts)`` pair always produces the same records.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ScenarioSpec, region_of_state

SHARD_SIZE = 8192


class SimulationError(RuntimeError):
    """Raised when a rollout cannot follow the tree."""


@dataclass
class RolloutRecord:
    e_star: int
    observations: tuple
    leaf: int
    cost: float
    states: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None


@dataclass
class SimulationResult:
    mean: float
    stderr: float
    planner_cost: float
    rollouts: int
    seed: int
    env: np.ndarray = field(repr=False)
    leaves: np.ndarray = field(repr=False)
    costs: np.ndarray = field(repr=False)
    observations: np.ndarray = field(repr=False)

    @property
    def z_score(self) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.mean == self.planner_cost else math.inf
        return (self.mean - self.planner_cost) / self.stderr

    def record(self, i: int, tree=None) -> RolloutRecord:
        leaf = int(self.leaves[i])
        rec = RolloutRecord(int(self.env[i]), tuple(int(o) for o in self.observations[i]),
                            leaf, float(self.costs[i]))
        if tree is not None:
            rec.states = tree.path_states(leaf)
            rec.inputs = tree.path_inputs(leaf)
        return rec

    def summary(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "planner_cost": self.planner_cost,
                "rollouts": self.rollouts, "seed": self.seed, "z_score": self.z_score}


class _Plan:
    """Precomputed tables for vectorised rollouts on a static environment."""

    def __init__(self, spec: ScenarioSpec, tree):
        if not spec.trans.is_static:
            raise SimulationError("rollouts require a static environment")
        self.spec = spec
        self.tree = tree
        topo = tree.topology
        E = spec.num_env_states
        self.E = E
        self.depth = topo.P - 1
        # children[nid, o] -> child id
        self.children = np.full((len(topo), max(topo.num_obs, 1)), -1, dtype=np.int64)
        for nd in topo:
            for o, c in enumerate(nd.children):
                self.children[nd.id, o] = c
        # observation distribution at each internal node: obs_prob[nid, e, :]
        self.obs_prob = np.zeros((len(topo), E, topo.num_obs))
        for nd in topo:
            if nd.children:
                reg = region_of_state(spec.partition, tree.states[nd.id][-1])
                if reg is None:
                    raise SimulationError(f"measurement state of node {nd.id} lies in no region")
                self.obs_prob[nd.id] = spec.obs.tables[reg]
        self.leaf_cost = {leaf: np.array([path_cost(spec, tree, leaf, e) for e in range(E)])
                          for leaf in topo.leaves}

    def run(self, rng: np.random.Generator, count: int):
        spec = self.spec
        env = rng.choice(self.E, size=count, p=spec.b0)
        node = np.zeros(count, dtype=np.int64)
        obs = np.zeros((count, self.depth), dtype=np.int64)
        for j in range(self.depth):
            p = self.obs_prob[node, env]
            u = rng.random(count)
            o = (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
            obs[:, j] = o
            node = self.children[node, o]
        costs = np.empty(count)
        for leaf, table in self.leaf_cost.items():
            m = node == leaf
            costs[m] = table[env[m]]
        return env, node, obs, costs


def path_cost(spec: ScenarioSpec, tree, leaf: int, e: int) -> float:
    """Realized cost of the branch ending at ``leaf`` when the environment is ``e``."""
    xs = tree.path_states(leaf)
    us = tree.path_inputs(leaf)
    total = sum(spec.cost.stage(xs[k], us[k], e) for k in range(len(us)))
    return float(total + spec.cost.terminal(xs[-1], e))


def rollout_once(spec: ScenarioSpec, tree, e_star: int, rng: np.random.Generator) -> RolloutRecord:
    """Single rollout that steps the dynamics explicitly.

    Inputs are taken from the tree branch selected by the sampled
    observations; states are re-integrated with ``x+ = A x + B u`` rather
    than read from the tree. Used to cross-check the vectorised tables.
    """
    topo = tree.topology
    A, B = spec.system.A, spec.system.B
    x = np.array(spec.x0, dtype=float)
    nid = 0
    xs, us, obs = [x.copy()], [], []
    total = 0.0
    for k in range(topo.N):
        i = k - topo[nid].depth * topo.Nb
        if i == topo.Nb:
            reg = region_of_state(spec.partition, x)
            if reg is None:
                raise SimulationError(f"state at step {k} lies in no region")
            o = int(rng.choice(topo.num_obs, p=spec.obs.tables[reg][e_star]))
            obs.append(o)
            children = topo[nid].children
            if o >= len(children):
                raise SimulationError(f"no branch for observation {o} at node {nid}")
            nid = children[o]
            i = 0
        u = tree.inputs[nid][i]
        total += spec.cost.stage(x, u, e_star)
        x = A @ x + B @ u
        xs.append(x.copy())
        us.append(np.array(u))
    total += spec.cost.terminal(x, e_star)
    return RolloutRecord(e_star, tuple(obs), nid, float(total), np.array(xs), np.array(us))


def simulate(spec: ScenarioSpec, solution, rollouts: int, seed: int,
             workers: int = 1) -> SimulationResult:
    """Run ``rollouts`` seeded rollouts of ``solution.tree``."""
    if rollouts < 1:
        raise ValueError("rollouts must be positive")
    plan = _Plan(spec, solution.tree)
    counts = [min(SHARD_SIZE, rollouts - s) for s in range(0, rollouts, SHARD_SIZE)]
    streams = np.random.SeedSequence(seed).spawn(len(counts))

    def shard(i):
        return plan.run(np.random.Generator(np.random.PCG64(streams[i])), counts[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(shard, range(len(counts))))
    else:
        parts = [shard(i) for i in range(len(counts))]
    env, leaves, obs, costs = (np.concatenate(p) for p in zip(*parts))
    mean = float(costs.mean())
    stderr = float(costs.std(ddof=1) / math.sqrt(rollouts)) if rollouts > 1 else math.inf
    return SimulationResult(mean, stderr, float(solution.cost), rollouts, seed,
                            env=env, leaves=leaves, costs=costs, observations=obs)
