"""Tree file serialisation and re-validation."""
from __future__ import annotations

import numpy as np

from . import jsonio
from .model import ScenarioSpec

DYNAMICS_TOL = 1e-8
CONSTRAINT_TOL = 1e-6
SIMPLEX_TOL = 1e-9


def tree_to_dict(spec: ScenarioSpec, solution) -> dict:
    tree = solution.tree
    topo = tree.topology
    Nb = topo.Nb
    by_node = {}
    for slot, reg in zip(solution.assignment.slots, solution.assignment.regions):
        by_node.setdefault(slot.node, []).append(
            {"k": topo[slot.node].depth * Nb + slot.step, "region": reg,
             "measurement": bool(slot.measurement)})
    nodes = []
    for nd in topo:
        k0 = nd.depth * Nb
        xs, us = tree.states[nd.id], tree.inputs[nd.id]
        steps = [{"k": k0 + i, "x": xs[i], "u": us[i]} for i in range(Nb)]
        if not nd.children:
            steps.append({"k": k0 + Nb, "x": xs[Nb], "u": None})
        nodes.append({
            "id": nd.id, "parent": nd.parent, "obs_label": nd.obs_label, "depth": nd.depth,
            "steps": steps, "belief": tree.beliefs[nd.id], "v": tree.v[nd.id],
            "z": tree.z[nd.id],
            "region_assignment": sorted(by_node.get(nd.id, []), key=lambda r: r["k"]),
        })
    return {"scenario": spec.name, "N": topo.N, "Nb": Nb, "cost": solution.cost,
            "gap": solution.gap, "status": solution.status, "nodes": nodes}


def write_tree(path, spec: ScenarioSpec, solution):
    with open(path, "w") as fh:
        fh.write(jsonio.dumps(tree_to_dict(spec, solution), indent=1))
        fh.write("\n")


def validate_tree(spec: ScenarioSpec, data: dict) -> list:
    """Check a tree file against ``spec``. Returns a list of problems (empty if valid)."""
    problems = []
    A, B = spec.system.A, spec.system.B
    nodes = {nd["id"]: nd for nd in data["nodes"]}
    terminal = {}
    for nid in sorted(nodes):
        nd = nodes[nid]
        steps = nd["steps"]
        xs = [np.asarray(s["x"], dtype=float) for s in steps]
        if nd["parent"] is None:
            start = spec.x0
        else:
            start = terminal.get(nd["parent"])
        if start is not None and np.max(np.abs(xs[0] - start)) > DYNAMICS_TOL:
            problems.append(f"node {nid}: start state does not match its parent")
        for a, b in zip(steps, steps[1:]):
            r = np.asarray(b["x"]) - A @ np.asarray(a["x"]) - B @ np.asarray(a["u"])
            if np.max(np.abs(r)) > DYNAMICS_TOL:
                problems.append(f"node {nid}: dynamics residual {np.max(np.abs(r)):.3g} at k={a['k']}")
        last = steps[-1]
        if last["u"] is not None:
            terminal[nid] = A @ np.asarray(last["x"]) + B @ np.asarray(last["u"])
        for s in steps:
            x = np.asarray(s["x"], dtype=float)
            if spec.state_set.violation(x) > CONSTRAINT_TOL:
                problems.append(f"node {nid}: state outside the state set at k={s['k']}")
            for obst in spec.obstacles:
                if obst.violation(x) < -CONSTRAINT_TOL:
                    problems.append(f"node {nid}: state inside obstacle {obst.name} at k={s['k']}")
            if s["u"] is not None and spec.input_set.violation(np.asarray(s["u"])) > CONSTRAINT_TOL:
                problems.append(f"node {nid}: input outside the input set at k={s['k']}")
        b = np.asarray(nd["belief"], dtype=float)
        if np.any(b < -SIMPLEX_TOL) or abs(b.sum() - 1.0) > SIMPLEX_TOL:
            problems.append(f"node {nid}: belief not on the simplex")
        for ra in nd["region_assignment"]:
            x = _state_at(nodes, nd, ra["k"], terminal)
            if x is not None and spec.partition.regions[ra["region"]].violation(x) > CONSTRAINT_TOL:
                problems.append(f"node {nid}: state at k={ra['k']} not in region {ra['region']}")
    return problems


def _state_at(nodes, nd, k, terminal):
    for s in nd["steps"]:
        if s["k"] == k:
            return np.asarray(s["x"], dtype=float)
    return terminal.get(nd["id"])
