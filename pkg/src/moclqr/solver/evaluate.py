"""Expected cost of a fixed trajectory tree, recomputed from scratch.

Walks the tree in normalized-belief coordinates: each node carries the
posterior belief ``b`` and the probability of the observation sequence that
leads to it. The expected cost is the probability-weighted sum of
``E_b[h]`` over every step, plus ``E_b[h_N]`` at the leaves. No inverse or
unnormalized coordinates are used, so this is an independent check on the
solver objective.
"""
from __future__ import annotations

import numpy as np

from .. import belief
from ..model import ScenarioSpec


def evaluate_cost(spec: ScenarioSpec, tree, assignment) -> float:
    topo = tree.topology
    cost = spec.cost
    meas = assignment.measurement_regions()
    E = spec.num_env_states
    b = {0: np.asarray(spec.b0, dtype=float)}
    prob = {0: 1.0}
    total = 0.0
    for nd in topo:
        if nd.parent is not None:
            b[nd.id], lik = belief.belief_update(spec.obs, spec.trans, b[nd.parent],
                                                 meas[nd.parent], nd.obs_label)
            prob[nd.id] = prob[nd.parent] * lik
        bn, pn = b[nd.id], prob[nd.id]
        xs = tree.states[nd.id]
        us = tree.inputs[nd.id]
        node_cost = 0.0
        for i in range(topo.Nb):
            node_cost += sum(bn[e] * cost.stage(xs[i], us[i], e) for e in range(E))
        if not nd.children:
            node_cost += sum(bn[e] * cost.terminal(xs[-1], e) for e in range(E))
        total += pn * node_cost
    return float(total)
