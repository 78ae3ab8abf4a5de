import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moclqr.model import HorizonSpec
from moclqr.tree import (BranchSchedule, Layout, build_topology, count_exact_variables,
                         leaf_paths)


@pytest.mark.parametrize("N, Nb, O, nodes, steps", [(3, 1, 2, 7, 7), (60, 30, 2, 3, 90),
                                                    (10, 10, 2, 1, 10), (6, 2, 3, 13, 26)])
def test_node_and_step_counts(N, Nb, O, nodes, steps):
    topo = build_topology(HorizonSpec(N, Nb), O)
    assert len(topo) == nodes
    assert topo.total_control_steps == steps


def test_count_exact_variables():
    assert count_exact_variables(3, 2, 2) == 14
    assert count_exact_variables(17, 1, 3) == 3 * 17
    assert count_exact_variables(60, 2, 2) == 2 * (2 ** 60 - 1)
    with pytest.raises(ValueError):
        count_exact_variables(0, 2, 2)


def test_leaf_paths_examples():
    assert leaf_paths(build_topology(HorizonSpec(6, 2), 2)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert leaf_paths(build_topology(HorizonSpec(4, 4), 2)) == [()]
    assert leaf_paths(build_topology(HorizonSpec(4, 2), 3)) == [(0,), (1,), (2,)]


def test_bfs_numbering():
    topo = build_topology(HorizonSpec(3, 1), 2)
    assert [nd.path for nd in topo] == [(), (0,), (1,), (0, 0), (0, 1), (1, 0), (1, 1)]
    assert topo[0].obs_label is None
    assert topo[4].parent == 1 and topo[4].obs_label == 1
    assert topo.ancestors(6) == [0, 2, 6]


horizons = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)).map(
    lambda t: (t[0] * t[1], t[1], t[2]))


@settings(max_examples=60, deadline=None)
@given(horizons)
def test_topology_invariants(h):
    N, Nb, O = h
    topo = build_topology(HorizonSpec(N, Nb), O)
    P = N // Nb
    for j in range(P):
        assert sum(nd.depth == j for nd in topo) == O ** j
    assert topo.total_control_steps == sum(Nb * O ** j for j in range(P))
    assert len({nd.path for nd in topo}) == len(topo)
    for nd in topo:
        if nd.parent is not None:
            par = topo[nd.parent]
            assert nd.path[:-1] == par.path
            assert topo.step_range(nd.id).start == topo.step_range(par.id).stop
    for leaf in topo.leaves:
        steps = [k for nid in topo.ancestors(leaf) for k in topo.step_range(nid)]
        assert steps == list(range(N))
    paths = leaf_paths(topo)
    assert len(paths) == O ** (P - 1) and paths == sorted(paths)


@settings(max_examples=60, deadline=None)
@given(horizons)
def test_branch_schedule(h):
    N, Nb, O = h
    s = BranchSchedule(N, Nb, O)
    js = [s.j(k) for k in range(N + 1)]
    assert js[0] == 0 and js[-1] == s.P
    assert all(b - a in (0, 1) for a, b in zip(js, js[1:]))
    assert [k for k in range(N + 1) if s.is_measurement_step(k)] == list(range(Nb, N, Nb))


@settings(max_examples=40, deadline=None)
@given(horizons, st.integers(1, 4), st.integers(1, 3))
def test_layout_is_a_bijection(h, n, d):
    N, Nb, O = h
    topo = build_topology(HorizonSpec(N, Nb), O)
    lay = Layout(topo, n, d)
    assert lay.size == topo.total_control_steps * (n + d)
    seen = set()
    for nd in topo:
        for i in range(Nb):
            for c in range(d):
                idx = lay.index(nd.id, i, "u", c)
                assert lay.locate(idx) == (nd.id, i, "u", c)
                seen.add(idx)
        for i in range(1, Nb + 1):
            for c in range(n):
                idx = lay.index(nd.id, i, "x", c)
                assert lay.locate(idx) == (nd.id, i, "x", c)
                seen.add(idx)
    assert seen == set(range(lay.size))
    with pytest.raises(IndexError):
        lay.locate(lay.size)


def test_children_start_from_parent_tail():
    topo = build_topology(HorizonSpec(4, 2), 2)
    lay = Layout(topo, 2, 1)
    sol = np.arange(lay.size, dtype=float)
    x0 = np.array([-1.0, -2.0])
    np.testing.assert_array_equal(lay.states(sol, 0, x0)[0], x0)
    for c in topo[0].children:
        np.testing.assert_array_equal(lay.states(sol, c, x0)[0], lay.states(sol, 0, x0)[-1])
