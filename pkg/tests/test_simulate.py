import numpy as np
import pytest

from moclqr.model import scenario_from_dict
from moclqr.simulate import path_cost, rollout_once, simulate
from moclqr.solver import solve_convex_constant_obs, solve_micp

from test_solver import toy_dict


@pytest.fixture(scope="module")
def toy_solution(toy):
    return solve_micp(toy)


def test_monte_carlo_mean_within_four_stderr(toy, toy_solution):
    res = simulate(toy, toy_solution, 100_000, seed=1)
    assert abs(res.mean - toy_solution.cost) <= 4 * res.stderr


def test_rollout_once_matches_tables(toy, toy_solution):
    rng = np.random.default_rng(0)
    for e in (0, 1):
        for _ in range(10):
            rec = rollout_once(toy, toy_solution.tree, e, rng)
            np.testing.assert_allclose(rec.states, toy_solution.tree.path_states(rec.leaf), atol=1e-6)
            assert rec.cost == pytest.approx(path_cost(toy, toy_solution.tree, rec.leaf, e), rel=1e-6)


def test_uninformative_branch_frequency():
    d = toy_dict()
    d["observation"]["tables"] = [[[0.5, 0.5], [0.5, 0.5]]] * 2
    spec = scenario_from_dict(d)
    sol = solve_convex_constant_obs(spec)
    n = 40_000
    res = simulate(spec, sol, n, seed=5)
    frac = np.mean(res.observations[:, 0] == 0)
    assert abs(frac - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_simulation_is_deterministic_and_worker_independent(toy, toy_solution):
    a = simulate(toy, toy_solution, 20_000, seed=9)
    b = simulate(toy, toy_solution, 20_000, seed=9, workers=3)
    np.testing.assert_array_equal(a.costs, b.costs)
    np.testing.assert_array_equal(a.observations, b.observations)
    c = simulate(toy, toy_solution, 20_000, seed=10)
    assert not np.array_equal(a.costs, c.costs)
    rec = a.record(0, toy_solution.tree)
    assert rec.states.shape == (5, 2)
    with pytest.raises(ValueError):
        simulate(toy, toy_solution, 0, seed=1)
