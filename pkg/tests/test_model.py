import json

import numpy as np
import pytest

from moclqr.model import (FREE_SPACE, HorizonSpec, ObservationModel, Polytope, ScenarioParseError,
                          ScenarioValidationError, TransitionModel, check_partition, load_scenario,
                          region_of_state, save_scenario, scenario_from_dict, scenario_to_dict,
                          symmetric_table, with_overrides)

from conftest import random_instance_dict, scenario_path


def _scen1_dict():
    return json.loads(scenario_path("scenario1_p085").read_text())


def test_scenario1_loads_with_two_regions_split_at_minus_one(scen1):
    assert scen1.R == 2
    assert scen1.n == 4 and scen1.d == 2
    assert scen1.horizon == HorizonSpec(60, 30)
    np.testing.assert_array_equal(scen1.obs.tables[0], [[0.85, 0.15], [0.15, 0.85]])
    np.testing.assert_array_equal(scen1.system.A[2:, 2:], 1.1 * np.eye(2))
    assert region_of_state(scen1.partition, [-0.999, 0, 0, 0]) == 0
    assert region_of_state(scen1.partition, [-1.001, 0, 0, 0]) == 1


@pytest.mark.parametrize("x, expected", [([0, 0, 0, 0], 0), ([-3, 0, 0, 0], 1),
                                         ([20, 0, 0, 0], None), ([0, 11, 0, 0], None)])
def test_region_of_state_examples(scen1, x, expected):
    assert region_of_state(scen1.partition, x) == expected


def test_boundary_state_goes_to_lowest_index_and_strict_row_excludes_it(scen1):
    # X = -1 is on the closed edge of X1 and the strict edge of X2
    assert region_of_state(scen1.partition, [-1.0, 0, 0, 0]) == 0
    assert not scen1.partition.regions[1].contains([-1.0, 0, 0, 0])
    assert scen1.partition.regions[1].contains([-1.0 - 1e-6, 0, 0, 0])


def test_b0_on_simplex_boundary_rejected():
    d = _scen1_dict()
    d["b0"] = [1.0, 0.0]
    with pytest.raises(ScenarioValidationError, match="b0 not strictly positive"):
        scenario_from_dict(d)


def test_nb_must_divide_n():
    d = _scen1_dict()
    d["horizon"] = {"N": 60, "Nb": 25}
    with pytest.raises(ScenarioValidationError, match="divide"):
        scenario_from_dict(d)


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d["observation"]["tables"][0][0].__setitem__(0, 0.9), "sum"),
    (lambda d: d["observation"]["tables"][0].__setitem__(0, [1.0, 0.0]), r"\(0, ?1\)|strictly"),
    (lambda d: d["cost"].__setitem__("Q", [[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]), "PSD|semidefinite"),
    (lambda d: d.__setitem__("x0", [100, 0, 0, 0]), "x0"),
    (lambda d: d["system"].__setitem__("B", [[1, 0], [0, 1]]), "B"),
])
def test_validation_errors_name_the_invariant(mutate, match):
    d = _scen1_dict()
    mutate(d)
    with pytest.raises(ScenarioValidationError, match=match):
        scenario_from_dict(d)


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioParseError):
        load_scenario(bad)
    with pytest.raises(ScenarioParseError):
        load_scenario(tmp_path / "missing.json")
    d = _scen1_dict()
    del d["system"]
    with pytest.raises(ScenarioParseError, match="system"):
        scenario_from_dict(d)


def test_polytope_rejects_zero_row_and_shape_mismatch():
    with pytest.raises(ScenarioValidationError):
        Polytope([[0.0, 0.0]], [1.0])
    with pytest.raises(ScenarioValidationError):
        Polytope([[1.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ScenarioValidationError):
        Polytope([[1.0, 0.0]], [1.0], strict=[True, False])


def test_static_transition_must_be_identity():
    with pytest.raises(ScenarioValidationError):
        TransitionModel([[0.9, 0.2], [0.1, 0.8]], static=True)
    assert TransitionModel.identity(3).is_static
    with pytest.raises(ScenarioValidationError):
        TransitionModel([[0.9, 0.2], [0.2, 0.8]])


def test_observation_constant_detection():
    T = symmetric_table(2, 0.7)
    assert ObservationModel(np.stack([T, T])).is_constant()
    assert not ObservationModel(np.stack([T, symmetric_table(2, 0.8)])).is_constant()


@pytest.mark.parametrize("name", ["scenario1_p085", "scenario1_p07", "scenario2_b0_80_20",
                                  "scenario2_b0_50_50", "toy"])
def test_round_trip_is_bit_exact(tmp_path, name):
    spec = load_scenario(scenario_path(name))
    out = tmp_path / f"{name}.json"
    save_scenario(spec, out)
    again = load_scenario(out)
    assert scenario_to_dict(again) == scenario_to_dict(spec)
    for a, b in [(spec.system.A, again.system.A), (spec.obs.tables, again.obs.tables),
                 (spec.cost.QN, again.cost.QN), (spec.b0, again.b0)]:
        assert np.array_equal(a, b)
    for r1, r2 in zip(spec.partition.regions, again.partition.regions):
        assert np.array_equal(r1.H, r2.H) and np.array_equal(r1.h, r2.h)
        assert np.array_equal(r1.strict, r2.strict)


def test_random_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    for i in range(5):
        spec = scenario_from_dict(random_instance_dict(rng))
        save_scenario(spec, tmp_path / "r.json")
        again = load_scenario(tmp_path / "r.json")
        assert np.array_equal(spec.system.A, again.system.A)
        assert np.array_equal(spec.cost.Q, again.cost.Q)
        assert np.array_equal(spec.x0, again.x0)


def test_partition_samples_belong_to_exactly_one_region(scen1):
    counts = check_partition(scen1, num_samples=10_000, seed=1)
    assert len(counts) > 5000
    assert np.all(counts == 1)


def test_overlapping_partition_rejected():
    d = _scen1_dict()
    d["regions"][1]["h"] = [5, 5, 10, 10]  # X2 now reaches X = 5
    spec = scenario_from_dict(d)
    with pytest.raises(ScenarioValidationError, match="overlap"):
        check_partition(spec)


def test_free_space_scenario_has_obstacles_outside_regions():
    spec = load_scenario(scenario_path("scenario2_b0_50_50"))
    assert spec.partition.coverage_mode == FREE_SPACE
    assert len(spec.obstacles) == 2
    for obst in spec.obstacles:
        centre = np.zeros(4)
        centre[:2] = [(obst.h[0] - obst.h[1]) / 2, (obst.h[2] - obst.h[3]) / 2]
        assert obst.contains(centre)
        assert region_of_state(spec.partition, centre) is None


def test_with_overrides(scen1):
    s = with_overrides(scen1, Nb=20, b0=[0.8, 0.2], accuracies={0: 0.7})
    assert s.horizon.P == 3
    np.testing.assert_allclose(s.b0, [0.8, 0.2])
    np.testing.assert_allclose(s.obs.tables[0], [[0.7, 0.3], [0.3, 0.7]])
    np.testing.assert_array_equal(s.obs.tables[1], scen1.obs.tables[1])
    with pytest.raises(ScenarioValidationError):
        with_overrides(scen1, accuracies={5: 0.7})


def test_cost_terms(scen1):
    c = scen1.cost
    x = np.array([14.0, 8.0, 0.0, 0.0])
    assert c.terminal(x, 0) == 0.0
    assert c.terminal(x, 1) == pytest.approx(100 * 16 ** 2)
    assert c.stage(x, np.zeros(2), 1) == pytest.approx(1e-5 * 256)
