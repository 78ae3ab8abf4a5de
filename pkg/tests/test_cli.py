import csv
import json
import re
import subprocess

import pytest

from moclqr import cli, treeio
from moclqr.model import load_scenario

from test_solver import toy_dict
from conftest import scenario_path

TOY = str(scenario_path("toy"))


def test_plan_writes_a_valid_tree(tmp_path, capsys):
    out = tmp_path / "tree.json"
    assert cli.main(["plan", "--scenario", TOY, "--out", str(out)]) == cli.EXIT_OK
    line = capsys.readouterr().out.strip()
    assert re.fullmatch(r"cost=\S+ nodes=\d+ qps=\d+ time=\S+ gap=\S+", line)
    data = json.loads(out.read_text())
    assert treeio.validate_tree(load_scenario(TOY), data) == []
    assert {"cost", "gap", "nodes"} <= set(data)
    node = data["nodes"][1]
    assert {"id", "parent", "obs_label", "depth", "steps", "belief", "v", "z",
            "region_assignment"} <= set(node)


def test_validate_tree_flags_broken_dynamics(tmp_path):
    out = tmp_path / "tree.json"
    cli.main(["plan", "--scenario", TOY, "--out", str(out)])
    data = json.loads(out.read_text())
    data["nodes"][0]["steps"][1]["x"][0] += 1e-3
    problems = treeio.validate_tree(load_scenario(TOY), data)
    assert any("dynamics" in p for p in problems)


def test_bundled_name_resolves(capsys):
    assert cli.main(["plan", "--scenario", "toy"]) == cli.EXIT_OK


@pytest.mark.parametrize("argv, code", [
    (["plan", "--scenario", TOY, "--b0", "1,0"], cli.EXIT_VALIDATION),
    (["plan", "--scenario", TOY, "--nb", "3"], cli.EXIT_VALIDATION),
    (["plan", "--scenario", TOY, "--nb", "1", "--budget-nodes", "1"], cli.EXIT_BUDGET),
])
def test_exit_codes(argv, code, capsys):
    assert cli.main(argv) == code


def test_parse_and_infeasible_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["plan", "--scenario", str(bad)]) == cli.EXIT_PARSE
    d = toy_dict()
    d["x0"] = [3.9, 3.0]
    inf = tmp_path / "inf.json"
    inf.write_text(json.dumps(d))
    assert cli.main(["plan", "--scenario", str(inf)]) == cli.EXIT_INFEASIBLE


def test_table1_csv(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert cli.main(["table1", "--scenario", TOY, "--nb-list", "2,4", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["Nb", "P", "cost", "time_s", "gap"]
    assert [r[:2] for r in rows[1:]] == [["2", "2"], ["4", "1"]]
    assert float(rows[1][2]) <= float(rows[2][2])


def test_simulate_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert cli.main(["simulate", "--scenario", TOY, "--rollouts", "2000", "--seed", "4",
                         "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert len(doc["rollouts"]) == 2000
    assert set(doc["summary"]) >= {"mean", "stderr", "planner_cost"}


def test_simulate_requires_seed(capsys):
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--scenario", TOY])


def test_oracle_report_and_negative_control(capsys):
    assert cli.main(["oracle", "--scenario", TOY]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 3 and "FAIL" not in out
    assert cli.main(["oracle", "--scenario", TOY, "--corrupt-weight", "1.5"]) == cli.EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


def test_oracle_guard(capsys):
    assert cli.main(["oracle", "--scenario", TOY, "--nb", "1", "--guard", "10"]) == cli.EXIT_BUDGET


def test_console_script():
    out = subprocess.run(["moclqr", "plan", "--scenario", "toy"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("cost=")
