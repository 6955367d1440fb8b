import csv
import json

import jsonschema
import pytest

from pfatlas import cli

from conftest import two_bus_text


@pytest.fixture
def two_bus_file(tmp_path):
    path = tmp_path / "two.m"
    path.write_text(two_bus_text(p_d_mw=50))
    return path


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_solutions_found(two_bus_file, tmp_path, capsys):
    out, trace = tmp_path / "s.json", tmp_path / "t.csv"
    code = _run("--case", two_bus_file, "--eps-v", 0.05, "--out", out, "--trace", trace)
    assert code == cli.EXIT_FOUND
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, cli.load_schema())
    assert doc["certificate"] == "all_candidates_found" and len(doc["solutions"]) == 2
    assert doc["solutions"][0]["vm"][0] == 1.0
    with open(trace) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == doc["iterations"]
    assert int(rows[-1]["live"]) == 0
    summary = capsys.readouterr().out
    assert f"iterations={doc['iterations']}" in summary


def test_json_is_deterministic(two_bus_file, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    _run("--case", two_bus_file, "--eps-v", 0.05, "--relax", "socp", "--out", a)
    _run("--case", two_bus_file, "--eps-v", 0.05, "--relax", "socp", "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_certified_none(two_bus_file, tmp_path):
    assert _run("--case", two_bus_file, "--lambda", 20, "--out", tmp_path / "o.json") == cli.EXIT_NONE
    doc = json.loads((tmp_path / "o.json").read_text())
    assert doc["solutions"] == [] and doc["certificate"] == "no_solution_in_region"


def test_budget_exhausted(two_bus_file, tmp_path):
    code = _run("--case", two_bus_file, "--max-nodes", 3, "--out", tmp_path / "o.json")
    assert code == cli.EXIT_BUDGET
    assert json.loads((tmp_path / "o.json").read_text())["certificate"] == "budget_exhausted"


@pytest.mark.parametrize("argv", [
    ["--case", "no_such_case"],
    ["--case", "case9", "--region", "no_such_region"],
])
def test_input_errors(argv, capsys):
    assert _run(*argv) == cli.EXIT_INPUT
    assert "pfatlas:" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--case", "case9", "--eps-v", "0"],
    ["--case", "case9", "--relax", "lp"],
    ["--eps-v", "1"],
])
def test_bad_flags_exit_2(argv):
    with pytest.raises(SystemExit) as err:
        _run(*argv)
    assert err.value.code == 2


def test_bad_region_file_is_input_error(tmp_path):
    bad = tmp_path / "bad.region"
    bad.write_text("[all]\nvmin = 2\nvmax = 1\n")
    assert _run("--case", "case9", "--region", bad) == cli.EXIT_INPUT


def test_case9_beyond_nose_is_infeasible(tmp_path):
    out = tmp_path / "o.json"
    assert _run("--case", "case9", "--lambda", 2.52227, "--relax", "sdp", "--out", out) == cli.EXIT_NONE
    assert json.loads(out.read_text())["solver_calls"] == 1


def test_case14_case_e_region(tmp_path):
    assert _run("--case", "case14", "--relax", "sdp", "--region", "caseE.region",
                "--out", tmp_path / "o.json") == cli.EXIT_NONE


def test_pad_flag_overrides_region(two_bus_file, tmp_path):
    # both roots sit at angle differences of about -2.9 and -87 degrees
    out = tmp_path / "o.json"
    assert _run("--case", two_bus_file, "--eps-v", 0.05, "--pad", 1, "--out", out) == cli.EXIT_NONE
    assert json.loads(out.read_text())["solutions"] == []


def test_stdout_when_no_out(two_bus_file, capsys):
    _run("--case", two_bus_file, "--eps-v", 0.05)
    captured = capsys.readouterr()
    assert json.loads(captured.out)["relax"] == "sdp"
    assert "solution(s)" in captured.err
