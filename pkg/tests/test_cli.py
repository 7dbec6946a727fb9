import json
import subprocess
import sys
from pathlib import Path

import pytest

from periodic_resonance import cli, scenario
from periodic_resonance.cli import dumps_report, main, round_floats, run_scenario

GOLDEN = Path(__file__).parent / "golden"

SMALL = """
name = "small"
seed = 3
analyses = ["ll_check", "degree", "periodic_solve"]

[grid]
points_per_axis = 513

[solve]
epsilon_schedule = [0.01, 0.1]
"""


@pytest.fixture
def small_toml(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_list_builtins_golden(capsys):
    assert main(["list-builtins"]) == 0
    assert capsys.readouterr().out == (GOLDEN / "list_builtins.txt").read_text()


def test_validate_verb(small_toml, capsys):
    assert main(["validate", str(small_toml)]) == 0
    assert "small: configuration is valid" in capsys.readouterr().out


def test_malformed_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[grid]\npoints_per_axis = 4\nbogus = 1\n[integrator]\ndt = 0.5\n')
    assert main(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "grid.bogus: unknown key" in err


def test_all_field_errors_reported_with_paths():
    with pytest.raises(scenario.ConfigError) as exc:
        scenario.validate_config({"grid": {"points_per_axis": 4}, "integrator": {"dt": 0.5}, "period": -1})
    paths = {e.split(":")[0] for e in exc.value.errors}
    assert {"grid.points_per_axis", "integrator.dt", "period"} <= paths


def test_unparseable_toml_exits_one(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("grid = [\n")
    assert main(["validate", str(bad)]) == 1


def test_unknown_builtin_exits_one():
    assert main(["run", "no_such_scenario"]) == 1


def test_dependency_closure_in_canonical_order():
    cfg = scenario.validate_config({"analyses": ["periodic_solve"]})
    sc = scenario.build_scenario(cfg)
    assert sc.analyses == ("spectrum", "ll_check", "degree", "periodic_solve")


def test_run_is_deterministic_and_ordered(small_toml, tmp_path, monkeypatch):
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        monkeypatch.setenv(cli.OUTPUT_ENV, str(out))
        assert main(["run", str(small_toml)]) == 0
        outs.append((out / "small.json").read_bytes())
    assert outs[0] == outs[1]
    bundle = json.loads(outs[0])
    assert set(bundle) == {"scenario", "seed", "config", "timeline", "analyses", "artifacts"}
    assert [e["analysis"] for e in bundle["timeline"]] == ["spectrum", "ll_check", "degree", "periodic_solve"]
    assert [e["order"] for e in bundle["timeline"]] == [0, 1, 2, 3]
    assert bundle["seed"] == 3
    assert bundle["analyses"]["ll_check"]["condition"] == "positive"
    assert bundle["analyses"]["periodic_solve"]["all_converged"] is True


def test_no_resonance_is_partial_success(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    assert main(["run", "no_resonance"]) == 0
    bundle = json.loads((tmp_path / "no_resonance.json").read_text())
    assert bundle["analyses"]["spectrum"]["status"] == "ok"
    assert bundle["analyses"]["spectrum"]["kernel_dim"] == 0
    assert bundle["analyses"]["degree"]["status"] == "error"
    assert "no resonance" in bundle["analyses"]["degree"]["error"]


def test_round_floats():
    assert round_floats({"a": 0.1 + 0.2, "b": float("nan"), "c": [1e-20, -0.0]}) == {
        "a": 0.3, "b": "nan", "c": [1e-20, 0.0]
    }
    assert json.loads(dumps_report({"b": 1, "a": 2.0})) == {"a": 2.0, "b": 1}


def test_run_scenario_api():
    cfg = scenario.validate_config(
        {"name": "api", "grid": {"points_per_axis": 257, "half_width": 10.0}, "tail": {"radii": [3.0, 5.0]}}
    )
    bundle = run_scenario(cfg)
    assert bundle["analyses"]["spectrum"]["m_minus"] == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "periodic_resonance", "list-builtins"], capture_output=True, text=True)
    assert res.returncode == 0 and "pt_lambda2_ll" in res.stdout
