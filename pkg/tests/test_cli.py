"""Command line surfaces."""

from __future__ import annotations

import json

from imslab.cli import harness_main
from imslab.harness import Scenario, builtin_scenarios, run


def test_harness_list_names_builtins(capsys):
    assert harness_main(["list"]) == 0
    out = capsys.readouterr().out
    assert "fig8_exam_e2e" in out and "lossy_register" in out


def test_harness_run_builtin_reports_matches(capsys):
    assert harness_main(["run", "fig11_cscf_chain"]) == 0
    out = capsys.readouterr().out
    assert "MATCH" in out and "MISMATCH" not in out


def test_harness_run_with_ladder_and_trace(tmp_path, capsys):
    trace_path = tmp_path / "trace.json"
    assert harness_main(["run", "fig10_register_subscribe", "--ladder", "--trace", str(trace_path)]) == 0
    out = capsys.readouterr().out
    assert "REGISTER" in out  # ladder rendering
    data = json.loads(trace_path.read_bytes())
    assert data["name"] == "fig10_register_subscribe"
    # the written trace equals a fresh deterministic run
    again = run(builtin_scenarios()["fig10_register_subscribe"])
    assert trace_path.read_bytes() == again.to_canonical_json()


def test_harness_run_scenario_file_and_seed(tmp_path, capsys):
    scn = builtin_scenarios()["lossy_register"]
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scn.to_dict()))
    code = harness_main(["run", str(path), "--seed", "3"])
    capsys.readouterr()
    # seed 3 registers successfully (see convergence test); expectation matches
    assert code == 0


def test_harness_exit_code_reflects_mismatch(tmp_path, capsys):
    scn = builtin_scenarios()["fig2_3_proxy_invite"].to_dict()
    scn["expectations"][0]["steps"][0]["kind"] = "MESSAGE"  # cannot match
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(scn))
    assert harness_main(["run", str(path)]) == 1
    assert "MISMATCH" in capsys.readouterr().out


def test_harness_dump_round_trips(capsys):
    assert harness_main(["dump", "fig8_exam_e2e"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert Scenario.from_dict(data).name == "fig8_exam_e2e"
