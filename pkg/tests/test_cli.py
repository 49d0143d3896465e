import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from distlq import cli
from distlq.errors import ScenarioError
from distlq.scenarios import (
    ConsensusScenario,
    LQScenario,
    bundled_path,
    bundled_scenarios,
    dump_scenario,
    load_scenario,
    parse_scenario,
    scenario_to_dict,
)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def bundled_doc(name):
    return json.loads(bundled_path(name).read_text())


def write_doc(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def _assert_same(a, b):
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        for k in a:
            _assert_same(a[k], b[k])
    elif isinstance(a, (list, tuple)):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            _assert_same(x, y)
    else:
        assert a == b


@pytest.mark.parametrize("name", ["four_agent", "single_agent", "zero_cost", "ugv"])
def test_round_trip(name, tmp_path):
    sc = load_scenario(name)
    path = tmp_path / f"{name}.json"
    dump_scenario(sc, path)
    again = load_scenario(path)
    _assert_same(scenario_to_dict(sc), scenario_to_dict(again))
    if isinstance(sc, LQScenario):
        for f in ("A", "B", "Q", "R", "x0", "xT"):
            np.testing.assert_array_equal(getattr(sc.problem, f), getattr(again.problem, f))
        for v, w in zip(sc.views, again.views):
            for f in ("A", "B", "Q", "M", "x0", "xT"):
                np.testing.assert_array_equal(getattr(v, f), getattr(w, f))
        assert sc.schedule == again.schedule
        assert sc.topology == again.topology
    else:
        assert isinstance(again, ConsensusScenario)
        for a, b in zip(sc.system.A + sc.system.B, again.system.A + again.system.B):
            np.testing.assert_array_equal(a, b)
        assert sc.schedule == again.schedule


def test_decimals_survive_round_trip(tmp_path):
    doc = bundled_doc("four_agent")
    doc["system"]["x0"] = [0.1, 1e-17 + 0.3]
    doc["agents"][0]["x0"] = [0.1, 0.3]
    sc = parse_scenario(doc)
    path = tmp_path / "d.json"
    dump_scenario(sc, path)
    assert load_scenario(path).problem.x0.tolist() == [0.1, 0.3]


def test_bundled_names():
    assert set(bundled_scenarios()) >= {"four_agent", "single_agent", "zero_cost", "ugv"}
    with pytest.raises(ScenarioError):
        load_scenario("no_such_scenario")


def test_missing_field_message():
    doc = bundled_doc("four_agent")
    del doc["system"]["B"]
    with pytest.raises(ScenarioError, match="missing required field 'B'"):
        parse_scenario(doc)


def test_centralized_four_agent(tmp_path, capsys):
    assert run("centralized", "--scenario", "four_agent", "--out", tmp_path) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["terminal_error"] <= 1e-2
    assert np.isfinite(s["J"])
    head, rows = read_csv(tmp_path / "P_norm.csv")
    assert head == ["t", "P_norm"]
    assert len(rows) == 2001
    head, _ = read_csv(tmp_path / "state.csv")
    assert head == ["t", "x1", "x2"]
    assert "Riccati sweeps" in capsys.readouterr().out


def test_csv_full_precision(tmp_path):
    cli.write_csv(tmp_path / "a.csv", np.array([0.0, 0.1]), {"v": np.array([1 / 3, np.pi])})
    _, rows = read_csv(tmp_path / "a.csv")
    assert float(rows[0][1]) == 1 / 3 and float(rows[1][1]) == np.pi
    assert float(rows[1][0]) == 0.1


def test_zero_cost_p_norm_zero(tmp_path):
    assert run("centralized", "--scenario", "zero_cost", "--out", tmp_path) == 0
    _, rows = read_csv(tmp_path / "P_norm.csv")
    assert all(float(r[1]) == 0.0 for r in rows)


def test_missing_B_exits_2(tmp_path, capsys):
    doc = bundled_doc("four_agent")
    del doc["system"]["B"]
    assert run("centralized", "--scenario", write_doc(tmp_path, doc), "--out", tmp_path / "o") == 2
    assert "B" in capsys.readouterr().err


def test_bad_arguments_exit_2(tmp_path):
    assert run("centralized", "--out", tmp_path) == 2
    assert run("nonsense") == 2
    assert run("centralized", "--scenario", "four_agent", "--max-k", "abc") == 2


def test_wrong_kind_exits_2(tmp_path):
    assert run("centralized", "--scenario", "ugv", "--out", tmp_path) == 2


def test_invalid_gamma_exits_4(tmp_path, capsys):
    assert run("distributed", "--scenario", "four_agent", "--gamma", "1.0", "--out", tmp_path) == 4
    err = capsys.readouterr().err
    assert "rho=3" in err


def test_solver_failure_exits_3(tmp_path):
    doc = bundled_doc("four_agent")
    doc["system"]["B"] = [[1.0], [0.0]]
    doc["system"]["xT"] = [1.0, 1.0]
    for a in doc["agents"]:
        a["B"] = [[1.0], [0.0]]
        a["xT"] = [1.0, 1.0]
    assert run("centralized", "--scenario", write_doc(tmp_path, doc), "--out", tmp_path / "o") == 3


def test_single_agent_distributed_matches_centralized_bytes(tmp_path):
    c, d = tmp_path / "c", tmp_path / "d"
    assert run("centralized", "--scenario", "single_agent", "--out", c) == 0
    assert run("distributed", "--scenario", "single_agent", "--out", d) == 0
    for name in ("P_norm.csv", "state.csv", "control.csv"):
        assert (c / name).read_bytes() == (d / f"agent0_{name}").read_bytes()


def test_distributed_four_agent_with_reference(tmp_path):
    assert run("distributed", "--scenario", "four_agent", "--with-reference", "--diagnostics", "--out", tmp_path) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    ref = s["reference"]
    assert ref["within_tolerance"] == {"P": True, "x": True, "u": True}
    assert ref["deviation"]["u"] <= ref["tolerances"]["u"]
    assert s["rho"] == pytest.approx(0.6, abs=1e-12)
    for i in range(4):
        assert (tmp_path / f"agent{i}_state.csv").exists()
    head, rows = read_csv(tmp_path / "diagnostics.csv")
    assert head == ["round", "quantity", "delta_consensus", "delta_mean"]
    assert len(rows) > 200


def test_overrides_reach_schedule(tmp_path):
    cfg, _ = cli.parse_config(["distributed", "--scenario", "four_agent", "--max-k", "7", "--no-fixed-rounds",
                               "--grid-steps", "50", "--out", str(tmp_path)])
    sc = cli._load(cfg, "lq")
    assert sc.schedule.max_k == 7 and not sc.schedule.fixed_rounds
    assert sc.num_steps == 50


def test_validate_bundled(capsys):
    for name in ("four_agent", "single_agent", "zero_cost", "ugv"):
        assert run("validate", "--scenario", name) == 0
    assert "all checks passed" in capsys.readouterr().out


def test_validate_perturbed_fails_with_residual(tmp_path, capsys):
    doc = bundled_doc("four_agent")
    doc["agents"][0]["A"][0][0] += 0.1
    assert run("validate", "--scenario", write_doc(tmp_path, doc)) == 1
    out = capsys.readouterr().out
    line = next(ln for ln in out.splitlines() if "mean(A_i) = A" in ln)
    assert "FAIL" in line and "2.500e-02" in line


def toy_consensus_doc():
    return {
        "type": "consensus",
        "name": "pair",
        "agents": [
            {"A": [[0.0]], "B": [[1.0]], "x0": [1.0]},
            {"A": [[0.0]], "B": [[1.0]], "x0": [-0.5]},
        ],
        "topology": {"N": 2, "edges": [[0, 1]], "gamma": 2.0},
        "weights": {"pairs": [{"i": 0, "j": 1, "Q": [[1.0]]}, {"i": 1, "j": 0, "Q": [[1.0]]}]},
        "baseline": {"K": [[1.0]]},
        "schedule": {"max_k": 200, "fixed_rounds": True},
        "grid": {"num_steps": 2000, "T_sim": 10.0},
    }


def test_consensus_toy_value_identity(tmp_path):
    assert run("consensus", "--scenario", write_doc(tmp_path, toy_consensus_doc()), "--out", tmp_path / "o") == 0
    head, rows = read_csv(tmp_path / "o" / "consensus_report.csv")
    row = dict(zip(head, rows[0]))
    # P = [[1, -1], [-1, 1]] and x0 = (1, -0.5) give x0'Px0 = 2.25
    assert float(row["J_value"]) == pytest.approx(2.25, rel=1e-10)
    assert float(row["value_identity_rel"]) <= 5e-3
    # a unit gain happens to be the optimal feedback for this pair
    assert float(row["J_baseline"]) == pytest.approx(2.25, rel=1e-6)
    assert float(row["J_proposed"]) == pytest.approx(2.25, rel=1e-2)


def test_consensus_ugv(tmp_path, capsys):
    assert run("consensus", "--scenario", "ugv", "--out", tmp_path) == 0
    head, rows = read_csv(tmp_path / "consensus_report.csv")
    assert head[:4] == ["case", "J_proposed", "J_baseline", "consensus_residual"]
    row = dict(zip(head, rows[0]))
    assert float(row["P_norm"]) == pytest.approx(33.5591, rel=1e-2)
    assert all(f"P_norm_agent{i}" in row for i in range(5))
    assert float(row["consensus_residual"]) <= 1e-2
    assert float(row["J_proposed"]) < float(row["J_baseline"])
    for name in ("state.csv", "control.csv", "state_optimal.csv", "baseline_state.csv", "summary.json"):
        assert (tmp_path / name).exists()
    assert "|P|_2" in capsys.readouterr().out


def test_consensus_fleet_case_batch(tmp_path, capsys):
    assert run("consensus", "--scenario", "ugv", "--fleet-cases", "--out", tmp_path) == 0
    head, rows = read_csv(tmp_path / "consensus_report.csv")
    assert len(rows) == 5
    recs = [dict(zip(head, r)) for r in rows]
    assert [r["interpretation"] for r in recs] == ["homogeneous"] * 5
    for r in recs:
        assert float(r["value_identity_rel"]) <= 5e-3
        assert float(r["J_proposed"]) < float(r["J_baseline"])
        expect = "match" if float(r["reported_rel_diff"]) <= 0.02 else "mismatch"
        assert r["flag"] == expect
    assert [float(r["J_reported"]) for r in recs] == [82.7573, 76.2762, 89.3999, 76.4114, 82.7004]
    if any(r["flag"] == "mismatch" for r in recs):
        assert "does not reproduce" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "distlq.cli", "validate", "--scenario", "single_agent"],
        capture_output=True, text=True, check=False,
    )
    assert out.returncode == 0, out.stderr
    assert "pass" in out.stdout
