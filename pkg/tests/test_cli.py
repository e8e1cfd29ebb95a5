import json
from pathlib import Path

import numpy as np
import pytest

from freqdispatch import fileio
from freqdispatch.cli import main
from freqdispatch.horizon import synthesize_timeline

from conftest import small_case
from test_horizon import day_profiles, mini_cfg

HORIZON_BLOCK = dict(step_minutes=15, horizon_steps=8, resolve_every_steps=4,
                     commit_steps=4, day_steps=16)


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    case = small_case()
    cfg = mini_cfg()
    loads, wind = day_profiles(case, cfg)
    timeline = synthesize_timeline(case, loads, wind, cfg, seed=5)
    case_path = tmp / "case.json"
    scen_path = tmp / "day.json"
    fileio.save_case(case, case_path)
    fileio.save_scenario(timeline, HORIZON_BLOCK, scen_path)
    return case_path, scen_path


class TestHelpAndErrors:
    def test_top_level_help_pinned(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        golden = (Path(__file__).parent / "data" / "help_main.txt").read_text()
        assert capsys.readouterr().out == golden

    def test_unknown_flag_usage_exit(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate-freq", "--nonsense"])
        assert exc.value.code == 2  # argparse usage error
        assert "usage" in capsys.readouterr().err

    def test_every_subcommand_has_help(self, capsys):
        for cmd in ("simulate-freq", "check-convexity", "cha", "quantile", "solve", "roll", "verify"):
            with pytest.raises(SystemExit) as exc:
                main([cmd, "--help"])
            assert exc.value.code == 0
            out = capsys.readouterr().out
            assert "usage" in out

    def test_missing_file_is_validation_error(self, capsys, tmp_path):
        code = main(["cha", "--case", str(tmp_path / "nope.json"), "--dp", "0.05"])
        assert code == 1


class TestSimulateFreq:
    def test_metrics_json(self, capsys):
        code = main([
            "simulate-freq", "--inertia", "4", "--damping", "1", "--droop", "20",
            "--fraction", "5", "--time-constant", "8", "--dp", "0.1",
            "--json-summary",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rocof_hz_per_s"] == pytest.approx(0.625)
        assert payload["delta_f_max_hz"] == pytest.approx(0.5678, abs=1e-3)

    def test_trajectory_csv(self, tmp_path, capsys):
        traj = tmp_path / "traj.csv"
        code = main([
            "simulate-freq", "--inertia", "4", "--damping", "1", "--droop", "20",
            "--fraction", "5", "--time-constant", "8", "--dp", "0.1",
            "--t-end", "2.0", "--trajectory", str(traj),
        ])
        assert code == 0
        lines = traj.read_text().splitlines()
        assert lines[0] == "t_s,delta_f_hz"
        assert len(lines) == 2002

    def test_invalid_parameters_exit_one(self, capsys):
        code = main([
            "simulate-freq", "--inertia", "-4", "--damping", "1", "--droop", "20",
            "--fraction", "5", "--time-constant", "8", "--dp", "0.1",
        ])
        assert code == 1


class TestCheckConvexity:
    def test_reports_zero_violations(self, capsys):
        code = main(["check-convexity", "--samples", "3000", "--seed", "7", "--json-summary"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["n_violations"] == 0

    def test_deterministic_under_seed(self, capsys):
        main(["check-convexity", "--samples", "2000", "--seed", "3", "--json-summary"])
        first = capsys.readouterr().out
        main(["check-convexity", "--samples", "2000", "--seed", "3", "--json-summary"])
        assert capsys.readouterr().out == first


class TestCha:
    def test_table_shape_and_csv(self, inputs, tmp_path, capsys):
        case_path, _ = inputs
        out = tmp_path / "halfspaces.csv"
        svg = tmp_path / "hull.svg"
        code = main([
            "cha", "--case", str(case_path), "--dp", "0.08",
            "--samples", "20000", "--seed", "2", "--out", str(out),
            "--svg", str(svg), "--json-summary",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["false_safe"] == 0
        assert 3 <= payload["hyperplanes"] <= 12
        lines = out.read_text().splitlines()
        assert lines[0] == "w_h,w_d,b"
        assert len(lines) == payload["hyperplanes"] + 1
        assert svg.read_text().startswith("<svg")

    def test_unattainable_limit_exit_two(self, inputs, capsys):
        case_path, _ = inputs
        code = main(["cha", "--case", str(case_path), "--dp", "3.0"])
        assert code == 2


class TestQuantile:
    def test_total_quantile_below_mean(self, inputs, capsys):
        _, scen_path = inputs
        code = main([
            "quantile", "--scenario", str(scen_path), "--solve-index", "0",
            "--step", "0", "--alpha", "0.05", "--total", "--json-summary",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        timeline, _ = fileio.load_scenario(scen_path)
        assert payload["quantile_mw"] < float(timeline.w_fore[0, 0].sum())

    def test_alpha_out_of_range_exit_one(self, inputs, capsys):
        _, scen_path = inputs
        code = main([
            "quantile", "--scenario", str(scen_path), "--alpha", "1.5", "--total",
        ])
        assert code == 1


class TestSolveRollVerify:
    def test_solve_window_writes_solution(self, inputs, tmp_path, capsys):
        case_path, scen_path = inputs
        out = tmp_path / "window"
        code = main([
            "solve", "--case", str(case_path), "--scenario", str(scen_path),
            "--out", str(out), "--samples", "10000", "--json-summary",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["audit_violations"] == 0
        assert (out / "solution.json").exists()

    def test_roll_both_modes_then_verify(self, inputs, tmp_path, capsys):
        case_path, scen_path = inputs
        out = tmp_path / "results"
        code = main([
            "roll", "--case", str(case_path), "--scenario", str(scen_path),
            "--mode", "both", "--out", str(out), "--samples", "10000",
            "--json-summary",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert {r["mode"] for r in payload["summary"]} == {"fixed", "online"}
        for mode in ("online", "fixed"):
            for name in ("committed.csv", "allocation.csv", "frequency.csv",
                         "reserves.csv", "summary.csv", "solution.json"):
                assert (out / mode / name).exists()
        assert (out / "summary.csv").exists()

        code = main([
            "verify", "--case", str(case_path), "--scenario", str(scen_path),
            "--run", str(out / "online"), "--json-summary",
        ])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["violations"] == 0

    def test_verify_flags_corrupted_run(self, inputs, tmp_path, capsys):
        case_path, scen_path = inputs
        out = tmp_path / "res2"
        main([
            "roll", "--case", str(case_path), "--scenario", str(scen_path),
            "--mode", "online", "--out", str(out), "--samples", "10000",
        ])
        capsys.readouterr()
        sol_path = out / "solution.json"
        obj = json.loads(sol_path.read_text())
        obj["gen_p"][0][0] += 5.0
        sol_path.write_text(json.dumps(obj))
        code = main([
            "verify", "--case", str(case_path), "--scenario", str(scen_path),
            "--run", str(out), "--json-summary",
        ])
        assert code == 2
        assert json.loads(capsys.readouterr().out)["violations"] >= 1

    def test_kappa_override_changes_result(self, inputs, tmp_path, capsys):
        case_path, scen_path = inputs
        out = tmp_path / "k"
        code = main([
            "roll", "--case", str(case_path), "--scenario", str(scen_path),
            "--mode", "online", "--out", str(out), "--samples", "10000",
            "--kappa", "0.01", "--json-summary",
        ])
        assert code == 0
        relaxed = json.loads(capsys.readouterr().out)["total_cost"]
        out2 = tmp_path / "k2"
        main([
            "roll", "--case", str(case_path), "--scenario", str(scen_path),
            "--mode", "online", "--out", str(out2), "--samples", "10000",
            "--json-summary",
        ])
        nominal = json.loads(capsys.readouterr().out)["total_cost"]
        assert relaxed <= nominal + 1e-6
