import csv
import json
import math
import pathlib

import pytest

from ammauction.cli import main

DATA = pathlib.Path(__file__).parent / "data"


def sim_config_dict(horizon=2_000):
    return {
        "schema_version": 1,
        "horizon_blocks": horizon,
        "seed": 21,
        "market": {
            "sigma": 0.05,
            "delta_t": 0.01,
            "r": 1e-4,
            "f_max": 0.05,
            "c0": 25.0,
            "c1": 120.0,
            "alpha": 0.5,
        },
        "manager_policy": "fixed",
        "manager_fee": 0.003,
        "initial_liquidity": 1.0,
        "initial_bids": [{"bidder": "mgr", "rent": 1e-6, "deposit": 0.01}],
    }


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# manifest ")
    manifest = json.loads(lines[0][len("# manifest "):])
    rows = list(csv.reader(lines[1:]))
    return manifest, rows[0], rows[1:]


class TestFormulas:
    def test_stdout_table(self, capsys):
        assert main(["formulas", "--fees", "0,0.003"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("# manifest ")
        assert out[1] == "f,ap0,ae0,ratio,H0"
        zero_row = out[2].split(",")
        assert float(zero_row[1]) == float(zero_row[2])  # ap0 == ae0 at f = 0
        assert float(zero_row[3]) == 1.0

    def test_ratio_column_identity(self, tmp_path, capsys):
        assert main(["formulas", "--grid", "16", "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        _, header, rows = read_csv(tmp_path / "formulas.csv")
        assert header == ["f", "ap0", "ae0", "ratio", "H0"]
        sigma, dt = 0.05, 0.01
        for row in rows:
            f, ap0, ae0, ratio = map(float, row[:4])
            kappa = f / (sigma * math.sqrt(dt / 2.0))
            assert ratio == pytest.approx((1.0 + kappa) * math.exp(-kappa), rel=1e-12)
            assert ae0 == pytest.approx(ratio * ap0, rel=1e-12)

    def test_matches_golden(self, tmp_path, capsys):
        fees = ",".join(repr(0.05 * i / 8) for i in range(9))
        assert main(["formulas", "--fees", fees, "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        _, _, rows = read_csv(tmp_path / "formulas.csv")
        with open(DATA / "formulas_golden.csv") as fh:
            golden = list(csv.reader(fh))[1:]
        assert len(rows) == len(golden)
        for got, want in zip(rows, golden):
            for g, w in zip(got, want):
                assert float(g) == pytest.approx(float(w), rel=1e-9)

    def test_bad_params_exit_2(self, capsys):
        assert main(["formulas", "--sigma", "-1"]) == 2
        assert "sigma" in capsys.readouterr().err

    def test_config_file_roundtrip(self, tmp_path, capsys):
        cfg = tmp_path / "params.json"
        cfg.write_text(json.dumps({"schema_version": 1, "sigma": 0.02, "delta_t": 0.005}))
        assert main(["formulas", "--config", str(cfg), "--fees", "0"]) == 0
        out = capsys.readouterr().out.splitlines()
        expected = (0.02**2 / 8.0) / (1.0 - 0.02**2 * 0.005 / 8.0)
        assert float(out[2].split(",")[1]) == pytest.approx(expected, rel=1e-12)

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "params.json"
        cfg.write_text(json.dumps({"schema_version": 1, "sgima": 0.02}))
        assert main(["formulas", "--config", str(cfg)]) == 2
        assert "sgima" in capsys.readouterr().err


class TestMCValidate:
    def test_sample_floor_is_usage_error(self, capsys):
        assert main(["mc-validate", "--samples", "5000"]) == 2
        assert "10000" in capsys.readouterr().err

    def test_passes_at_reference_point(self, capsys):
        code = main(["mc-validate", "--samples", "50000", "--fees", "0,0.003", "--seed", "0"])
        out = capsys.readouterr().out
        assert code == 0
        assert "validation: pass" in out

    def test_corrupted_closed_form_fails(self, capsys):
        code = main(
            [
                "mc-validate",
                "--samples",
                "50000",
                "--fees",
                "0.003",
                "--corrupt-closed-form",
            ]
        )
        assert code == 1
        assert "FAIL" in capsys.readouterr().out

    def test_csv_report(self, tmp_path, capsys):
        main(["mc-validate", "--samples", "20000", "--fees", "0", "--out", str(tmp_path)])
        capsys.readouterr()
        manifest, header, rows = read_csv(tmp_path / "mc_validate.csv")
        assert manifest["command"] == "mc_validate"
        assert header[0] == "f" and header[-1] == "pass"
        assert len(rows) == 1


class TestEquilibrium:
    def test_dominance_pass(self, tmp_path, capsys):
        assert main(["equilibrium", "--grid", "16", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "dominated=True" in out
        _, header, rows = read_csv(tmp_path / "equilibrium.csv")
        assert header == ["f", "L_ff", "L_star", "R_star", "f_star", "f_opt", "margin"]
        assert len(rows) == 16

    def test_bracket_failure_exit_3(self, capsys):
        assert main(["equilibrium", "--f-max", "0"]) == 3
        assert "solver failure" in capsys.readouterr().err


class TestSimulate:
    def test_missing_config_exit_2(self, capsys):
        assert main(["simulate", "/nonexistent/config.json"]) == 2
        assert "/nonexistent/config.json" in capsys.readouterr().err

    def test_malformed_config_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["simulate", str(path)]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_schema_violation_exit_2(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        raw = sim_config_dict()
        del raw["schema_version"]
        path.write_text(json.dumps(raw))
        assert main(["simulate", str(path)]) == 2

    def test_seed_repetition_reproduces_bytes(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(sim_config_dict()))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", str(path), "--out", str(out_a)]) == 0
        assert main(["simulate", str(path), "--out", str(out_b)]) == 0
        capsys.readouterr()
        assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()
        assert (out_a / "blocks.csv").read_bytes() == (out_b / "blocks.csv").read_bytes()

    def test_report_carries_manifest(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(sim_config_dict(horizon=500)))
        assert main(["simulate", str(path), "--out", str(tmp_path / "run")]) == 0
        capsys.readouterr()
        payload = json.loads((tmp_path / "run" / "report.json").read_text())
        assert payload["manifest"]["command"] == "simulate"
        assert payload["manifest"]["seed"] == 21
        assert payload["report"]["horizon_blocks"] == 500

    def test_seed_override_changes_stream(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(sim_config_dict(horizon=500)))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", str(path), "--out", str(a)]) == 0
        assert main(["simulate", str(path), "--seed", "99", "--out", str(b)]) == 0
        capsys.readouterr()
        assert (a / "blocks.csv").read_bytes() != (b / "blocks.csv").read_bytes()


class TestAttack:
    def test_sweep_is_non_positive(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(sim_config_dict(horizon=10)))
        assert main(["attack", str(path), "--out", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "max_net_gain" in out
        _, header, rows = read_csv(tmp_path / "out" / "attack.csv")
        assert header[0] == "ratio"
        assert all(float(r[4]) <= 0.0 for r in rows)


class TestReplay:
    def test_trace_output(self, tmp_path, capsys):
        assert main(["replay", str(DATA / "k_delay.jsonl"), "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        _, header, rows = read_csv(tmp_path / "trace.csv")
        assert header[0] == "line"
        assert any(r[3] == "usurped" and r[1] == "13" for r in rows)
        assert (tmp_path / "final_state.json").exists()

    def test_malformed_scenario_exit_2(self, capsys):
        assert main(["replay", str(DATA / "malformed.jsonl")]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_file_exit_2(self, capsys):
        assert main(["replay", "/nope/scenario.jsonl"]) == 2
        assert "/nope/scenario.jsonl" in capsys.readouterr().err


class TestParser:
    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "ammauction" in capsys.readouterr().out
