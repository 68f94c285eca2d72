import json
import re
from pathlib import Path

import numpy as np
import pytest

from vanetpos.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def exp2_csv(tmp_path, capsys):
    out = tmp_path / "exp2.csv"
    code, _, _ = run(
        ["survey", "--config", CONFIGS / "exp2.json", "--out", out], capsys
    )
    assert code == 0
    return out


class TestSurveyCommand:
    def test_row_count_and_header(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        code, stdout, _ = run(
            ["survey", "--config", CONFIGS / "exp2.json", "--out", out], capsys
        )
        assert code == 0
        assert "123" in stdout
        lines = out.read_text().splitlines()
        assert lines[0] == "x_m,rsu_id,rss_dbm,true_distance_m,channel"
        assert len(lines) == 124

    def test_cochannel_config_same_schema(self, tmp_path, capsys):
        out = tmp_path / "s1.csv"
        code, _, _ = run(
            ["survey", "--config", CONFIGS / "exp1.json", "--out", out], capsys
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x_m,rsu_id,rss_dbm,true_distance_m,channel"
        assert all(l.split(",")[4] == "6" for l in lines[1:])

    def test_byte_identical_reruns(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(["survey", "--config", CONFIGS / "exp2.json", "--seed", 5, "--out", a], capsys)
        run(["survey", "--config", CONFIGS / "exp2.json", "--seed", 5, "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_flag_overrides(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(["survey", "--config", CONFIGS / "exp2.json", "--seed", 5, "--out", a], capsys)
        run(["survey", "--config", CONFIGS / "exp2.json", "--seed", 6, "--out", b], capsys)
        assert a.read_bytes() != b.read_bytes()

    def test_missing_config_exit_2(self, tmp_path, capsys):
        code, _, err = run(
            ["survey", "--config", tmp_path / "nope.json", "--out", tmp_path / "x.csv"],
            capsys,
        )
        assert code == 2

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = json.loads((CONFIGS / "exp2.json").read_text())
        cfg["channel"]["typo_key"] = 1.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        code, _, err = run(
            ["survey", "--config", bad, "--out", tmp_path / "x.csv"], capsys
        )
        assert code == 2
        assert "typo_key" in err

    def test_usage_error_exit_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["survey"])  # missing required flags
        assert exc.value.code == 1


class TestFitCommand:
    def test_fit_writes_full_report(self, exp2_csv, tmp_path, capsys):
        report_path = tmp_path / "fit.json"
        code, stdout, _ = run(
            ["fit", exp2_csv, "--rsu", "ap200", "--min-distance", 60, "--out", report_path],
            capsys,
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert set(report) == {
            "p1", "p2", "p3", "p4", "p5",
            "sse", "r_square", "adj_r_square", "rmse", "n",
        }
        assert report["n"] == 29

    def test_cutoff_100_keeps_21_and_improves_rmse(self, exp2_csv, tmp_path, capsys):
        p60, p100 = tmp_path / "fit60.json", tmp_path / "fit100.json"
        run(["fit", exp2_csv, "--rsu", "ap200", "--min-distance", 60, "--out", p60], capsys)
        code, _, _ = run(
            ["fit", exp2_csv, "--rsu", "ap200", "--min-distance", 100, "--out", p100],
            capsys,
        )
        assert code == 0
        r60 = json.loads(p60.read_text())
        r100 = json.loads(p100.read_text())
        assert r100["n"] == 21
        assert r100["rmse"] < r60["rmse"]

    def test_missing_rsu_exit_2(self, exp2_csv, tmp_path, capsys):
        code, _, _ = run(
            ["fit", exp2_csv, "--rsu", "ap999", "--out", tmp_path / "x.json"], capsys
        )
        assert code == 2

    def test_too_few_samples_exit_3(self, exp2_csv, tmp_path, capsys):
        code, _, _ = run(
            ["fit", exp2_csv, "--rsu", "ap200", "--min-distance", 195,
             "--out", tmp_path / "x.json"],
            capsys,
        )
        assert code == 3

    def test_malformed_csv_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,survey\n1,2,3\n")
        code, _, _ = run(
            ["fit", bad, "--rsu", "ap200", "--out", tmp_path / "x.json"], capsys
        )
        assert code == 2


class TestSweepCommand:
    def test_small_grid(self, exp2_csv, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code, stdout, _ = run(
            ["sweep", exp2_csv, "--hidden", "2..3", "--seeds", 2, "--out", out], capsys
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == (
            "rank,hidden,seed,mse_test,mse_all,maxerr_test,maxerr_all,"
            "std_test,std_all,var_test,var_all,corr_test,corr_all"
        )
        assert len(lines) == 5  # header + 2x2 grid
        # printed top rows match the file
        assert lines[1] in stdout

    def test_table_sorted(self, exp2_csv, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        run(["sweep", exp2_csv, "--hidden", "2..4", "--seeds", 2, "--out", out], capsys)
        rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
        mse_all = [float(r[4]) for r in rows]
        assert mse_all == sorted(mse_all)

    def test_rerun_identical(self, exp2_csv, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(["sweep", exp2_csv, "--hidden", "2..3", "--seeds", 2, "--out", a], capsys)
        run(["sweep", exp2_csv, "--hidden", "2..3", "--seeds", 2, "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_hidden_range_exit_2(self, exp2_csv, tmp_path, capsys):
        code, _, _ = run(
            ["sweep", exp2_csv, "--hidden", "oops", "--out", tmp_path / "x.csv"], capsys
        )
        assert code == 2

    def test_malformed_input_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("garbage\n")
        code, _, _ = run(
            ["sweep", bad, "--out", tmp_path / "x.csv"], capsys
        )
        assert code == 2


class TestDriveCommand:
    def test_trace_schema_and_sources(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        code, stdout, _ = run(
            ["drive", "--config", CONFIGS / "drive.json", "--out", out], capsys
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == (
            "t_s,x_true_m,x_est_m,y_est_m,source,used_rsus,quality_m,abs_error_m"
        )
        rows = [l.split(",") for l in lines[1:]]
        assert len(rows) == 61  # 0..300 step 5
        for r in rows:
            x = float(r[1])
            if 80.0 <= x <= 160.0:
                assert r[4] == "RSS"
                assert r[5] != ""
            else:
                assert r[4] == "DGPS"
                assert float(r[7]) == 0.0

    def test_trace_contiguous_steps(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        run(["drive", "--config", CONFIGS / "drive.json", "--out", out], capsys)
        xs = [float(l.split(",")[1]) for l in out.read_text().splitlines()[1:]]
        assert np.allclose(np.diff(xs), 5.0)

    def test_byte_identical_reruns(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(["drive", "--config", CONFIGS / "drive.json", "--out", a], capsys)
        run(["drive", "--config", CONFIGS / "drive.json", "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_summary_matches_independent_recomputation(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        _, stdout, _ = run(
            ["drive", "--config", CONFIGS / "drive.json", "--out", out], capsys
        )
        rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
        errs = [float(r[7]) for r in rows]
        outage = [
            float(r[7]) for r in rows if 80.0 <= float(r[1]) <= 160.0
        ]
        # stdout has overall then in_outage lines; recover both pairs
        means = re.findall(r"mean_abs_error_m=([0-9.]+)", stdout)
        maxes = re.findall(r"max_abs_error_m=([0-9.]+)", stdout)
        assert abs(float(means[0]) - np.mean(errs)) < 1e-9
        assert abs(float(maxes[0]) - np.max(errs)) < 1e-9
        assert abs(float(means[1]) - np.mean(outage)) < 1e-9
        assert abs(float(maxes[1]) - np.max(outage)) < 1e-9

    def test_no_outage_scenario_is_all_dgps(self, tmp_path, capsys):
        cfg = json.loads((CONFIGS / "drive.json").read_text())
        cfg["scenario"]["gps_outages"] = []
        path = tmp_path / "no_outage.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "trace.csv"
        code, _, _ = run(["drive", "--config", path, "--out", out], capsys)
        assert code == 0
        rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
        assert all(r[4] == "DGPS" for r in rows)
        assert all(float(r[7]) == 0.0 for r in rows)

    def test_nn_estimator_drive(self, tmp_path, capsys):
        cfg = json.loads((CONFIGS / "drive.json").read_text())
        cfg["estimator"] = {
            "kind": "nn", "hidden": 8, "train_seed": 3, "max_epochs": 1500,
            "learning_rate": 0.05, "momentum": 0.9, "patience": 100,
        }
        path = tmp_path / "drive_nn.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "trace.csv"
        code, _, _ = run(["drive", "--config", path, "--out", out], capsys)
        assert code == 0
        rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
        rss_rows = [r for r in rows if r[4] == "RSS"]
        assert rss_rows
        assert all(r[5] != "" for r in rss_rows)

    def test_outage_outside_range_exit_2(self, tmp_path, capsys):
        cfg = json.loads((CONFIGS / "drive.json").read_text())
        cfg["scenario"]["gps_outages"] = [[250.0, 400.0]]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        code, _, _ = run(
            ["drive", "--config", path, "--out", tmp_path / "x.csv"], capsys
        )
        assert code == 2

    def test_drive_without_estimator_exit_2(self, tmp_path, capsys):
        cfg = json.loads((CONFIGS / "drive.json").read_text())
        del cfg["estimator"]
        path = tmp_path / "noest.json"
        path.write_text(json.dumps(cfg))
        code, _, _ = run(
            ["drive", "--config", path, "--out", tmp_path / "x.csv"], capsys
        )
        assert code == 2
