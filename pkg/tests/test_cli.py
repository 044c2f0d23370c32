"""End-to-end command checks: files, exit codes, stdout, determinism."""

import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from coldstart import rga
from coldstart.cli import main
from coldstart.looplab import PhiTrue, RunRecord, ScenarioConfig


@pytest.fixture(autouse=True)
def quiet_logs(monkeypatch):
    monkeypatch.setenv("COLDSTART_LOG", "quiet")


def write_short_config(path, **overrides):
    cfg = ScenarioConfig(duration=2.0, metrics_window_start=1.0, **overrides)
    path.write_text(cfg.to_json(), encoding="utf-8")
    return cfg


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_the_artifact_set(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_short_config(cfg_path)
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg_path), "--out", str(out), "--plots"])
    assert code == 0
    for name in (
        "run.csv", "metrics.txt", "config.json",
        "tracking.svg", "estimates.svg", "hc_rates.svg", "hc_cumulative.svg", "eta_cat.svg",
    ):
        assert (out / name).exists(), name
    # stdout repeats the metrics file
    assert capsys.readouterr().out == (out / "metrics.txt").read_text(encoding="utf-8")
    # every SVG is well-formed XML
    for name in ("tracking.svg", "estimates.svg", "eta_cat.svg"):
        ET.fromstring((out / name).read_text(encoding="utf-8"))
    record = RunRecord.from_csv((out / "run.csv").read_text(encoding="utf-8"))
    assert len(record) == 101
    assert np.all(np.diff(record.series["hc_cum"]) >= 0.0)


def test_simulate_is_byte_identical_on_reruns(tmp_path):
    cfg_path = tmp_path / "config.json"
    write_short_config(cfg_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
        outs.append(out)
    for name in ("run.csv", "metrics.txt", "config.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_simulate_overrides_are_echoed_into_the_config_artifact(tmp_path):
    out = tmp_path / "out"
    code = main(
        [
            "simulate", "--out", str(out),
            "--override", "duration=1.0",
            "--override", "metrics_window_start=0.5",
            "--override", "phi_true.fuel=0.5",
            "--override", "adaptation_enabled=false",
        ]
    )
    assert code == 0
    echoed = json.loads((out / "config.json").read_text(encoding="utf-8"))
    assert echoed["phi_true"]["fuel"] == 0.5
    assert echoed["adaptation_enabled"] is False
    text = (out / "metrics.txt").read_text(encoding="utf-8")
    assert "removal_ratio_overall = absent" in text


def test_simulate_duration_zero_single_row(tmp_path):
    out = tmp_path / "out"
    code = main(
        [
            "simulate", "--out", str(out),
            "--override", "duration=0.0",
            "--override", "metrics_window_start=0.0",
        ]
    )
    assert code == 0
    rows = (out / "run.csv").read_text(encoding="utf-8").strip().splitlines()
    assert len(rows) == 2  # header plus the single initial sample


def test_simulate_trajectory_file_replaces_the_table(tmp_path):
    traj = tmp_path / "traj.csv"
    traj.write_text(
        "time,afr_d,omega_d,t_exh_d\n"
        "0.0,12.5,125.0,650.0\n"
        "30.0,14.0,110.0,650.0\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    code = main(
        [
            "simulate", "--out", str(out), "--trajectory", str(traj),
            "--override", "duration=1.0",
            "--override", "metrics_window_start=0.5",
        ]
    )
    assert code == 0
    echoed = json.loads((out / "config.json").read_text(encoding="utf-8"))
    assert echoed["trajectory"]["omega_d"] == [125.0, 110.0]


def test_simulate_validation_failures_exit_2(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--out", str(out), "--override", "nope=1"]) == 2
    assert "no match" in capsys.readouterr().err
    assert main(["simulate", "--out", str(out), "--override", "T=-1"]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == 2


def test_simulate_runtime_abort_exits_3(tmp_path, capsys):
    cfg_path = tmp_path / "stall.json"
    cfg = ScenarioConfig(duration=2.0, metrics_window_start=1.0, quantization_enabled=False)
    data = cfg.to_dict()
    data["bounds"]["mdot_ai"] = [0.0, 1e-9]  # pinched air path: engine must stall
    data["initial_state"]["m_a"] = 1e-5
    data["initial_state"]["omega_e"] = 80.0
    cfg_path.write_text(json.dumps(data), encoding="utf-8")
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 3
    err = capsys.readouterr().err
    assert "stalled" in err and "step" in err


def test_bad_log_level_exits_2(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("COLDSTART_LOG", "loud")
    assert main(["simulate", "--out", str(tmp_path / "out")]) == 2
    assert "COLDSTART_LOG" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# rga


def diag_model(tmp_path):
    k = rga.from_gain_time_constant
    model = rga.open_loop_matrix(
        [[k(1.0, 0.5), None], [None, k(2.0, 0.3)]]
    )
    path = tmp_path / "model.json"
    path.write_text(model.to_json() + "\n", encoding="utf-8")
    return path


def test_rga_decoupled_model_scores_unit_dominance(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(
        ["rga", "--model", str(diag_model(tmp_path)), "--out", str(out), "--plots"]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "pairing 1-1: dominance = 1.0000" in stdout
    assert "pairing 2-2: dominance = 1.0000" in stdout
    rows = list(csv.reader((out / "rga.csv").read_text(encoding="utf-8").splitlines()))
    assert len(rows) == 1 + 200  # header + default grid
    assert rows[0][:2] == ["omega", "gap"]
    ET.fromstring((out / "rga.svg").read_text(encoding="utf-8"))


def test_rga_csv_model_and_custom_grid(tmp_path):
    k = rga.from_gain_time_constant
    model = rga.open_loop_matrix([[k(1.0, 0.3), k(0.4, 0.5)], [k(0.25, 0.6), k(2.0, 0.8)]])
    path = tmp_path / "model.csv"
    path.write_text(model.to_csv(), encoding="utf-8")
    out = tmp_path / "out"
    code = main(
        ["rga", "--model", str(path), "--out", str(out),
         "--wmin", "0.1", "--wmax", "10", "--points", "7"]
    )
    assert code == 0
    rows = (out / "rga.csv").read_text(encoding="utf-8").strip().splitlines()
    assert len(rows) == 1 + 7
    assert rows[1].startswith("0.1,")


def test_rga_singular_frequencies_are_gaps_not_failures(tmp_path, capsys):
    # equal rows at DC: response matrix singular at low frequency
    k = rga.from_gain_time_constant
    model = rga.open_loop_matrix(
        [[k(1.0, 0.5), k(1.0, 0.9)], [k(1.0, 0.5), k(1.0, 0.9)]]
    )
    path = tmp_path / "model.json"
    path.write_text(model.to_json(), encoding="utf-8")
    out = tmp_path / "out"
    code = main(["rga", "--model", str(path), "--out", str(out)])
    assert code == 4
    rows = list(csv.reader((out / "rga.csv").read_text(encoding="utf-8").splitlines()))
    assert all(r[1] == "1" for r in rows[1:])  # every frequency is a gap here


def test_rga_malformed_model_names_the_cell(tmp_path, capsys):
    path = tmp_path / "model.csv"
    path.write_text("row,tau_1,k_1\n1,abc,0.5\n", encoding="utf-8")
    assert main(["rga", "--model", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "channel (1,1)" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# identify


def write_ident_fixture(tmp_path, n_samples=1200, break_pair=None):
    """Two-experiment 2x2 dataset from exact channel simulations."""
    T = 0.02
    tf = {
        (1, 1): rga.from_gain_time_constant(2.0, 0.5),
        (2, 1): rga.from_gain_time_constant(0.5, 1.0),
        (1, 2): rga.from_gain_time_constant(0.8, 0.25),
        (2, 2): rga.from_gain_time_constant(1.5, 0.7),
    }
    rng = np.random.default_rng(11)
    u1, u2 = rng.standard_normal(n_samples), rng.standard_normal(n_samples)
    cols = {
        "u1": u1, "u2": u2,
        "y1_1": rga.simulate_first_order(tf[(1, 1)], u1, T),
        "y2_1": rga.simulate_first_order(tf[(2, 1)], u1, T),
        "y1_2": rga.simulate_first_order(tf[(1, 2)], u2, T),
        "y2_2": rga.simulate_first_order(tf[(2, 2)], u2, T),
    }
    if break_pair is not None:
        # alternating-sign series has a negative discrete pole: not a lag
        cols[break_pair] = np.asarray([(-0.9) ** i for i in range(n_samples)])
    data = tmp_path / "exp.csv"
    with data.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(n_samples):
            writer.writerow([repr(float(cols[k][i])) for k in cols])
    pairs = tmp_path / "pairs.json"
    pairs.write_text(
        json.dumps(
            {
                "T": T,
                "experiments": [
                    {"input": "u1", "outputs": ["y1_1", "y2_1"]},
                    {"input": "u2", "outputs": ["y1_2", "y2_2"]},
                ],
            }
        ),
        encoding="utf-8",
    )
    return data, pairs, tf


def test_identify_round_trip_recovers_the_generator(tmp_path, capsys):
    data, pairs, tf = write_ident_fixture(tmp_path)
    out = tmp_path / "out"
    code = main(["identify", "--data", str(data), "--pairs", str(pairs), "--out", str(out)])
    assert code == 0
    model = rga.TFMatrix.from_json((out / "model.json").read_text(encoding="utf-8"))
    for (i, j), expect in tf.items():
        got = model.entries[i - 1][j - 1]
        assert got.tau == pytest.approx(expect.tau, rel=1e-3)
        assert got.k == pytest.approx(expect.k, rel=1e-3)
    report = (out / "report.txt").read_text(encoding="utf-8")
    assert report.count("residual_rms") == 4
    assert capsys.readouterr().out == report


def test_identify_missing_column_names_it(tmp_path, capsys):
    data, pairs, _ = write_ident_fixture(tmp_path)
    spec = json.loads(pairs.read_text(encoding="utf-8"))
    spec["experiments"][0]["outputs"][0] = "y_missing"
    pairs.write_text(json.dumps(spec), encoding="utf-8")
    assert main(["identify", "--data", str(data), "--pairs", str(pairs), "--out", str(tmp_path / "o")]) == 2
    assert "y_missing" in capsys.readouterr().err


def test_identify_failed_channel_is_a_hole_and_partial_exit(tmp_path):
    data, pairs, _ = write_ident_fixture(tmp_path, break_pair="y2_1")
    out = tmp_path / "out"
    code = main(["identify", "--data", str(data), "--pairs", str(pairs), "--out", str(out)])
    assert code == 4
    report = (out / "report.txt").read_text(encoding="utf-8")
    assert "pair (2,1): fit failed:" in report
    model = rga.TFMatrix.from_json((out / "model.json").read_text(encoding="utf-8"))
    assert model.entries[1][0] is None  # the hole
    assert model.entries[0][0] is not None  # the rest still identified


def test_identify_settled_dc_record_flags_tau(tmp_path):
    T = 0.02
    n = 200
    cols = {
        "u1": np.full(n, 2.0),      # constant input
        "y1_1": np.full(n, 4.0),    # settled: DC gain 2, no pole information
    }
    data = tmp_path / "exp.csv"
    with data.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(n):
            writer.writerow([repr(float(cols[k][i])) for k in cols])
    pairs = tmp_path / "pairs.json"
    pairs.write_text(
        json.dumps({"T": T, "experiments": [{"input": "u1", "outputs": ["y1_1"]}]}),
        encoding="utf-8",
    )
    out = tmp_path / "out"
    assert main(["identify", "--data", str(data), "--pairs", str(pairs), "--out", str(out)]) == 0
    report = (out / "report.txt").read_text(encoding="utf-8")
    assert "[tau unidentifiable: settled DC record]" in report
    model = rga.TFMatrix.from_json((out / "model.json").read_text(encoding="utf-8"))
    assert model.entries[0][0].k == pytest.approx(0.5)


def test_identify_bad_pairing_spec_exits_2(tmp_path, capsys):
    data, pairs, _ = write_ident_fixture(tmp_path, n_samples=50)
    pairs.write_text(json.dumps({"T": 0.02}), encoding="utf-8")
    assert main(["identify", "--data", str(data), "--pairs", str(pairs), "--out", str(tmp_path / "o")]) == 2
    assert "experiments" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# metrics


def test_metrics_command_reuses_the_config_echo(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_short_config(cfg_path)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["metrics", "--run", str(out / "run.csv")]) == 0
    assert capsys.readouterr().out == (out / "metrics.txt").read_text(encoding="utf-8")


def test_metrics_with_baseline_defines_the_ratios(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_short_config(cfg_path, phi_true=PhiTrue(fuel=0.5, speed=0.5, exh=0.5, air=0.5))
    adaptive_out = tmp_path / "adaptive"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(adaptive_out)]) == 0
    frozen_out = tmp_path / "frozen"
    assert main(
        ["simulate", "--config", str(cfg_path), "--out", str(frozen_out),
         "--override", "adaptation_enabled=false"]
    ) == 0
    capsys.readouterr()
    code = main(
        ["metrics", "--run", str(adaptive_out / "run.csv"),
         "--baseline", str(frozen_out / "run.csv")]
    )
    assert code == 0
    text = capsys.readouterr().out
    assert "removal_ratio_overall = absent" not in text
    assert "tracking_ratio_speed = " in text


# ---------------------------------------------------------------------------
# sweep


def test_sweep_grid_rows_and_partial_failures(tmp_path):
    template = tmp_path / "template.json"
    write_short_config(template)
    grid = tmp_path / "grid.json"
    # duration 0 with a 1 s metrics window cannot be summarized: cell error
    grid.write_text(json.dumps({"phi_true.fuel": [0.5, 1.0], "duration": [2.0, 0.0]}))
    out = tmp_path / "out"
    code = main(["sweep", "--template", str(template), "--grid", str(grid), "--out", str(out)])
    assert code == 4
    rows = list(csv.reader((out / "sweep.csv").read_text(encoding="utf-8").splitlines()))
    header = rows[0]
    assert header[:3] == ["cell", "duration", "phi_true.fuel"]
    assert header[-1] == "error"
    assert len(rows) == 1 + 4
    errors = [r[-1] for r in rows[1:]]
    assert sum(1 for e in errors if e) == 2  # both duration-0 cells fail
    assert all("empty" in e for e in errors if e)
    # healthy cells carry metrics, failed cells leave them blank
    conv_col = header.index("phi_convergence_time_fuel")
    healthy = [r for r in rows[1:] if not r[-1]]
    assert healthy[0][conv_col] != ""


def test_sweep_single_cell_matches_simulate(tmp_path, capsys):
    template = tmp_path / "template.json"
    write_short_config(template)
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"phi_true.speed": [0.5]}))
    out = tmp_path / "out"
    assert main(["sweep", "--template", str(template), "--grid", str(grid), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "sweep.csv").read_text(encoding="utf-8").splitlines()))

    sim_out = tmp_path / "sim"
    assert main(
        ["simulate", "--config", str(template), "--out", str(sim_out),
         "--override", "phi_true.speed=0.5"]
    ) == 0
    metrics_text = (sim_out / "metrics.txt").read_text(encoding="utf-8")
    mean_abs = dict(
        line.split(" = ") for line in metrics_text.strip().splitlines()
    )["mean_abs_s_speed"]
    assert rows[1][rows[0].index("mean_abs_s_speed")] == mean_abs


def test_sweep_empty_grid_writes_header_only(tmp_path):
    template = tmp_path / "template.json"
    write_short_config(template)
    grid = tmp_path / "grid.json"
    grid.write_text("{}")
    out = tmp_path / "out"
    assert main(["sweep", "--template", str(template), "--grid", str(grid), "--out", str(out)]) == 0
    text = (out / "sweep.csv").read_text(encoding="utf-8")
    assert len(text.strip().splitlines()) == 1


def test_sweep_rejects_malformed_grid(tmp_path, capsys):
    template = tmp_path / "template.json"
    write_short_config(template)
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"phi_true.fuel": 0.5}))  # not a list
    assert main(["sweep", "--template", str(template), "--grid", str(grid), "--out", str(tmp_path / "o")]) == 2
    assert "value arrays" in capsys.readouterr().err
