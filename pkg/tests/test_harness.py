import csv
import json

import numpy as np
import pytest

from exosquat.contact import REGION_HALF_X, REGION_HALF_Y
from exosquat.environment.rewards import TERMS
from exosquat.errors import IncompleteCycle, InvalidSpec
from exosquat.harness.cli import main
from exosquat.harness.config import load_config, from_dict
from exosquat.harness.export import export_plots
from exosquat.harness.metrics import JOINTS, Telemetry, action_period, metrics
from exosquat.harness.runner import ReferenceController, evaluate, sweep

DT = 1.0 / 30.0


def _synthetic(steps=120, cycle=4.0, outside=None, rng=None):
    """Telemetry with loaded feet whose CoP sits at the region centre."""
    rng = rng or np.random.default_rng(0)
    tel = Telemetry(dt=DT, cycle=cycle)
    for k in range(steps):
        t = (k + 1) * DT
        row = {"step": k + 1, "t": t, "cycle": np.floor((t - 0.5 * DT) / cycle), "phase": 0.0,
               "r_total": 1.0}
        for f in "lr":
            x = 0.0
            if outside is not None and outside(k):
                x = 2 * REGION_HALF_X
            row.update({f"cop_{f}_x": x, f"cop_{f}_y": 0.0, f"cop_{f}_valid": 1.0,
                        f"cop_{f}_inside": 1.0, f"fn_{f}": 400.0})
        for j in JOINTS:
            row[f"tau_{j}"] = rng.uniform(-100, 100)
            row[f"action_{j}"] = 0.0
        for term in TERMS:
            row[f"r_{term}"] = 0.5
        tel.append(row)
    return tel


# -- config -----------------------------------------------------------------

def test_presets_load():
    for name, mode in (("case1", "clean"), ("case2", "perturbed"), ("case3", "human")):
        cfg = load_config(preset=name)
        assert cfg.mode == mode and cfg.name == name
    desk = load_config(preset="desk")
    assert desk.ppo.hidden == (64, 64) and desk.ppo.total_samples == 2_000_000
    assert load_config(preset="case2").stress_levels == (1.0, 1.75)


def test_config_file_overrides_preset(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("preset: case2\nseed: 7\nreward:\n  w_cop: 2.0\nenv:\n  horizon: 4.0\n")
    cfg = load_config(path)
    assert cfg.mode == "perturbed" and cfg.seed == 7
    assert cfg.reward.w_cop == 2.0 and cfg.reward.w_pose == load_config(preset="case1").reward.w_pose
    assert cfg.env_config("train").horizon == 4.0
    assert cfg.env_config("eval").horizon is None


def test_pd_section_and_training_only_env_keys():
    cfg = from_dict({"preset": "case1", "pd": {"cutoff": 1.5}, "env": {"init_phase": "random"}})
    train, ev = cfg.env_config("train"), cfg.env_config("eval")
    assert train.pd.cutoff == ev.pd.cutoff == 1.5 and train.pd.kp == 900.0
    assert train.init_phase == "random" and ev.init_phase == "start"
    assert cfg.env_config("sweep").init_phase == "start"


@pytest.mark.parametrize("data", [dict(mode="flying"), dict(seed="abc"), dict(bogus=1),
                                  dict(randomization="huge"), dict(env={"nope": 1}),
                                  dict(preset="case9"), dict(model_path="/no/such/file.yaml"),
                                  dict(pd={"cutoff": 20.0}), dict(env={"pd": {}})])
def test_invalid_config(data):
    with pytest.raises(InvalidSpec):
        from_dict(data)


# -- metrics ----------------------------------------------------------------

def test_centred_cop_is_fully_in_region():
    rep = metrics(_synthetic())
    assert rep.in_region == [1.0, 1.0] and rep.in_region_both == 1.0
    assert rep.cycles_completed == 1


def test_half_outside_gives_one_half():
    rep = metrics(_synthetic(outside=lambda k: k % 2 == 0))
    assert rep.in_region == [0.5, 0.5] and rep.in_region_both == 0.5


def test_unloaded_foot_is_not_in_region():
    tel = _synthetic()
    tel._rows = [r.copy() for r in tel._rows]
    for r in tel._rows[:60]:
        r[tel.index["cop_l_valid"]] = 0.0
    rep = metrics(tel)
    assert rep.in_region == [0.5, 1.0] and rep.in_region_both == 0.5


def test_peak_torque_matches_raw_csv_scan(tmp_path):
    tel = _synthetic(steps=240)
    path = tel.to_csv(tmp_path / "tel.csv")
    rep = metrics(Telemetry.from_csv(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for j, name in enumerate(JOINTS):
        brute = max(abs(float(r[f"tau_{name}"])) for r in rows)
        assert rep.peak_torque[j] == brute


def test_aggregates_equal_recomputation():
    tel = _synthetic(steps=360, outside=lambda k: k % 7 == 0)
    rep = metrics(tel)
    assert rep.cycles_completed == 3
    both = np.mean([c["in_region_both"] for c in rep.per_cycle])
    assert rep.in_region_both == pytest.approx(both, abs=1e-12)
    assert rep.mean_reward == pytest.approx(np.mean(tel.col("r_total")), abs=1e-12)
    for j in range(8):
        assert rep.peak_torque[j] == max(c["peak_torque"][j] for c in rep.per_cycle)


def test_incomplete_cycle():
    with pytest.raises(IncompleteCycle):
        metrics(_synthetic(steps=60))


def test_action_period_of_sinusoid():
    t = np.arange(600) * DT
    a = np.sin(2 * np.pi * t / 4.0)[:, None] * np.ones(8)
    assert action_period(a, DT) == pytest.approx(4.0, abs=DT)


# -- export -----------------------------------------------------------------

def test_cop_export_border_columns(tmp_path):
    tel = _synthetic()
    export_plots(tel, metrics(tel), tmp_path)
    with open(tmp_path / "cop.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(tel)
    for r in rows:
        assert (float(r["lateral_min"]), float(r["lateral_max"])) == (-REGION_HALF_Y, REGION_HALF_Y)
        assert (float(r["forward_min"]), float(r["forward_max"])) == (-REGION_HALF_X, REGION_HALF_X)
    assert (REGION_HALF_Y, REGION_HALF_X) == (0.035, 0.055)


def test_empty_perturbation_exports_zero_columns(tmp_path):
    tel = _synthetic()
    export_plots(tel, None, tmp_path)
    data = np.loadtxt(tmp_path / "perturbation.csv", delimiter=",", skiprows=1)
    assert data.shape[0] == len(tel)
    np.testing.assert_array_equal(data[:, 1:], 0.0)
    for name in ("joints", "reward", "actions"):
        assert np.loadtxt(tmp_path / f"{name}.csv", delimiter=",", skiprows=1).shape[0] == len(tel)


# -- runs -------------------------------------------------------------------

def test_reference_playback_stays_in_region():
    cfg = load_config(preset="case1")
    tel, rep = evaluate(cfg, ReferenceController())
    assert rep.falls == 0 and rep.cycles_completed == 3
    assert min(rep.in_region) > 0.95
    assert max(rep.peak_torque) <= 100.0


def test_eval_is_reproducible():
    cfg = load_config(preset="case2")
    a, _ = evaluate(cfg, ReferenceController(), stress=1.75)
    b, _ = evaluate(cfg, ReferenceController(), stress=1.75)
    assert len(a) > 0 and a.digest() == b.digest()


def test_fall_is_scored_not_rejected():
    tel = _synthetic(steps=40)
    tel.meta["falls"] = 1
    rep = metrics(tel)
    assert rep.falls == 1 and rep.cycles_completed == 0 and rep.steps == 40


def test_sweep_rows_are_in_test_ranges_and_reproducible():
    from exosquat.environment.randomization import PRESETS
    cfg = load_config(preset="case1")
    rows = sweep(cfg, ReferenceController(), envs=6, seed=3)
    assert [r["env_id"] for r in rows] == list(range(6))
    test = PRESETS["test"]
    for r in rows:
        assert test.friction[0] <= r["friction_scale"] <= test.friction[1]
        assert test.latency[0] <= r["latency"] <= test.latency[1]
    assert sweep(cfg, ReferenceController(), envs=6, seed=3, workers=2) == rows


# -- command line -----------------------------------------------------------

def _files(root):
    return {p for p in root.rglob("*") if p.is_file()}


def test_cli_eval_writes_everything_under_out(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "out"
    assert main(["eval", "--config", "case1", "--cycles", "1", "--out", str(out), "--quiet"]) == 0
    assert _files(tmp_path) == _files(out)
    rep = json.loads((out / "eval" / "report.json").read_text())
    assert rep["cycles_completed"] == 1 and len(rep["telemetry_sha256"]) == 64
    tel = Telemetry.from_csv(out / "eval" / "telemetry.csv")
    assert tel.digest() == rep["telemetry_sha256"]
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_cli_sweep(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", "case1", "--envs", "3", "--seed", "5", "--out", str(out)]) == 0
    with open(out / "sweep.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_cli_error_record(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("mode: flying\n")
    out = tmp_path / "err"
    assert main(["eval", "--config", str(bad), "--out", str(out)]) == 2
    rec = json.loads((out / "error.json").read_text())
    assert rec["status"] == "error" and rec["error"] == "InvalidSpec"
    assert "flying" in json.loads(capsys.readouterr().err)["message"]


def test_cli_check(tmp_path):
    out = tmp_path / "chk"
    assert main(["check", "--out", str(out), "--quiet"]) == 0
    data = json.loads((out / "check.json").read_text())
    assert data["passed"] and len(data["suites"]) >= 7
