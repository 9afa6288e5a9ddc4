"""Plot-ready CSV tables from evaluation telemetry, sweeps and training logs."""

import csv
from pathlib import Path

import numpy as np

from exosquat.contact import REGION_HALF_X, REGION_HALF_Y
from exosquat.environment.perturbation import SITES
from exosquat.environment.rewards import TERMS
from exosquat.harness.metrics import FEET, JOINTS


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])
    return path


def export_plots(tel, report=None, out_dir=".", sweep_rows=None, train_log=None):
    """Write one CSV per figure kind into ``out_dir``; returns the paths.

    Files: ``joints.csv`` (angles, reference, torques, with the cycle
    index), ``cycles.csv`` (per-cycle summary from ``report``),
    ``cop.csv`` (foot-frame CoP traces with constant border columns),
    ``reward.csv``, ``actions.csv``, ``perturbation.csv`` and, when given,
    ``sweep_rewards.csv`` and ``training_curve.csv``. With ``tel=None``
    only the report, sweep and training tables are written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if tel is not None:
        paths += _telemetry_tables(tel, out)
    if report is not None and report.per_cycle:
        hdr = (["cycle", "start", "stop", "mean_reward", "in_region_l", "in_region_r", "in_region_both"]
               + [f"peak_tau_{j}" for j in JOINTS])
        rows = [[k, c["start"], c["stop"], c["mean_reward"], *c["in_region"], c["in_region_both"],
                 *c["peak_torque"]] for k, c in enumerate(report.per_cycle)]
        paths.append(_write(out / "cycles.csv", hdr, rows))
    if sweep_rows:
        r = np.array([[row["env_id"], row["friction"], row["mean_cycle_reward"]] for row in sweep_rows])
        paths.append(_write(out / "sweep_rewards.csv", ["env_id", "friction", "mean_cycle_reward"], r))
    if train_log:
        keys = ["samples", "mean_step_reward", "mean_episode_reward", "mean_episode_length"]
        paths.append(_write(out / "training_curve.csv", keys,
                            [[row[k] for k in keys] for row in train_log]))
    return paths


def _telemetry_tables(tel, out):
    paths = []
    d = tel.data
    n = d.shape[0]
    t = tel.col("t") if n else np.zeros(0)
    cyc = tel.col("cycle") if n else np.zeros(0)

    def cols(names):
        return d[:, [tel.index[c] for c in names]] if n else np.zeros((0, len(names)))

    jn = ([f"q_{j}" for j in JOINTS] + [f"q_ref_{j}" for j in JOINTS] + [f"tau_{j}" for j in JOINTS])
    paths.append(_write(out / "joints.csv", ["t", "cycle"] + jn,
                        np.column_stack([t, cyc, cols(jn)])))

    cn = []
    for f in FEET:
        cn += [f"cop_{f}_x", f"cop_{f}_y", f"cop_{f}_valid"]
    border = np.tile([-REGION_HALF_Y, REGION_HALF_Y, -REGION_HALF_X, REGION_HALF_X], (n, 1))
    paths.append(_write(out / "cop.csv",
                        ["t"] + cn + ["lateral_min", "lateral_max", "forward_min", "forward_max"],
                        np.column_stack([t, cols(cn), border])))

    rn = [f"r_{x}" for x in TERMS] + ["r_total"]
    paths.append(_write(out / "reward.csv", ["t"] + rn, np.column_stack([t, cols(rn)])))

    an = [f"action_{j}" for j in JOINTS] + [f"target_{j}" for j in JOINTS]
    paths.append(_write(out / "actions.csv", ["t"] + an, np.column_stack([t, cols(an)])))

    pn = [f"f_{s}_{a}" for s, _, _ in SITES for a in "xyz"]
    paths.append(_write(out / "perturbation.csv", ["t"] + pn,
                        np.column_stack([t, np.nan_to_num(cols(pn))])))
    return paths
