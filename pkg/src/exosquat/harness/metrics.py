"""Evaluation telemetry and the metrics computed from it."""

import csv
from dataclasses import asdict, dataclass, field
import hashlib
from pathlib import Path

import numpy as np

from exosquat.contact import REGION_HALF_X, REGION_HALF_Y
from exosquat.environment.perturbation import SITES
from exosquat.environment.rewards import TERMS
from exosquat.errors import IncompleteCycle

JOINTS = ("hip_flex_l", "hip_flex_r", "knee_flex_l", "knee_flex_r", "ankle_pitch_l", "ankle_pitch_r",
          "ankle_roll_l", "ankle_roll_r")
FEET = ("l", "r")


def telemetry_columns(n_act=8):
    j = JOINTS[:n_act]
    cols = ["step", "t", "phase", "cycle"]
    cols += [f"q_{n}" for n in j] + [f"q_ref_{n}" for n in j]
    cols += [f"tau_{n}" for n in j] + [f"action_{n}" for n in j] + [f"target_{n}" for n in j]
    for f in FEET:
        cols += [f"cop_{f}_x", f"cop_{f}_y", f"cop_{f}_valid", f"cop_{f}_inside", f"fn_{f}"]
    cols += [f"r_{t}" for t in TERMS] + ["r_total"]
    for name, _, _ in SITES:
        cols += [f"f_{name}_x", f"f_{name}_y", f"f_{name}_z"]
    cols += ["root_z", "com_x", "com_y", "com_z"]
    return cols


class Telemetry:
    """Fixed-column float table of per-step evaluation data."""

    def __init__(self, columns=None, rows=None, dt=1.0 / 30.0, cycle=4.0):
        self.columns = list(columns or telemetry_columns())
        self.index = {c: i for i, c in enumerate(self.columns)}
        self._rows = [] if rows is None else [np.asarray(r, float) for r in rows]
        self.dt = dt
        self.cycle = cycle
        self.meta = {}

    def append(self, values):
        row = np.full(len(self.columns), np.nan)
        for k, v in values.items():
            row[self.index[k]] = v
        self._rows.append(row)

    def __len__(self):
        return len(self._rows)

    @property
    def data(self):
        if not self._rows:
            return np.zeros((0, len(self.columns)))
        return np.vstack(self._rows)

    def col(self, name):
        return self.data[:, self.index[name]]

    def cols(self, prefix, names):
        d = self.data
        return d[:, [self.index[f"{prefix}{n}"] for n in names]]

    def digest(self):
        """SHA-256 over the column names and the raw float64 table."""
        h = hashlib.sha256()
        h.update(",".join(self.columns).encode())
        h.update(np.ascontiguousarray(self.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self._rows:
                w.writerow([repr(float(x)) for x in r])
        return path

    @classmethod
    def from_csv(cls, path, dt=1.0 / 30.0, cycle=4.0):
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            cols = next(rd)
            rows = [[float(x) for x in r] for r in rd]
        return cls(cols, rows, dt, cycle)


@dataclass
class EvalReport:
    """Per-cycle and aggregate evaluation metrics.

    ``in_region`` counts a foot as in the stable region only while it
    carries load (valid CoP) and the CoP lies inside the rectangle;
    ``in_region_both`` requires that of both feet at the same step.
    """

    steps: int
    cycles_completed: int
    in_region: list
    in_region_both: float
    reward_terms: dict
    mean_reward: float
    peak_torque: list
    falls: int
    per_cycle: list = field(default_factory=list)
    action_period: float = float("nan")
    per_env: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _region_flags(tel, half_x=REGION_HALF_X, half_y=REGION_HALF_Y):
    flags = []
    for f in FEET:
        x, y = tel.col(f"cop_{f}_x"), tel.col(f"cop_{f}_y")
        valid = tel.col(f"cop_{f}_valid") > 0.5
        flags.append(valid & (np.abs(x) <= half_x) & (np.abs(y) <= half_y))
    return np.stack(flags, axis=1)


def cycle_segments(tel):
    """``(start, stop)`` row ranges of complete reference cycles.

    Rows are grouped by the ``cycle`` column (reference phase wraps); a
    group is complete when it spans one full period of steps.
    """
    c = tel.col("cycle").astype(int)
    per = int(round(tel.cycle / tel.dt))
    segs = []
    for k in np.unique(c):
        idx = np.flatnonzero(c == k)
        if idx.size >= per:
            segs.append((int(idx[0]), int(idx[0] + per)))
    return segs


def action_period(actions, dt, lo=0.5, hi=8.0):
    """Lag (s) of the strongest autocorrelation peak of the mean action trace."""
    a = np.asarray(actions, float)
    if a.ndim == 2:
        a = a - a.mean(axis=0)
        ac = sum(np.correlate(a[:, j], a[:, j], "full")[a.shape[0] - 1:] for j in range(a.shape[1]))
    else:
        a = a - a.mean()
        ac = np.correlate(a, a, "full")[a.size - 1:]
    n = ac.size
    ac = ac / np.maximum(n - np.arange(n), 1)  # unbiased
    k0, k1 = int(lo / dt), min(int(hi / dt), n - n // 4)
    if k1 <= k0 + 2:
        return float("nan")
    seg = ac[k0:k1]
    peaks = [i for i in range(1, seg.size - 1) if seg[i] >= seg[i - 1] and seg[i] >= seg[i + 1]]
    if not peaks:
        return float("nan")
    best = max(peaks, key=lambda i: seg[i])
    return (k0 + best) * dt


def metrics(tel, falls=None):
    """Compute an :class:`EvalReport` from a :class:`Telemetry` table.

    Raises :class:`IncompleteCycle` when no full reference cycle was
    recorded, unless the episode ended in a fall.
    """
    if falls is None:
        falls = int(tel.meta.get("falls", 0))
    if len(tel) == 0:
        raise IncompleteCycle("empty telemetry")
    segs = cycle_segments(tel)
    # an episode cut short by a fall is still scored over the steps it has
    if not segs and not falls:
        raise IncompleteCycle(f"{len(tel)} steps hold no complete {tel.cycle} s cycle")
    flags = _region_flags(tel)
    R = tel.cols("r_", TERMS)
    tot = tel.col("r_total")
    tau = tel.cols("tau_", JOINTS)
    per_cycle = []
    for a, b in segs:
        per_cycle.append(dict(
            start=a, stop=b,
            in_region=[float(x) for x in flags[a:b].mean(axis=0)],
            in_region_both=float(flags[a:b].all(axis=1).mean()),
            mean_reward=float(tot[a:b].mean()),
            peak_torque=[float(x) for x in np.abs(tau[a:b]).max(axis=0)],
        ))
    return EvalReport(
        steps=len(tel),
        cycles_completed=len(segs),
        in_region=[float(x) for x in flags.mean(axis=0)],
        in_region_both=float(flags.all(axis=1).mean()),
        reward_terms={t: float(x) for t, x in zip(TERMS, R.mean(axis=0))},
        mean_reward=float(tot.mean()),
        peak_torque=[float(x) for x in np.abs(tau).max(axis=0)],
        falls=falls,
        per_cycle=per_cycle,
        action_period=action_period(tel.cols("action_", JOINTS), tel.dt),
    )
