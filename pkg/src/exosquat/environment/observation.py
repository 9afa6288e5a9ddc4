"""Policy observation assembly with simulated sensing latency."""

from collections import deque

import numpy as np

HISTORY = 3
ACTION_HISTORY = 3
FUTURE = 6
COP_CHANNELS = 6  # 2 feet x (x, y) + 2 contact flags


def observation_dim(nq, nv, n_act=8, future=FUTURE):
    return HISTORY * nq + HISTORY * nv + HISTORY * COP_CHANNELS + ACTION_HISTORY * n_act + future * n_act


def cop_channel(cop, valid):
    """Foot-frame CoPs (center when unloaded) followed by the two contact flags."""
    c = np.where(np.asarray(valid)[:, None], cop, 0.0)
    return np.concatenate([c.ravel(), np.asarray(valid, float)])


class LatencyBuffer:
    """Timestamped sensor snapshots with linear interpolation in time.

    Queries before the first snapshot return the first one; quaternion
    entries (``quat`` slice of ``q``) are renormalized after blending.
    """

    def __init__(self, maxlen=16, quat=slice(3, 7)):
        self.items = deque(maxlen=maxlen)
        self.quat = quat

    def clear(self):
        self.items.clear()

    def push(self, t, q, v, c):
        self.items.append((float(t), q.copy(), v.copy(), c.copy()))

    def query(self, t):
        items = self.items
        if not items:
            raise IndexError("empty latency buffer")
        if t <= items[0][0]:
            return items[0][1:]
        for k in range(len(items) - 1, -1, -1):
            tk = items[k][0]
            if tk == t:
                return items[k][1:]
            if tk < t:
                if k == len(items) - 1:
                    return items[k][1:]
                t1 = items[k + 1][0]
                w = (t - tk) / (t1 - tk)
                a, b = items[k], items[k + 1]
                q = (1.0 - w) * a[1] + w * b[1]
                qs = q[self.quat]
                q[self.quat] = qs / np.linalg.norm(qs)
                return q, (1.0 - w) * a[2] + w * b[2], (1.0 - w) * a[3] + w * b[3]
        return items[0][1:]


class ObservationBuilder:
    """Stacks delayed state history, action history and future targets."""

    def __init__(self, nq, nv, n_act=8, dt=1.0 / 30.0):
        self.nq, self.nv, self.n_act, self.dt = nq, nv, n_act, dt
        self.dim = observation_dim(nq, nv, n_act)
        self.buffer = LatencyBuffer()
        self.actions = np.zeros((ACTION_HISTORY, n_act))

    def reset(self, t, q, v, c, action0=None):
        self.buffer.clear()
        self.buffer.push(t, q, v, c)
        self.actions[:] = 0.0 if action0 is None else action0

    def record(self, t, q, v, c, action):
        self.buffer.push(t, q, v, c)
        self.actions = np.roll(self.actions, -1, axis=0)
        self.actions[-1] = action

    def build(self, tick, latency, future_targets):
        """Observation at control tick ``tick``; snapshots must be pushed at ``tick * dt``."""
        parts_q, parts_v, parts_c = [], [], []
        for k in range(HISTORY - 1, -1, -1):
            tk = (tick - k) * self.dt
            if latency > 0.0:
                tk = tk - latency
            q, v, c = self.buffer.query(tk)
            parts_q.append(q)
            parts_v.append(v)
            parts_c.append(c)
        obs = np.concatenate(parts_q + parts_v + parts_c
                             + [self.actions.ravel(), np.asarray(future_targets).ravel()])
        return obs
