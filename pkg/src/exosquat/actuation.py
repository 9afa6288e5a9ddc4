"""Action filtering, substep interpolation and clipped PD torques."""

from dataclasses import dataclass
import math

import numpy as np

ACTION_RATE = 30.0
SUBSTEPS = 30


@dataclass
class PDConfig:
    kp: float = 900.0
    kv: float = 40.0
    torque_limit: float = 100.0
    cutoff: float = 4.0  # Hz, at the action rate
    order: int = 2
    action_rate: float = ACTION_RATE

    def __post_init__(self):
        if not (self.kp > 0 and self.kv > 0 and self.torque_limit > 0):
            raise ValueError("kp, kv and torque_limit must be positive")
        if not 0 < self.cutoff < self.action_rate / 2:
            raise ValueError("cutoff must lie below the Nyquist rate")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")


def section_coefficients(cutoff, rate):
    """Bilinear first-order low-pass ``y = a*y1 + b*(x + x1)`` with prewarping."""
    k = math.tan(math.pi * cutoff / rate)
    return k / (1.0 + k), (1.0 - k) / (1.0 + k)


def transfer_function(cutoff, rate, order=2):
    """Numerator and denominator polynomials in ``z^-1`` of the full cascade."""
    b, a = section_coefficients(cutoff, rate)
    num, den = np.array([1.0]), np.array([1.0])
    for _ in range(order):
        num = np.convolve(num, [b, b])
        den = np.convolve(den, [1.0, -a])
    return num, den


def frequency_response(cutoff, rate, freq, order=2):
    num, den = transfer_function(cutoff, rate, order)
    z1 = np.exp(-2j * np.pi * freq / rate)
    powers = z1 ** np.arange(len(num))
    return (num @ powers) / (den @ powers)


class ActionFilter:
    """Per-channel critically damped low-pass at the action rate.

    A cascade of ``order`` identical first-order sections, so every pole sits
    at the same real location: unit DC gain, a zero at the Nyquist
    frequency, and a monotone step response.
    """

    def __init__(self, channels, cutoff=4.0, rate=ACTION_RATE, order=2, initial=None):
        self.channels = channels
        self.order = order
        self.b, self.a = section_coefficients(cutoff, rate)
        self.x1 = np.zeros((order, channels))
        self.y1 = np.zeros((order, channels))
        if initial is not None:
            self.reset(initial)

    def reset(self, value):
        """Put every section at rest on ``value``."""
        value = np.broadcast_to(np.asarray(value, dtype=float), (self.channels,))
        self.x1[:] = value
        self.y1[:] = value

    def __call__(self, raw):
        x = np.asarray(raw, dtype=float)
        for s in range(self.order):
            y = self.a * self.y1[s] + self.b * (x + self.x1[s])
            self.x1[s] = x
            self.y1[s] = y
            x = y
        return x.copy()

    def state(self):
        return self.x1.copy(), self.y1.copy()


def filter_action(filt, raw):
    return filt(raw)


def interpolate(prev, nxt, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return (1.0 - alpha) * np.asarray(prev, dtype=float) + alpha * np.asarray(nxt, dtype=float)


def substep_alphas(nsub=SUBSTEPS):
    """Interpolation weights; the last substep lands on the new action."""
    return (np.arange(nsub) + 1.0) / nsub


def pd_torque(cfg, target, position, velocity, strength=1.0):
    """``clip(strength * (kp*(a - p) - kv*pdot), -limit, limit)`` per joint.

    ``strength`` is the randomized motor-strength multiplier; applying it
    before the clip keeps the torque limit a hard bound.
    """
    raw = cfg.kp * (np.asarray(target, dtype=float) - np.asarray(position, dtype=float)) \
        - cfg.kv * np.asarray(velocity, dtype=float)
    return np.clip(np.asarray(strength) * raw, -cfg.torque_limit, cfg.torque_limit)


def clamp_action(action, lo, hi):
    return np.clip(np.asarray(action, dtype=float), lo, hi)
