"""Random push forces on the hip, femurs and tibias."""

from dataclasses import dataclass
import math

import numpy as np

# (site name, link, point in link frame)
SITES = (
    ("hip", "pelvis", (0.0, 0.0, 0.0)),
    ("femur_l", "thigh_l", (0.0, 0.0, -0.20)),
    ("femur_r", "thigh_r", (0.0, 0.0, -0.20)),
    ("tibia_l", "shank_l", (0.0, 0.0, -0.20)),
    ("tibia_r", "shank_r", (0.0, 0.0, -0.20)),
)


@dataclass
class PerturbationSpec:
    hip_max: float = 200.0
    hip_cone_deg: float = 20.0
    limb_max: float = 100.0
    interval: float = 0.5
    ramp: float = 1.0  # fraction of the interval spent ramping to a new target
    scale: float = 1.0  # stress multiplier on both magnitude ranges

    def __post_init__(self):
        if self.hip_max < 0 or self.limb_max < 0 or self.scale < 0:
            raise ValueError("magnitudes must be >= 0")
        if not 0 <= self.hip_cone_deg <= 20.0:
            raise ValueError("hip cone half-angle must lie in [0, 20] degrees")
        if not self.interval > 0 or not 0 < self.ramp <= 1:
            raise ValueError("interval must be > 0 and ramp in (0, 1]")

    def stressed(self, factor=1.75):
        return PerturbationSpec(self.hip_max, self.hip_cone_deg, self.limb_max,
                                self.interval, self.ramp, self.scale * factor)


def cone_direction(rng, half_angle_deg):
    """Unit vector uniform on the spherical cap around +z."""
    cmin = math.cos(math.radians(half_angle_deg))
    c = rng.uniform(cmin, 1.0)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([s * math.cos(phi), s * math.sin(phi), c])


def sphere_direction(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def sample_targets(spec, rng):
    """One set of five target forces (N, world frame), hip first."""
    out = np.empty((len(SITES), 3))
    out[0] = rng.uniform(0.0, spec.hip_max * spec.scale) * cone_direction(rng, spec.hip_cone_deg)
    for k in range(1, len(SITES)):
        out[k] = rng.uniform(0.0, spec.limb_max * spec.scale) * sphere_direction(rng)
    return out


class PerturbationSchedule:
    """Piecewise-linear force profile, resampled every ``spec.interval``.

    Forces start at zero; on entering interval ``k`` the profile ramps from
    the previous target to a fresh one over ``ramp * interval`` and then
    holds it.
    """

    def __init__(self, spec, rng):
        self.spec = spec
        self.rng = rng
        self.targets = [np.zeros((len(SITES), 3))]

    def _target(self, k):
        while len(self.targets) <= k + 1:
            self.targets.append(sample_targets(self.spec, self.rng))
        return self.targets[k], self.targets[k + 1]

    def __call__(self, t):
        T = self.spec.interval
        k = int(math.floor(t / T + 1e-9))
        a, b = self._target(k)
        w = min(1.0, (t - k * T) / (self.spec.ramp * T))
        return (1.0 - w) * a + w * b


def sample_perturbation(spec, rng, t, model, schedule=None):
    """Forces at time ``t`` as an :class:`ExternalForceSet` on ``model``'s links."""
    from exosquat.multibody import ExternalForceSet

    schedule = schedule or PerturbationSchedule(spec, rng)
    f = schedule(t)
    out = ExternalForceSet()
    for (name, link, point), force in zip(SITES, f):
        out.add(model.body_index[link], point, force)
    return out
