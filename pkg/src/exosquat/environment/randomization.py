"""Per-episode dynamics randomization."""

from dataclasses import dataclass, field, fields

import numpy as np

GROUPS = ("friction", "mass", "strength", "latency", "inertia", "com")


@dataclass
class RandomizationSpec:
    """Uniform ranges for each parameter group.

    Multipliers scale the nominal value; latency is in seconds. Motor
    strength is drawn per actuator, the other groups once per episode.
    """

    friction: tuple = (0.9, 1.6)
    mass: tuple = (0.8, 1.2)
    strength: tuple = (0.8, 1.2)
    latency: tuple = (0.0, 0.04)
    inertia: tuple = (0.5, 1.5)
    com: tuple = (0.9, 1.2)

    def __post_init__(self):
        for name in GROUPS:
            lo, hi = (float(x) for x in getattr(self, name))
            setattr(self, name, (lo, hi))
            if lo > hi:
                raise ValueError(f"{name}: lo > hi")
            if name == "latency":
                if lo < 0:
                    raise ValueError("latency must be >= 0")
            elif lo <= 0:
                raise ValueError(f"{name}: multipliers must be > 0")

    def to_dict(self):
        return {name: list(getattr(self, name)) for name in GROUPS}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: tuple(v) for k, v in data.items()})


TRAIN = RandomizationSpec()
TEST = RandomizationSpec(friction=(0.7, 2.0), mass=(0.7, 1.5), strength=(0.7, 1.3),
                         latency=(0.0, 0.06), inertia=(0.4, 1.6), com=(0.8, 1.3))
NOMINAL = RandomizationSpec(friction=(1.0, 1.0), mass=(1.0, 1.0), strength=(1.0, 1.0),
                            latency=(0.0, 0.0), inertia=(1.0, 1.0), com=(1.0, 1.0))
PRESETS = {"train": TRAIN, "test": TEST, "none": NOMINAL}


@dataclass
class DynamicsParams:
    """One realization of the randomized parameters."""

    friction: float = 1.0
    mass: float = 1.0
    strength: np.ndarray = field(default_factory=lambda: np.ones(8))
    latency: float = 0.0
    inertia: float = 1.0
    com: float = 1.0

    def as_row(self):
        row = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "strength"}
        for j, s in enumerate(np.asarray(self.strength)):
            row[f"strength_{j}"] = float(s)
        return row


def sample_params(spec, rng, n_act=8):
    """Draw one :class:`DynamicsParams` from ``spec`` with Generator ``rng``."""
    u = lambda r, size=None: rng.uniform(r[0], r[1], size) if r[1] > r[0] else (
        np.full(size, r[0]) if size else r[0])
    return DynamicsParams(
        friction=float(u(spec.friction)),
        mass=float(u(spec.mass)),
        strength=np.asarray(u(spec.strength, n_act), float),
        latency=float(u(spec.latency)),
        inertia=float(u(spec.inertia)),
        com=float(u(spec.com)),
    )


def resolve(spec):
    if spec is None:
        return NOMINAL
    if isinstance(spec, str):
        return PRESETS[spec]
    if isinstance(spec, dict):
        return RandomizationSpec.from_dict(spec)
    return spec
