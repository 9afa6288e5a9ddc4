"""Four-point foot contact and center-of-pressure estimation.

Ground reaction forces come from a regularized spring-damper at each of the
four sensor points per foot. The center of pressure (CoP) is the point C on
the sole plane where the tipping moment of the sensor forces vanishes:

    [sum_i (C - O_i) x F_i] x n = 0

For sensor points in the sole plane it reduces to the normal-force weighted
mean of the sensor positions.
"""

from dataclasses import dataclass, field

import numpy as np

# stable-region half extents in the foot frame: x forward, y lateral
REGION_HALF_X = 0.055
REGION_HALF_Y = 0.035
CONTACT_THRESHOLD = 20.0


@dataclass
class ContactParams:
    stiffness: float = 1.0e5
    damping: float = 1.0e3
    friction: float = 0.8
    slip_velocity: float = 0.01  # friction regularization
    threshold: float = CONTACT_THRESHOLD


@dataclass
class SensorForceSet:
    """Sensor positions and forces for each foot, all in world frame.

    Attributes:
        positions: ``(feet, 4, 3)`` sensor points O_i.
        forces: ``(feet, 4, 3)`` reaction forces F_i.
        normal: ``(feet, 3)`` unit sole normal n per foot.
        foot_rotation: ``(feet, 3, 3)`` foot frame orientation; CoPs are
            reported in this frame.
        foot_center: ``(feet, 3)`` foot center, the origin of reported CoPs.
    """

    positions: np.ndarray
    forces: np.ndarray
    normal: np.ndarray = None
    foot_rotation: np.ndarray = None
    foot_center: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 4, 3)
        self.forces = np.asarray(self.forces, dtype=float).reshape(-1, 4, 3)
        nf = self.positions.shape[0]
        if self.normal is None:
            self.normal = np.tile([0.0, 0.0, 1.0], (nf, 1))
        self.normal = np.asarray(self.normal, dtype=float).reshape(nf, 3)
        self.normal = self.normal / np.linalg.norm(self.normal, axis=1, keepdims=True)
        if self.foot_rotation is None:
            self.foot_rotation = np.tile(np.eye(3), (nf, 1, 1))
        self.foot_rotation = np.asarray(self.foot_rotation, dtype=float).reshape(nf, 3, 3)
        if self.foot_center is None:
            self.foot_center = self.positions.mean(axis=1)
        self.foot_center = np.asarray(self.foot_center, dtype=float).reshape(nf, 3)

    @property
    def total_normal(self):
        """Total normal force N per foot."""
        return np.einsum("fkj,fj->f", self.forces, self.normal)

    @classmethod
    def single(cls, positions2d, normal_forces):
        """One flat foot on the ground plane from 2D positions and normal loads."""
        pos = np.zeros((1, 4, 3))
        pos[0, :, :2] = np.asarray(positions2d, dtype=float).reshape(4, 2)
        f = np.zeros((1, 4, 3))
        f[0, :, 2] = np.asarray(normal_forces, dtype=float)
        return cls(pos, f, foot_center=np.zeros((1, 3)))


@dataclass
class CoPEstimate:
    """Per-foot CoP in the foot frame (2D) with validity and region data."""

    cop: np.ndarray
    valid: np.ndarray
    normal_force: np.ndarray
    distance: np.ndarray = field(default=None)
    inside: np.ndarray = field(default=None)
    world: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.distance is None or self.inside is None:
            self.distance, self.inside = region_distance(self.cop)


def contact_forces(model, state, params=None):
    """Ground reaction forces at the eight sensor points of ``model``."""
    params = params or ContactParams()
    k = model.kernel
    pos, force = k.contact(state.q, state.v, params.friction, params.stiffness,
                           params.damping, params.slip_velocity)
    return sensor_set_from_kernel(model, state.q, pos, force)


def sensor_set_from_kernel(model, q, pos, force):
    R, p = model.kernel.fk(q)
    R, p = np.asarray(R), np.asarray(p)
    feet = model.feet
    rot = R[feet]
    center = p[feet] + np.einsum("fij,fj->fi", rot, model.foot_center_local)
    return SensorForceSet(np.asarray(pos).reshape(2, 4, 3), np.asarray(force).reshape(2, 4, 3),
                          normal=rot[:, :, 2], foot_rotation=rot, foot_center=center)


def compute_cop(forces, threshold=CONTACT_THRESHOLD):
    """Solve the zero tipping-moment condition for each foot.

    The CoP is searched on the plane through the foot center with normal n.
    Writing ``M`` for the moment of the sensor forces about the center P and
    ``F_n`` for the total normal force, the in-plane solution is
    ``C = P + (n x M) / F_n``. Feet carrying less than ``threshold`` get
    ``valid = False`` and the foot center as CoP.
    """
    O = forces.positions
    F = forces.forces
    n = forces.normal
    P = forces.foot_center
    moment = np.cross(O - P[:, None, :], F).sum(axis=1)
    fn = np.einsum("fkj,fj->f", F, n)
    valid = fn >= threshold
    safe = np.where(valid, fn, 1.0)
    C = P + np.cross(n, moment) / safe[:, None]
    C = np.where(valid[:, None], C, P)
    local = np.einsum("fji,fj->fi", forces.foot_rotation, C - P)[:, :2]
    return CoPEstimate(local, valid, fn, world=C)


def tipping_residual(forces, cop):
    """Tangential tipping moment at ``cop.world`` per newton of normal load."""
    C = cop.world
    M = np.cross(C[:, None, :] - forces.positions, forces.forces).sum(axis=1)
    tangential = np.cross(M, forces.normal)
    return np.linalg.norm(tangential, axis=1) / np.maximum(np.abs(cop.normal_force), 1e-300)


def region_distance(cop, half_x=REGION_HALF_X, half_y=REGION_HALF_Y):
    """Distance from the CoP to the stable-region center, and membership.

    Accepts a :class:`CoPEstimate` or an array of 2D foot-frame points of
    shape ``(..., 2)``.
    """
    c = cop.cop if isinstance(cop, CoPEstimate) else np.asarray(cop, dtype=float)
    dist = np.sqrt(c[..., 0] ** 2 + c[..., 1] ** 2)
    inside = (np.abs(c[..., 0]) <= half_x) & (np.abs(c[..., 1]) <= half_y)
    if dist.ndim == 0:
        return float(dist), bool(inside)
    return dist, inside
