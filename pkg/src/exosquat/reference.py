"""Cyclic reference squat used as the imitation target.

The root height follows a cosine-eased crouch; the pelvis stays upright and
shifts backward so the whole-body CoM stays over the foot centers. Hip, knee
and ankle pitch come from planar two-link inverse kinematics with the feet
flat and fixed on the ground.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from exosquat.errors import Unreachable
from exosquat.multibody import build_model

CONTROL_DT = 1.0 / 30.0
FUTURE_STEPS = 6


@dataclass(frozen=True)
class ReferenceSample:
    """Targets at one instant.

    Attributes:
        joints: 8 actuated joint targets (rad), actuated-joint order.
        joint_vel: their time derivatives (rad/s).
        root_pos: world root position (m).
        root_quat: root orientation, wxyz.
        root_vel: world root velocity (m/s).
        com: world whole-body CoM (m).
        feet: ``(2, 3)`` foot centers relative to the root, root frame (m).
        phase: position in the cycle, in [0, 1).
    """

    joints: np.ndarray
    joint_vel: np.ndarray
    root_pos: np.ndarray
    root_quat: np.ndarray
    root_vel: np.ndarray
    com: np.ndarray
    feet: np.ndarray
    phase: float


class _LegGeometry:
    """Sagittal-plane leg dimensions read from a model at its zero pose."""

    def __init__(self, model):
        spec = model.spec
        names = spec.actuated_joints
        hip, knee, ankle = (spec.joint(n) for n in names[0:6:2])
        q0 = model.zero_q()
        R, p = model.kernel.fk(q0)
        p = np.asarray(p)
        bi = model.body_index
        self.hip_body, self.knee_body, self.ankle_body = bi[hip.child], bi[knee.child], bi[ankle.child]
        self.root_to_hip = p[self.hip_body] - p[0]
        self.thigh = float(np.linalg.norm(p[self.knee_body] - p[self.hip_body]))
        self.shank = float(np.linalg.norm(p[self.ankle_body] - p[self.knee_body]))
        self.ankle_pos = p[self.ankle_body].copy()
        self.zero_q = q0
        foot = model.feet[0]
        self.foot_center = p[foot] + np.asarray(R)[foot] @ model.foot_center_local[0]

    def ik(self, hip_dx, hip_height):
        """Thigh and shank pitch for the hip at ``(hip_dx, hip_height)`` from the ankle."""
        L1, L2 = self.thigh, self.shank
        dx, dz = -hip_dx, -hip_height
        D = math.hypot(dx, dz)
        if D > L1 + L2 or D < abs(L1 - L2):
            raise Unreachable(f"hip-ankle distance {D:.4f} m outside leg reach")
        ck = (D * D - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
        knee = math.acos(max(-1.0, min(1.0, ck)))
        beta = math.atan2(dx, -dz)
        gamma = math.atan2(L2 * math.sin(knee), L1 + L2 * math.cos(knee))
        phi1 = beta + gamma
        return phi1, phi1 - knee

    def ik_rates(self, phi1, phi2, hip_vx, hip_vz):
        L1, L2 = self.thigh, self.shank
        J = np.array([[L1 * math.cos(phi1), L2 * math.cos(phi2)],
                      [L1 * math.sin(phi1), L2 * math.sin(phi2)]])
        return np.linalg.solve(J, [-hip_vx, -hip_vz])


def knee_ik(thigh, shank, distance):
    """Knee flexion that puts hip and ankle ``distance`` apart (law of cosines)."""
    return math.pi - math.acos((thigh ** 2 + shank ** 2 - distance ** 2) / (2.0 * thigh * shank))


class ReferenceMotion:
    """Base class: subclasses implement :meth:`_joint_state` and root motion."""

    cycle: float

    def __init__(self, model, cycle):
        if not cycle > 0:
            raise ValueError("cycle must be positive")
        self.model = model
        self.cycle = float(cycle)
        self._cache = lru_cache(maxsize=4096)(self._sample_uncached)

    def sample(self, t):
        t = float(t) % self.cycle
        # quantize so the cache keys are stable under float error
        return self._cache(round(t, 9))

    def _sample_uncached(self, t):
        raise NotImplementedError

    def future_targets(self, t, horizon=FUTURE_STEPS, dt=CONTROL_DT):
        return np.stack([self.sample(t + (k + 1) * dt).joints for k in range(horizon)])

    def pose(self, t):
        """Full exoskeleton ``q`` of the reference at ``t``."""
        s = self.sample(t)
        q = np.zeros(self.model.nq)
        q[0:3] = s.root_pos
        q[3:7] = s.root_quat
        q[self.model.act_q] = s.joints
        return q

    def velocity(self, t):
        s = self.sample(t)
        v = np.zeros(self.model.nv)
        v[0:3] = s.root_vel
        v[self.model.act_v] = s.joint_vel
        return v

    def _finish(self, joints, joint_vel, root_pos, root_vel, t):
        q = np.zeros(self.model.nq)
        q[0:3] = root_pos
        q[3] = 1.0
        q[self.model.act_q] = joints
        R, p = self.model.kernel.fk(q)
        R, p = np.asarray(R), np.asarray(p)
        feet = np.stack([p[f] + R[f] @ c - p[0]
                         for f, c in zip(self.model.feet, self.model.foot_center_local)])
        com = np.asarray(self.model.kernel.com_position(q))
        return ReferenceSample(np.asarray(joints, float), np.asarray(joint_vel, float),
                               np.asarray(root_pos, float), np.array([1.0, 0.0, 0.0, 0.0]),
                               np.asarray(root_vel, float), com, feet, t / self.cycle)


class SquatMotion(ReferenceMotion):
    """Cosine-eased squat of a given depth, generated by :func:`generate_squat`."""

    def __init__(self, model, depth, cycle, knee_bend, balance):
        super().__init__(model, cycle)
        if depth < 0:
            raise ValueError("depth must be non-negative")
        self.geom = g = _LegGeometry(model)
        self.depth = float(depth)
        self.knee_bend = float(knee_bend)
        self.balance = balance
        # hip height above the ankle pivot at the top of the cycle
        L1, L2 = g.thigh, g.shank
        self.top = math.sqrt(L1 * L1 + L2 * L2 + 2.0 * L1 * L2 * math.cos(knee_bend))
        if not self.depth < self.top - abs(L1 - L2):
            raise Unreachable(f"depth {depth} m exceeds the leg's kinematic reach")
        self._dx_coef = self._fit_balance()
        self._dx_der = np.polynomial.chebyshev.chebder(self._dx_coef)
        self._cmax = max(self.depth, 1e-6)

    def _pose_for(self, crouch, dx):
        g = self.geom
        phi1, phi2 = g.ik(dx, self.top - crouch)
        hip_world = g.ankle_pos + np.array([dx, 0.0, self.top - crouch])
        joints = self._joints(phi1, phi2)
        root = hip_world - g.root_to_hip
        root[1] = 0.0
        q = np.zeros(self.model.nq)
        q[0:3] = root
        q[3] = 1.0
        q[self.model.act_q] = joints
        return q, phi1, phi2

    @staticmethod
    def _joints(phi1, phi2):
        hip, knee, ankle = phi1, phi1 - phi2, -phi2
        return np.array([hip, hip, knee, knee, ankle, ankle, 0.0, 0.0])

    def _balance_dx(self, crouch):
        """Hip offset that puts the CoM over the foot center (secant search)."""
        target = self.geom.foot_center[0]
        com_x = lambda dx: float(self.model.kernel.com_position(self._pose_for(crouch, dx)[0])[0])
        x0, x1 = 0.0, -0.02
        f0, f1 = com_x(x0) - target, com_x(x1) - target
        for _ in range(50):
            if abs(f1) < 1e-12 or f1 == f0:
                break
            x0, x1, f0 = x1, x1 - f1 * (x1 - x0) / (f1 - f0), f1
            f1 = com_x(x1) - target
        return x1

    def _fit_balance(self):
        if not self.balance:
            return np.zeros(1)
        if self.depth == 0.0:
            return np.array([self._balance_dx(0.0)])
        deg = 12
        nodes = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
        crouch = 0.5 * self.depth * (nodes + 1.0)
        dx = [self._balance_dx(c) for c in crouch]
        return np.polynomial.chebyshev.chebfit(nodes, dx, deg)

    def _dx(self, crouch):
        u = 2.0 * crouch / self._cmax - 1.0
        cheb = np.polynomial.chebyshev
        return float(cheb.chebval(u, self._dx_coef)), float(cheb.chebval(u, self._dx_der)) * 2.0 / self._cmax

    def crouch(self, t):
        w = 2.0 * math.pi / self.cycle
        return 0.5 * self.depth * (1.0 - math.cos(w * t)), 0.5 * self.depth * w * math.sin(w * t)

    def _sample_uncached(self, t):
        c, cdot = self.crouch(t)
        dx, ddx = self._dx(c)
        q, phi1, phi2 = self._pose_for(c, dx)
        hip_vx, hip_vz = ddx * cdot, -cdot
        r1, r2 = self.geom.ik_rates(phi1, phi2, hip_vx, hip_vz)
        joint_vel = self._joints(r1, r2)
        return self._finish(q[self.model.act_q], joint_vel, q[0:3], np.array([hip_vx, 0.0, hip_vz]), t)


def generate_squat(depth=0.25, cycle=4.0, model=None, knee_bend=0.15, balance=True):
    """Build the cyclic squat reference.

    Args:
        depth: root height drop at the bottom of the squat (m).
        cycle: period (s); the squat is deepest at half the cycle.
        model: model whose leg geometry is used; the default exoskeleton
            when omitted.
        knee_bend: knee flexion at the top of the cycle (rad). A slightly
            bent top keeps the knee away from the straight-leg singularity,
            so the trajectory stays C1 through the cycle seam.
        balance: shift the pelvis fore-aft to keep the CoM over the feet.

    Raises:
        Unreachable: if the crouch cannot be reached by the legs.
    """
    if model is None:
        from exosquat.default_model import default_exo_spec
        model = build_model(default_exo_spec())
    return SquatMotion(model, depth, cycle, knee_bend, balance)


class TrajectoryMotion(ReferenceMotion):
    """Joint trajectory imported from a CSV file, spline resampled.

    Root height follows from keeping the lowest sole on the ground; the root
    stays upright at its standing fore-aft position.
    """

    def __init__(self, model, times, joints):
        from scipy.interpolate import CubicSpline

        times = np.asarray(times, float)
        joints = np.asarray(joints, float)
        if joints.shape != (len(times), 8):
            raise ValueError("expected one time column and 8 joint columns")
        cycle = times[-1] - times[0]
        super().__init__(model, cycle)
        periodic = np.allclose(joints[0], joints[-1])
        self.spline = CubicSpline(times - times[0], joints, axis=0,
                                  bc_type="periodic" if periodic else "not-a-knot")
        self.dspline = self.spline.derivative()
        self._root_x = model.zero_q()[0]

    def _sample_uncached(self, t):
        joints = self.spline(t)
        jv = self.dspline(t)
        q = np.zeros(self.model.nq)
        q[3] = 1.0
        q[self.model.act_q] = joints
        R, p = self.model.kernel.fk(q)
        R, p = np.asarray(R), np.asarray(p)
        low = min((p[f] + R[f] @ c)[2] for f, c in zip(self.model.feet, self.model.foot_center_local))
        root = np.array([self._root_x, 0.0, -low])
        eps = 1e-5
        q2 = q.copy()
        q2[self.model.act_q] = joints + eps * jv
        R2, p2 = self.model.kernel.fk(q2)
        low2 = min((np.asarray(p2)[f] + np.asarray(R2)[f] @ c)[2]
                   for f, c in zip(self.model.feet, self.model.foot_center_local))
        root_vel = np.array([0.0, 0.0, -(low2 - low) / eps])
        return self._finish(joints, jv, root, root_vel, t)


def load_trajectory_csv(path, model=None):
    """Read ``time, 8 joint targets`` rows (header allowed) into a motion."""
    data = np.genfromtxt(path, delimiter=",", names=None, comments="#")
    if np.isnan(data[0]).all():
        data = data[1:]
    if model is None:
        from exosquat.default_model import default_exo_spec
        model = build_model(default_exo_spec())
    return TrajectoryMotion(model, data[:, 0], data[:, 1:9])
