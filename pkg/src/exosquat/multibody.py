"""Floating-base articulated rigid-body model of the exoskeleton.

A :class:`ModelSpec` is the plain description (links, joints, sensors); a
:class:`ModelInstance` is the validated, simulatable form that wraps one of
the flat-array kernels from :mod:`exosquat._backend`.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from exosquat import _backend
from exosquat.errors import InvalidSpec, NumericalDivergence, SingularMass

GRAVITY = (0.0, 0.0, -9.81)
SIM_DT = 1.0 / 900.0

ACTUATED_ROLES = (
    "hip_flex_l", "hip_flex_r",
    "knee_flex_l", "knee_flex_r",
    "ankle_pitch_l", "ankle_pitch_r",
    "ankle_roll_l", "ankle_roll_r",
)


@dataclass
class LinkSpec:
    name: str
    mass: float
    inertia: list  # 3x3 about the CoM, link frame
    com: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    frames: dict = field(default_factory=dict)  # named anchor points, link frame


@dataclass
class JointSpec:
    name: str
    type: str  # floating | revolute | prismatic
    parent: str | None
    child: str
    axis: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    origin: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    limit: list = field(default_factory=lambda: [-math.inf, math.inf])
    torque_limit: float = 100.0
    armature: float = 0.0
    damping: float = 0.0
    stiffness: float = 0.0
    rest: float = 0.0


@dataclass
class SpringSpec:
    """Linear spring between anchor points on two links."""

    name: str
    link_a: str
    point_a: list
    link_b: str
    point_b: list
    stiffness: float
    damping: float = 0.0
    rest_length: float | None = None  # None: measured at the reset pose


@dataclass
class ModelSpec:
    """Kinematic and inertial description of a floating-base chain.

    ``foot_sensor_offsets`` maps each foot link (left first) to its four
    force-sensor points in the foot frame. ``total_mass`` is a declared
    value checked against the link masses.
    """

    name: str
    links: list
    joints: list
    actuated_joints: list
    foot_sensor_offsets: dict
    total_mass: float
    gravity: list = field(default_factory=lambda: list(GRAVITY))
    limit_stiffness: float = 500.0
    limit_damping: float = 5.0

    def link(self, name):
        for lk in self.links:
            if lk.name == name:
                return lk
        raise KeyError(name)

    def joint(self, name):
        for jt in self.joints:
            if jt.name == name:
                return jt
        raise KeyError(name)

    def scaled(self, mass=1.0, inertia=1.0, com=1.0, links=None):
        """Copy with link masses, inertias and CoM offsets multiplied.

        ``links`` restricts the scaling to the named links.
        """
        out = copy.deepcopy(self)
        total = 0.0
        for lk in out.links:
            if links is None or lk.name in links:
                lk.mass = lk.mass * mass
                lk.inertia = (np.asarray(lk.inertia, float) * mass * inertia).tolist()
                lk.com = (np.asarray(lk.com, float) * com).tolist()
            total += lk.mass
        out.total_mass = total
        return out

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["links"] = [LinkSpec(**lk) for lk in data["links"]]
        data["joints"] = [JointSpec(**jt) for jt in data["joints"]]
        for jt in data["joints"]:
            jt.limit = [float(x) for x in jt.limit]
        return cls(**data)


def save_model_spec(spec, path):
    """Write ``spec`` as YAML (SI units throughout)."""
    data = spec.to_dict()
    for jt in data["joints"]:
        jt["limit"] = [_yaml_float(x) for x in jt["limit"]]
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))


def load_model_spec(path):
    data = yaml.safe_load(Path(path).read_text())
    return ModelSpec.from_dict(data)


def _yaml_float(x):
    return float(x) if math.isfinite(x) else (".inf" if x > 0 else "-.inf")


@dataclass
class GeneralizedState:
    """Generalized positions ``q``, velocities ``v`` and time ``t``.

    ``q = [root xyz, root quaternion wxyz, joints]``,
    ``v = [root linear (world), root angular (world), joint rates]``.
    """

    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self):
        return GeneralizedState(self.q.copy(), self.v.copy(), self.t)


@dataclass
class ExternalForceSet:
    """World-frame forces applied at link-frame points."""

    links: list = field(default_factory=list)
    points: list = field(default_factory=list)
    forces: list = field(default_factory=list)

    def add(self, link, point, force):
        self.links.append(int(link))
        self.points.append(np.asarray(point, float))
        self.forces.append(np.asarray(force, float))

    def __len__(self):
        return len(self.links)

    def extend(self, other):
        self.links.extend(other.links)
        self.points.extend(other.points)
        self.forces.extend(other.forces)


@dataclass
class Kinematics:
    rotations: np.ndarray  # (nb, 3, 3)
    origins: np.ndarray  # (nb, 3)
    link_com: np.ndarray  # (nb, 3)
    com: np.ndarray  # (3,)
    sensor_points: np.ndarray  # (2, 4, 3) world
    foot_centers: np.ndarray  # (2, 3) world sole centers
    feet_in_root: np.ndarray  # (2, 3) sole centers in the root frame


def _validate(spec):
    problems = []
    names = [lk.name for lk in spec.links]
    if len(set(names)) != len(names):
        problems.append("duplicate link names")
    for lk in spec.links:
        if not lk.mass > 0:
            problems.append(f"link {lk.name!r} has non-positive mass {lk.mass}")
        inertia = np.asarray(lk.inertia, float)
        if inertia.shape != (3, 3):
            problems.append(f"link {lk.name!r} inertia is not 3x3")
            continue
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            problems.append(f"link {lk.name!r} inertia is not symmetric")
        elif np.linalg.eigvalsh(inertia).min() <= 0:
            problems.append(f"link {lk.name!r} inertia is not positive definite")
    floating = [jt for jt in spec.joints if jt.type == "floating"]
    if len(floating) != 1:
        problems.append(f"expected exactly one floating joint, found {len(floating)}")
    elif floating[0].parent is not None:
        problems.append("floating joint must attach to the world (parent: null)")
    for jt in spec.joints:
        if jt.type not in ("floating", "revolute", "prismatic"):
            problems.append(f"joint {jt.name!r} has unknown type {jt.type!r}")
        if jt.type != "floating":
            if jt.parent not in names:
                problems.append(f"joint {jt.name!r} parent {jt.parent!r} is not a link")
            axis = np.asarray(jt.axis, float)
            if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
                problems.append(f"joint {jt.name!r} axis is not unit length")
            if jt.limit[0] > jt.limit[1]:
                problems.append(f"joint {jt.name!r} has inverted limits")
        if jt.child not in names:
            problems.append(f"joint {jt.name!r} child {jt.child!r} is not a link")
    children = [jt.child for jt in spec.joints]
    if len(set(children)) != len(children):
        problems.append("a link is the child of more than one joint")
    if set(children) != set(names):
        problems.append("every link must be the child of exactly one joint")
    if len(spec.actuated_joints) != 8:
        problems.append(f"expected 8 actuated joints, found {len(spec.actuated_joints)}")
    jnames = {jt.name: jt for jt in spec.joints}
    for name in spec.actuated_joints:
        if name not in jnames:
            problems.append(f"actuated joint {name!r} does not exist")
        elif jnames[name].type != "revolute":
            problems.append(f"actuated joint {name!r} is not revolute")
        elif not jnames[name].torque_limit > 0:
            problems.append(f"actuated joint {name!r} has non-positive torque limit")
    if len(spec.foot_sensor_offsets) != 2:
        problems.append("expected sensor layouts for exactly two feet")
    for foot, pts in spec.foot_sensor_offsets.items():
        if foot not in names:
            problems.append(f"sensor foot {foot!r} is not a link")
        if np.asarray(pts, float).shape != (4, 3):
            problems.append(f"foot {foot!r} must have exactly 4 sensor points")
    total = sum(lk.mass for lk in spec.links)
    if abs(total - spec.total_mass) > 1e-9:
        problems.append(f"declared total mass {spec.total_mass} != sum of links {total}")
    if not problems and len(spec.actuated_joints) == 8:
        # ankle pitch and roll axes must not pass through the same point
        for side in (0, 1):
            pitch = jnames[spec.actuated_joints[4 + side]]
            roll = jnames[spec.actuated_joints[6 + side]]
            if roll.parent == pitch.child:
                offset = np.asarray(roll.origin, float)
            elif pitch.parent == roll.child:
                offset = np.asarray(pitch.origin, float)
            else:
                problems.append("ankle pitch and roll joints must be adjacent")
                continue
            if np.linalg.norm(offset) < 1e-6:
                problems.append("ankle pitch and roll axes share one position")
    if problems:
        raise InvalidSpec("; ".join(problems))


class ModelInstance:
    """Validated, immutable, simulatable model.

    Built by :func:`build_model`. Bodies are stored in topological order
    with the floating root first.
    """

    def __init__(self, spec, springs=(), backend=None, rest_pose=None):
        _validate(spec)
        self.spec = spec
        by_parent = {}
        root = next(jt for jt in spec.joints if jt.type == "floating")
        for jt in spec.joints:
            if jt.type != "floating":
                by_parent.setdefault(jt.parent, []).append(jt)
        order = [root]
        k = 0
        while k < len(order):
            order.extend(by_parent.get(order[k].child, []))
            k += 1
        if len(order) != len(spec.joints):
            raise InvalidSpec("joint graph is not a tree rooted at the floating joint")
        self.joints = order
        self.body_names = [jt.child for jt in order]
        self.body_index = {n: i for i, n in enumerate(self.body_names)}
        self.joint_index = {jt.name: i for i, jt in enumerate(order)}
        nb = len(order)
        self.nb, self.nq, self.nv = nb, nb + 6, nb + 5
        links = [spec.link(n) for n in self.body_names]
        parent = [-1] + [self.body_index[jt.parent] for jt in order[1:]]
        jtype = [0] + [1 if jt.type == "revolute" else 2 for jt in order[1:]]
        self.act_body = np.array([self.joint_index[n] for n in spec.actuated_joints], dtype=np.int64)
        self.act_q = 6 + self.act_body
        self.act_v = 5 + self.act_body
        self.torque_limits = np.array([spec.joint(n).torque_limit for n in spec.actuated_joints])
        self.feet = [self.body_index[f] for f in spec.foot_sensor_offsets]
        sensor_body, sensor_pos = [], []
        for f, pts in spec.foot_sensor_offsets.items():
            for pt in pts:
                sensor_body.append(self.body_index[f])
                sensor_pos.append(pt)
        self.sensor_pos = np.asarray(sensor_pos, float).reshape(2, 4, 3)
        self.foot_center_local = self.sensor_pos.mean(axis=1)
        self.q_lo = np.array([jt.limit[0] for jt in order])
        self.q_hi = np.array([jt.limit[1] for jt in order])
        self.springs = list(springs)
        sp_a = [self.body_index[s.link_a] for s in self.springs]
        sp_b = [self.body_index[s.link_b] for s in self.springs]
        self.gravity = np.asarray(spec.gravity, float)
        self.total_mass = float(sum(lk.mass for lk in links))
        arrays = dict(
            parent=parent, jtype=jtype,
            joff=[jt.origin for jt in order], jaxis=[jt.axis for jt in order],
            mass=[lk.mass for lk in links], com=[lk.com for lk in links],
            inertia=[lk.inertia for lk in links],
            armature=[jt.armature for jt in order], damping=[jt.damping for jt in order],
            stiffness=[jt.stiffness for jt in order], q_rest=[jt.rest for jt in order],
            q_lo=np.nan_to_num(self.q_lo, posinf=1e300, neginf=-1e300),
            q_hi=np.nan_to_num(self.q_hi, posinf=1e300, neginf=-1e300),
            limit_k=spec.limit_stiffness, limit_d=spec.limit_damping,
            sensor_body=sensor_body, sensor_pos=sensor_pos,
            spring_a=sp_a, spring_b=sp_b,
            spring_pa=np.asarray([s.point_a for s in self.springs], float).reshape(-1, 3),
            spring_pb=np.asarray([s.point_b for s in self.springs], float).reshape(-1, 3),
            spring_k=[s.stiffness for s in self.springs],
            spring_c=[s.damping for s in self.springs],
            spring_l0=[0.0 if s.rest_length is None else s.rest_length for s in self.springs],
            act_body=self.act_body,
        )
        self._arrays = arrays
        self.kernel = _backend.make_kernel_model(arrays, backend=backend)
        self.backend = self.kernel.backend
        q0 = self.zero_q() if rest_pose is None else np.asarray(rest_pose, float)
        lengths = self._measure_springs(q0)
        if any(s.rest_length is None for s in self.springs):
            arrays["spring_l0"] = [
                lengths[k] if s.rest_length is None else s.rest_length
                for k, s in enumerate(self.springs)
            ]
            self.kernel = _backend.make_kernel_model(arrays, backend=backend)
        self.spring_rest = np.asarray(arrays["spring_l0"], float)
        self.rest_pose = q0

    def _measure_springs(self, q):
        if not self.springs:
            return np.zeros(0)
        xa, xb, _ = self.kernel.springs(q, np.zeros(self.nv))
        return np.linalg.norm(np.asarray(xb) - np.asarray(xa), axis=1)

    def with_backend(self, backend):
        return ModelInstance(self.spec, self.springs, backend=backend, rest_pose=self.rest_pose)

    # -- poses --------------------------------------------------------------

    def zero_q(self, height=None):
        """Upright pose, all joints at zero, soles on the ground plane."""
        q = np.zeros(self.nq)
        q[3] = 1.0
        for i, jt in enumerate(self.joints[1:], start=1):
            q[6 + i] = jt.rest
        R, p = self.kernel.fk(q)
        soles = [p[f] + R[f] @ c for f, c in zip(self.feet, self.foot_center_local)]
        q[2] = -min(s[2] for s in soles) if height is None else height
        return q

    def standing_state(self, contact_stiffness=None):
        """Zero pose resting on the ground, lowered by the static sink."""
        q = self.zero_q()
        if contact_stiffness:
            q[2] -= self.total_mass * abs(self.gravity[2]) / (8.0 * contact_stiffness)
        return GeneralizedState(q, np.zeros(self.nv), 0.0)

    def joint_positions(self, q):
        return np.asarray(q)[self.act_q]

    def joint_velocities(self, v):
        return np.asarray(v)[self.act_v]

    def with_actuated(self, q, angles):
        q = np.array(q, dtype=float)
        q[self.act_q] = angles
        return q

    # -- energy / momentum --------------------------------------------------

    def kinetic_energy(self, state):
        M = self.kernel.mass_matrix(state.q)
        return 0.5 * float(state.v @ M @ state.v)

    def potential_energy(self, state):
        kin = forward_kinematics(self, state.q)
        return -float(self.kernel.mass @ (kin.link_com @ self.gravity))

    def linear_momentum(self, state):
        return np.asarray(self.kernel.linear_momentum(state.q, state.v))


def build_model(spec, springs=(), backend=None, rest_pose=None):
    """Validate ``spec`` and return a :class:`ModelInstance`.

    Springs without an explicit rest length take the length they have at
    ``rest_pose`` (default: the zero standing pose). Raises
    :class:`InvalidSpec` naming every violated invariant.
    """
    return ModelInstance(spec, springs=springs, backend=backend, rest_pose=rest_pose)


def forward_kinematics(model, q):
    q = np.asarray(q, float)
    k = model.kernel
    R, p = k.fk(q)
    R, p = np.asarray(R), np.asarray(p)
    link_com = p + np.einsum("bij,bj->bi", R, np.asarray(k.com))
    com = (np.asarray(k.mass)[:, None] * link_com).sum(axis=0) / model.total_mass
    sensors = np.empty((2, 4, 3))
    centers = np.empty((2, 3))
    for n, f in enumerate(model.feet):
        sensors[n] = p[f] + model.sensor_pos[n] @ R[f].T
        centers[n] = p[f] + R[f] @ model.foot_center_local[n]
    feet_root = (centers - p[0]) @ R[0]
    return Kinematics(R, p, link_com, com, sensors, centers, feet_root)


def wrench_array(model, q, external_forces, kin=None):
    """Convert an :class:`ExternalForceSet` to world spatial wrenches."""
    w = np.zeros((model.nb, 6))
    if external_forces is None or len(external_forces) == 0:
        return w
    if kin is None:
        kin = forward_kinematics(model, q)
    for b, pt, f in zip(external_forces.links, external_forces.points, external_forces.forces):
        x = kin.origins[b] + kin.rotations[b] @ pt
        w[b, :3] += np.cross(x, f)
        w[b, 3:] += f
    return w


def _full_tau(model, joint_torques):
    tau = np.zeros(model.nv)
    if joint_torques is None:
        return tau
    jt = np.asarray(joint_torques, float)
    if jt.shape == (model.nv,):
        if np.any(jt[:6] != 0.0):
            raise ValueError("generalized torques on the unactuated root must be zero")
        return jt.copy()
    tau[model.act_v] = jt
    return tau


def forward_dynamics(model, state, joint_torques=None, external_forces=None, lock_root=False,
                     gravity=None):
    """Generalized accelerations solving ``M a = tau + J^T F - c - g``.

    ``joint_torques`` is either the 8 actuated torques or a full ``nv``
    vector with zero root entries.
    """
    g = model.gravity if gravity is None else np.asarray(gravity, float)
    w = wrench_array(model, state.q, external_forces)
    try:
        return np.asarray(model.kernel.forward_dynamics(
            state.q, state.v, _full_tau(model, joint_torques), w, g, bool(lock_root)))
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise SingularMass(str(exc)) from exc


def inverse_dynamics(model, state, qdd, external_forces=None, gravity=None):
    g = model.gravity if gravity is None else np.asarray(gravity, float)
    w = wrench_array(model, state.q, external_forces)
    return np.asarray(model.kernel.rnea(state.q, state.v, np.asarray(qdd, float), w, g))


def step(model, state, joint_torques=None, external_forces=None, dt=SIM_DT, lock_root=False,
         gravity=None, q_bound=1e3, v_bound=1e3):
    """Semi-implicit Euler step: velocities, then positions.

    The root quaternion is renormalized and the root linear velocity is
    corrected so that the discrete momentum balance
    ``P' = P + dt * (F_ext + m g)`` holds exactly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = model.gravity if gravity is None else np.asarray(gravity, float)
    nxt = state.copy()
    w = wrench_array(model, state.q, external_forces)
    try:
        status = model.kernel.step(nxt.q, nxt.v, _full_tau(model, joint_torques), w, g, dt,
                                   bool(lock_root))
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise SingularMass(str(exc)) from exc
    nxt.t = state.t + dt
    if status != 0 or np.any(np.abs(nxt.q) > q_bound) or np.any(np.abs(nxt.v) > v_bound):
        raise NumericalDivergence(f"state left bounds at t={nxt.t:.4f}s")
    return nxt
