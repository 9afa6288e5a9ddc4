"""Passive human load strapped into the exoskeleton.

The human is a lumped rigid chain: pelvis with torso, thighs and shanks.
The human feet are rigidly merged into the exoskeleton feet, and each human
shank end is pinned to its exoskeleton ankle by a stiff point spring. The
human pelvis slides vertically on a prismatic joint inside the exoskeleton
waist, held by the pelvis spring k_h; femur and tibia straps are rings of
four radial springs at 90 degree spacing.
"""

import copy
from dataclasses import dataclass
import math

import numpy as np

from exosquat.multibody import ExternalForceSet, JointSpec, LinkSpec, SpringSpec, build_model

SIDES = ("l", "r")


@dataclass
class HumanLoadModel:
    total_mass: float = 61.0
    pelvis_mass: float = 37.0  # pelvis, trunk, arms and head
    thigh_mass: float = 7.5
    shank_mass: float = 3.5
    foot_mass: float = 1.0
    k_pelvis: float = 10000.0
    c_pelvis: float = 600.0
    k_femur: float = 2000.0
    k_tibia: float = 2000.0
    c_strap: float = 40.0
    strap_exo_radius: float = 0.08
    strap_human_radius: float = 0.05
    k_ankle: float = 2.0e5
    c_ankle: float = 500.0
    joint_stiffness: float = 10.0
    joint_damping: float = 2.0
    torso_com_height: float = 0.25

    def __post_init__(self):
        parts = self.pelvis_mass + 2 * (self.thigh_mass + self.shank_mass + self.foot_mass)
        if abs(parts - self.total_mass) > 1e-9:
            raise ValueError(f"segment masses sum to {parts}, not {self.total_mass}")


def _box(m, a, b, c):
    return [[m * (b * b + c * c) / 12.0, 0.0, 0.0],
            [0.0, m * (a * a + c * c) / 12.0, 0.0],
            [0.0, 0.0, m * (a * a + b * b) / 12.0]]


def couple_human(exo_spec, human=None, pose=None):
    """Extend ``exo_spec`` with the human chain and return ``(spec, springs)``.

    ``pose`` maps the exoskeleton's actuated joint names to angles; the
    human hip and knee rest angles follow it so that the passive joint
    springs are relaxed at the reset pose.
    """
    human = human or HumanLoadModel()
    pose = pose or {}
    spec = copy.deepcopy(exo_spec)
    thigh_len = np.linalg.norm(spec.joint("knee_flex_l").origin)
    shank_len = np.linalg.norm(spec.joint("ankle_pitch_l").origin)
    spec.links.append(LinkSpec("h_pelvis", human.pelvis_mass,
                               _box(human.pelvis_mass, 0.25, 0.35, 0.6),
                               [0.0, 0.0, human.torso_com_height]))
    spec.joints.append(JointSpec("h_slide", "prismatic", "pelvis", "h_pelvis", axis=[0.0, 0.0, 1.0],
                                 torque_limit=0.0))
    for side in SIDES:
        hip = spec.joint(f"hip_flex_{side}")
        knee = spec.joint(f"knee_flex_{side}")
        spec.links.append(LinkSpec(f"h_thigh_{side}", human.thigh_mass,
                                   _box(human.thigh_mass, 0.14, 0.14, thigh_len),
                                   [0.0, 0.0, -0.45 * thigh_len]))
        spec.links.append(LinkSpec(f"h_shank_{side}", human.shank_mass,
                                   _box(human.shank_mass, 0.10, 0.10, shank_len),
                                   [0.0, 0.0, -0.45 * shank_len]))
        spec.joints.append(JointSpec(f"h_hip_{side}", "revolute", "h_pelvis", f"h_thigh_{side}",
                                     axis=list(hip.axis), origin=list(hip.origin), torque_limit=0.0,
                                     damping=human.joint_damping, stiffness=human.joint_stiffness,
                                     rest=pose.get(hip.name, 0.0)))
        spec.joints.append(JointSpec(f"h_knee_{side}", "revolute", f"h_thigh_{side}", f"h_shank_{side}",
                                     axis=list(knee.axis), origin=list(knee.origin), torque_limit=0.0,
                                     damping=human.joint_damping, stiffness=human.joint_stiffness,
                                     rest=pose.get(knee.name, 0.0)))
        foot = spec.link(f"foot_{side}")
        # human foot merged into the exoskeleton foot
        m0, m1 = foot.mass, human.foot_mass
        com0 = np.asarray(foot.com, float)
        foot.com = ((m0 * com0 + m1 * np.array([0.03, 0.0, -0.02])) / (m0 + m1)).tolist()
        foot.inertia = (np.asarray(foot.inertia, float)
                        + np.asarray(_box(m1, 0.24, 0.09, 0.06))).tolist()
        foot.mass = m0 + m1
    spec.total_mass = sum(lk.mass for lk in spec.links)
    return spec, human_springs(spec, human, thigh_len, shank_len)


def human_springs(spec, human, thigh_len, shank_len):
    springs = [SpringSpec("pelvis", "pelvis", spec.link("pelvis").frames["hip_strap"], "h_pelvis",
                          [0.0, 0.0, 0.0], human.k_pelvis, human.c_pelvis)]
    for side in SIDES:
        for seg, exo, hum, k in (("femur", "thigh", "h_thigh", human.k_femur),
                                 ("tibia", "shank", "h_shank", human.k_tibia)):
            strap = np.asarray(spec.link(f"{exo}_{side}").frames["strap"], float)
            for n in range(4):
                a = n * math.pi / 2.0
                u = np.array([math.cos(a), math.sin(a), 0.0])
                springs.append(SpringSpec(f"{seg}_{side}_{n}", f"{exo}_{side}",
                                          (strap + human.strap_exo_radius * u).tolist(),
                                          f"{hum}_{side}",
                                          (strap + human.strap_human_radius * u).tolist(),
                                          k, human.c_strap))
        ankle = spec.link(f"foot_{side}").frames["ankle"]
        springs.append(SpringSpec(f"ankle_{side}", f"foot_{side}", list(ankle), f"h_shank_{side}",
                                  [0.0, 0.0, -shank_len], human.k_ankle, human.c_ankle,
                                  rest_length=0.0))
    return springs


def build_coupled_model(exo_spec, rest_pose_fn, human=None, backend=None):
    """Coupled model whose spring rest lengths are measured at the reset pose.

    ``rest_pose_fn(model)`` returns the full ``q`` of the reset pose for the
    coupled model, with the human joints aligned to the exoskeleton.
    """
    names = exo_spec.actuated_joints
    probe = build_model(couple_human(exo_spec, human)[0], backend=backend)
    q0 = rest_pose_fn(probe)
    pose = {n: float(q0[probe.act_q[j]]) for j, n in enumerate(names)}
    spec, springs = couple_human(exo_spec, human, pose)
    model = build_model(spec, springs=springs, backend=backend)
    q0 = rest_pose_fn(model)
    return build_model(spec, springs=springs, backend=backend, rest_pose=q0)


def align_human(model, q):
    """Copy exoskeleton hip/knee angles onto the human chain in ``q``."""
    q = np.array(q, dtype=float)
    for side in SIDES:
        for exo, hum in ((f"hip_flex_{side}", f"h_hip_{side}"), (f"knee_flex_{side}", f"h_knee_{side}")):
            q[6 + model.joint_index[hum]] = q[6 + model.joint_index[exo]]
    q[6 + model.joint_index["h_slide"]] = 0.0
    return q


def human_spring_forces(model, state):
    """Spring forces on both chains as one :class:`ExternalForceSet`.

    Each spring contributes the force on its second link at that link's
    anchor and the opposite force on its first link, so the set sums to
    zero.
    """
    xa, xb, f = model.kernel.springs(state.q, state.v)
    R, p = model.kernel.fk(state.q)
    R, p = np.asarray(R), np.asarray(p)
    out = ExternalForceSet()
    for s, spr in enumerate(model.springs):
        a, b = model.body_index[spr.link_a], model.body_index[spr.link_b]
        out.add(b, R[b].T @ (np.asarray(xb[s]) - p[b]), np.asarray(f[s]))
        out.add(a, R[a].T @ (np.asarray(xa[s]) - p[a]), -np.asarray(f[s]))
    return out
