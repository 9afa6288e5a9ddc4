"""Representative default description of the 14-DoF exoskeleton.

Segment masses sum to the prototype's 20.4 kg; the individual masses,
inertias, lengths and joint ranges are plausible stand-ins, not measured
values. Frames at zero joint angles are all aligned with the world: x
forward, y left, z up.
"""

from exosquat.multibody import JointSpec, LinkSpec, ModelSpec

THIGH_LENGTH = 0.42
SHANK_LENGTH = 0.40
ANKLE_PITCH_TO_ROLL = 0.04
ROLL_TO_SOLE = 0.04
HIP_HALF_WIDTH = 0.11
FOOT_CENTER_X = -0.005
SENSOR_HALF_LENGTH = 0.09
SENSOR_HALF_WIDTH = 0.05
ACTUATOR_ARMATURE = 0.1
TORQUE_LIMIT = 100.0


def _box(m, a, b, c):
    return [[m * (b * b + c * c) / 12.0, 0.0, 0.0],
            [0.0, m * (a * a + c * c) / 12.0, 0.0],
            [0.0, 0.0, m * (a * a + b * b) / 12.0]]


def sensor_layout():
    x0, hx, hy, z = FOOT_CENTER_X, SENSOR_HALF_LENGTH, SENSOR_HALF_WIDTH, -ROLL_TO_SOLE
    return [[x0 + hx, hy, z], [x0 + hx, -hy, z], [x0 - hx, hy, z], [x0 - hx, -hy, z]]


def standing_root_height():
    return THIGH_LENGTH + SHANK_LENGTH + ANKLE_PITCH_TO_ROLL + ROLL_TO_SOLE


def default_exo_spec():
    """The default 20.4 kg exoskeleton: 6-DoF root plus 8 actuated joints."""
    links = [
        # waist structure with the 2.2 kg battery on its back
        LinkSpec("pelvis", 6.2, _box(6.2, 0.20, 0.35, 0.20), [-0.025, 0.0, 0.06],
                 frames={"hip_strap": [0.0, 0.0, -0.10]}),
    ]
    joints = [JointSpec("root", "floating", None, "pelvis", limit=[-1e300, 1e300])]
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        links += [
            LinkSpec(f"thigh_{side}", 2.8, _box(2.8, 0.08, 0.08, THIGH_LENGTH), [0.0, 0.0, -0.18],
                     frames={"strap": [0.0, 0.0, -0.20]}),
            LinkSpec(f"shank_{side}", 2.4, _box(2.4, 0.07, 0.07, SHANK_LENGTH), [0.0, 0.0, -0.17],
                     frames={"strap": [0.0, 0.0, -0.20]}),
            LinkSpec(f"ankle_{side}", 0.5, _box(0.5, 0.06, 0.06, 0.05), [0.0, 0.0, -0.02]),
            LinkSpec(f"foot_{side}", 1.4, _box(1.4, 0.24, 0.12, 0.04), [0.02, 0.0, -0.03],
                     frames={"ankle": [0.0, 0.0, ANKLE_PITCH_TO_ROLL],
                             "sole_center": [FOOT_CENTER_X, 0.0, -ROLL_TO_SOLE]}),
        ]
        joints += [
            JointSpec(f"hip_flex_{side}", "revolute", "pelvis", f"thigh_{side}",
                      axis=[0.0, -1.0, 0.0], origin=[0.0, sgn * HIP_HALF_WIDTH, 0.0],
                      limit=[-0.5, 2.0], torque_limit=TORQUE_LIMIT, armature=ACTUATOR_ARMATURE),
            JointSpec(f"knee_flex_{side}", "revolute", f"thigh_{side}", f"shank_{side}",
                      axis=[0.0, 1.0, 0.0], origin=[0.0, 0.0, -THIGH_LENGTH],
                      limit=[-0.05, 2.4], torque_limit=TORQUE_LIMIT, armature=ACTUATOR_ARMATURE),
            JointSpec(f"ankle_pitch_{side}", "revolute", f"shank_{side}", f"ankle_{side}",
                      axis=[0.0, -1.0, 0.0], origin=[0.0, 0.0, -SHANK_LENGTH],
                      limit=[-0.6, 0.8], torque_limit=TORQUE_LIMIT, armature=ACTUATOR_ARMATURE),
            JointSpec(f"ankle_roll_{side}", "revolute", f"ankle_{side}", f"foot_{side}",
                      axis=[1.0, 0.0, 0.0], origin=[0.0, 0.0, -ANKLE_PITCH_TO_ROLL],
                      limit=[-0.35, 0.35], torque_limit=TORQUE_LIMIT, armature=ACTUATOR_ARMATURE),
        ]
    actuated = ["hip_flex_l", "hip_flex_r", "knee_flex_l", "knee_flex_r",
                "ankle_pitch_l", "ankle_pitch_r", "ankle_roll_l", "ankle_roll_r"]
    sensors = {"foot_l": sensor_layout(), "foot_r": sensor_layout()}
    total = sum(lk.mass for lk in links)
    return ModelSpec("exo14", links, joints, actuated, sensors, total)
