"""Seven-term imitation and balance reward."""

from dataclasses import asdict, dataclass, field

import numpy as np

from exosquat.contact import REGION_HALF_X, REGION_HALF_Y

TERMS = ("pose", "velocity", "end_effector", "root", "com", "cop", "torque")


@dataclass
class RewardConfig:
    """Weights and sensitivities of the reward terms.

    The weights follow the published values. The sensitivities are not
    published; the defaults put each term roughly in [0.3, 0.9] for typical
    early-training errors.
    """

    w_pose: float = 0.8
    w_velocity: float = 0.1
    w_end_effector: float = 0.7
    w_root: float = 0.7
    w_com: float = 0.4
    w_cop: float = 0.8
    w_torque: float = 0.1
    sigma_pose: float = 2.0
    sigma_velocity: float = 0.1
    sigma_end_effector: float = 40.0
    sigma_root_pos: float = 5.0
    sigma_root_rot: float = 5.0
    sigma_com: float = 10.0
    sigma_cop: float = 500.0
    sigma_torque: float = 5e-5
    region_half_x: float = REGION_HALF_X
    region_half_y: float = REGION_HALF_Y

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k.startswith("w_") and v < 0:
                raise ValueError(f"{k} must be >= 0")
            if k.startswith("sigma_") and not v > 0:
                raise ValueError(f"{k} must be > 0")

    def weights(self):
        return np.array([getattr(self, "w_" + t) for t in TERMS])

    @property
    def max_total(self):
        return float(self.weights().sum())


@dataclass
class RewardBreakdown:
    pose: float
    velocity: float
    end_effector: float
    root: float
    com: float
    cop: float
    torque: float
    total: float
    cop_feet: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def terms(self):
        return np.array([getattr(self, t) for t in TERMS])

    def as_dict(self):
        d = {t: getattr(self, t) for t in TERMS}
        d["cop_l"], d["cop_r"] = (float(x) for x in self.cop_feet)
        d["total"] = self.total
        return d


def quat_distance_sq(a, b):
    """Squared distance between unit quaternions, sign-invariant."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(min(np.sum((a - b) ** 2), np.sum((a + b) ** 2)))


def cop_term(cop, valid, cfg):
    """Per-foot CoP reward and the combined value over loaded feet.

    A foot scores ``exp(-sigma_cop * D^2)`` when its CoP lies in the stable
    region and 0 otherwise; the combined value averages the feet with valid
    contact and is 0 when neither foot is loaded.
    """
    cop = np.asarray(cop, float).reshape(-1, 2)
    valid = np.asarray(valid, bool).reshape(-1)
    d2 = cop[:, 0] ** 2 + cop[:, 1] ** 2
    inside = (np.abs(cop[:, 0]) <= cfg.region_half_x) & (np.abs(cop[:, 1]) <= cfg.region_half_y)
    per_foot = np.where(inside & valid, np.exp(-cfg.sigma_cop * d2), 0.0)
    combined = float(per_foot[valid].mean()) if valid.any() else 0.0
    return per_foot, combined


def compute_reward(joints, joint_vel, feet, root_pos, root_quat, com, cop, cop_valid, torques,
                   target, cfg=None):
    """Reward of one control step against a reference sample ``target``.

    Args:
        joints, joint_vel: actuated joint angles and rates.
        feet: ``(2, 3)`` foot centers relative to the root, root frame.
        root_pos, root_quat: world root position and wxyz orientation.
        com: world CoM of the exoskeleton; only its height is tracked.
        cop, cop_valid: ``(2, 2)`` foot-frame CoPs and contact flags.
        torques: applied actuator torques.
        target: a :class:`~exosquat.reference.ReferenceSample`.
        cfg: :class:`RewardConfig`.
    """
    cfg = cfg or RewardConfig()
    ep = np.sum((target.joints - joints) ** 2)
    ev = np.sum((target.joint_vel - joint_vel) ** 2)
    ee = np.sum((target.feet - feet) ** 2)
    er = np.sum((target.root_pos - root_pos) ** 2)
    eq = quat_distance_sq(target.root_quat, root_quat)
    ec = (target.com[2] - np.asarray(com, float)[2]) ** 2
    et = np.sum(np.asarray(torques, float) ** 2)
    per_foot, r_cop = cop_term(cop, cop_valid, cfg)
    r = [
        np.exp(-cfg.sigma_pose * ep),
        np.exp(-cfg.sigma_velocity * ev),
        np.exp(-cfg.sigma_end_effector * ee),
        np.exp(-cfg.sigma_root_pos * er - cfg.sigma_root_rot * eq),
        np.exp(-cfg.sigma_com * ec),
        r_cop,
        np.exp(-cfg.sigma_torque * et),
    ]
    r = [float(x) for x in r]
    total = float(np.dot(cfg.weights(), r))
    return RewardBreakdown(*r, total=total, cop_feet=per_foot)
