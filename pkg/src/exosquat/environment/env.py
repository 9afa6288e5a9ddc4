"""Squatting environment: one exoskeleton episode at the 30 Hz control rate."""

from dataclasses import dataclass, field
import math

import numpy as np

from exosquat.actuation import ActionFilter, PDConfig
from exosquat.contact import ContactParams, compute_cop, sensor_set_from_kernel
from exosquat.default_model import default_exo_spec
from exosquat.environment.human import HumanLoadModel, align_human, build_coupled_model
from exosquat.environment.observation import ObservationBuilder, cop_channel, observation_dim
from exosquat.environment.perturbation import SITES, PerturbationSchedule, PerturbationSpec
from exosquat.environment.randomization import DynamicsParams, resolve, sample_params
from exosquat.environment.rewards import RewardBreakdown, RewardConfig, compute_reward
from exosquat.errors import EpisodeFinished
from exosquat.multibody import build_model, load_model_spec
from exosquat.reference import generate_squat

MODES = ("clean", "perturbed", "human")


@dataclass
class EnvConfig:
    mode: str = "clean"
    randomization: object = "train"  # preset name, RandomizationSpec, dict or None
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    human: HumanLoadModel = field(default_factory=HumanLoadModel)
    reward: RewardConfig = field(default_factory=RewardConfig)
    pd: PDConfig = field(default_factory=PDConfig)
    contact: ContactParams = field(default_factory=ContactParams)
    squat_depth: float = 0.25
    cycle: float = 4.0
    horizon: float | None = 8.0  # None: never truncate
    fall_fraction: float = 0.6
    reset_noise: float = 0.02
    substeps: int = 30
    sim_dt: float = 1.0 / 900.0
    action_scale: float = 1.0
    model_path: str | None = None
    q_bound: float = 1e3
    v_bound: float = 1e3
    init_phase: str = "start"  # "random": start at a random reference phase (training aid)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.init_phase not in ("start", "random"):
            raise ValueError("init_phase must be 'start' or 'random'")


def termination_check(root_height, t, standing_height, horizon=8.0, fall_fraction=0.6,
                      diverged=False):
    """Return ``(done, reason)``; reason is ``divergence``, ``fall``, ``horizon`` or ``""``."""
    if diverged or not math.isfinite(root_height):
        return True, "divergence"
    if root_height < fall_fraction * standing_height:
        return True, "fall"
    if horizon is not None and t >= horizon - 1e-9:
        return True, "horizon"
    return False, ""


class SquatEnv:
    """Reset/step environment around the exoskeleton simulation.

    Actions are joint-target offsets (rad) from the standing pose. Each step
    low-pass filters the target, ramps the PD set point over 30 physics
    substeps and scores the resulting state against the reference motion.
    """

    def __init__(self, cfg=None, seed=0, backend=None):
        self.cfg = cfg or EnvConfig()
        self.backend = backend
        self.exo_spec = load_model_spec(self.cfg.model_path) if self.cfg.model_path else default_exo_spec()
        self.nominal = build_model(self.exo_spec, backend=backend)
        self.reference = generate_squat(self.cfg.squat_depth, self.cfg.cycle, model=self.nominal)
        self.dt = self.cfg.substeps * self.cfg.sim_dt
        self.rand = resolve(self.cfg.randomization)
        self.n_act = 8
        self.obs_dim = observation_dim(self.nominal.nq, self.nominal.nv, self.n_act)
        self.act_dim = self.n_act
        self.stand_targets = self.reference.sample(0.0).joints.copy()
        self.standing_height = float(self.reference.sample(0.0).root_pos[2])
        self.lo = self.nominal.q_lo[self.nominal.act_body]
        self.hi = self.nominal.q_hi[self.nominal.act_body]
        self._seed_seq = np.random.SeedSequence(seed)
        self._model_cache = {}
        self.model = None
        self.done = True

    # -- models ---------------------------------------------------------------

    def _build(self, params):
        key = (params.mass, params.inertia, params.com, self.cfg.mode == "human")
        model = self._model_cache.get(key)
        if model is not None:
            return model
        spec = self.exo_spec
        if (params.mass, params.inertia, params.com) != (1.0, 1.0, 1.0):
            spec = spec.scaled(mass=params.mass, inertia=params.inertia, com=params.com)
        if self.cfg.mode == "human":
            model = build_coupled_model(spec, self._stand_pose, self.cfg.human, backend=self.backend)
        else:
            model = build_model(spec, backend=self.backend)
        if len(self._model_cache) > 8:
            self._model_cache.clear()
        self._model_cache[key] = model
        return model

    def _stand_pose(self, model, angles=None, t=0.0):
        """Reference pose at ``t`` on ``model`` with soles resting at the static sink."""
        q = np.zeros(model.nq)
        ref_q = self.reference.pose(t)
        q[0] = ref_q[0]
        q[3:7] = ref_q[3:7]
        q[model.act_q] = self.stand_targets if angles is None else angles
        if "h_slide" in model.joint_index:
            q = align_human(model, q)
        R, p = model.kernel.fk(q)
        R, p = np.asarray(R), np.asarray(p)
        low = min(float((p[f] + model.sensor_pos[n] @ R[f].T)[:, 2].min()) for n, f in enumerate(model.feet))
        sink = model.total_mass * abs(model.gravity[2]) / (8.0 * self.cfg.contact.stiffness)
        q[2] = -low - sink
        return q

    def _exo_indices(self, model):
        names = [lk.name for lk in self.exo_spec.links]
        bodies = [model.body_index[n] for n in self.nominal.body_names]
        q_idx = list(range(7)) + [6 + b for b in bodies[1:]]
        v_idx = list(range(6)) + [5 + b for b in bodies[1:]]
        exo_bodies = np.array([model.body_index[n] for n in names])
        return np.array(q_idx), np.array(v_idx), exo_bodies

    # -- episode --------------------------------------------------------------

    def reset(self, seed=None):
        """Start an episode; returns the first observation.

        With ``seed`` the episode is a pure function of it; otherwise the
        environment's own seed sequence advances.
        """
        ss = np.random.SeedSequence(seed) if seed is not None else self._seed_seq.spawn(1)[0]
        r_params, r_noise, r_pert = (np.random.default_rng(s) for s in ss.spawn(3))
        self.params = sample_params(self.rand, r_params, self.n_act)
        self.model = m = self._build(self.params)
        self.q_idx, self.v_idx, self.exo_bodies = self._exo_indices(m)
        self.exo_mass = np.asarray(m.kernel.mass)[self.exo_bodies]
        noise = r_noise.uniform(-self.cfg.reset_noise, self.cfg.reset_noise, self.n_act)
        tick0 = 0
        if self.cfg.init_phase == "random":
            tick0 = int(r_noise.integers(0, int(round(self.cfg.cycle / self.dt))))
        t0 = tick0 * self.dt
        angles = self.reference.sample(t0).joints + noise
        self.q = self._stand_pose(m, angles, t0)
        self.v = np.zeros(m.nv)
        if tick0:
            ref_v = self.reference.velocity(t0)
            self.v[self.v_idx] = ref_v
        self.tick = self.tick0 = tick0
        self.t = t0
        self.done = False
        self.reason = ""
        self.mu = self.cfg.contact.friction * self.params.friction
        pd = self.cfg.pd
        self.filter = ActionFilter(self.n_act, pd.cutoff, pd.action_rate, pd.order, initial=angles)
        self.target = angles.copy()
        self.schedule = (PerturbationSchedule(self.cfg.perturbation, r_pert)
                         if self.cfg.mode == "perturbed" else None)
        self.pert_body = np.array([m.body_index[link] for _, link, _ in SITES], dtype=np.int64)
        self.pert_point = np.array([pt for _, _, pt in SITES], dtype=float)
        self.pert_force = np.zeros((len(SITES), 3))
        self.tau = np.zeros(self.n_act)
        self.peak = np.zeros(self.n_act)
        self.obs_builder = ObservationBuilder(self.nominal.nq, self.nominal.nv, self.n_act, self.dt)
        self._sense()
        self.obs_builder.reset(t0, self.q[self.q_idx], self.v[self.v_idx], self.cop_obs,
                               angles - self.stand_targets if tick0 else None)
        return self._observe()

    def _sense(self):
        m = self.model
        pos, force = m.kernel.contact(self.q, self.v, self.mu, self.cfg.contact.stiffness,
                                      self.cfg.contact.damping, self.cfg.contact.slip_velocity)
        self.forces = sensor_set_from_kernel(m, self.q, pos, force)
        self.cop = compute_cop(self.forces, self.cfg.contact.threshold)
        self.cop_obs = cop_channel(self.cop.cop, self.cop.valid)

    def _observe(self):
        fut = self.reference.future_targets(self.t)
        return self.obs_builder.build(self.tick, self.params.latency, fut)

    def exo_com(self, q=None):
        k = self.model.kernel
        R, p = k.fk(self.q if q is None else q)
        R, p = np.asarray(R), np.asarray(p)
        b = self.exo_bodies
        c = p[b] + np.einsum("bij,bj->bi", R[b], np.asarray(k.com)[b])
        return self.exo_mass @ c / self.exo_mass.sum(), R, p

    def step(self, action):
        """Advance one control tick; returns ``(obs, reward, done, info)``."""
        if self.done:
            raise EpisodeFinished("step() called on a finished episode; call reset()")
        cfg, m = self.cfg, self.model
        action = np.asarray(action, dtype=float).reshape(self.n_act)
        raw = np.clip(self.stand_targets + cfg.action_scale * action, self.lo, self.hi)
        prev = self.target
        self.target = self.filter(raw)
        f0 = self.pert_force
        if self.schedule is not None:
            f1 = self.schedule((self.tick + 1) * self.dt)
        else:
            f1 = f0
        pd = cfg.pd
        status = m.kernel.simulate(
            self.q, self.v, prev, self.target, pd.kp, pd.kv, pd.torque_limit, self.params.strength,
            self.pert_body, self.pert_point, f0, f1, m.gravity, self.mu,
            cfg.contact.stiffness, cfg.contact.damping, cfg.contact.slip_velocity,
            cfg.sim_dt, cfg.substeps, False, cfg.q_bound, cfg.v_bound, self.tau, self.peak)
        self.pert_force = f1
        self.tick += 1
        self.t = self.tick * self.dt
        diverged = status != 0 or not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v)))
        if diverged:
            self.done, self.reason = True, "divergence"
            reward = RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            obs = self.obs_builder.build(self.tick - 1, self.params.latency,
                                         self.reference.future_targets(self.t))
            return obs, reward, True, self._info(reward)
        self._sense()
        target = self.reference.sample(self.t)
        com, R, p = self.exo_com()
        root = p[0]
        feet = (self.forces.foot_center - root) @ R[0]
        q_act = self.q[m.act_q]
        v_act = self.v[m.act_v]
        reward = compute_reward(q_act, v_act, feet, root, self.q[3:7], com, self.cop.cop,
                                self.cop.valid, self.tau, target, cfg.reward)
        self.obs_builder.record(self.t, self.q[self.q_idx], self.v[self.v_idx], self.cop_obs, action)
        self.done, self.reason = termination_check(root[2], (self.tick - self.tick0) * self.dt,
                                                   self.standing_height,
                                                   cfg.horizon, cfg.fall_fraction)
        return self._observe(), reward, self.done, self._info(reward)

    def _info(self, reward):
        info = {
            "t": self.t,
            "reason": self.reason,
            "torque": self.tau.copy(),
            "peak_torque": self.peak.copy(),
            "target": self.target.copy(),
            "perturbation": self.pert_force.copy(),
        }
        if not self.reason == "divergence":
            info["cop"] = self.cop.cop.copy()
            info["cop_valid"] = self.cop.valid.copy()
            info["cop_inside"] = self.cop.inside.copy()
            info["normal_force"] = self.cop.normal_force.copy()
        if self.model.springs:
            _, _, f = self.model.kernel.springs(self.q, self.v)
            info["spring_force"] = np.linalg.norm(np.asarray(f), axis=1)
        return info

    @property
    def state(self):
        from exosquat.multibody import GeneralizedState
        return GeneralizedState(self.q.copy(), self.v.copy(), self.t)
