"""Train, evaluate and sweep runs driven by a :class:`RunConfig`."""

import csv
import json
import math
import multiprocessing as mp
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from exosquat.environment import SquatEnv
from exosquat.environment.perturbation import SITES
from exosquat.environment.rewards import TERMS
from exosquat.harness.metrics import FEET, JOINTS, Telemetry, metrics
from exosquat.neuralnet import load_checkpoint
from exosquat.ppo import train


class PolicyController:
    """Deterministic policy: the Gaussian mean on normalized observations."""

    def __init__(self, policy, norm=None):
        self.policy = policy
        self.norm = norm

    @classmethod
    def from_checkpoint(cls, path):
        policy, _, norm, _ = load_checkpoint(path)
        return cls(policy, norm)

    def __call__(self, env, obs):
        x = self.norm(obs) if self.norm is not None else obs
        return self.policy.net.forward(x)


class ReferenceController:
    """Plays the reference joint angles of the next tick as PD targets."""

    def __call__(self, env, obs):
        return env.reference.sample(env.t + env.dt).joints - env.stand_targets


def make_controller(run, checkpoint=None):
    if run.controller == "reference" or checkpoint is None:
        return ReferenceController()
    return PolicyController.from_checkpoint(checkpoint)


def rollout(env, controller, steps, seed, tel=None):
    """Play ``steps`` control ticks from ``env.reset(seed)``; stop early on a fall.

    Returns ``(telemetry, rewards, reason)``.
    """
    tel = tel if tel is not None else Telemetry(dt=env.dt, cycle=env.cfg.cycle)
    obs = env.reset(seed=seed)
    rewards = []
    reason = ""
    cyc = env.cfg.cycle
    for k in range(steps):
        action = np.asarray(controller(env, obs), float)
        obs, rew, done, info = env.step(action)
        rewards.append(rew.total)
        ref = env.reference.sample(env.t)
        row = {"step": k + 1, "t": env.t, "phase": ref.phase,
               "cycle": math.floor((env.t - 0.5 * env.dt) / cyc),
               "root_z": float(env.q[2])}
        q = env.q[env.model.act_q]
        for j, n in enumerate(JOINTS):
            row[f"q_{n}"] = q[j]
            row[f"q_ref_{n}"] = ref.joints[j]
            row[f"tau_{n}"] = info["torque"][j]
            row[f"action_{n}"] = action[j]
            row[f"target_{n}"] = info["target"][j]
        if "cop" in info:
            for i, f in enumerate(FEET):
                row[f"cop_{f}_x"], row[f"cop_{f}_y"] = info["cop"][i]
                row[f"cop_{f}_valid"] = float(info["cop_valid"][i])
                row[f"cop_{f}_inside"] = float(info["cop_inside"][i])
                row[f"fn_{f}"] = info["normal_force"][i]
            com = env.exo_com()[0]
            row["com_x"], row["com_y"], row["com_z"] = com
        for t, v in zip(TERMS, rew.terms()):
            row[f"r_{t}"] = v
        row["r_total"] = rew.total
        for (name, _, _), f in zip(SITES, info["perturbation"]):
            row[f"f_{name}_x"], row[f"f_{name}_y"], row[f"f_{name}_z"] = f
        tel.append(row)
        if done:
            reason = info["reason"]
            break
    tel.meta["falls"] = int(reason in ("fall", "divergence"))
    tel.meta["reason"] = reason
    return tel, rewards, reason


def evaluate(run, controller, stress=1.0, seed=None, backend=None):
    """One ``run.cycles``-cycle episode; returns ``(telemetry, report)``."""
    cfg = run.env_config("eval", stress=stress)
    env = SquatEnv(cfg, seed=run.seed if seed is None else seed, backend=backend)
    steps = run.cycles * int(round(cfg.cycle / env.dt))
    tel, _, _ = rollout(env, controller, steps, [run.seed if seed is None else seed, 0])
    report = metrics(tel)
    return tel, report


def _sweep_one(args):
    run, controller, seed, ids = args
    cfg = run.env_config("sweep")
    env = SquatEnv(cfg, seed=seed)
    steps = int(round(cfg.cycle / env.dt))
    rows = []
    for k in ids:
        _, rewards, reason = rollout(env, controller, steps, [seed, 1, k])
        p = env.params
        row = {"env_id": k, "friction": env.mu, "friction_scale": p.friction, "mass": p.mass,
               "inertia": p.inertia, "com": p.com, "latency": p.latency}
        row.update({f"strength_{j}": float(s) for j, s in enumerate(p.strength)})
        # a fall forfeits the rest of the cycle: reward 0 for the missing steps
        row.update(mean_cycle_reward=float(np.sum(rewards) / steps), steps=len(rewards),
                   fell=int(reason in ("fall", "divergence")))
        rows.append(row)
    return rows


SWEEP_FIELDS = (["env_id", "friction", "friction_scale", "mass", "inertia", "com", "latency"]
                + [f"strength_{j}" for j in range(8)] + ["mean_cycle_reward", "steps", "fell"])


def sweep(run, controller, envs=None, seed=None, workers=None):
    """Evaluate ``envs`` environments drawn from the sweep ranges, one cycle each.

    Env ``k`` is seeded from ``(seed, k)`` so results do not depend on the
    worker count. The score is the mean per-step total reward over one full
    cycle.
    """
    envs = run.envs if envs is None else envs
    seed = run.seed if seed is None else seed
    workers = run.workers if workers is None else workers
    ids = list(range(envs))
    if workers > 1:
        chunks = [ids[i::workers] for i in range(workers)]
        with mp.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_sweep_one, [(run, controller, seed, c) for c in chunks])
        rows = sorted((r for part in parts for r in part), key=lambda r: r["env_id"])
    else:
        rows = _sweep_one((run, controller, seed, ids))
    return rows


def write_rows(path, rows, fields):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in fields])
    return path


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
    return path


def env_factory(run):
    cfg = run.env_config("train")

    def make(i):
        return SquatEnv(cfg, seed=[run.seed, 2, i])
    return make


def run_train(run, out=None, workers=None, verbose=False):
    out = Path(out or run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(run.to_dict(), sort_keys=True))
    ppo = replace(run.ppo, seed=run.seed)
    return train(env_factory(run), ppo, out_dir=out, workers=workers or run.workers,
                 verbose=verbose, meta={"run": run.name, "mode": run.mode, "seed": run.seed})
