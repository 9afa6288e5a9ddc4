"""Analytic self-tests run by ``exosquat check``.

Each suite returns ``(passed, detail)``; they share their oracles with the
acceptance tests but use smaller sample counts so the whole run is quick.
"""

import copy
from dataclasses import dataclass
import math
import time

import numpy as np

from exosquat.actuation import PDConfig, pd_torque
from exosquat.contact import SensorForceSet, compute_cop, tipping_residual
from exosquat.default_model import default_exo_spec
from exosquat.environment.rewards import RewardConfig, compute_reward
from exosquat.multibody import GeneralizedState, build_model, step
from exosquat.neuralnet import MLP, GaussianPolicy
from exosquat.ppo import compute_gae, surrogate_loss, value_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def check_cop(n=200, seed=0):
    rng = np.random.default_rng(seed)
    worst, worst_res = 0.0, 0.0
    for _ in range(n):
        xy = rng.uniform(-0.12, 0.12, (4, 2))
        fz = rng.uniform(5.0, 300.0, 4)
        cop = compute_cop(SensorForceSet.single(xy, fz), threshold=0.0)
        oracle = (fz[:, None] * xy).sum(axis=0) / fz.sum()
        worst = max(worst, float(np.abs(cop.cop[0] - oracle).max()))
        pos = np.zeros((1, 4, 3))
        pos[0, :, :2] = xy
        f = np.zeros((1, 4, 3))
        f[0, :, :2] = rng.normal(0.0, 30.0, (4, 2))
        f[0, :, 2] = fz
        fs = SensorForceSet(pos, f, foot_center=np.zeros((1, 3)))
        worst_res = max(worst_res, float(tipping_residual(fs, compute_cop(fs, 0.0))[0]))
    ok = worst < 1e-9 and worst_res < 1e-6
    return ok, f"max |CoP - oracle| {worst:.2e} m, max residual {worst_res:.2e} N*m/N"


def free_fall_drop(model=None, T=1.0, dt=1.0 / 900.0):
    model = model or build_model(default_exo_spec())
    s = GeneralizedState(model.zero_q(height=10.0), np.zeros(model.nv))
    z0 = s.q[2]
    for _ in range(int(round(T / dt))):
        s = step(model, s, dt=dt)
    return z0 - s.q[2]


def check_free_fall():
    drop = free_fall_drop()
    ok = abs(drop - 4.905) / 4.905 < 0.01
    return ok, f"drop {drop:.4f} m (expected 4.905)"


def conservative_model(spec=None):
    """The default exoskeleton with joint limits (stiff, damped stops) removed."""
    spec = copy.deepcopy(spec or default_exo_spec())
    for jt in spec.joints:
        if jt.type != "floating":
            jt.limit = [-math.inf, math.inf]
            jt.damping = 0.0
    return build_model(spec)


def passive_energy_drift(model=None, T=1.0, dt=1.0 / 900.0, seed=0):
    """Energy drift of the passive chain (root fixed) relative to its peak kinetic energy.

    Uses :func:`conservative_model` by default so that no limit stop
    stores or dissipates energy.
    """
    model = model or conservative_model()
    rng = np.random.default_rng(seed)
    q = model.zero_q(height=2.0)
    q[model.act_q] += rng.uniform(-0.3, 0.3, len(model.act_q))
    v = np.zeros(model.nv)
    v[model.act_v] = rng.uniform(-1.0, 1.0, len(model.act_v))
    s = GeneralizedState(q, v)
    ke = model.kinetic_energy(s)
    e0 = ke + model.potential_energy(s)
    worst, peak = 0.0, ke
    for _ in range(int(round(T / dt))):
        s = step(model, s, dt=dt, lock_root=True)
        ke = model.kinetic_energy(s)
        peak = max(peak, ke)
        worst = max(worst, abs(ke + model.potential_energy(s) - e0))
    return worst / peak


def check_energy():
    drift = passive_energy_drift()
    return drift < 0.01, f"relative energy drift {drift:.2e}"


def momentum_drift(model=None, T=1.0, dt=1.0 / 900.0, seed=0):
    model = model or build_model(default_exo_spec())
    rng = np.random.default_rng(seed)
    q = model.zero_q(height=2.0)
    q[model.act_q] += rng.uniform(-0.3, 0.3, len(model.act_q))
    v = rng.uniform(-1.0, 1.0, model.nv)
    s = GeneralizedState(q, v)
    p0 = model.linear_momentum(s)
    tau = rng.uniform(-20.0, 20.0, len(model.act_v))
    for _ in range(int(round(T / dt))):
        s = step(model, s, joint_torques=tau, dt=dt, gravity=np.zeros(3))
    return float(np.linalg.norm(model.linear_momentum(s) - p0)) / T


def check_momentum():
    d = momentum_drift()
    return d < 1e-6, f"momentum drift {d:.2e} kg*m/s per s"


def check_pd():
    cfg = PDConfig()
    tau = float(pd_torque(cfg, np.array([0.2]), np.array([0.0]), np.array([1.0]))[0])
    rng = np.random.default_rng(0)
    t = pd_torque(cfg, rng.uniform(-3, 3, 10000), rng.uniform(-3, 3, 10000),
                  rng.uniform(-50, 50, 10000), rng.uniform(0.5, 1.5, 10000))
    ok = tau == 100.0 and float(np.abs(t).max()) <= 100.0
    return ok, f"worked example {tau} N*m, max |tau| {float(np.abs(t).max()):.3f}"


def _fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _kink_margin(net, x):
    """Smallest |pre-activation| over the hidden ReLU units for inputs ``x``."""
    h, margin = x, math.inf
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ W + b
        margin = min(margin, float(np.abs(z).min()))
        h = np.maximum(z, 0.0)
    return margin


def gradient_errors(seed=0, obs_dim=8, act_dim=8, hidden=(8, 8), batch=16, margin=1e-3):
    """Relative errors of the surrogate and value-loss gradients vs central differences.

    Central differences are only valid where the loss is smooth over the
    stencil, so the batch is redrawn until every ReLU pre-activation is at
    least ``margin`` away from the kink, and every probability ratio at
    least ``margin`` away from the clip edges.
    """
    rng = np.random.default_rng(seed)
    pol = GaussianPolicy(obs_dim, act_dim, hidden, rng=rng, out_gain=1.0)
    val = MLP((obs_dim,) + tuple(hidden) + (1,), rng=rng)
    for b in pol.net.biases + val.biases:
        b[:] = rng.normal(0.0, 0.1, b.shape)
    pol.log_std[:] = rng.uniform(-0.5, 0.3, act_dim)
    obs = rng.normal(size=(batch, obs_dim))
    while min(_kink_margin(pol.net, obs), _kink_margin(val, obs)) < margin:
        obs = rng.normal(size=(batch, obs_dim))
    act = pol.net.forward(obs) + pol.std() * rng.normal(size=(batch, act_dim))
    logp = pol.log_prob(obs, act)
    old = logp + rng.normal(0.0, 0.1, batch)
    while np.abs(np.abs(np.exp(logp - old) - 1.0) - 0.2).min() < margin:
        old = logp + rng.normal(0.0, 0.1, batch)
    adv = rng.normal(size=batch)
    _, g, _ = surrogate_loss(pol, obs, act, old, adv, 0.2)
    flat = pol.get_flat()

    def fp(x):
        pol.set_flat(x)
        return surrogate_loss(pol, obs, act, old, adv, 0.2)[0]
    fd = _fd(fp, flat)
    pol.set_flat(flat)
    e_pi = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
    ret = rng.normal(size=batch)
    _, gv = value_loss(val, obs, ret)
    th = val.theta.copy()

    def fv(x):
        val.theta[:] = x
        return value_loss(val, obs, ret)[0]
    fdv = _fd(fv, th)
    val.theta[:] = th
    e_v = float(np.linalg.norm(gv - fdv) / max(np.linalg.norm(fdv), 1e-300))
    return e_pi, e_v


def check_gradients():
    e_pi, e_v = gradient_errors()
    return e_pi < 1e-4 and e_v < 1e-4, f"surrogate {e_pi:.2e}, value {e_v:.2e}"


def check_gae():
    r = np.array([0.5, -1.0, 2.0, 0.25, 1.0])
    v = np.array([0.3, 0.1, -0.4, 0.8, 0.2])
    d = np.array([0, 0, 0, 0, 1], bool)
    g = 0.99
    adv, _ = compute_gae(r, v, d, gamma=g, lam=1.0)
    oracle = np.array([sum(g ** k * r[t + k] for k in range(5 - t)) for t in range(5)]) - v
    err = float(np.abs(adv - oracle).max())
    return err < 1e-10, f"max |A - (G - V)| {err:.2e}"


def check_rewards(n=1000, seed=0):
    from exosquat.reference import generate_squat

    rng = np.random.default_rng(seed)
    ref = generate_squat()
    cfg = RewardConfig()
    ok = True
    for _ in range(n):
        tgt = ref.sample(rng.uniform(0, 4))
        q = rng.normal(size=4)
        rb = compute_reward(rng.uniform(-2, 2, 8), rng.normal(0, 5, 8), rng.normal(0, 0.3, (2, 3)),
                            rng.normal(0, 1, 3), q / np.linalg.norm(q), rng.normal(0, 1, 3),
                            rng.uniform(-0.15, 0.15, (2, 2)), rng.random(2) < 0.8,
                            rng.uniform(-100, 100, 8), tgt, cfg)
        t = rb.terms()
        ok &= bool(np.all((t >= 0) & (t <= 1)) and 0 <= rb.total <= cfg.max_total + 1e-12)
    return ok, f"{n} random states"


SUITES = {
    "cop_oracle": check_cop,
    "free_fall": check_free_fall,
    "energy": check_energy,
    "momentum": check_momentum,
    "pd_law": check_pd,
    "gradients": check_gradients,
    "gae": check_gae,
    "reward_bounds": check_rewards,
}


def run_checks(names=None):
    out = []
    for name in names or SUITES:
        t0 = time.perf_counter()
        try:
            ok, detail = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out

