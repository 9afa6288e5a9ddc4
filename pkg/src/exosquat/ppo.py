"""Proximal policy optimization on top of :mod:`exosquat.neuralnet`."""

import csv
from dataclasses import asdict, dataclass, field
import math
import multiprocessing as mp
from pathlib import Path
import time

import numpy as np

from exosquat.environment.rewards import TERMS
from exosquat.errors import LengthMismatch, NonFiniteLoss
from exosquat.neuralnet import (LOG_STD_BOUNDS, MLP, GaussianPolicy, RunningNorm, gaussian_entropy,
                                gaussian_log_prob, save_checkpoint)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 128
    buffer: int = 2048
    lr: float = 1e-4
    decay_samples: float = 20e6  # lr reaches 0 here
    total_samples: int = 20_000_000
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    hidden: tuple = (256, 256, 128)
    init_log_std: object = 0.0  # scalar or one value per action dimension
    out_gain: float = 0.01
    normalize_obs: bool = True
    n_envs: int = 1
    target_kl: float | None = None  # stop the epoch loop once the mean KL passes 1.5x this
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.adam_betas = tuple(self.adam_betas)
        if not np.isscalar(self.init_log_std):
            self.init_log_std = tuple(float(x) for x in self.init_log_std)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.clip <= 0.0:
            raise ValueError("clip must be positive")
        if self.minibatch > self.buffer:
            raise ValueError("minibatch larger than buffer")
        if self.buffer % self.n_envs:
            raise ValueError("buffer must be a multiple of n_envs")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["adam_betas"] = list(self.adam_betas)
        if isinstance(self.init_log_std, tuple):
            d["init_log_std"] = list(self.init_log_std)
        return d


DESK = dict(hidden=(64, 64), total_samples=2_000_000, decay_samples=2_000_000)


def learning_rate(cfg, samples):
    """Linear decay from ``cfg.lr`` to zero at ``cfg.decay_samples``."""
    return cfg.lr * max(0.0, 1.0 - samples / cfg.decay_samples)


# -- advantage estimation ----------------------------------------------------

def compute_gae(rewards, values, dones, gamma=0.99, lam=0.95, last_value=0.0, truncated=None,
                bootstrap=None):
    """Generalized advantage estimates and return targets.

    Arrays are time-major and may carry trailing environment axes.
    ``dones`` marks true terminations (no bootstrap). ``truncated`` marks
    time-limit ends, where ``bootstrap`` holds the value of the final state.
    ``last_value`` is the value after the final step of an unfinished
    segment.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    if not (r.shape == v.shape == d.shape):
        raise LengthMismatch(f"rewards {r.shape}, values {v.shape}, dones {d.shape}")
    tr = np.zeros_like(d) if truncated is None else np.asarray(truncated, dtype=bool)
    bs = np.zeros_like(v) if bootstrap is None else np.asarray(bootstrap, dtype=float)
    if tr.shape != r.shape or bs.shape != r.shape:
        raise LengthMismatch("truncated/bootstrap arrays do not match rewards")
    T = r.shape[0]
    next_v = np.empty_like(v)
    next_v[:-1] = v[1:]
    next_v[-1] = last_value
    next_v = np.where(tr, bs, next_v)
    nonterm = 1.0 - d
    cont = 1.0 - (d | tr)
    adv = np.zeros_like(v)
    run = np.zeros_like(v[0])
    for t in range(T - 1, -1, -1):
        delta = r[t] + gamma * next_v[t] * nonterm[t] - v[t]
        run = delta + gamma * lam * cont[t] * run
        adv[t] = run
    return adv, adv + v


def ratio(log_prob_new, log_prob_old):
    return np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))


def clipped_objective(r, adv, eps):
    r = np.asarray(r, dtype=float)
    return np.minimum(r * adv, np.clip(r, 1.0 - eps, 1.0 + eps) * adv)


def normalize_advantages(adv, eps=1e-8):
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + eps)


# -- losses with analytic gradients -----------------------------------------

def surrogate_loss(policy, obs, act, logp_old, adv, clip, ent_coef=0.0):
    """Negative mean clipped objective and its gradient w.r.t. the policy's flat parameters."""
    mean, acts = policy.net.forward(obs, keep=True)
    raw = policy.log_std
    ls = np.clip(raw, *LOG_STD_BOUNDS)
    inv = np.exp(-ls)
    z = (act - mean) * inv
    logp = gaussian_log_prob(mean, ls, act)
    r = np.exp(logp - logp_old)
    rc = np.clip(r, 1.0 - clip, 1.0 + clip)
    unc, clp = r * adv, rc * adv
    obj = np.minimum(unc, clp)
    ent = gaussian_entropy(ls)
    n = obs.shape[0]
    loss = -obj.mean() - ent_coef * ent
    # d obj / d logp: r*A on the unclipped branch, 0 where the clipped branch is active
    active = (unc <= clp)
    dlogp = -(active * adv * r) / n
    dmean = dlogp[:, None] * z * inv
    dls = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - ent_coef
    dls = dls * ((raw >= LOG_STD_BOUNDS[0]) & (raw <= LOG_STD_BOUNDS[1]))
    grad = np.concatenate([policy.net.backward(acts, dmean), dls])
    stats = dict(
        policy_loss=float(-obj.mean()),
        entropy=ent,
        approx_kl=float(np.mean((r - 1.0) - np.log(r))),  # non-negative KL(old||new) estimate
        clip_fraction=float(np.mean(np.abs(r - 1.0) > clip)),
    )
    return loss, grad, stats


def value_loss(value, obs, returns, coef=1.0):
    """``coef`` times the mean squared error to ``returns`` and its gradient."""
    out, acts = value.forward(obs, keep=True)
    err = out[:, 0] - returns
    loss = coef * float(np.mean(err * err))
    dout = (2.0 * coef / err.size) * err[:, None]
    return loss, value.backward(acts, dout)


def clip_grad(grad, max_norm):
    norm = float(np.linalg.norm(grad))
    if max_norm and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


class Adam:
    def __init__(self, size, betas=(0.9, 0.999), eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0

    def step(self, theta, grad, lr):
        """In-place update of ``theta``."""
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        mh = self.m / (1.0 - self.b1 ** self.t)
        vh = self.v / (1.0 - self.b2 ** self.t)
        theta -= lr * mh / (np.sqrt(vh) + self.eps)
        return theta


# -- rollout storage ------------------------------------------------------

@dataclass
class RolloutBuffer:
    """Time-major storage, shape ``(steps, n_envs, ...)``; one column per env stream."""

    steps: int
    n_envs: int
    obs_dim: int
    act_dim: int

    def __post_init__(self):
        T, E = self.steps, self.n_envs
        self.obs = np.zeros((T, E, self.obs_dim))
        self.raw = np.zeros((T, E, self.obs_dim))
        self.act = np.zeros((T, E, self.act_dim))
        self.logp = np.zeros((T, E))
        self.rew = np.zeros((T, E))
        self.val = np.zeros((T, E))
        self.done = np.zeros((T, E), dtype=bool)
        self.trunc = np.zeros((T, E), dtype=bool)
        self.boot = np.zeros((T, E))
        self.terms = np.zeros((T, E, len(TERMS)))
        self.ptr = 0
        self.adv = None
        self.ret = None

    @property
    def full(self):
        return self.ptr == self.steps

    def add(self, obs, act, logp, rew, val, done, trunc, boot, terms, raw=None):
        t = self.ptr
        self.obs[t], self.act[t], self.logp[t] = obs, act, logp
        self.raw[t] = obs if raw is None else raw
        self.rew[t], self.val[t], self.done[t] = rew, val, done
        self.trunc[t], self.boot[t], self.terms[t] = trunc, boot, terms
        self.ptr += 1

    def finish(self, last_value, gamma, lam):
        self.adv, self.ret = compute_gae(self.rew, self.val, self.done, gamma, lam, last_value,
                                         self.trunc, self.boot)

    def flat(self):
        n = self.steps * self.n_envs
        return (self.obs.reshape(n, -1), self.act.reshape(n, -1), self.logp.reshape(n),
                self.adv.reshape(n), self.ret.reshape(n))


def update(policy, value, opt_pi, opt_v, buffer, cfg, lr, rng):
    """Run ``cfg.epochs`` passes of shuffled minibatches; returns mean statistics.

    With ``cfg.target_kl`` set, the remaining epochs are skipped once an
    epoch's mean KL estimate exceeds ``1.5 * target_kl``.
    """
    if buffer.adv is None:
        raise ValueError("compute advantages (buffer.finish) before update")
    obs, act, logp_old, adv, ret = buffer.flat()
    adv = normalize_advantages(adv)
    n = obs.shape[0]
    acc = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        kl_sum, kl_n = 0.0, 0
        for start in range(0, n - cfg.minibatch + 1, cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            lp, gp, st = surrogate_loss(policy, obs[idx], act[idx], logp_old[idx], adv[idx],
                                        cfg.clip, cfg.ent_coef)
            lv, gv = value_loss(value, obs[idx], ret[idx], cfg.vf_coef)
            if not (math.isfinite(lp) and math.isfinite(lv) and np.all(np.isfinite(gp))
                    and np.all(np.isfinite(gv))):
                raise NonFiniteLoss(
                    f"non-finite loss: policy {lp}, value {lv}, "
                    f"|grad_pi| finite={bool(np.all(np.isfinite(gp)))}, "
                    f"|grad_v| finite={bool(np.all(np.isfinite(gv)))}")
            gp, npi = clip_grad(gp, cfg.max_grad_norm)
            gv, nv = clip_grad(gv, cfg.max_grad_norm)
            flat = policy.get_flat()
            opt_pi.step(flat, gp, lr)
            policy.set_flat(flat)
            opt_v.step(value.theta, gv, lr)
            st.update(value_loss=lv / cfg.vf_coef if cfg.vf_coef else lv, grad_norm=npi)
            for k, x in st.items():
                acc[k] = acc.get(k, 0.0) + x
            count += 1
            kl_sum += st["approx_kl"]
            kl_n += 1
        if cfg.target_kl is not None and kl_sum / max(kl_n, 1) > 1.5 * cfg.target_kl:
            break
    return {k: x / max(count, 1) for k, x in acc.items()}


# -- rollout workers ----------------------------------------------------------

def _worker(conn, env_factory, index):
    env = env_factory(index)
    try:
        while True:
            cmd, arg = conn.recv()
            if cmd == "reset":
                conn.send(("ok", env.reset()))
            elif cmd == "step":
                obs, rew, done, info = env.step(arg)
                conn.send(("ok", (obs, rew.total, rew.terms(), done, info["reason"])))
            elif cmd == "close":
                break
    except Exception as exc:  # forwarded to the updater
        conn.send(("error", repr(exc)))
    finally:
        conn.close()


class EnvPool:
    """Env streams stepped in lockstep, inline or one process per stream."""

    def __init__(self, env_factory, n_envs, processes=False):
        self.n = n_envs
        self.processes = processes and n_envs > 1
        if self.processes:
            ctx = mp.get_context("fork")
            self.conns, self.procs = [], []
            for i in range(n_envs):
                a, b = ctx.Pipe()
                p = ctx.Process(target=_worker, args=(b, env_factory, i), daemon=True)
                p.start()
                b.close()
                self.conns.append(a)
                self.procs.append(p)
        else:
            self.envs = [env_factory(i) for i in range(n_envs)]

    def _gather(self):
        out = []
        for c in self.conns:
            status, payload = c.recv()
            if status == "error":
                raise RuntimeError(f"worker failed: {payload}")
            out.append(payload)
        return out

    def reset(self, i):
        if self.processes:
            self.conns[i].send(("reset", None))
            status, payload = self.conns[i].recv()
            if status == "error":
                raise RuntimeError(f"worker failed: {payload}")
            return payload
        return self.envs[i].reset()

    def step(self, actions):
        if self.processes:
            for c, a in zip(self.conns, actions):
                c.send(("step", a))
            return self._gather()
        out = []
        for env, a in zip(self.envs, actions):
            obs, rew, done, info = env.step(a)
            out.append((obs, rew.total, rew.terms(), done, info["reason"]))
        return out

    def close(self):
        if self.processes:
            for c in self.conns:
                try:
                    c.send(("close", None))
                except (BrokenPipeError, OSError):
                    pass
            for p in self.procs:
                p.join(timeout=5)


LOG_FIELDS = (["iteration", "samples", "episodes", "mean_episode_reward", "max_episode_reward",
               "mean_episode_length", "mean_step_reward"]
              + [f"term_{t}" for t in TERMS]
              + ["policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "grad_norm",
                 "lr", "log_std_mean"])


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value: MLP
    norm: RunningNorm | None
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def train(env_factory, cfg=None, out_dir=None, workers=1, verbose=False, meta=None):
    """Train a policy; returns a :class:`TrainResult`.

    ``env_factory(i)`` builds env stream ``i`` (it should seed the stream
    from ``i``). With ``workers > 1`` each stream runs in its own process.
    Results depend only on ``cfg`` (including ``seed`` and ``n_envs``): the
    actions are drawn centrally so the worker count does not change them.
    """
    cfg = cfg or PpoConfig()
    init_rng, act_rng, upd_rng = (np.random.default_rng(s) for s in
                                  np.random.SeedSequence(cfg.seed).spawn(3))
    pool = EnvPool(env_factory, cfg.n_envs, processes=workers > 1)
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    try:
        obs = np.stack([pool.reset(i) for i in range(cfg.n_envs)])
        obs_dim, act_dim = obs.shape[1], 8
        policy = GaussianPolicy(obs_dim, act_dim, cfg.hidden, rng=init_rng, log_std=cfg.init_log_std,
                                out_gain=cfg.out_gain)
        value = MLP((obs_dim,) + cfg.hidden + (1,), rng=init_rng)
        norm = RunningNorm(obs_dim) if cfg.normalize_obs else None
        opt_pi = Adam(policy.size, cfg.adam_betas, cfg.adam_eps)
        opt_v = Adam(value.size, cfg.adam_betas, cfg.adam_eps)
        result = TrainResult(policy, value, norm)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            log_file = open(out / "train_log.csv", "w", newline="")
            writer = csv.writer(log_file)
            writer.writerow(LOG_FIELDS)
        meta = dict(meta or {}, ppo=cfg.to_dict())
        steps = cfg.buffer // cfg.n_envs
        ep_ret = np.zeros(cfg.n_envs)
        ep_len = np.zeros(cfg.n_envs, dtype=int)
        samples = 0
        iteration = 0
        t0 = time.perf_counter()

        def checkpoint(tag):
            if out is None:
                return
            m = dict(meta, iteration=iteration, samples=samples)
            p = save_checkpoint(out / "checkpoints" / f"{tag}.npz", policy, value, norm, m)
            save_checkpoint(out / "last.npz", policy, value, norm, m)
            result.checkpoints.append(str(p))

        while samples < cfg.total_samples:
            buf = RolloutBuffer(steps, cfg.n_envs, obs_dim, act_dim)
            finished = []
            try:
                for _ in range(steps):
                    x = norm(obs) if norm is not None else obs
                    mean = policy.net.forward(x)
                    act = mean + policy.std() * act_rng.standard_normal(mean.shape)
                    logp = gaussian_log_prob(mean, policy.clamped_log_std(), act)
                    val = value.forward(x)[:, 0]
                    results = pool.step(act)
                    rew = np.array([r[1] for r in results])
                    terms = np.array([r[2] for r in results])
                    done = np.array([r[3] and r[4] != "horizon" for r in results])
                    trunc = np.array([r[3] and r[4] == "horizon" for r in results])
                    boot = np.zeros(cfg.n_envs)
                    nxt = np.stack([r[0] for r in results])
                    if trunc.any():
                        xn = norm(nxt) if norm is not None else nxt
                        boot = np.where(trunc, value.forward(xn)[:, 0], 0.0)
                    buf.add(x, act, logp, rew, val, done, trunc, boot, terms, raw=obs)
                    ep_ret += rew
                    ep_len += 1
                    for i, r in enumerate(results):
                        if r[3]:
                            finished.append((ep_ret[i], ep_len[i]))
                            ep_ret[i], ep_len[i] = 0.0, 0
                            nxt[i] = pool.reset(i)
                    obs = nxt
            except Exception:
                checkpoint("last_good")
                raise
            samples += steps * cfg.n_envs
            iteration += 1
            x = norm(obs) if norm is not None else obs
            buf.finish(value.forward(x)[:, 0], cfg.gamma, cfg.lam)
            if norm is not None:
                norm.update(buf.raw.reshape(-1, obs_dim))
            lr = learning_rate(cfg, samples - steps * cfg.n_envs)
            stats = update(policy, value, opt_pi, opt_v, buf, cfg, lr, upd_rng)
            rets = [f[0] for f in finished]
            lens = [f[1] for f in finished]
            row = dict(iteration=iteration, samples=samples, episodes=len(finished),
                       mean_episode_reward=float(np.mean(rets)) if rets else float("nan"),
                       max_episode_reward=float(np.max(rets)) if rets else float("nan"),
                       mean_episode_length=float(np.mean(lens)) if lens else float("nan"),
                       mean_step_reward=float(buf.rew.mean()))
            tm = buf.terms.reshape(-1, len(TERMS)).mean(axis=0)
            row.update({f"term_{t}": float(v) for t, v in zip(TERMS, tm)})
            row.update({k: float(stats.get(k, float("nan"))) for k in
                        ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction",
                         "grad_norm")})
            row.update(lr=float(lr), log_std_mean=float(policy.log_std.mean()))
            result.log.append(row)
            if log_file is not None:
                writer.writerow([_fmt(row[k]) for k in LOG_FIELDS])
                log_file.flush()
            if verbose:
                print(f"iter {iteration:4d} samples {samples:8d} step_r {row['mean_step_reward']:.3f} "
                      f"ep_len {row['mean_episode_length']:.1f} std {math.exp(row['log_std_mean']):.3f} "
                      f"kl {row['approx_kl']:.4f} t {time.perf_counter() - t0:.0f}s", flush=True)
            if cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
                checkpoint(f"iter_{iteration:05d}")
        checkpoint("final")
        return result
    finally:
        if log_file is not None:
            log_file.close()
        pool.close()
