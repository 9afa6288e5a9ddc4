import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from exosquat.environment import EnvConfig, SquatEnv
from exosquat.errors import LengthMismatch, NonFiniteLoss
from exosquat.neuralnet import MLP, GaussianPolicy
from exosquat.ppo import (Adam, PpoConfig, RolloutBuffer, clip_grad, clipped_objective,
                          compute_gae, learning_rate, normalize_advantages, ratio, surrogate_loss,
                          train, update)

floats = st.floats(-10, 10, allow_nan=False)


def _discounted(r, v, gamma):
    T = len(r)
    return np.array([sum(gamma ** k * r[t + k] for k in range(T - t)) for t in range(T)]) - v


# -- GAE --------------------------------------------------------------------

def test_gae_lambda_one_is_discounted_return():
    r = np.array([1.0, -0.5, 2.0, 0.3, 0.7])
    v = np.array([0.2, 0.4, -0.1, 0.5, 0.9])
    d = np.array([0, 0, 0, 0, 1], bool)
    adv, ret = compute_gae(r, v, d, gamma=0.99, lam=1.0)
    np.testing.assert_allclose(adv, _discounted(r, v, 0.99), atol=1e-10)
    np.testing.assert_allclose(ret, adv + v, atol=1e-15)


def test_gae_zero_inputs():
    z = np.zeros(6)
    adv, _ = compute_gae(z, z, np.zeros(6, bool))
    np.testing.assert_array_equal(adv, 0.0)


def test_gae_single_terminal_step():
    adv, _ = compute_gae([1.0], [0.5], [True], gamma=0.99)
    assert adv[0] == pytest.approx(0.5, abs=1e-15)


def test_gae_cuts_at_episode_boundary():
    r = np.array([1.0, 2.0, 3.0, 4.0])
    v = np.array([0.1, 0.2, 0.3, 0.4])
    d = np.array([0, 1, 0, 1], bool)
    adv, _ = compute_gae(r, v, d, gamma=0.9, lam=1.0)
    np.testing.assert_allclose(adv[:2], _discounted(r[:2], v[:2], 0.9), atol=1e-12)
    np.testing.assert_allclose(adv[2:], _discounted(r[2:], v[2:], 0.9), atol=1e-12)


def test_gae_truncation_bootstraps():
    adv, _ = compute_gae([1.0, 1.0], [0.0, 0.0], [False, False], gamma=0.5, lam=1.0,
                         truncated=[True, False], bootstrap=[4.0, 0.0], last_value=2.0)
    # truncated step: r + gamma * V(final obs); the next step starts a new episode
    np.testing.assert_allclose(adv, [1.0 + 0.5 * 4.0, 1.0 + 0.5 * 2.0])


def test_gae_length_mismatch():
    with pytest.raises(LengthMismatch):
        compute_gae([1.0, 2.0], [0.0], [False, False])


@given(st.lists(st.tuples(floats, floats, st.booleans()), min_size=1, max_size=30),
       st.floats(0.5, 0.999), floats)
def test_gae_matches_recursion(rows, gamma, last):
    r, v, d = (np.array(x) for x in zip(*rows))
    lam = 0.95
    adv, _ = compute_gae(r, v, d, gamma, lam, last_value=last)
    expect = np.zeros(len(r))
    nxt_a, nxt_v = 0.0, last
    for t in range(len(r) - 1, -1, -1):
        nd = 0.0 if d[t] else 1.0
        delta = r[t] + gamma * nxt_v * nd - v[t]
        nxt_a = delta + gamma * lam * nd * nxt_a
        expect[t] = nxt_a
        nxt_v = v[t]
    np.testing.assert_allclose(adv, expect, rtol=1e-12, atol=1e-9)


# -- ratio and objective ----------------------------------------------------

def test_ratio_examples(rng):
    assert ratio(0.3, 0.3) == 1.0
    assert ratio(math.log(2) - 1.0, -1.0) == pytest.approx(2.0)
    new, old = rng.normal(size=50), rng.normal(size=50)
    np.testing.assert_allclose(ratio(new, old), [math.exp(a - b) for a, b in zip(new, old)],
                               rtol=1e-14)


def test_clipped_objective_examples():
    assert clipped_objective(1.0, 2.0, 0.2) == 2.0
    assert clipped_objective(1.5, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8)


@given(st.floats(0.0, 5.0), floats, st.floats(0.01, 1.0))
def test_clipped_objective_is_pessimistic(r, adv, eps):
    assert clipped_objective(r, adv, eps) <= r * adv + 1e-12


@given(st.lists(floats, min_size=2, max_size=200))
def test_advantage_normalization(xs):
    a = np.array(xs)
    if a.std() < 1e-3:
        return
    z = normalize_advantages(a)
    assert abs(z.mean()) < 1e-6
    assert z.var() == pytest.approx(1.0, abs=1e-6)


def test_learning_rate_schedule():
    cfg = PpoConfig()
    assert learning_rate(cfg, 0) == 1e-4
    assert learning_rate(cfg, 10_000_000) == pytest.approx(0.5e-4)
    assert learning_rate(cfg, 20_000_000) == 0.0
    assert learning_rate(cfg, 30_000_000) == 0.0


def test_config_defaults_and_validation():
    cfg = PpoConfig()
    assert (cfg.gamma, cfg.clip, cfg.epochs, cfg.minibatch, cfg.buffer, cfg.lr) == \
        (0.99, 0.2, 10, 128, 2048, 1e-4)
    assert cfg.hidden == (256, 256, 128) and cfg.adam_betas == (0.9, 0.999) and cfg.adam_eps == 1e-8
    for bad in (dict(gamma=1.0), dict(clip=0.0), dict(minibatch=4096)):
        with pytest.raises(ValueError):
            PpoConfig(**bad)


# -- update -----------------------------------------------------------------

def _batch(rng, n=256, obs_dim=6, act_dim=3, hidden=(16,)):
    pol = GaussianPolicy(obs_dim, act_dim, hidden, rng=rng, out_gain=1.0)
    val = MLP((obs_dim,) + hidden + (1,), rng=rng)
    buf = RolloutBuffer(n, 1, obs_dim, act_dim)
    for _ in range(n):
        o = rng.normal(size=(1, obs_dim))
        a = pol.sample(o, rng)
        buf.add(o, a, pol.log_prob(o, a), rng.normal(size=1), val.forward(o)[:, 0],
                rng.random(1) < 0.05, np.zeros(1, bool), np.zeros(1), np.zeros((1, 7)))
    buf.finish(np.zeros(1), 0.99, 0.95)
    return pol, val, buf


class _Spy:
    """Optimizer stand-in that records the gradients it receives."""

    def __init__(self):
        self.grads = []

    def step(self, theta, grad, lr):
        self.grads.append(grad.copy())
        return theta


def test_ratio_is_one_before_first_step(rng):
    pol, _, buf = _batch(rng)
    obs, act, logp, _, _ = buf.flat()
    np.testing.assert_allclose(ratio(pol.log_prob(obs, act), logp), 1.0, atol=1e-12)


def test_vanilla_policy_gradient_limit(rng):
    pol, val, buf = _batch(rng)
    cfg = PpoConfig(clip=1e12, epochs=1, minibatch=256, buffer=256, max_grad_norm=0.0)
    spy = _Spy()
    update(pol, val, spy, Adam(val.size), buf, cfg, 1e-3, np.random.default_rng(0))
    obs, act, _, adv, _ = buf.flat()
    a = normalize_advantages(adv)
    flat = pol.get_flat()

    def pg_objective(x):
        pol.set_flat(x)
        return float(np.mean(a * pol.log_prob(obs, act)))
    h = 1e-6
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (pg_objective(xp) - pg_objective(xm)) / (2 * h)
    pol.set_flat(flat)
    (g,) = spy.grads
    # loss gradient is the negated policy-gradient estimate
    assert np.linalg.norm(-g - fd) / np.linalg.norm(fd) < 1e-4


def test_zero_advantages_leave_policy_unchanged(rng):
    pol, val, buf = _batch(rng)
    buf.adv[:] = 0.0
    before_pi, before_v = pol.get_flat().copy(), val.theta.copy()
    cfg = PpoConfig(epochs=2, minibatch=64, buffer=256)
    update(pol, val, Adam(pol.size), Adam(val.size), buf, cfg, 1e-3, np.random.default_rng(0))
    np.testing.assert_array_equal(pol.get_flat(), before_pi)
    assert not np.array_equal(val.theta, before_v)


class _CountingAdam(Adam):
    def __init__(self, n):
        super().__init__(n)
        self.calls = 0

    def step(self, theta, grad, lr):
        self.calls += 1
        return super().step(theta, grad, lr)


@pytest.mark.parametrize("target_kl, epochs_run", [(None, 4), (1e-12, 1)])
def test_target_kl_stops_after_the_offending_epoch(rng, target_kl, epochs_run):
    pol, val, buf = _batch(rng)
    cfg = PpoConfig(epochs=4, minibatch=64, buffer=256, target_kl=target_kl)
    opt = _CountingAdam(pol.size)
    update(pol, val, opt, Adam(val.size), buf, cfg, 1e-2, np.random.default_rng(0))
    assert opt.calls == epochs_run * 4


def test_non_finite_loss_is_reported(rng):
    pol, val, buf = _batch(rng)
    buf.ret[5] = np.nan
    cfg = PpoConfig(epochs=1, minibatch=256, buffer=256)
    with pytest.raises(NonFiniteLoss):
        update(pol, val, Adam(pol.size), Adam(val.size), buf, cfg, 1e-3, np.random.default_rng(0))


def test_surrogate_stats_at_old_policy(rng):
    pol, _, buf = _batch(rng)
    obs, act, logp, adv, _ = buf.flat()
    _, _, st_ = surrogate_loss(pol, obs, act, logp, normalize_advantages(adv), 0.2)
    assert abs(st_["approx_kl"]) < 1e-12 and st_["clip_fraction"] == 0.0


def test_clip_grad():
    g, n = clip_grad(np.array([3.0, 4.0]), 1.0)
    assert n == 5.0
    np.testing.assert_allclose(g, [0.6, 0.8])
    g, _ = clip_grad(np.array([0.3, 0.4]), 1.0)
    np.testing.assert_array_equal(g, [0.3, 0.4])


def test_adam_first_step_is_signed_lr():
    theta = np.zeros(3)
    Adam(3).step(theta, np.array([2.0, -0.5, 0.0]), 0.1)
    np.testing.assert_allclose(theta, [-0.1, 0.1, 0.0], atol=1e-8)


# -- training loop ----------------------------------------------------------

def _factory(depth=0.25, seed=0):
    cfg = EnvConfig(squat_depth=depth)

    def make(i):
        return SquatEnv(cfg, seed=[seed, 2, i])
    return make


def test_smoke_training_run(tmp_path):
    cfg = PpoConfig(total_samples=50_000, decay_samples=50_000, hidden=(32, 32), epochs=2,
                    checkpoint_every=10, seed=3)
    res = train(_factory(), cfg, out_dir=tmp_path)
    samples = [row["samples"] for row in res.log]
    assert samples[-1] >= 50_000
    assert all(b > a for a, b in zip(samples, samples[1:]))
    assert len(res.checkpoints) >= 1
    assert (tmp_path / "checkpoints" / "final.npz").is_file()
    assert (tmp_path / "train_log.csv").is_file()
    assert all(np.isfinite(row["policy_loss"]) for row in res.log)


def _log_hash(path):
    return hashlib.sha256((path / "train_log.csv").read_bytes()).hexdigest()


@pytest.mark.parametrize("workers", [1, 2])
def test_training_is_deterministic(tmp_path, workers):
    cfg = PpoConfig(total_samples=4096, hidden=(16,), epochs=2, n_envs=2, seed=11)
    a = train(_factory(), cfg, out_dir=tmp_path / "a", workers=workers)
    b = train(_factory(), cfg, out_dir=tmp_path / "b", workers=workers)
    assert _log_hash(tmp_path / "a") == _log_hash(tmp_path / "b")
    assert a.policy.get_flat().tobytes() == b.policy.get_flat().tobytes()


def test_worker_count_does_not_change_results(tmp_path):
    cfg = PpoConfig(total_samples=4096, hidden=(16,), epochs=2, n_envs=2, seed=11)
    train(_factory(), cfg, out_dir=tmp_path / "inline", workers=1)
    train(_factory(), cfg, out_dir=tmp_path / "procs", workers=2)
    assert _log_hash(tmp_path / "inline") == _log_hash(tmp_path / "procs")
