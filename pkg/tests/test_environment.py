import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from exosquat.environment import (NOMINAL, TEST, TRAIN, EnvConfig, PerturbationSchedule,
                                  PerturbationSpec, RandomizationSpec, RewardConfig, SquatEnv,
                                  compute_reward, human_spring_forces, observation_dim,
                                  sample_params, sample_perturbation, termination_check)
from exosquat.environment.perturbation import cone_direction
from exosquat.environment.rewards import TERMS
from exosquat.errors import EpisodeFinished
from exosquat.harness.runner import ReferenceController
from exosquat.multibody import GeneralizedState, step
from exosquat.reference import generate_squat

seeds = st.integers(0, 2 ** 31 - 1)


@pytest.fixture(scope="module")
def squat(model):
    return generate_squat(model=model)


def _perfect(target):
    return dict(joints=target.joints, joint_vel=target.joint_vel, feet=target.feet,
                root_pos=target.root_pos, root_quat=target.root_quat, com=target.com,
                cop=np.zeros((2, 2)), cop_valid=np.array([True, True]), torques=np.zeros(8),
                target=target)


# -- rewards ----------------------------------------------------------------

def test_perfect_tracking_scores_maximum(squat):
    r = compute_reward(**_perfect(squat.sample(1.3)))
    np.testing.assert_array_equal(r.terms(), np.ones(7))
    assert r.total == pytest.approx(3.6, abs=1e-12)
    assert RewardConfig().max_total == pytest.approx(3.6)


def test_com_term_tracks_height_only(squat):
    args = _perfect(squat.sample(0.7))
    args["com"] = args["com"] + np.array([0.1, -0.1, 0.0])
    assert compute_reward(**args).com == 1.0
    args["com"] = args["com"] + np.array([0.0, 0.0, 0.1])
    assert compute_reward(**args).com == pytest.approx(math.exp(-10 * 0.01))


def test_weights():
    cfg = RewardConfig()
    np.testing.assert_allclose(cfg.weights(), [0.8, 0.1, 0.7, 0.7, 0.4, 0.8, 0.1])


def test_cop_outside_region_scores_zero(squat):
    args = _perfect(squat.sample(0.0))
    args["cop"] = np.array([[0.06, 0.0], [0.0, -0.04]])
    assert compute_reward(**args).cop == 0.0


def test_unloaded_feet_score_zero_cop(squat):
    args = _perfect(squat.sample(0.0))
    args["cop_valid"] = np.array([False, False])
    assert compute_reward(**args).cop == 0.0


def test_cop_averages_loaded_feet(squat):
    args = _perfect(squat.sample(0.0))
    args["cop"] = np.array([[0.06, 0.0], [0.02, 0.0]])
    args["cop_valid"] = np.array([True, False])
    assert compute_reward(**args).cop == 0.0
    args["cop_valid"] = np.array([False, True])
    assert compute_reward(**args).cop == pytest.approx(math.exp(-500 * 0.02 ** 2))


def test_pose_term_example(squat):
    args = _perfect(squat.sample(0.0))
    err = np.zeros(8)
    err[:2] = math.sqrt(0.05)
    args["joints"] = args["joints"] + err
    r = compute_reward(**args)
    assert r.pose == pytest.approx(math.exp(-0.2), abs=1e-12)
    assert r.pose == pytest.approx(0.8187, abs=1e-4)


@given(seeds)
def test_reward_terms_bounded(squat, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    r = compute_reward(rng.uniform(-2, 2, 8), rng.normal(0, 5, 8), rng.normal(0, 0.3, (2, 3)),
                       rng.normal(0, 1, 3), q / np.linalg.norm(q), rng.normal(0, 1, 3),
                       rng.uniform(-0.15, 0.15, (2, 2)), rng.random(2) < 0.7,
                       rng.uniform(-100, 100, 8), squat.sample(rng.uniform(0, 4)))
    t = r.terms()
    assert np.all((t >= 0) & (t <= 1))
    assert 0.0 <= r.total <= 3.6 + 1e-12


# -- randomization ----------------------------------------------------------

def test_degenerate_ranges_give_nominal(rng):
    for _ in range(5):
        p = sample_params(NOMINAL, rng)
        assert (p.friction, p.mass, p.latency, p.inertia, p.com) == (1.0, 1.0, 0.0, 1.0, 1.0)
        np.testing.assert_array_equal(p.strength, 1.0)


def test_train_friction_distribution():
    rng = np.random.default_rng(3)
    f = np.array([sample_params(TRAIN, rng).friction for _ in range(10000)])
    assert f.min() >= 0.9 and f.max() <= 1.6
    assert f.mean() == pytest.approx(1.25, abs=0.01)


def test_preset_ranges():
    assert (TRAIN.friction, TRAIN.mass, TRAIN.strength) == ((0.9, 1.6), (0.8, 1.2), (0.8, 1.2))
    assert (TRAIN.latency, TRAIN.inertia, TRAIN.com) == ((0.0, 0.04), (0.5, 1.5), (0.9, 1.2))
    assert (TEST.friction, TEST.mass, TEST.strength) == ((0.7, 2.0), (0.7, 1.5), (0.7, 1.3))
    assert (TEST.latency, TEST.inertia, TEST.com) == ((0.0, 0.06), (0.4, 1.6), (0.8, 1.3))


def test_randomization_spec_validates():
    with pytest.raises(ValueError):
        RandomizationSpec(friction=(1.5, 1.0))
    with pytest.raises(ValueError):
        RandomizationSpec(latency=(-0.1, 0.0))


@given(seeds, st.sampled_from([TRAIN, TEST]))
def test_draws_within_ranges(seed, spec):
    p = sample_params(spec, np.random.default_rng(seed))
    for name in ("friction", "mass", "latency", "inertia", "com"):
        lo, hi = getattr(spec, name)
        assert lo <= getattr(p, name) <= hi
    assert np.all((p.strength >= spec.strength[0]) & (p.strength <= spec.strength[1]))


# -- perturbation -----------------------------------------------------------

def test_hip_direction_within_cone():
    rng = np.random.default_rng(0)
    d = np.array([cone_direction(rng, 20.0) for _ in range(10000)])
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    assert d[:, 2].min() >= math.cos(math.radians(20.0)) - 1e-12


def test_schedule_targets_within_ranges():
    spec = PerturbationSpec()
    sched = PerturbationSchedule(spec, np.random.default_rng(1))
    for k in range(1, 400):
        f = sched(k * spec.interval + spec.interval)  # held target of interval k
        hip = np.linalg.norm(f[0])
        assert hip <= 200.0 + 1e-9
        assert f[0, 2] >= hip * math.cos(math.radians(20.0)) - 1e-9
        assert np.all(np.linalg.norm(f[1:], axis=1) <= 100.0 + 1e-9)


def test_schedule_ramps_linearly():
    spec = PerturbationSpec()
    sched = PerturbationSchedule(spec, np.random.default_rng(2))
    a, b, mid = sched(0.5), sched(1.0), sched(0.75)
    np.testing.assert_allclose(mid, 0.5 * (a + b), atol=1e-12)
    np.testing.assert_array_equal(sched(0.0), 0.0)


def test_stressed_hip_reaches_350():
    spec = PerturbationSpec().stressed(1.75)
    sched = PerturbationSchedule(spec, np.random.default_rng(4))
    hip = np.array([np.linalg.norm(sched(k * 0.5)[0]) for k in range(1, 3000)])
    assert hip.max() <= 350.0 + 1e-9
    assert hip.max() > 340.0


def test_sample_perturbation_targets_sites(model):
    f = sample_perturbation(PerturbationSpec(), np.random.default_rng(0), 0.7, model)
    assert len(f) == 5
    assert f.links[0] == model.body_index["pelvis"]


def test_zero_perturbation_equals_clean():
    zero = PerturbationSpec(hip_max=0.0, limb_max=0.0)
    trajs = []
    for mode in ("clean", "perturbed"):
        env = SquatEnv(EnvConfig(mode=mode, perturbation=zero, randomization="train"), seed=5)
        env.reset(seed=11)
        qs = []
        for k in range(20):
            env.step(0.05 * np.sin(np.arange(8) + k))
            qs.append(env.q.copy())
        trajs.append(np.array(qs))
    np.testing.assert_allclose(trajs[0], trajs[1], atol=1e-12)


# -- human load -------------------------------------------------------------

@pytest.fixture(scope="module")
def human_env():
    env = SquatEnv(EnvConfig(mode="human", randomization="none", reset_noise=0.0), seed=0)
    env.reset(seed=0)
    return env


def test_spring_forces_zero_at_reset(human_env):
    _, _, f = human_env.model.kernel.springs(human_env.q, np.zeros(human_env.model.nv))
    np.testing.assert_allclose(np.asarray(f), 0.0, atol=1e-9)


def test_human_mass(human_env):
    assert human_env.model.total_mass == pytest.approx(20.4 + 61.0)


def test_pelvis_spring_restores(human_env):
    m = human_env.model
    q = human_env.q.copy()
    q[6 + m.joint_index["h_slide"]] += 0.01
    _, _, f = m.kernel.springs(q, np.zeros(m.nv))
    k = [s.name for s in m.springs].index("pelvis")
    # force on the human pelvis, pulling it back down
    np.testing.assert_allclose(np.asarray(f)[k], [0.0, 0.0, -100.0], atol=1e-9)


@given(seeds)
def test_spring_forces_sum_to_zero(human_env, seed):
    m = human_env.model
    rng = np.random.default_rng(seed)
    q = human_env.q.copy()
    q[7:] += rng.uniform(-0.05, 0.05, m.nq - 7)
    fs = human_spring_forces(m, GeneralizedState(q, rng.normal(0, 0.5, m.nv)))
    np.testing.assert_allclose(np.sum(fs.forces, axis=0), 0.0, atol=1e-9)


def test_spring_coupling_conserves_momentum(human_env):
    m = human_env.model
    q = human_env.q.copy()
    q[2] += 5.0
    q[6 + m.joint_index["h_slide"]] += 0.02
    s = GeneralizedState(q, np.zeros(m.nv))
    p0 = m.linear_momentum(s)
    peak = 0.0
    for _ in range(200):
        s = step(m, s, external_forces=human_spring_forces(m, s), gravity=np.zeros(3))
        peak = max(peak, abs(s.v[5 + m.joint_index["h_slide"]]))
    assert np.linalg.norm(m.linear_momentum(s) - p0) < 1e-9
    # the springs actually moved the chains
    assert peak > 0.05


# -- episodes ---------------------------------------------------------------

def test_observation_dimension():
    env = SquatEnv(EnvConfig(), seed=0)
    obs = env.reset(seed=0)
    assert env.obs_dim == observation_dim(15, 14) == 3 * 15 + 3 * 14 + 3 * 6 + 3 * 8 + 6 * 8 == 177
    assert obs.shape == (177,)
    for _ in range(5):
        obs, _, _, _ = env.step(np.zeros(8))
        assert obs.shape == (177,)


def test_human_mode_keeps_observation_dimension(human_env):
    assert human_env.obs_dim == 177


def test_zero_latency_observes_current_state():
    env = SquatEnv(EnvConfig(randomization="none"), seed=0)
    env.reset(seed=3)
    nq, nv = env.nominal.nq, env.nominal.nv
    for _ in range(4):
        obs, _, _, _ = env.step(0.03 * np.ones(8))
    np.testing.assert_array_equal(obs[2 * nq:3 * nq], env.q[env.q_idx])
    np.testing.assert_array_equal(obs[3 * nq + 2 * nv:3 * nq + 3 * nv], env.v[env.v_idx])


def test_latency_serves_delayed_state():
    spec = RandomizationSpec(friction=(1, 1), mass=(1, 1), strength=(1, 1), latency=(0.05, 0.05),
                             inertia=(1, 1), com=(1, 1))
    env = SquatEnv(EnvConfig(randomization=spec), seed=0)
    env.reset(seed=3)
    qs = [env.q.copy()]
    for _ in range(6):
        obs, _, _, _ = env.step(0.03 * np.ones(8))
        qs.append(env.q.copy())
    nq = env.nominal.nq
    # t - 0.05 s lies halfway between the snapshots 2 and 1 ticks back
    blend = 0.5 * (qs[-2] + qs[-3])
    np.testing.assert_allclose(obs[2 * nq + 7:3 * nq], blend[7:], atol=1e-12)


def test_standing_reference_scores_near_maximum():
    env = SquatEnv(EnvConfig(randomization="none", reset_noise=0.0, squat_depth=0.0), seed=0)
    env.reset(seed=0)
    for _ in range(60):
        _, r, _, _ = env.step(np.zeros(8))
        assert np.all(r.terms() > 0.9), dict(zip(TERMS, r.terms()))


def test_same_seed_is_bit_identical():
    runs = []
    for _ in range(2):
        env = SquatEnv(EnvConfig(mode="perturbed"), seed=9)
        env.reset(seed=21)
        out = []
        for k in range(15):
            obs, r, _, _ = env.step(0.1 * np.cos(np.arange(8) * k))
            out.append(np.concatenate([obs, env.q, [r.total]]))
        runs.append(np.array(out))
    assert runs[0].tobytes() == runs[1].tobytes()


def test_reference_playback_reaches_horizon():
    env = SquatEnv(EnvConfig(randomization="none"), seed=0)
    obs = env.reset(seed=0)
    ctrl = ReferenceController()
    for k in range(240):
        obs, _, done, info = env.step(ctrl(env, obs))
        if done:
            break
    assert k == 239 and info["reason"] == "horizon"


def test_step_after_done_raises():
    env = SquatEnv(EnvConfig(horizon=0.1), seed=0)
    env.reset(seed=0)
    done = False
    while not done:
        _, _, done, _ = env.step(np.zeros(8))
    with pytest.raises(EpisodeFinished):
        env.step(np.zeros(8))


def test_termination_cases():
    assert termination_check(0.0, 1.0, 0.9) == (True, "fall")
    assert termination_check(0.9, 8.0, 0.9, horizon=8.0) == (True, "horizon")
    assert termination_check(0.9, 3.0, 0.9) == (False, "")
    assert termination_check(0.9, 3.0, 0.9, horizon=None) == (False, "")
    assert termination_check(float("nan"), 1.0, 0.9) == (True, "divergence")


def test_invalid_mode():
    with pytest.raises(ValueError):
        EnvConfig(mode="flying")


def test_random_initial_phase_starts_on_the_reference():
    env = SquatEnv(EnvConfig(init_phase="random", randomization=None, horizon=1.0), seed=2)
    phases = set()
    for ep in range(6):
        env.reset(seed=ep)
        t0 = env.t
        phases.add(round(t0, 6))
        assert 0.0 <= t0 < 4.0 and t0 / env.dt == pytest.approx(round(t0 / env.dt))
        ref = env.reference.sample(t0)
        np.testing.assert_allclose(env.q[env.model.act_q], ref.joints, atol=0.02 + 1e-12)
        assert env.q[2] == pytest.approx(ref.root_pos[2], abs=0.01)
        steps = 0
        while not env.done:
            env.step(env.reference.sample(env.t + env.dt).joints - env.stand_targets)
            steps += 1
        # the horizon counts from the episode start, not from t = 0
        assert env.reason == "horizon" and steps == 30
    assert len(phases) > 1


def test_default_reset_starts_at_phase_zero():
    env = SquatEnv(EnvConfig(), seed=2)
    env.reset(seed=0)
    assert env.t == 0.0 and env.tick == 0
    with pytest.raises(ValueError):
        EnvConfig(init_phase="middle")
