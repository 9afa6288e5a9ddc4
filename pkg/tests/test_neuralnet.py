import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal

from exosquat.errors import DimensionMismatch
from exosquat.harness.selfcheck import gradient_errors
from exosquat.neuralnet import (MLP, GaussianPolicy, RunningNorm, gaussian_entropy,
                                gaussian_log_prob, init_xavier, load_checkpoint, log_prob, sample,
                                save_checkpoint, xavier_bound)


def _oracle_forward(sizes, theta, x):
    """Independent layer-by-layer evaluation from the flat parameter layout."""
    k, h = 0, np.asarray(x, float)
    n = len(sizes) - 1
    for i in range(n):
        fi, fo = sizes[i], sizes[i + 1]
        W = theta[k:k + fi * fo].reshape(fi, fo)
        k += fi * fo
        b = theta[k:k + fo]
        k += fo
        h = np.array([[sum(row[a] * W[a, j] for a in range(fi)) + b[j] for j in range(fo)]
                      for row in h])
        if i < n - 1:
            h = np.where(h > 0, h, 0.0)
    return h


def _fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


# -- initialization ---------------------------------------------------------

def test_xavier_bound_small_layer(rng):
    assert xavier_bound(3, 3) == pytest.approx(1.0)
    net = init_xavier((3, 3), rng)
    assert np.all(np.abs(net.weights[0]) <= 1.0)
    np.testing.assert_array_equal(net.biases[0], 0.0)


def test_xavier_variance(rng):
    net = MLP((256, 256), rng=rng)
    assert net.weights[0].var() == pytest.approx(2.0 / 512, rel=0.1)


def test_init_is_deterministic():
    a = MLP((10, 16, 4), rng=np.random.default_rng(5))
    b = MLP((10, 16, 4), rng=np.random.default_rng(5))
    assert a.theta.tobytes() == b.theta.tobytes()


def test_policy_defaults(rng):
    pol = GaussianPolicy(177, 8, rng=rng)
    assert pol.net.sizes == (177, 256, 256, 128, 8)
    np.testing.assert_array_equal(pol.std(), 1.0)
    # small final-layer gain keeps initial means near zero
    assert np.abs(pol.net.weights[-1]).max() <= 0.01 * xavier_bound(128, 8)


def test_log_std_clamped(rng):
    pol = GaussianPolicy(4, 2, (8,), rng=rng)
    pol.log_std[:] = [-9.0, 3.0]
    np.testing.assert_allclose(np.log(pol.std()), [-5.0, 1.0])


# -- forward ----------------------------------------------------------------

def test_zero_net_outputs_zero():
    pol = GaussianPolicy(6, 8, (16, 16))
    value = MLP((6, 16, 16, 1))
    np.testing.assert_array_equal(pol.distribution(np.zeros(6))[0], 0.0)
    np.testing.assert_array_equal(value.forward(np.zeros(6)), 0.0)


@given(st.floats(0.01, 100.0), st.integers(0, 2 ** 31 - 1))
def test_relu_layer_positive_homogeneity(c, seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(5, 4))
    x = rng.normal(size=5)
    relu = lambda z: np.maximum(z @ W, 0.0)
    np.testing.assert_allclose(relu(c * x), c * relu(x), rtol=1e-12, atol=1e-12)
    net = MLP((5, 4, 3), rng=rng)
    net.biases[0][:] = 0.0
    net.biases[1][:] = 0.0
    np.testing.assert_allclose(net.forward(c * x), c * net.forward(x), rtol=1e-10, atol=1e-12)


def test_forward_matches_oracle(rng):
    for sizes in [(3, 4, 2), (5, 6, 6, 3), (2, 1)]:
        net = MLP(sizes, rng=rng)
        net.theta[:] = rng.normal(size=net.size)
        x = rng.normal(size=(7, sizes[0]))
        np.testing.assert_allclose(net.forward(x), _oracle_forward(sizes, net.theta, x),
                                   atol=1e-12)


def test_forward_is_bitwise_deterministic(rng):
    net = MLP((8, 32, 8), rng=rng)
    x = rng.normal(size=(9, 8))
    assert net.forward(x).tobytes() == net.forward(x).tobytes()


def test_dimension_mismatch(rng):
    net = MLP((8, 4), rng=rng)
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros(7))
    with pytest.raises(DimensionMismatch):
        MLP((8, 4), theta=np.zeros(3))


# -- Gaussian head ----------------------------------------------------------

def test_log_prob_at_mean():
    mean = np.zeros(8)
    lp = log_prob((mean, np.ones(8)), mean)
    assert lp == pytest.approx(-4 * math.log(2 * math.pi), abs=1e-12)
    assert lp == pytest.approx(-7.35151, abs=1e-5)


def test_doubling_std_costs_8_ln2():
    mean = np.full(8, 0.3)
    a = log_prob((mean, np.ones(8)), mean)
    b = log_prob((mean, 2 * np.ones(8)), mean)
    assert a - b == pytest.approx(8 * math.log(2), abs=1e-12)


def test_log_prob_matches_scipy(rng):
    mean = rng.normal(size=8)
    log_std = rng.uniform(-1, 0.5, 8)
    a = rng.normal(size=8)
    ref = multivariate_normal(mean, np.diag(np.exp(2 * log_std))).logpdf(a)
    assert gaussian_log_prob(mean, log_std, a) == pytest.approx(ref, abs=1e-10)
    assert gaussian_entropy(log_std) == pytest.approx(
        multivariate_normal(mean, np.diag(np.exp(2 * log_std))).entropy(), abs=1e-10)


@given(st.floats(0.0, 5.0), st.floats(0.01, 5.0))
def test_log_prob_decreases_away_from_mean(d, extra):
    mean, std = np.zeros(8), np.ones(8)
    u = np.ones(8) / math.sqrt(8)
    assert log_prob((mean, std), (d + extra) * u) < log_prob((mean, std), d * u)


def test_sampling_reproducible():
    dist = (np.zeros(8), np.full(8, 0.5))
    a = sample(dist, np.random.default_rng(3))
    b = sample(dist, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    z = np.random.default_rng(3).standard_normal(8)
    np.testing.assert_allclose(a, 0.5 * z)


# -- backward ---------------------------------------------------------------

def test_output_bias_gradient_of_half_square(rng):
    net = MLP((4, 6, 3), rng=rng)
    x = rng.normal(size=4)
    out, acts = net.forward(x, keep=True)
    g = net.backward(acts, out)
    np.testing.assert_allclose(g[-3:], out, atol=1e-15)


def test_zero_upstream_gradient(rng):
    net = MLP((4, 6, 3), rng=rng)
    out, acts = net.forward(rng.normal(size=(5, 4)), keep=True)
    np.testing.assert_array_equal(net.backward(acts, np.zeros_like(out)), 0.0)


def test_gradient_matches_finite_differences(rng):
    net = MLP((8, 8, 8, 2), rng=rng)
    net.biases[0][:] = rng.normal(0, 0.1, 8)
    x = rng.normal(size=(16, 8))
    y = rng.normal(size=(16, 2))

    def loss(theta):
        return 0.5 * np.sum((MLP(net.sizes, theta=theta).forward(x) - y) ** 2)
    out, acts = net.forward(x, keep=True)
    g = net.backward(acts, out - y)
    fd = _fd(loss, net.theta.copy())
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


@given(st.integers(0, 1000))
def test_training_loss_gradients(seed):
    e_pi, e_v = gradient_errors(seed=seed)
    assert e_pi < 1e-4 and e_v < 1e-4


# -- normalizer ---------------------------------------------------------------

def test_running_norm_matches_batch_statistics(rng):
    x = rng.normal(3.0, 2.0, size=(1000, 5))
    norm = RunningNorm(5)
    for chunk in np.array_split(x, 7):
        norm.update(chunk)
    np.testing.assert_allclose(norm.mean, x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(norm.var, x.var(axis=0), atol=1e-10)
    assert norm.count == 1000
    norm.frozen = True
    norm.update(x + 100)
    np.testing.assert_allclose(norm.mean, x.mean(axis=0), atol=1e-12)
    assert np.abs(norm(x + 1e6)).max() == norm.clip


# -- checkpoints  -----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    pol = GaussianPolicy(12, 8, (16, 8), rng=rng)
    pol.log_std[:] = rng.normal(size=8)
    val = MLP((12, 16, 8, 1), rng=rng)
    norm = RunningNorm(12)
    norm.update(rng.normal(size=(50, 12)))
    path = save_checkpoint(tmp_path / "ck.npz", pol, val, norm, meta={"samples": 2048})
    p2, v2, n2, meta = load_checkpoint(path)
    assert p2.net.sizes == pol.net.sizes
    assert p2.get_flat().tobytes() == pol.get_flat().tobytes()
    assert v2.theta.tobytes() == val.theta.tobytes()
    np.testing.assert_array_equal(n2.mean, norm.mean)
    np.testing.assert_array_equal(n2.var, norm.var)
    assert n2.count == norm.count and meta == {"samples": 2048}
    obs = rng.normal(size=(3, 12))
    np.testing.assert_array_equal(p2.net.forward(n2(obs)), pol.net.forward(norm(obs)))


def test_per_dimension_initial_log_std():
    ls = np.array([-1.0, -2.0, -3.0])
    pol = GaussianPolicy(4, 3, (8,), rng=np.random.default_rng(0), log_std=ls)
    np.testing.assert_allclose(pol.std(), np.exp(ls))
    with pytest.raises(ValueError):
        GaussianPolicy(4, 3, (8,), rng=np.random.default_rng(0), log_std=[0.0, 1.0])
