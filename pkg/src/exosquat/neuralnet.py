"""From-scratch MLPs for the policy and value function.

Parameters of a network live in one flat float64 vector; per-layer weight
and bias arrays are views into it, so optimizers and checkpoints work on a
single array. Weights are stored ``(fan_in, fan_out)`` and applied as
``x @ W + b``.
"""

import json
import math
from pathlib import Path

import numpy as np

from exosquat.errors import DimensionMismatch

LOG2PI = math.log(2.0 * math.pi)
LOG_STD_BOUNDS = (-5.0, 1.0)
CHECKPOINT_VERSION = 1


def xavier_bound(fan_in, fan_out, gain=1.0):
    return gain * math.sqrt(6.0 / (fan_in + fan_out))


class MLP:
    """Fully connected ReLU network with a linear output layer."""

    def __init__(self, sizes, rng=None, out_gain=1.0, theta=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("need at least input and output sizes")
        shapes = []
        for fi, fo in zip(self.sizes[:-1], self.sizes[1:]):
            shapes += [(fi, fo), (fo,)]
        self.shapes = shapes
        self.size = sum(int(np.prod(s)) for s in shapes)
        self.theta = np.zeros(self.size) if theta is None else np.array(theta, dtype=float)
        if self.theta.shape != (self.size,):
            raise DimensionMismatch(f"expected {self.size} parameters, got {self.theta.shape}")
        self._bind()
        if theta is None and rng is not None:
            self.init_xavier(rng, out_gain)

    def _bind(self):
        self.weights, self.biases = [], []
        k = 0
        for n, shape in enumerate(self.shapes):
            cnt = int(np.prod(shape))
            view = self.theta[k:k + cnt].reshape(shape)
            (self.weights if n % 2 == 0 else self.biases).append(view)
            k += cnt

    def init_xavier(self, rng, out_gain=1.0):
        """Xavier-uniform weights, zero biases; the last layer scaled by ``out_gain``."""
        last = len(self.weights) - 1
        for i, W in enumerate(self.weights):
            gain = out_gain if i == last else 1.0
            bound = xavier_bound(W.shape[0], W.shape[1], gain)
            W[...] = rng.uniform(-bound, bound, W.shape)
            self.biases[i][...] = 0.0

    def copy(self):
        return MLP(self.sizes, theta=self.theta.copy())

    def set_theta(self, theta):
        self.theta[...] = theta

    def forward(self, x, keep=False):
        """Output for a ``(batch, in)`` or ``(in,)`` input; optionally the cache."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise DimensionMismatch(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts, dout):
        """Flat parameter gradient for upstream gradient ``dout`` on the output."""
        grad = np.zeros(self.size)
        g_views = []
        k = 0
        for shape in self.shapes:
            cnt = int(np.prod(shape))
            g_views.append(grad[k:k + cnt].reshape(shape))
            k += cnt
        d = np.asarray(dout, dtype=float)
        if d.ndim == 1:
            d = d[None, :]
            acts = [a[None, :] if a.ndim == 1 else a for a in acts]
        L = len(self.weights)
        for i in range(L - 1, -1, -1):
            if i < L - 1:
                d = d * (acts[i + 1] > 0.0)
            g_views[2 * i][...] = acts[i].T @ d
            g_views[2 * i + 1][...] = d.sum(axis=0)
            if i > 0:
                d = d @ self.weights[i].T
        return grad


def init_xavier(dims, rng, out_gain=1.0):
    return MLP(dims, rng=rng, out_gain=out_gain)


# -- Gaussian head -------------------------------------------------------------

def gaussian_log_prob(mean, log_std, action):
    """Diagonal Gaussian log-density, summed over the last axis."""
    log_std = np.asarray(log_std, dtype=float)
    z = (np.asarray(action, dtype=float) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG2PI


def gaussian_entropy(log_std):
    log_std = np.asarray(log_std, dtype=float)
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG2PI))


class GaussianPolicy:
    """Mean network plus a state-independent, clamped log-std vector."""

    def __init__(self, obs_dim, act_dim, hidden=(256, 256, 128), rng=None, log_std=0.0,
                 out_gain=0.01, net=None):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.hidden = tuple(hidden)
        self.net = net or MLP((obs_dim,) + self.hidden + (act_dim,), rng=rng, out_gain=out_gain)
        self.log_std = np.broadcast_to(np.asarray(log_std, dtype=float), (act_dim,)).copy()

    def std(self):
        return np.exp(np.clip(self.log_std, *LOG_STD_BOUNDS))

    def clamped_log_std(self):
        return np.clip(self.log_std, *LOG_STD_BOUNDS)

    def distribution(self, obs):
        """``(mean, std)`` for each observation row."""
        return self.net.forward(obs), self.std()

    def sample(self, obs, rng):
        mean, std = self.distribution(obs)
        return mean + std * rng.standard_normal(mean.shape)

    def log_prob(self, obs, action):
        return gaussian_log_prob(self.net.forward(obs), self.clamped_log_std(), action)

    @property
    def size(self):
        return self.net.size + self.act_dim

    def get_flat(self):
        return np.concatenate([self.net.theta, self.log_std])

    def set_flat(self, flat):
        self.net.set_theta(flat[:self.net.size])
        self.log_std[...] = flat[self.net.size:]

    def copy(self):
        p = GaussianPolicy(self.obs_dim, self.act_dim, self.hidden, net=self.net.copy())
        p.log_std = self.log_std.copy()
        return p


def sample(dist, rng):
    mean, std = dist
    return mean + std * rng.standard_normal(np.shape(mean))


def log_prob(dist, action):
    mean, std = dist
    return gaussian_log_prob(np.asarray(mean, float), np.log(std), action)


# -- observation normalization ---------------------------------------------

class RunningNorm:
    """Running mean/variance normalizer (parallel-merge update)."""

    def __init__(self, dim, clip=10.0, eps=1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.clip = clip
        self.eps = eps
        self.frozen = False

    def update(self, x):
        if self.frozen:
            return
        x = np.asarray(x, dtype=float).reshape(-1, self.mean.size)
        n = x.shape[0]
        if n == 0:
            return
        bm, bv = x.mean(axis=0), x.var(axis=0)
        tot = self.count + n
        delta = bm - self.mean
        self.mean = self.mean + delta * n / tot
        m2 = self.var * self.count + bv * n + delta ** 2 * self.count * n / tot
        self.var = m2 / tot
        self.count = tot

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + self.eps)
        return np.clip(z, -self.clip, self.clip)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, policy, value, norm=None, meta=None):
    """Write an ``.npz`` checkpoint.

    Layout: ``version``, ``policy_sizes``, ``policy_theta``, ``log_std``,
    ``value_sizes``, ``value_theta``, ``norm_mean``, ``norm_var``,
    ``norm_count``, ``norm_clip`` and ``meta`` (a JSON string).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dict(
        version=np.array(CHECKPOINT_VERSION),
        policy_sizes=np.array(policy.net.sizes),
        policy_theta=policy.net.theta,
        log_std=policy.log_std,
        value_sizes=np.array(value.sizes),
        value_theta=value.theta,
        meta=np.array(json.dumps(meta or {}, sort_keys=True)),
    )
    if norm is not None:
        data.update(norm_mean=norm.mean, norm_var=norm.var, norm_count=np.array(norm.count),
                    norm_clip=np.array(norm.clip))
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **data)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(policy, value, norm, meta)`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as z:
        sizes = tuple(int(s) for s in z["policy_sizes"])
        net = MLP(sizes, theta=z["policy_theta"])
        policy = GaussianPolicy(sizes[0], sizes[-1], sizes[1:-1], net=net)
        policy.log_std = np.array(z["log_std"], dtype=float)
        value = MLP(tuple(int(s) for s in z["value_sizes"]), theta=z["value_theta"])
        norm = None
        if "norm_mean" in z:
            norm = RunningNorm(sizes[0], clip=float(z["norm_clip"]))
            norm.mean = np.array(z["norm_mean"])
            norm.var = np.array(z["norm_var"])
            norm.count = float(z["norm_count"])
        meta = json.loads(str(z["meta"]))
    return policy, value, norm, meta
