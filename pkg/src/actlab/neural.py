"""Fully-connected actor and critic networks with hand-written gradients
and a momentum-SGD optimizer."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1
HIDDEN = (512, 256)


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or Inf; the update was rejected."""


class Mlp:
    """Rectifier hidden layers and a linear output layer.

    Accepts a single input vector or a ``(batch, input)`` array.
    """

    def __init__(self, sizes, rng=None, params=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                lim = 1.0 / np.sqrt(fan_in)
                params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
                params.append(np.zeros(fan_out))
        self.params = [np.array(p, dtype=np.float64) for p in params]
        self._check_shapes()

    def _check_shapes(self):
        if len(self.params) != 2 * (len(self.sizes) - 1):
            raise ValueError("parameter list does not match the layer sizes")
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.params[2 * i].shape != (a, b) or self.params[2 * i + 1].shape != (b,):
                raise ValueError(f"layer {i} parameters have the wrong shape")

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return Mlp(self.sizes, params=[p.copy() for p in self.params])

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got shape {x.shape}")
        return xb, single

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    __call__ = forward

    def forward_cache(self, x):
        h, single = self._as_batch(x)
        acts = [h]
        nl = len(self.params) // 2
        for i in range(nl):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < nl - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        return out, (acts, single)

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * y)`` w.r.t. parameters and input."""
        acts, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        g = g[None, :] if single else g
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}")
        nl = len(self.params) // 2
        grads = [None] * len(self.params)
        for i in range(nl - 1, -1, -1):
            if i < nl - 1:
                g = g * (acts[i + 1] > 0.0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, (g[0] if single else g)

    def state_dict(self):
        return {f"p{i}": p for i, p in enumerate(self.params)}


class RunningNormalizer:
    """Per-feature running mean and standard deviation."""

    def __init__(self, dim, eps=1e-2, clip=10.0):
        self.dim = dim
        self.clip = clip
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.eps = eps

    @property
    def std(self):
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self.m2 / self.count), self.eps)

    def update(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        if n == 0:
            return
        bmean = x.mean(axis=0)
        bm2 = ((x - bmean) ** 2).sum(axis=0)
        tot = self.count + n
        delta = bmean - self.mean
        self.mean = self.mean + delta * n / tot
        self.m2 = self.m2 + bm2 + delta ** 2 * self.count * n / tot
        self.count = tot

    def __call__(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        return np.clip(z, -self.clip, self.clip)

    def copy(self):
        out = RunningNormalizer(self.dim, self.eps, self.clip)
        out.count, out.mean, out.m2 = self.count, self.mean.copy(), self.m2.copy()
        return out


class GaussianPolicy:
    """Gaussian policy with a network mean and fixed diagonal stddev.

    The network output is a normalized action ``z``; the mean action is
    ``center + half_range * z`` so that every action type sees unit-scale
    outputs.
    """

    def __init__(self, net, sigma, lower, upper, normalizer=None):
        self.net = net
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), self.lower.shape).copy()
        if net.n_out != len(self.lower):
            raise ValueError("network output must match the action dimension")
        if np.any(self.sigma <= 0):
            raise ValueError("policy stddev must be positive")
        self.center = 0.5 * (self.lower + self.upper)
        self.half = np.maximum(0.5 * (self.upper - self.lower), 1e-12)
        self.normalizer = normalizer or RunningNormalizer(net.n_in)

    @classmethod
    def create(cls, state_dim, lower, upper, sigma_frac, rng, hidden=HIDDEN):
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        net = Mlp((state_dim, *hidden, len(lower)), rng)
        return cls(net, sigma_frac * 0.5 * (upper - lower), lower, upper)

    @property
    def action_dim(self):
        return len(self.lower)

    def mean(self, s):
        return self.center + self.half * self.net(self.normalizer(s))

    def sample_action(self, s, lam, rng):
        """Unclamped action; ``lam = 0`` gives the mean exactly."""
        mu = self.mean(s)
        if not lam:
            return mu
        return mu + self.sigma * rng.standard_normal(mu.shape)

    def mean_and_cache(self, s):
        z, cache = self.net.forward_cache(self.normalizer(s))
        return self.center + self.half * z, cache

    def backward(self, cache, grad_mean):
        """Parameter gradients of ``sum(grad_mean * mean)``."""
        grads, _ = self.net.backward(cache, grad_mean * self.half)
        return grads

    def copy(self):
        return GaussianPolicy(self.net.copy(), self.sigma.copy(), self.lower, self.upper,
                              self.normalizer.copy())


class Critic:
    """State-value network.

    The network predicts ``(1 - gamma) V`` so its output stays on the scale
    of a single reward regardless of the discount.
    """

    def __init__(self, net, gamma, normalizer=None):
        if net.n_out != 1:
            raise ValueError("critic network needs a single output")
        if not 0.0 <= gamma < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        self.net = net
        self.gamma = gamma
        self.scale = 1.0 / (1.0 - gamma)
        self.normalizer = normalizer or RunningNormalizer(net.n_in)

    @classmethod
    def create(cls, state_dim, gamma, rng, hidden=HIDDEN):
        return cls(Mlp((state_dim, *hidden, 1), rng), gamma)

    def value(self, s):
        return self.scale * self.net(self.normalizer(s))[..., 0]

    def value_and_cache(self, s):
        y, cache = self.net.forward_cache(self.normalizer(s))
        return self.scale * y[..., 0], cache

    def backward(self, cache, grad_value):
        """Parameter gradients of ``sum(grad_value * value)``."""
        g = np.asarray(grad_value, dtype=np.float64)[..., None] * self.scale
        grads, _ = self.net.backward(cache, g)
        return grads

    def copy(self):
        return Critic(self.net.copy(), self.gamma, self.normalizer.copy())


@dataclass
class MomentumSGD:
    """``v <- momentum v + g + decay p``;  ``p <- p - lr v``."""

    lr: float
    momentum: float = 0.9
    decay: float = 0.0
    velocity: list = field(default_factory=list)

    def step(self, params, grads):
        if len(grads) != len(params):
            raise ValueError("one gradient per parameter array required")
        for p, g in zip(params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError("non-finite gradient; update rejected")
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g
            if self.decay:
                v += self.decay * p
            p -= self.lr * v


# ---------------------------------------------------------------------------
# Checkpoints


def _pack_net(prefix, net, out):
    out[f"{prefix}_sizes"] = np.array(net.sizes)
    for i, p in enumerate(net.params):
        out[f"{prefix}_p{i}"] = p


def _unpack_net(prefix, data):
    sizes = tuple(int(s) for s in data[f"{prefix}_sizes"])
    params = [data[f"{prefix}_p{i}"] for i in range(2 * (len(sizes) - 1))]
    return Mlp(sizes, params=params)


def _pack_norm(prefix, norm, out):
    out[f"{prefix}_norm"] = np.concatenate([[norm.count, norm.eps, norm.clip], norm.mean, norm.m2])


def _unpack_norm(prefix, data):
    v = data[f"{prefix}_norm"]
    dim = (len(v) - 3) // 2
    norm = RunningNormalizer(dim, float(v[1]), float(v[2]))
    norm.count, norm.mean, norm.m2 = float(v[0]), v[3:3 + dim].copy(), v[3 + dim:].copy()
    return norm


def save_checkpoint(path, policy, critic, iteration=0, meta=None, extra=None):
    """Write networks, normalizers, stddev and metadata to an ``.npz`` file."""
    out = {"version": np.array(CHECKPOINT_VERSION), "iteration": np.array(iteration),
           "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
           "sigma": policy.sigma, "lower": policy.lower, "upper": policy.upper,
           "gamma": np.array(critic.gamma)}
    _pack_net("actor", policy.net, out)
    _pack_net("critic", critic.net, out)
    _pack_norm("actor", policy.normalizer, out)
    _pack_norm("critic", critic.normalizer, out)
    for k, v in (extra or {}).items():
        out[f"extra_{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **out)


@dataclass
class Checkpoint:
    policy: GaussianPolicy
    critic: Critic
    iteration: int
    meta: dict
    extra: dict


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        policy = GaussianPolicy(_unpack_net("actor", data), data["sigma"], data["lower"],
                                data["upper"], _unpack_norm("actor", data))
        critic = Critic(_unpack_net("critic", data), float(data["gamma"]),
                        _unpack_norm("critic", data))
        extra = {k[6:]: data[k].copy() for k in data.files if k.startswith("extra_")}
        return Checkpoint(policy, critic, int(data["iteration"]), json.loads(str(data["meta"])),
                          extra)
