"""Actor-critic networks and the architectural smoothing variants.

Four interchangeable actor mean networks share one interface (``forward``
for taped training passes, ``forward_np`` for tape-free inference,
``penalty`` for the architecture's own loss term):

* ``PlainNet`` -- ordinary MLP baseline.
* ``LocalSNNet`` -- MLP whose output layer is rescaled by its spectral norm
  (power iteration with a persistent direction vector).
* ``LiuNet`` -- per-layer learnable Lipschitz budget c_i; weights are
  row-normalized so each layer's inf-norm constant is at most
  softplus(c_i), and the product of budgets is penalized.
* ``LipsNet`` -- output scaled to K(x) * f(x) / (||J_f(x)||_2 + eps) with a
  learned positive K(x); the Jacobian norm stays on the tape, so training
  differentiates through it (double backprop).

The critic is always a plain MLP; only the actor mean uses a smoothing
architecture.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .nn import Mlp, MlpSpec, softplus_inverse

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

ARCHITECTURES = ("plain", "local_sn", "liu", "lipsnet")

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LipsNetSpec:
    """Configuration of the Jacobian-normalized actor."""

    f_hidden: list = field(default_factory=lambda: [64, 64])
    f_activation: str = "elu"
    k_hidden: list = field(default_factory=lambda: [32])
    k_activation: str = "tanh"
    epsilon: float = 1e-4
    k_init: float = 1.0
    k_loss_weight: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k_init <= 0:
            raise ValueError("k_init must be positive")


@dataclass
class LiuLipschitzSpec:
    """Configuration of the per-layer Lipschitz-budget actor."""

    initial_constant: float = 10.0  # softplus(c_i) at init
    weight: float = 1e-6

    def __post_init__(self):
        if self.initial_constant <= 0:
            raise ValueError("initial_constant must be positive")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")


# ---------------------------------------------------------------------------
# spectral normalization


def spectral_norm_estimate(w, u=None, iters=1, tol=None, rng=None):
    """Power-iteration estimate of the largest singular value of ``w``.

    Returns (sigma, u) where ``u`` is the updated persistent direction.
    With ``tol`` set, iterates until the estimate moves less than ``tol``
    (at least ``iters`` rounds, capped at 10_000) -- the checkpoint-time
    precise mode.
    """
    w = np.asarray(w, dtype=np.float64)
    n_out = w.shape[1]
    if u is None:
        gen = rng if rng is not None else np.random.default_rng(0)
        u = gen.standard_normal(n_out)
        u /= np.linalg.norm(u)
    sigma = 0.0
    count = 0
    while True:
        v = w @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0, u
        v /= nv
        u = v @ w
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0, u
        u /= nu
        new_sigma = float(v @ w @ u)
        count += 1
        if tol is None:
            if count >= iters:
                return new_sigma, u
        else:
            if count >= max(iters, 2) and abs(new_sigma - sigma) <= tol:
                return new_sigma, u
            if count >= 10_000:
                return new_sigma, u
        sigma = new_sigma


def spectral_normalize_output_layer(w, delta=1.0, tol=1e-12):
    """Rescale ``w`` so its spectral norm equals ``delta`` (checkpoint mode).

    Power iteration runs to convergence here; a zero matrix is returned
    unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    sigma, _ = spectral_norm_estimate(w, iters=20, tol=tol)
    if sigma == 0.0:
        return w.copy()
    return delta * w / sigma


# ---------------------------------------------------------------------------
# Liu-Lipschitz row normalization


def liu_normalize_layer(w, c):
    """Scale weight rows so each output unit's |row| sum is <= softplus(c).

    ``w`` is an (in, out) tensor, so a "row" of the layer map is a column
    here: the incoming weights of one output unit.  Rows already under the
    budget are left untouched (scale 1).
    """
    s = ad.softplus(c)
    row_sums = ad.tsum(ad.absolute(w), axis=0, keepdims=True)
    scale = ad.minimum(ad.div(s, ad.maximum(row_sums, 1e-30)), ad.ones(row_sums.shape))
    return ad.mul(w, scale)


def _liu_normalize_np(w, c):
    s = kernels.softplus(np.asarray(c, dtype=np.float64))
    row_sums = np.abs(w).sum(axis=0, keepdims=True)
    scale = np.minimum(s / np.maximum(row_sums, 1e-30), 1.0)
    return w * scale


def liu_loss(c_list, weight):
    """Budget penalty: weight * prod_i softplus(c_i)."""
    if not c_list:
        raise ValueError("c_list must be nonempty")
    prod = ad.softplus(c_list[0])
    for c in c_list[1:]:
        prod = ad.mul(prod, ad.softplus(c))
    return ad.mul(prod, weight)


def lipsnet_k_loss(k_values, weight):
    """Local-Lipschitz penalty: weight * mean(K(x)) over the batch."""
    return ad.mul(ad.tmean(k_values), weight)


# ---------------------------------------------------------------------------
# actor mean networks


class PlainNet:
    arch = "plain"

    def __init__(self, obs_dim, act_dim, rng, hidden=(64, 64)):
        spec = MlpSpec(obs_dim, act_dim, list(hidden), activation="tanh")
        self.mlp = Mlp(spec, rng, output_gain=0.01, prefix="policy/")
        self.params = self.mlp.params

    def forward(self, x):
        return self.mlp.forward(x)

    def forward_np(self, x):
        return self.mlp.forward_np(x)

    def penalty(self, x):
        return None

    def on_checkpoint(self):
        pass


class LocalSNNet:
    """MLP with a spectrally normalized output layer.

    During taped (training) forwards one power-iteration round updates the
    persistent direction ``u`` and the cached norm; tape-free forwards reuse
    the cached norm so rollouts never mutate state.  ``on_checkpoint``
    recomputes the norm to convergence, which is what evaluation uses.
    """

    arch = "local_sn"
    delta = 1.0

    def __init__(self, obs_dim, act_dim, rng, hidden=(64, 64)):
        spec = MlpSpec(obs_dim, act_dim, list(hidden), activation="tanh")
        self.mlp = Mlp(spec, rng, output_gain=0.01, prefix="policy/")
        self.params = self.mlp.params
        self._last = self.mlp.n_layers - 1
        w = self.output_weight().data
        self._u = rng.standard_normal(w.shape[1])
        self._u /= np.linalg.norm(self._u)
        self._sigma = spectral_norm_estimate(w, self._u.copy(), iters=20)[0]

    def output_weight(self):
        return self.mlp.weight(self._last)

    def forward(self, x):
        h = ad.as_tensor(x)
        for i in range(self._last):
            h = ad.tanh(ad.add(ad.matmul(h, self.mlp.weight(i)), self.mlp.bias(i)))
        w = self.output_weight()
        # one power-iteration round; sigma enters the graph as v^T W u with
        # u, v held constant, so gradients flow through W but not the
        # iteration itself
        wd = w.data
        v = wd @ self._u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            self._sigma = 0.0
            return ad.add(ad.matmul(h, w), self.mlp.bias(self._last))
        v /= nv
        u = v @ wd
        u /= np.linalg.norm(u)
        self._u = u
        sigma_t = ad.tsum(ad.mul(w, ad.constant(np.outer(v, u))))
        self._sigma = float(sigma_t.data)
        w_sn = ad.mul(ad.div(w, sigma_t), self.delta)
        return ad.add(ad.matmul(h, w_sn), self.mlp.bias(self._last))

    def forward_np(self, x):
        h = x
        for i in range(self._last):
            h = kernels.tanh(h @ self.mlp.weight(i).data + self.mlp.bias(i).data)
        w = self.output_weight().data
        w_sn = self.delta * w / self._sigma if self._sigma != 0.0 else w
        return h @ w_sn + self.mlp.bias(self._last).data

    def penalty(self, x):
        return None

    def on_checkpoint(self):
        sigma, _ = spectral_norm_estimate(
            self.output_weight().data, self._u.copy(), iters=20, tol=1e-12
        )
        if sigma != 0.0:
            self._sigma = sigma

    def normalized_output_weight(self):
        self.on_checkpoint()
        return self.delta * self.output_weight().data / self._sigma


class LiuNet:
    """MLP with per-layer learnable Lipschitz budgets."""

    arch = "liu"

    def __init__(self, obs_dim, act_dim, rng, spec=None, hidden=(64, 64)):
        self.spec = spec or LiuLipschitzSpec()
        mlp_spec = MlpSpec(obs_dim, act_dim, list(hidden), activation="tanh")
        self.mlp = Mlp(mlp_spec, rng, output_gain=0.01, prefix="policy/")
        self.params = dict(self.mlp.params)
        c0 = softplus_inverse(self.spec.initial_constant)
        for i in range(self.mlp.n_layers):
            self.params[f"policy/l{i}.c"] = ad.tensor(np.float64(c0), requires_grad=True)

    def budget(self, i):
        return self.params[f"policy/l{i}.c"]

    def budgets(self):
        return [self.budget(i) for i in range(self.mlp.n_layers)]

    def forward(self, x):
        h = ad.as_tensor(x)
        for i in range(self.mlp.n_layers):
            w_hat = liu_normalize_layer(self.mlp.weight(i), self.budget(i))
            h = ad.add(ad.matmul(h, w_hat), self.mlp.bias(i))
            if i < self.mlp.n_layers - 1:
                h = ad.tanh(h)
        return h

    def forward_np(self, x):
        h = x
        for i in range(self.mlp.n_layers):
            w_hat = _liu_normalize_np(self.mlp.weight(i).data, self.budget(i).data)
            h = h @ w_hat + self.mlp.bias(i).data
            if i < self.mlp.n_layers - 1:
                h = kernels.tanh(h)
        return h

    def penalty(self, x):
        return liu_loss(self.budgets(), self.spec.weight)

    def lipschitz_bound(self):
        """Product of the per-layer budgets (inf-norm bound)."""
        return float(
            np.prod([kernels.softplus(c.data) for c in self.budgets()])
        )

    def on_checkpoint(self):
        pass


class LipsNet:
    """Jacobian-normalized actor: y = K(x) * f(x) / (||J_f(x)|| + eps).

    K is a small positive network (softplus head) initialized to output
    exactly ``k_init`` everywhere: the head weights start at zero and the
    bias at softplus^-1(k_init).
    """

    arch = "lipsnet"

    def __init__(self, obs_dim, act_dim, rng, spec=None):
        self.spec = spec or LipsNetSpec()
        f_spec = MlpSpec(
            obs_dim, act_dim, list(self.spec.f_hidden),
            activation=self.spec.f_activation,
        )
        k_spec = MlpSpec(
            obs_dim, 1, list(self.spec.k_hidden),
            activation=self.spec.k_activation, output_activation="softplus",
        )
        self.f_mlp = Mlp(f_spec, rng, output_gain=0.01, prefix="policy/f/")
        self.k_mlp = Mlp(k_spec, rng, output_gain=0.01, prefix="policy/k/")
        last = self.k_mlp.n_layers - 1
        self.k_mlp.weight(last).data[:] = 0.0
        self.k_mlp.bias(last).data[:] = softplus_inverse(self.spec.k_init)
        self.params = {**self.f_mlp.params, **self.k_mlp.params}

    def forward(self, x):
        y, _ = self.forward_detail(x)
        return y

    def forward_detail(self, x):
        """Taped forward returning (action mean, K values)."""
        x = ad.as_tensor(x)
        norm, f_out = ad._jacobian_norm_and_value(self.f_mlp.forward, x)
        k = self.k_mlp.forward(x)
        y = ad.mul(k, ad.div(f_out, ad.add(norm, self.spec.epsilon)))
        return y, k

    def forward_np(self, x):
        f_out = self.f_mlp.forward_np(x)
        norm = self._jacobian_norm_np(x)
        k = self.k_mlp.forward_np(x)
        return k * f_out / (norm + self.spec.epsilon)

    def k_np(self, x):
        return self.k_mlp.forward_np(x)

    def _jacobian_norm_np(self, x, iters=15):
        """Tape-free mirror of the taped Jacobian norm (same arithmetic)."""
        jac = self.f_mlp.hidden_derivative_chain(x)  # (batch, in, out)
        b, n, m = jac.shape
        if m == 1:
            ss = np.sum(jac[:, :, 0] ** 2, axis=1, keepdims=True)
            return np.sqrt(ss + 1e-24)
        v = np.full((b, n), 1.0 / math.sqrt(n))
        for _ in range(iters):
            jv = np.einsum("bij,bi->bj", jac, v)
            jtjv = np.einsum("bij,bj->bi", jac, jv)
            norm = np.sqrt(np.sum(jtjv * jtjv, axis=1, keepdims=True) + 1e-24)
            v = jtjv / (norm + 1e-12)
        jv = np.einsum("bij,bi->bj", jac, v)
        return np.sqrt(np.sum(jv * jv, axis=1, keepdims=True) + 1e-24)

    def penalty(self, x):
        k = self.k_mlp.forward(x)
        return lipsnet_k_loss(k, self.spec.k_loss_weight)

    def on_checkpoint(self):
        pass


# ---------------------------------------------------------------------------
# Gaussian policy and actor-critic bundle


def _log_prob_np(mean, log_std, actions):
    # arithmetic mirrors GaussianPolicy.log_prob term for term so rollout
    # and update-time log densities agree bitwise
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    z = (actions - mean) * np.exp(-ls)
    terms = (z * z) * -0.5 - ls
    return terms.sum(axis=-1) + (-0.5 * _LOG_2PI) * mean.shape[-1]


class GaussianPolicy:
    """Diagonal-Gaussian policy over a mean network.

    The mean head is linear (no squashing); the per-dimension log standard
    deviation is a free parameter clamped to [-20, 2].
    """

    def __init__(self, mean_net, act_dim):
        self.mean_net = mean_net
        self.act_dim = act_dim
        self.log_std = ad.tensor(np.zeros(act_dim), requires_grad=True)
        self.params = dict(mean_net.params)
        self.params["policy/log_std"] = self.log_std

    def mean(self, x):
        return self.mean_net.forward(x)

    def mean_np(self, obs):
        return self.mean_net.forward_np(obs)

    def std_np(self):
        return np.exp(np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX))

    def sample_np(self, obs, rng):
        """Stochastic actions + exact log density, tape-free."""
        mean = self.mean_np(obs)
        std = self.std_np()
        noise = rng.standard_normal(mean.shape)
        actions = mean + std * noise
        logp = _log_prob_np(mean, self.log_std.data, actions)
        return actions, logp

    def log_prob(self, obs, actions):
        """Taped per-row log density of ``actions`` (constant) under the
        current policy at ``obs``; shape (batch,)."""
        mean = self.mean(obs)
        ls = ad.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        inv_std = ad.exp(ad.neg(ls))
        z = ad.mul(ad.sub(ad.constant(actions), mean), inv_std)
        terms = ad.sub(ad.mul(ad.mul(z, z), -0.5), ls)
        return ad.add(ad.tsum(terms, axis=1), (-0.5 * _LOG_2PI) * self.act_dim)

    def entropy(self):
        """Differential entropy of the diagonal Gaussian (per sample)."""
        ls = ad.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        return ad.add(ad.tsum(ls), 0.5 * self.act_dim * (1.0 + _LOG_2PI))


class ActorCritic:
    """Policy + value bundle with the uniform interface the trainer uses."""

    def __init__(self, arch, obs_dim, act_dim, rng,
                 lipsnet_spec=None, liu_spec=None, hidden=(64, 64)):
        if arch == "plain":
            mean_net = PlainNet(obs_dim, act_dim, rng, hidden)
        elif arch == "local_sn":
            mean_net = LocalSNNet(obs_dim, act_dim, rng, hidden)
        elif arch == "liu":
            mean_net = LiuNet(obs_dim, act_dim, rng, liu_spec, hidden)
        elif arch == "lipsnet":
            mean_net = LipsNet(obs_dim, act_dim, rng, lipsnet_spec)
        else:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
        self.arch = arch
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.policy = GaussianPolicy(mean_net, act_dim)
        value_spec = MlpSpec(obs_dim, 1, list(hidden), activation="tanh")
        self.value_net = Mlp(value_spec, rng, output_gain=1.0, prefix="value/")
        self.params = {**self.policy.params, **self.value_net.params}

    # -- policy surface -----------------------------------------------------
    def mean(self, x):
        return self.policy.mean(x)

    def mean_np(self, obs):
        return self.policy.mean_np(obs)

    def log_prob(self, obs, actions):
        return self.policy.log_prob(obs, actions)

    def entropy(self):
        return self.policy.entropy()

    def penalty(self, x):
        return self.policy.mean_net.penalty(x)

    # -- value surface ------------------------------------------------------
    def value(self, x):
        return self.value_net.forward(x)

    def value_np(self, obs):
        return self.value_net.forward_np(obs)

    # -- acting -------------------------------------------------------------
    def act(self, obs, mode, rng=None):
        """Action for a single observation.

        ``stochastic`` samples from the Gaussian (requires ``rng``);
        ``deterministic`` returns the mean.  Returns (action, log_prob,
        value).
        """
        obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
        if mode == "stochastic":
            if rng is None:
                raise ValueError("stochastic mode needs an rng")
            actions, logp = self.policy.sample_np(obs, rng)
        elif mode == "deterministic":
            actions = self.mean_np(obs)
            logp = _log_prob_np(actions, self.policy.log_std.data, actions)
        else:
            raise ValueError(f"unknown act mode {mode!r}")
        value = float(self.value_np(obs)[0, 0])
        return actions[0], float(logp[0]), value

    def on_checkpoint(self):
        self.policy.mean_net.on_checkpoint()

    def state_tensors(self):
        """name -> ndarray view of every trainable parameter."""
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, tensors):
        for name, t in self.params.items():
            if name not in tensors:
                raise KeyError(f"checkpoint missing tensor {name!r}")
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"expected {t.data.shape}"
                )
            t.data[...] = arr
        self.on_checkpoint()
