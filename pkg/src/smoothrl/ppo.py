"""Clipped-surrogate PPO with GAE; the single trainer behind every method.

One trainer instance owns one environment, one actor-critic and one
optimizer.  RNG usage is split into fixed streams keyed by (seed, purpose)
so that, e.g., regularizer noise never perturbs the env/action streams --
this is what makes zero-weight methods train bit-identically to vanilla.

Rollout and update alternate sequentially.  Rollouts run on the tape-free
NumPy path; updates build a fresh tape per minibatch.
"""

import numpy as np
from dataclasses import dataclass, field

from . import autodiff as ad
from . import kernels
from .regularizers import total_loss


@dataclass
class PpoConfig:
    clip_ratio: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 10
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    rollout_length: int = 2048
    total_steps: int = 150_000
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if not 0.0 < self.clip_ratio < 1.0:
            raise ValueError("clip_ratio must be in (0, 1)")
        if self.minibatch_size <= 0 or self.rollout_length <= 0:
            raise ValueError("sizes must be positive")


@dataclass
class Trajectory:
    """Aligned rollout sequences (observations already normalized)."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    next_observations: np.ndarray
    bootstrap_value: float

    def __post_init__(self):
        n = len(self.observations)
        for name in ("actions", "rewards", "dones", "values", "log_probs",
                     "next_observations"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} misaligned")
        if not np.all(np.isfinite(self.log_probs)):
            raise ValueError("non-finite log probabilities in trajectory")

    def __len__(self):
        return len(self.observations)


class TrainingDiverged(RuntimeError):
    """Raised when an update produces a non-finite loss; carries a dump of
    the offending minibatch for diagnosis."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class RunningNorm:
    """Streaming mean/variance used for observation normalization.

    Matches the usual parallel-variance update with a tiny initial count;
    evaluation freezes the statistics by simply not calling ``update``.
    """

    def __init__(self, dim, clip=10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, obs):
        delta = obs - self.mean
        total = self.count + 1.0
        self.mean = self.mean + delta / total
        m_a = self.var * self.count
        m2 = m_a + delta * delta * self.count / total
        self.var = m2 / total
        self.count = total

    def normalize(self, obs):
        scaled = (obs - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(scaled, -self.clip, self.clip)

    def state_tensors(self, prefix="obs_norm/"):
        return {
            prefix + "mean": self.mean,
            prefix + "var": self.var,
            prefix + "count": np.array([self.count]),
        }

    @classmethod
    def from_state(cls, tensors, dim, prefix="obs_norm/"):
        norm = cls(dim)
        norm.mean = np.asarray(tensors[prefix + "mean"], dtype=np.float64)
        norm.var = np.asarray(tensors[prefix + "var"], dtype=np.float64)
        norm.count = float(np.asarray(tensors[prefix + "count"]).ravel()[0])
        return norm


class Adam:
    """Bias-corrected Adam over a name -> Tensor parameter dict."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, grads):
        self.t += 1
        for name, tensor in self.params.items():
            kernels.adam_step(
                tensor.data, grads[name], self.m[name], self.v[name],
                self.t, self.lr, self.beta1, self.beta2, self.eps,
            )


def clip_grad_norm(grads, max_norm):
    """Global-norm gradient clipping; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    total = np.sqrt(total)
    coef = max_norm / (total + 1e-6)
    if coef < 1.0:
        for g in grads.values():
            g *= coef
    return total


def compute_gae(traj, discount, gae_lambda):
    """Raw generalized advantages and value targets.

    delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t, accumulated backward
    with factor gamma*lambda; episode boundaries stop both bootstrap and
    propagation.  Returns (advantages, returns = advantages + values);
    normalization is the updater's job.
    """
    adv = kernels.gae_scan(
        np.asarray(traj.rewards, dtype=np.float64),
        np.asarray(traj.values, dtype=np.float64),
        np.asarray(traj.dones, dtype=np.float64),
        float(traj.bootstrap_value), discount, gae_lambda,
    )
    return adv, adv + traj.values


def collect_rollout(ac, env, norm, length, rng, start_obs=None,
                    update_norm=True):
    """Gather ``length`` steps with stochastic actions.

    Observations are normalized with the running statistics as they stream
    in (each raw observation updates the stats once, right when the env
    returns it).  Returns (Trajectory, episode_returns, carry) where carry
    is the normalized observation to resume from.
    """

    def ingest(raw):
        if update_norm:
            norm.update(raw)
        return norm.normalize(raw)

    obs = start_obs if start_obs is not None else ingest(env.reset())

    dim = env.obs_dim
    observations = np.empty((length, dim))
    next_observations = np.empty((length, dim))
    actions = np.empty((length, env.act_dim))
    rewards = np.empty(length)
    dones = np.empty(length)
    log_probs = np.empty(length)

    episode_returns = []
    ep_return = 0.0
    policy = ac.policy
    for t in range(length):
        act, logp = policy.sample_np(obs.reshape(1, -1), rng)
        result = env.step(act[0])
        nxt = ingest(result.observation)
        observations[t] = obs
        next_observations[t] = nxt
        actions[t] = act[0]
        rewards[t] = result.reward
        dones[t] = 1.0 if result.done else 0.0
        log_probs[t] = logp[0]
        ep_return += result.reward
        if result.done:
            episode_returns.append(ep_return)
            ep_return = 0.0
            obs = ingest(env.reset())
        else:
            obs = nxt

    # values in one batched pass; the policy is frozen during the rollout
    values = ac.value_np(observations)[:, 0]
    bootstrap = float(ac.value_np(next_observations[-1:].reshape(1, -1))[0, 0])
    traj = Trajectory(observations, actions, rewards, dones, values,
                      log_probs, next_observations, bootstrap)
    return traj, episode_returns, obs


def ppo_update(ac, optimizer, traj, cfg, method, reg_rng, shuffle_rng):
    """One PPO update phase (epochs x minibatches) over a trajectory.

    Returns per-term loss means for logging; the logged decomposition sums
    to the logged total.  A non-finite loss aborts with a diagnostic dump of
    the offending minibatch.
    """
    advantages, returns = compute_gae(traj, cfg.discount, cfg.gae_lambda)
    adv_std = advantages.std(ddof=1) if len(advantages) > 1 else 0.0
    norm_adv = (advantages - advantages.mean()) / (adv_std + 1e-8)

    n = len(traj)
    params = ac.params
    param_list = list(params.values())
    names = list(params)
    stats = {"loss_total": 0.0, "loss_rl": 0.0, "loss_reg": 0.0,
             "loss_clip": 0.0, "loss_value": 0.0, "entropy": 0.0,
             "grad_norm": 0.0}
    batches = 0

    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            obs_mb = traj.observations[idx]
            try:
                with ad.tape():
                    logp_new = ac.log_prob(ad.constant(obs_mb), traj.actions[idx])
                    ratio = ad.exp(ad.sub(logp_new, ad.constant(traj.log_probs[idx])))
                    adv_c = ad.constant(norm_adv[idx])
                    unclipped = ad.mul(ratio, adv_c)
                    clipped = ad.mul(
                        ad.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio),
                        adv_c,
                    )
                    loss_clip = ad.neg(ad.tmean(ad.minimum(unclipped, clipped)))

                    values_new = ad.reshape(ac.value(ad.constant(obs_mb)), (len(idx),))
                    err = ad.sub(values_new, ad.constant(returns[idx]))
                    loss_value = ad.tmean(ad.mul(err, err))

                    rl_loss = ad.add(loss_clip, ad.mul(loss_value, cfg.value_coef))
                    if cfg.entropy_coef != 0.0:
                        rl_loss = ad.sub(rl_loss, ad.mul(ac.entropy(), cfg.entropy_coef))

                    loss, reg_terms = total_loss(
                        rl_loss, ac, method, obs_mb,
                        traj.next_observations[idx], reg_rng,
                    )
                    grad_tensors = ad.grad(loss, param_list)
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite loss in update: {exc}",
                    diagnostics={
                        "epoch": epoch,
                        "minibatch_start": int(start),
                        "indices": idx.tolist(),
                        "obs_mean": float(obs_mb.mean()),
                        "obs_absmax": float(np.abs(obs_mb).max()),
                        "actions_absmax": float(np.abs(traj.actions[idx]).max()),
                        "log_std": ac.policy.log_std.data.tolist(),
                    },
                ) from exc

            grads = {name: g.data for name, g in zip(names, grad_tensors)}
            grad_norm = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(grads)

            ls = np.clip(ac.policy.log_std.data, -20.0, 2.0)
            entropy_val = float(np.sum(ls) + 0.5 * len(ls) * (1.0 + np.log(2 * np.pi)))
            stats["loss_total"] += loss.item()
            stats["loss_rl"] += rl_loss.item()
            stats["loss_reg"] += sum(reg_terms.values())
            stats["loss_clip"] += loss_clip.item()
            stats["loss_value"] += loss_value.item()
            stats["entropy"] += entropy_val
            stats["grad_norm"] += grad_norm
            batches += 1

    return {k: v / batches for k, v in stats.items()}


def rng_stream(seed, purpose):
    """Deterministic, independent generator keyed by (seed, purpose)."""
    tags = {"init": 0, "env": 1, "actions": 2, "reg": 3, "shuffle": 4,
            "dr": 5, "eval": 6}
    return np.random.default_rng(np.random.SeedSequence((seed, tags[purpose])))


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    steps: int = 0


class PpoTrainer:
    """Owns one (env, method, seed) training run."""

    def __init__(self, env, method, cfg, seed):
        self.env = env
        self.method = method
        self.cfg = cfg
        self.seed = seed
        self.rng_actions = rng_stream(seed, "actions")
        self.rng_reg = rng_stream(seed, "reg")
        self.rng_shuffle = rng_stream(seed, "shuffle")
        self.ac = method.build(env.obs_dim, env.act_dim, rng_stream(seed, "init"))
        self.norm = RunningNorm(env.obs_dim)
        self.optimizer = Adam(self.ac.params, cfg.learning_rate)
        self._carry = None

    def train(self, total_steps=None, on_iteration=None):
        """Alternate rollout and update until the step budget is spent.

        ``on_iteration(step, row)`` fires after every update with the curve
        row that was just recorded.
        """
        total = total_steps if total_steps is not None else self.cfg.total_steps
        result = TrainResult()
        steps = 0
        last_mean_return = float("nan")
        while steps < total:
            horizon = min(self.cfg.rollout_length, max(total - steps, 1))
            traj, ep_returns, self._carry = collect_rollout(
                self.ac, self.env, self.norm, horizon, self.rng_actions,
                start_obs=self._carry,
            )
            stats = ppo_update(self.ac, self.optimizer, traj, self.cfg,
                               self.method, self.rng_reg, self.rng_shuffle)
            steps += horizon
            result.episode_returns.extend(ep_returns)
            if ep_returns:
                last_mean_return = float(np.mean(ep_returns))
            row = {
                "step": steps,
                "mean_episode_return": last_mean_return,
                "loss_total": stats["loss_total"],
                "loss_rl": stats["loss_rl"],
                "loss_reg": stats["loss_reg"],
            }
            result.curve.append(row)
            if on_iteration is not None:
                on_iteration(steps, row)
        result.steps = steps
        self.ac.on_checkpoint()
        return result

    def state_tensors(self):
        tensors = dict(self.ac.state_tensors())
        tensors.update(self.norm.state_tensors())
        return tensors
