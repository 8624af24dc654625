"""Self-contained continuous-control environments.

Two desk-scale tasks with fully known dynamics:

* ``PendulumEnv`` -- the classic torque-limited swing-up, constants pinned to
  the public Pendulum-v1 convention (g=10, m=1, l=1, dt=0.05, 200 steps) so
  published numbers remain comparable.
* ``ReacherEnv`` -- a damped 2-d point mass pushed toward a per-episode
  random target, 150 steps.

Plus a domain-randomization wrapper that perturbs mass, actions and
observations per the transferable knobs of the hardware-training recipe
(action noise, mass scaling, sensor noise).

Every environment owns its RNG stream; the same seed reproduces trajectories
bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


def _require_finite_action(action):
    if not np.all(np.isfinite(action)):
        raise ValueError(f"non-finite action: {action!r}")


def _wrap_angle(theta):
    """Wrap to [-pi, pi)."""
    return ((theta + np.pi) % (2.0 * np.pi)) - np.pi


class PendulumEnv:
    """Torque-limited pendulum swing-up.

    Dynamics (semi-implicit Euler, matching the reference implementation):

        thdot' = thdot + (3g/(2l) sin th + 3/(m l^2) u) dt,  clipped to [-8, 8]
        th'    = th + thdot' dt

    with u clipped to [-2, 2].  Reward is computed from the pre-step state:
    -(wrap(th)^2 + 0.1 thdot^2 + 0.001 u^2), so it lies in
    [-(pi^2 + 0.1*64 + 0.001*4), 0].  Episodes are exactly 200 steps.
    """

    name = "pendulum"
    obs_dim = 3
    act_dim = 1
    episode_length = 200
    dt = 0.05
    max_torque = 2.0
    max_speed = 8.0
    gravity = 10.0
    obs_groups = (("angle", slice(0, 2)), ("angular_velocity", slice(2, 3)))

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.mass = 1.0
        self.length = 1.0
        self.state = np.zeros(2)
        self.step_count = 0

    @property
    def sampling_frequency(self):
        return 1.0 / self.dt

    def reset(self):
        theta = self.rng.uniform(-np.pi, np.pi)
        theta_dot = self.rng.uniform(-1.0, 1.0)
        self.state = np.array([theta, theta_dot])
        self.step_count = 0
        return self._obs()

    def step(self, action):
        _require_finite_action(action)
        if self.step_count >= self.episode_length:
            raise RuntimeError("step() called on a finished episode; reset first")
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0],
                          -self.max_torque, self.max_torque))
        theta, theta_dot = self.state
        cost = _wrap_angle(theta) ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2

        g, m, length = self.gravity, self.mass, self.length
        theta_dot = theta_dot + (
            3.0 * g / (2.0 * length) * np.sin(theta)
            + 3.0 / (m * length ** 2) * u
        ) * self.dt
        theta_dot = float(np.clip(theta_dot, -self.max_speed, self.max_speed))
        theta = theta + theta_dot * self.dt
        self.state = np.array([theta, theta_dot])

        self.step_count += 1
        done = self.step_count >= self.episode_length
        return StepResult(self._obs(), -cost, done)

    def _obs(self):
        theta, theta_dot = self.state
        return np.array([np.cos(theta), np.sin(theta), theta_dot])


class ReacherEnv:
    """Damped 2-d point mass steered toward a per-episode target.

    Acceleration equals the clipped action divided by the (randomizable)
    mass; velocity is damped multiplicatively each step.  Reward is the
    negative post-step distance to the target minus a small effort penalty.
    """

    name = "reacher"
    obs_dim = 6
    act_dim = 2
    episode_length = 150
    dt = 0.05
    max_force = 1.0
    max_speed = 2.0
    max_pos = 3.0
    obs_groups = (
        ("position", slice(0, 2)),
        ("velocity", slice(2, 4)),
        ("target", slice(4, 6)),
    )

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.mass = 1.0
        self.damping = 0.95
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.target = np.zeros(2)
        self.step_count = 0

    @property
    def sampling_frequency(self):
        return 1.0 / self.dt

    @property
    def state(self):
        return np.concatenate([self.pos, self.vel, self.target])

    def reset(self):
        self.pos = self.rng.uniform(-0.5, 0.5, size=2)
        self.vel = np.zeros(2)
        self.target = self.rng.uniform(-1.0, 1.0, size=2)
        self.step_count = 0
        return self._obs()

    def step(self, action):
        _require_finite_action(action)
        if self.step_count >= self.episode_length:
            raise RuntimeError("step() called on a finished episode; reset first")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2),
                    -self.max_force, self.max_force)
        self.vel = self.damping * (self.vel + a / self.mass * self.dt)
        self.vel = np.clip(self.vel, -self.max_speed, self.max_speed)
        self.pos = np.clip(self.pos + self.vel * self.dt,
                           -self.max_pos, self.max_pos)
        reward = -(
            float(np.linalg.norm(self.pos - self.target))
            + 0.001 * float(a @ a)
        )
        self.step_count += 1
        done = self.step_count >= self.episode_length
        return StepResult(self._obs(), reward, done)

    def _obs(self):
        return np.concatenate([self.pos, self.vel, self.target])


@dataclass
class DomainRandomizationConfig:
    """Transferable randomization knobs (additive action noise, mass scaling,
    additive sensor noise, env-specific physics ranges)."""

    action_noise_std: float = 0.02
    mass_scale_range: tuple = (0.95, 1.05)
    obs_noise_std: dict = field(default_factory=dict)
    friction_or_gain_ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.action_noise_std < 0:
            raise ValueError("action_noise_std must be >= 0")
        lo, hi = self.mass_scale_range
        if hi < lo:
            raise ValueError("mass_scale_range must be a nonempty interval")
        for name, std in self.obs_noise_std.items():
            if std < 0:
                raise ValueError(f"obs noise std for {name!r} must be >= 0")
        for name, (lo, hi) in self.friction_or_gain_ranges.items():
            if hi < lo:
                raise ValueError(f"range for {name!r} must be nonempty")


# sensor-noise defaults carried over from the hardware-training recipe:
# orientation-like channels 0.06, velocity-like channels 0.25-0.3
DEFAULT_OBS_NOISE = {
    "pendulum": {"angle": 0.06, "angular_velocity": 0.3},
    "reacher": {"position": 0.06, "velocity": 0.25, "target": 0.0},
}


class DomainRandomizedEnv:
    """Wrapper applying a DomainRandomizationConfig around a base env.

    Per episode: the base mass is scaled by a uniform draw, and any
    configured physics attributes are redrawn.  Per step: Gaussian noise is
    added to the action before the env sees it, and to the observation
    before the policy sees it.  Zero-noise settings skip their draws
    entirely, so a fully zeroed config is bit-identical to the bare env.
    """

    def __init__(self, env, config, rng):
        self.env = env
        self.config = config
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._base_mass = env.mass
        self._base_params = {
            name: getattr(env, name) for name in config.friction_or_gain_ranges
        }

    def __getattr__(self, item):
        return getattr(self.env, item)

    def reset(self):
        lo, hi = self.config.mass_scale_range
        if lo != 1.0 or hi != 1.0:
            self.env.mass = self._base_mass * self.rng.uniform(lo, hi)
        for name, (plo, phi) in self.config.friction_or_gain_ranges.items():
            if plo != phi:
                setattr(self.env, name, self.rng.uniform(plo, phi))
        return self._noisy_obs(self.env.reset())

    def step(self, action):
        std = self.config.action_noise_std
        if std > 0:
            action = np.asarray(action, dtype=np.float64) + self.rng.normal(
                0.0, std, size=self.env.act_dim
            )
        result = self.env.step(action)
        return StepResult(self._noisy_obs(result.observation),
                          result.reward, result.done)

    def _noisy_obs(self, obs):
        noise_cfg = self.config.obs_noise_std
        if not noise_cfg:
            return obs
        obs = obs.copy()
        for name, sl in self.env.obs_groups:
            std = noise_cfg.get(name, 0.0)
            if std > 0:
                obs[sl] += self.rng.normal(0.0, std, size=obs[sl].shape)
        return obs


def randomize(env, config, rng):
    """Wrap ``env`` with domain randomization."""
    return DomainRandomizedEnv(env, config, rng)


_REGISTRY = {"pendulum": PendulumEnv, "reacher": ReacherEnv}


def make_env(name, seed=0):
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown environment {name!r}; available: {sorted(_REGISTRY)}"
        ) from None
    return cls(seed=seed)


def env_names():
    return sorted(_REGISTRY)
