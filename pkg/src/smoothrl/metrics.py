"""Evaluation metrics: cumulative return and FFT-based action smoothness.

The smoothness scalar is the normalized frequency-weighted mean of the
one-sided amplitude spectrum of an action trace,

    Sm = 2 / (n * f_s) * sum_i M_i * f_i,      f_i = i * f_s / N,

over bands i = 1..n, n = floor(N/2).  Band amplitudes M_i are raw one-sided
DFT magnitudes |X_i| (Nyquist half-weighted for even N); the DC band is
excluded, which makes Sm invariant to constant offsets.  Multi-dimensional
traces are scored per dimension and averaged.  Higher values mean more
high-frequency content; an exactly constant trace scores exactly 0.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import make_env

MIN_TRACE_LENGTH = 8


@dataclass
class SmoothnessSpectrum:
    """One-sided spectrum (dimension-averaged) plus the smoothness scalar."""

    f_s: float
    frequencies: np.ndarray          # (n,) band frequencies in Hz
    amplitudes: np.ndarray           # (n,) dimension-averaged magnitudes
    n: int
    sm: float
    per_dim_sm: np.ndarray           # (dims,) per-dimension scalars


def amplitude_spectrum(trace, f_s):
    """One-sided raw-magnitude spectrum of a 1-d trace, DC excluded.

    Returns (frequencies, magnitudes) of the n = floor(N/2) bands.  The
    trace mean is removed before the transform; an exactly constant trace
    short-circuits to a zero spectrum (a mixed-radix FFT would leave ~1e-16
    residue otherwise).
    """
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("amplitude_spectrum expects a 1-d trace")
    n_samples = x.size
    if n_samples < MIN_TRACE_LENGTH:
        raise ValueError(
            f"trace too short for a spectrum: {n_samples} < {MIN_TRACE_LENGTH}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in trace")
    n_bands = n_samples // 2
    freqs = np.arange(1, n_bands + 1) * (f_s / n_samples)
    if np.max(x) == np.min(x):
        return freqs, np.zeros(n_bands)
    mags = np.abs(np.fft.rfft(x - x.mean()))[1:n_bands + 1]
    if n_samples % 2 == 0:
        mags[-1] *= 0.5
    return freqs, mags


def smoothness(trace, f_s):
    """SmoothnessSpectrum of an action trace, shape (N,) or (N, dims)."""
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("trace must be (N,) or (N, dims)")
    dims = x.shape[1]
    n_bands = x.shape[0] // 2
    per_dim = np.empty(dims)
    mean_mags = np.zeros(n_bands)
    freqs = None
    for d in range(dims):
        freqs, mags = amplitude_spectrum(x[:, d], f_s)
        per_dim[d] = 2.0 / (n_bands * f_s) * float(np.sum(mags * freqs))
        mean_mags += mags
    mean_mags /= dims
    return SmoothnessSpectrum(
        f_s=f_s,
        frequencies=freqs,
        amplitudes=mean_mags,
        n=n_bands,
        sm=float(np.mean(per_dim)),
        per_dim_sm=per_dim,
    )


def cumulative_return(rewards):
    """Exactly rounded sum of per-step rewards."""
    rewards = list(rewards)
    if not rewards:
        raise ValueError("empty reward sequence")
    return math.fsum(rewards)


@dataclass
class EvalStats:
    """Per-run evaluation summary over independent deterministic episodes."""

    episodes: int
    return_mean: float
    return_std: float
    sm_mean: float
    sm_std: float
    returns: np.ndarray
    sms: np.ndarray
    per_dim_sm_mean: list = field(default_factory=list)


def _sample_std(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def evaluate(ac, norm, env_name, episodes, seed, trace_sink=None):
    """Deterministic-policy evaluation over independent episodes.

    Episodes run in lockstep (same fixed horizon), each on its own env
    seeded by (seed, episode index); actions are the policy mean, recorded
    for the smoothness trace as executed, i.e. clipped to the actuator
    range.  ``trace_sink(episode_index, trace)`` receives each (N, act_dim)
    trace when given.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    envs = [
        make_env(env_name, seed=np.random.SeedSequence((seed, 6, ep)))
        for ep in range(episodes)
    ]
    probe = envs[0]
    horizon = probe.episode_length
    act_low, act_high = _action_bounds(probe)

    obs = np.stack([env.reset() for env in envs])
    traces = np.empty((episodes, horizon, probe.act_dim))
    rewards = np.empty((episodes, horizon))
    for t in range(horizon):
        actions = ac.mean_np(norm.normalize(obs))
        executed = np.clip(actions, act_low, act_high)
        traces[:, t, :] = executed
        for i, env in enumerate(envs):
            result = env.step(actions[i])
            rewards[i, t] = result.reward
            obs[i] = result.observation

    returns = np.array([cumulative_return(rewards[i]) for i in range(episodes)])
    f_s = probe.sampling_frequency
    spectra = [smoothness(traces[i], f_s) for i in range(episodes)]
    sms = np.array([s.sm for s in spectra])
    if trace_sink is not None:
        for i in range(episodes):
            trace_sink(i, traces[i])
    return EvalStats(
        episodes=episodes,
        return_mean=float(returns.mean()),
        return_std=_sample_std(returns),
        sm_mean=float(sms.mean()),
        sm_std=_sample_std(sms),
        returns=returns,
        sms=sms,
        per_dim_sm_mean=np.mean([s.per_dim_sm for s in spectra], axis=0).tolist(),
    )


def _action_bounds(env):
    if hasattr(env, "max_torque"):
        return -env.max_torque, env.max_torque
    if hasattr(env, "max_force"):
        return -env.max_force, env.max_force
    raise AttributeError(f"env {env!r} exposes no actuator bounds")
