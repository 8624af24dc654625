"""Shared independent oracles for the test suite.

Everything here is deliberately naive (loops, direct summation) so it stays
independent of the library code paths it checks.
"""

import numpy as np


def naive_matmul(a, b):
    """Triple-loop matrix product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def finite_diff_grad(f, x, h=1e-5):
    """Central finite differences of scalar f with respect to array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = f(x)
        flat_x[i] = orig - h
        fm = f(x)
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of vector-valued f at 1-d point x."""
    x = np.array(x, dtype=np.float64)
    y0 = np.asarray(f(x))
    jac = np.zeros((y0.size, x.size))
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        yp = np.asarray(f(x))
        x[i] = orig - h
        ym = np.asarray(f(x))
        x[i] = orig
        jac[:, i] = (yp - ym) / (2.0 * h)
    return jac


def max_rel_err(approx, exact):
    """Largest deviation relative to the largest exact magnitude."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    scale = max(np.max(np.abs(exact)), 1e-8)
    return float(np.max(np.abs(approx - exact)) / scale)


def direct_dft_amplitudes(x):
    """O(N^2) one-sided DFT magnitudes of a real series.

    Returns (freq_indices 1..floor(N/2), magnitudes |X_i|) with the Nyquist
    magnitude halved for even N, matching the library's band convention.
    The mean is removed first (the DC band is excluded by definition).
    """
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    n_samples = x.size
    n_bands = n_samples // 2
    idx = np.arange(1, n_bands + 1)
    mags = np.zeros(n_bands)
    t = np.arange(n_samples)
    for pos, k in enumerate(idx):
        re = np.sum(x * np.cos(-2.0 * np.pi * k * t / n_samples))
        im = np.sum(x * np.sin(-2.0 * np.pi * k * t / n_samples))
        mag = np.hypot(re, im)
        if n_samples % 2 == 0 and k == n_bands:
            mag *= 0.5
        mags[pos] = mag
    return idx, mags


def direct_smoothness(x, f_s):
    """O(N^2) reference for the frequency-weighted smoothness scalar."""
    x = np.asarray(x, dtype=np.float64)
    idx, mags = direct_dft_amplitudes(x)
    n_bands = idx.size
    freqs = idx * f_s / x.size
    return float(2.0 / (n_bands * f_s) * np.sum(mags * freqs))


def direct_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """O(T^2) direct-summation advantages.

    A_t = sum_k (gamma*lam)^k delta_{t+k}, truncated at episode boundaries:
    a done at step t stops propagation beyond t.
    """
    horizon = len(rewards)
    next_values = np.append(values[1:], bootstrap_value)
    deltas = [
        rewards[t] + gamma * next_values[t] * (1.0 - dones[t]) - values[t]
        for t in range(horizon)
    ]
    adv = np.zeros(horizon)
    for t in range(horizon):
        coef = 1.0
        for k in range(t, horizon):
            adv[t] += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
    return adv
