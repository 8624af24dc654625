"""NumPy reference implementations of the hot kernels.

The Cython backend in ``_fast.pyx`` mirrors these formulas operation for
operation; any change here must be applied there as well.  Everything is
float64 in and float64 out.
"""

import numpy as np

BACKEND = "reference"


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, g):
    """Gradient of tanh given its output y: g * (1 - y^2)."""
    return g * (1.0 - y * y)


def elu(x):
    return np.where(x > 0.0, x, np.expm1(x))


def elu_grad(x, y, g):
    """Gradient of ELU (alpha=1): 1 where x > 0, else exp(x) = y + 1."""
    return g * np.where(x > 0.0, 1.0, y + 1.0)


def softplus(x):
    # max(x, 0) + log1p(exp(-|x|)) never overflows
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_grad(x, g):
    return g * sigmoid(x)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(s, g):
    return g * s * (1.0 - s)


def gae_scan(rewards, values, dones, bootstrap_value, gamma, lam):
    """Backward recursion for generalized advantage estimation.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    V_{t+1} for the final step is ``bootstrap_value``.
    """
    n = rewards.shape[0]
    adv = np.empty(n, dtype=np.float64)
    acc = 0.0
    next_value = bootstrap_value
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        acc = delta + gamma * lam * live * acc
        adv[t] = acc
        next_value = values[t]
    return adv


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on param, m and v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    step = lr / bc1
    param -= step * m / (np.sqrt(v / bc2) + eps)
