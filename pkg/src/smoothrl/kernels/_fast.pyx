# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; formula-for-formula mirror of ``_reference``."""

from libc.math cimport tanh as c_tanh, exp as c_exp, expm1 as c_expm1
from libc.math cimport log1p as c_log1p, fabs as c_fabs, sqrt as c_sqrt, pow as c_pow

import numpy as np

BACKEND = "fast"


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + c_exp(-x))
    e = c_exp(x)
    return e / (1.0 + e)


def tanh(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = c_tanh(xv[i])
    return out


def tanh_grad(y, g):
    y = np.ascontiguousarray(y, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = g.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out


def elu(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = xv[i] if xv[i] > 0.0 else c_expm1(xv[i])
    return out


def elu_grad(x, y, g):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = g.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * (1.0 if xv[i] > 0.0 else yv[i] + 1.0)
    return out


def softplus(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double xi
    for i in range(n):
        xi = xv[i]
        ov[i] = (xi if xi > 0.0 else 0.0) + c_log1p(c_exp(-c_fabs(xi)))
    return out


def softplus_grad(x, g):
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = g.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * _sigmoid(xv[i])
    return out


def sigmoid(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = _sigmoid(xv[i])
    return out


def sigmoid_grad(s, g):
    s = np.ascontiguousarray(s, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    out = np.empty_like(s)
    cdef double[::1] sv = s.ravel()
    cdef double[::1] gv = g.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = sv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * sv[i] * (1.0 - sv[i])
    return out


def gae_scan(rewards, values, dones, double bootstrap_value,
             double gamma, double lam):
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    dones = np.ascontiguousarray(dones, dtype=np.float64)
    cdef Py_ssize_t n = rewards.shape[0]
    adv = np.empty(n, dtype=np.float64)
    cdef double[::1] rv = rewards
    cdef double[::1] vv = values
    cdef double[::1] dv = dones
    cdef double[::1] av = adv
    cdef double acc = 0.0, next_value = bootstrap_value, live, delta
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        live = 1.0 - dv[t]
        delta = rv[t] + gamma * next_value * live - vv[t]
        acc = delta + gamma * lam * live * acc
        av[t] = acc
        next_value = vv[t]
    return adv


def adam_step(param, grad, m, v, t, double lr, double beta1,
              double beta2, double eps):
    if not (param.flags.c_contiguous and m.flags.c_contiguous
            and v.flags.c_contiguous):
        raise ValueError("adam_step needs contiguous state arrays")
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    cdef double[::1] pv = param.ravel()
    cdef double[::1] gv = grad.ravel()
    cdef double[::1] mv = m.ravel()
    cdef double[::1] vv = v.ravel()
    cdef double bc1 = 1.0 - c_pow(beta1, t)
    cdef double bc2 = 1.0 - c_pow(beta2, t)
    cdef double step = lr / bc1
    cdef Py_ssize_t i, n = pv.shape[0]
    for i in range(n):
        mv[i] = mv[i] * beta1 + (1.0 - beta1) * gv[i]
        vv[i] = vv[i] * beta2 + (1.0 - beta2) * (gv[i] * gv[i])
        pv[i] = pv[i] - step * mv[i] / (c_sqrt(vv[i] / bc2) + eps)
    return None
