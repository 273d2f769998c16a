"""Loop kernels compiled with numba; same contracts as ``_kernels_numpy``."""

import math

import numpy as np
from numba import njit

SOFTPLUS_LINEAR_AT = 30.0


@njit(cache=True, inline="always")
def _softplus_sigmoid(z):
    """``(softplus(z), sigmoid(z))`` from a single exponential."""
    if z > SOFTPLUS_LINEAR_AT:
        return z, 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return math.log1p(e), e / (1.0 + e)


@njit(cache=True)
def _forward_one(th, u, h, sg1, a1, sg2, a2):
    # sg1, sg2 receive the activation slopes (sigmoids), not the pre-activations
    n_in = u.shape[0]
    ob1 = h * n_in
    ow2 = ob1 + h
    ob2 = ow2 + h * h
    ow3 = ob2 + h
    ob3 = ow3 + h
    for k in range(h):
        acc = th[ob1 + k]
        for j in range(n_in):
            acc += th[k * n_in + j] * u[j]
        a1[k], sg1[k] = _softplus_sigmoid(acc)
    for k in range(h):
        acc = th[ob2 + k]
        base = ow2 + k * h
        for j in range(h):
            acc += th[base + j] * a1[j]
        a2[k], sg2[k] = _softplus_sigmoid(acc)
    out = th[ob3]
    for k in range(h):
        out += th[ow3 + k] * a2[k]
    return out


@njit(cache=True)
def _backward_deltas(th, h, n_in, sg1, sg2, d1, d2):
    ow2 = h * n_in + h
    ow3 = ow2 + h * h + h
    for k in range(h):
        d2[k] = th[ow3 + k] * sg2[k]
    for j in range(h):
        d1[j] = 0.0
    for k in range(h):
        base = ow2 + k * h
        dk = d2[k]
        for j in range(h):
            d1[j] += th[base + j] * dk
    for j in range(h):
        d1[j] *= sg1[j]


@njit(cache=True)
def mlp_value_input_grad(theta, u, h):
    n, n_in = u.shape
    out = np.empty(n)
    gin = np.zeros((n, n_in))
    sg1 = np.empty(h)
    a1 = np.empty(h)
    sg2 = np.empty(h)
    a2 = np.empty(h)
    d1 = np.empty(h)
    d2 = np.empty(h)
    for i in range(n):
        th = theta[i]
        out[i] = _forward_one(th, u[i], h, sg1, a1, sg2, a2)
        _backward_deltas(th, h, n_in, sg1, sg2, d1, d2)
        for j in range(n_in):
            acc = 0.0
            for k in range(h):
                acc += th[k * n_in + j] * d1[k]
            gin[i, j] = acc
    return out, gin


@njit(cache=True)
def mlp_loss_param_grad(theta, u, y_obs, reg, h):
    n, n_in = u.shape
    m = theta.shape[1]
    loss = np.empty(n)
    g3 = np.empty((n, m))
    sg1 = np.empty(h)
    a1 = np.empty(h)
    sg2 = np.empty(h)
    a2 = np.empty(h)
    d1 = np.empty(h)
    d2 = np.empty(h)
    ob1 = h * n_in
    ow2 = ob1 + h
    ob2 = ow2 + h * h
    ow3 = ob2 + h
    ob3 = ow3 + h
    for i in range(n):
        th = theta[i]
        ui = u[i]
        out = _forward_one(th, ui, h, sg1, a1, sg2, a2)
        _backward_deltas(th, h, n_in, sg1, sg2, d1, d2)
        resid = y_obs[i] - out
        sq = 0.0
        for p in range(m):
            sq += th[p] * th[p]
        loss[i] = 0.5 * resid * resid + reg * sq
        g = g3[i]
        for k in range(h):
            for j in range(n_in):
                g[k * n_in + j] = d1[k] * ui[j]
            g[ob1 + k] = d1[k]
            base = ow2 + k * h
            for j in range(h):
                g[base + j] = d2[k] * a1[j]
            g[ob2 + k] = d2[k]
            g[ow3 + k] = a2[k]
        g[ob3] = 1.0
        for p in range(m):
            g[p] = -resid * g[p] + 2.0 * reg * th[p]
    return loss, g3


@njit(cache=True)
def mix(indptr, indices, data, v):
    n = indptr.shape[0] - 1
    d = v.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for c in range(d):
                out[i, c] += w * v[j, c]
    return out
