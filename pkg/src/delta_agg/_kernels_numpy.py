"""Vectorized numpy kernels, batched over agents.

Parameter layout per agent (row of ``theta``)::

    W1 (h, n_in) | b1 (h) | W2 (h, h) | b2 (h) | w3 (h) | b3 (1)
"""

import numpy as np
from scipy.special import expit

SOFTPLUS_LINEAR_AT = 30.0


def softplus(z):
    return np.where(z > SOFTPLUS_LINEAR_AT, z, np.log1p(np.exp(np.minimum(z, SOFTPLUS_LINEAR_AT))))


def _unpack(theta, h, n_in):
    n = theta.shape[0]
    o = 0
    w1 = theta[:, o:o + h * n_in].reshape(n, h, n_in)
    o += h * n_in
    b1 = theta[:, o:o + h]
    o += h
    w2 = theta[:, o:o + h * h].reshape(n, h, h)
    o += h * h
    b2 = theta[:, o:o + h]
    o += h
    w3 = theta[:, o:o + h]
    o += h
    b3 = theta[:, o]
    return w1, b1, w2, b2, w3, b3


def _forward(theta, u, h):
    w1, b1, w2, b2, w3, b3 = _unpack(theta, h, u.shape[1])
    z1 = np.einsum("nij,nj->ni", w1, u) + b1
    a1 = softplus(z1)
    z2 = np.einsum("nij,nj->ni", w2, a1) + b2
    a2 = softplus(z2)
    out = np.einsum("ni,ni->n", w3, a2) + b3
    return out, (w1, w2, w3, z1, a1, z2, a2)


def mlp_value_input_grad(theta, u, h):
    out, (w1, w2, w3, z1, _, z2, _) = _forward(theta, u, h)
    d2 = w3 * expit(z2)
    d1 = np.einsum("nji,nj->ni", w2, d2) * expit(z1)
    gin = np.einsum("nji,nj->ni", w1, d1)
    return out, gin


def mlp_loss_param_grad(theta, u, y_obs, reg, h):
    out, (_, w2, w3, z1, a1, z2, a2) = _forward(theta, u, h)
    n = theta.shape[0]
    resid = y_obs - out
    d2 = w3 * expit(z2)
    d1 = np.einsum("nji,nj->ni", w2, d2) * expit(z1)
    dout = np.concatenate(
        [
            (d1[:, :, None] * u[:, None, :]).reshape(n, -1),
            d1,
            (d2[:, :, None] * a1[:, None, :]).reshape(n, -1),
            d2,
            a2,
            np.ones((n, 1)),
        ],
        axis=1,
    )
    loss = 0.5 * resid * resid + reg * np.einsum("nm,nm->n", theta, theta)
    g3 = -resid[:, None] * dout + 2.0 * reg * theta
    return loss, g3


def mix(indptr, indices, data, v):
    """Row ``i`` of the result is ``sum_j a_ij v_j`` over stored neighbors only."""
    contrib = data[:, None] * v[indices]
    return np.add.reduceat(contrib, indptr[:-1], axis=0)
