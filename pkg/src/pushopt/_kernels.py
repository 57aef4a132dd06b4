"""Jitted chunk kernels for the scalar sine-family experiments.

These mirror the numpy step functions in algo.py exactly: same update
order, same counter-based key chains, same Box-Muller mapping. Trajectories
agree with the reference path up to libm rounding in the transcendentals.
Only d == 1 additive-noise runs over static/cyclic schedules are handled;
everything else takes the numpy path.
"""

import numpy as np
from numba import njit

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_SECOND = U64(0xD6E8FEB86659FD93)
_NOISE_TAG = U64(0xA1)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
_ONE = U64(1)
_ZERO = U64(0)
_INV53 = 1.1102230246251565e-16


@njit(cache=True)
def _mix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _gauss(h):
    u1 = ((h >> _S11) + _ONE) * _INV53
    h2 = _mix64(h ^ _SECOND)
    u2 = (h2 >> _S11) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit(cache=True)
def _noise_key(seed, i, t, slot):
    h = _mix64(seed)
    h = _mix64(h ^ _NOISE_TAG)
    h = _mix64(h ^ U64(i))
    h = _mix64(h ^ U64(t))
    h = _mix64(h ^ U64(slot))
    h = _mix64(h ^ _ZERO)  # coordinate index, always 0 for scalar models
    return h


@njit(cache=True)
def _pl_grad(z, ai):
    return 2.0 * z + 6.0 * np.sin(z) * np.cos(z) - ai * np.sin(z)


@njit(cache=True)
def pl_sine_chain(x, y, v, g, W_stack, t0, steps, alpha, beta, sigma, a,
                  seed, shared_noise, is_sgd, xbar_out, record_xbar, guard):
    """Advance the swarm by `steps` rounds in place.

    Returns (status, y_inv_max): status is -1 on success or the 1-based
    step index where the divergence guard tripped; y_inv_max tracks
    max over steps of 1/min_i y_i.
    """
    n = x.shape[0]
    m = W_stack.shape[0]
    rslot = 0 if shared_noise else 1
    y_inv_max = 0.0
    for s in range(steps):
        t = t0 + s
        W = W_stack[t % m]
        if is_sgd:
            grads = np.empty(n)
            for i in range(n):
                z = x[i] / y[i]
                grads[i] = _pl_grad(z, a[i]) + sigma * _gauss(_noise_key(seed, i, t, 0))
            x1 = np.dot(W, x - alpha * grads)
            y1 = np.dot(W, y)
            for i in range(n):
                v[i] = grads[i]
                g[i] = grads[i]
        else:
            x1 = np.dot(W, x - alpha * g)
            y1 = np.dot(W, y)
            vnew = np.empty(n)
            for i in range(n):
                z1 = x1[i] / y1[i]
                z0 = x[i] / y[i]
                gf = _pl_grad(z1, a[i]) + sigma * _gauss(_noise_key(seed, i, t, 0))
                gr = _pl_grad(z0, a[i]) + sigma * _gauss(_noise_key(seed, i, t, rslot))
                vnew[i] = gf + (1.0 - beta) * (v[i] - gr)
            g1 = np.dot(W, g + vnew - v)
            for i in range(n):
                v[i] = vnew[i]
                g[i] = g1[i]
        ok = True
        for i in range(n):
            if not np.isfinite(x1[i]) or np.abs(x1[i]) > guard:
                ok = False
            if not is_sgd and (not np.isfinite(g[i]) or np.abs(g[i]) > guard):
                ok = False
        if not ok:
            return t + 1, y_inv_max
        ymin = y1[0]
        total = 0.0
        for i in range(n):
            x[i] = x1[i]
            y[i] = y1[i]
            if y1[i] < ymin:
                ymin = y1[i]
            total += x1[i]
        if 1.0 / ymin > y_inv_max:
            y_inv_max = 1.0 / ymin
        if record_xbar:
            xbar_out[t + 1] = total / n
    return -1, y_inv_max
