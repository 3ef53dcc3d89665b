"""Numba inner loops for the online-SGD training paths.

The spherical update for the correlation loss has the closed per-step form

    c      = (delta/d) * y * sigma'(w.x)
    w_new  = ((1 - c h) w + c x) / sqrt(1 + c^2 (|x|^2 - h^2)),  h = w.x

because the tangent gradient is orthogonal to w (so the norm follows from
Pythagoras and is always >= 1). Overlaps evolve by the same affine map, so
each step costs one dot product and one axpy.

Status codes: 0 budget exhausted, 1 early stop (requested recoveries hit),
2 divergence (non-finite pre-activation).
"""

import math

import numpy as np
from numba import njit

ACT_RELU = 0
ACT_SMOOTHED_RELU = 1


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def sgd_chunk(w, X, ys, xu, xv, xsq, lr_over_d, act_kind, act_tau,
              eta, au, av, t0, tau_u, tau_v,
              record_every, rec_t, rec_u, rec_v, rec_n, stop_mask):
    B, d = X.shape
    status = 0
    t = t0
    for i in range(B):
        t = t0 + i + 1
        h = 0.0
        for k in range(d):
            h += X[i, k] * w[k]
        if not math.isfinite(h):
            return au, av, t, tau_u, tau_v, rec_n, 2
        if act_kind == ACT_RELU:
            dact = 1.0 if h > 0.0 else 0.0
        else:
            dact = _sigmoid(h / act_tau)
        if dact != 0.0:
            c = lr_over_d * ys[i] * dact
            om = 1.0 - c * h
            s = xsq[i] - h * h
            if s < 0.0:
                s = 0.0
            nrm = math.sqrt(1.0 + c * c * s)
            for k in range(d):
                w[k] = (om * w[k] + c * X[i, k]) / nrm
            au = (om * au + c * xu[i]) / nrm
            av = (om * av + c * xv[i]) / nrm
        if tau_u < 0 and abs(au) >= eta:
            tau_u = t
        if tau_v < 0 and abs(av) >= eta:
            tau_v = t
        if record_every > 0 and t % record_every == 0:
            rec_t[rec_n] = t
            rec_u[rec_n] = au
            rec_v[rec_n] = av
            rec_n += 1
        if stop_mask != 0:
            done = True
            if stop_mask & 1 and tau_u < 0:
                done = False
            if stop_mask & 2 and tau_v < 0:
                done = False
            if done:
                return au, av, t, tau_u, tau_v, rec_n, 1
    return au, av, t, tau_u, tau_v, rec_n, status


@njit(cache=True)
def two_layer_relu_chunk(W, a, X, ys, eta1, eta2):
    """Online squared-loss steps for a ReLU two-layer net; batch size 1.

    Returns (summed loss, status, steps done); status 2 flags divergence.
    """
    B, d = X.shape
    m = W.shape[0]
    z = np.empty(m)
    loss_sum = 0.0
    for i in range(B):
        f = 0.0
        for k in range(m):
            s = 0.0
            for c in range(d):
                s += W[k, c] * X[i, c]
            z[k] = s
            if s > 0.0:
                f += a[k] * s
        if not math.isfinite(f):
            return loss_sum, 2, i
        e = f - ys[i]
        loss_sum += 0.5 * e * e
        for k in range(m):
            if z[k] > 0.0:
                coef = eta1 * e * a[k]
                for c in range(d):
                    W[k, c] -= coef * X[i, c]
                a[k] -= eta2 * e * z[k]
    return loss_sum, 0, B
