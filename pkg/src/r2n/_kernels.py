"""Compiled forward/backward/Adam loops used by ``training.train``.

Parameters live in one flat float64 vector laid out as
``[W (N*m, row-major), b (m), U (M*J, row-major), V (J)]``, the same layout as
``ModelParams.to_flat``. The numpy implementation in ``training.backward`` is
the readable reference; tests check these kernels against it.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sig(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def _penalty(theta, N, m, M, J, tau, lam_and, lam_or, lam_p):
    nw = N * m
    ou = nw + m
    ov = ou + M * J
    pen_p = 0.0
    for k in range(nw):
        pen_p += abs(theta[k])
    pen_and = 0.0
    for k in range(M * J):
        pen_and += _sig(theta[ou + k] / tau)
    pen_or = 0.0
    for j in range(J):
        pen_or += _sig(theta[ov + j] / tau)
    return lam_and * pen_and + lam_or * pen_or + lam_p * pen_p


@njit(cache=True)
def _forward_row(theta, N, m, M, J, x, p, tau, wa, wd, phi, s):
    """Fill phi and s for one row; return (y_hat, argmax)."""
    nw = N * m
    for k in range(m):
        a = theta[nw + k]
        for n in range(N):
            a += x[n] * theta[n * m + k]
        phi[k] = _sig(a / tau)
    for k in range(M - m):
        phi[m + k] = p[k]
    best = -1.0
    arg = 0
    for j in range(J):
        acc = 0.0
        for i in range(M):
            acc += wa[i * J + j] * (1.0 - phi[i])
        s[j] = acc
        zj = 1.0 - min(acc, 1.0)
        t = wd[j] * zj
        if t > best:
            best = t
            arg = j
    return best, arg


@njit(cache=True)
def full_loss(theta, N, m, M, J, X, P, y, tau, lam_and, lam_or, lam_p):
    ou = N * m + m
    ov = ou + M * J
    wa = np.empty(M * J)
    for k in range(M * J):
        wa[k] = _sig(theta[ou + k] / tau)
    wd = np.empty(J)
    for j in range(J):
        wd[j] = _sig(theta[ov + j] / tau)
    phi = np.empty(M)
    s = np.empty(J)
    B = X.shape[0]
    mse = 0.0
    for r in range(B):
        yh, _ = _forward_row(theta, N, m, M, J, X[r], P[r], tau, wa, wd, phi, s)
        d = yh - y[r]
        mse += d * d
    return mse / B + _penalty(theta, N, m, M, J, tau, lam_and, lam_or, lam_p)


@njit(cache=True)
def batch_loss_grad(theta, N, m, M, J, X, P, y, rows, tau, lam_and, lam_or, lam_p, grad):
    """Loss on ``X[rows]`` and its gradient written into ``grad``."""
    nw = N * m
    ou = nw + m
    ov = ou + M * J
    for k in range(grad.size):
        grad[k] = 0.0
    wa = np.empty(M * J)
    for k in range(M * J):
        wa[k] = _sig(theta[ou + k] / tau)
    wd = np.empty(J)
    for j in range(J):
        wd[j] = _sig(theta[ov + j] / tau)
    phi = np.empty(M)
    s = np.empty(J)
    B = rows.size
    mse = 0.0
    for q in range(B):
        r = rows[q]
        x = X[r]
        yh, js = _forward_row(theta, N, m, M, J, x, P[r], tau, wa, wd, phi, s)
        d = yh - y[r]
        mse += d * d
        g = 2.0 * d / B
        zs = 1.0 - min(s[js], 1.0)
        # accumulate d/d wd into the V slot, converted to logits below
        grad[ov + js] += g * zs
        if s[js] < 1.0:
            # z = 1 - s below the clamp
            ds = -g * wd[js]
            for i in range(M):
                grad[ou + i * J + js] += (1.0 - phi[i]) * ds
            for k in range(m):
                dphi = -ds * wa[k * J + js]
                da = dphi * phi[k] * (1.0 - phi[k]) / tau
                grad[nw + k] += da
                for n in range(N):
                    grad[n * m + k] += x[n] * da
    for k in range(M * J):
        w = wa[k]
        grad[ou + k] = (grad[ou + k] + lam_and) * w * (1.0 - w) / tau
    for j in range(J):
        w = wd[j]
        grad[ov + j] = (grad[ov + j] + lam_or) * w * (1.0 - w) / tau
    for k in range(nw):
        t = theta[k]
        if t > 0.0:
            grad[k] += lam_p
        elif t < 0.0:
            grad[k] -= lam_p
    return mse / B + _penalty(theta, N, m, M, J, tau, lam_and, lam_or, lam_p)


@njit(cache=True)
def adam_update(theta, grad, m1, m2, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step in place; ``t`` is the new step count."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k in range(theta.size):
        g = grad[k]
        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g
        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g
        theta[k] -= lr * (m1[k] / c1) / (math.sqrt(m2[k] / c2) + eps)


@njit(cache=True)
def run_batches(theta, m1, m2, t, N, m, M, J, X, P, y, order, batch_size, tau,
                lam_and, lam_or, lam_p, lr, beta1, beta2, eps, grad):
    """Consume ``order`` in consecutive batches; return the updated step count."""
    n = order.size
    start = 0
    while start < n:
        stop = min(start + batch_size, n)
        batch_loss_grad(theta, N, m, M, J, X, P, y, order[start:stop], tau,
                        lam_and, lam_or, lam_p, grad)
        t += 1
        adam_update(theta, grad, m1, m2, t, lr, beta1, beta2, eps)
        start = stop
    return t
