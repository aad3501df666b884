"""Compiled inner loops for the BSM network.

Every public operation in :mod:`bsm.network` goes through these kernels, so
the single-sample API and the bulk streaming loop share one implementation.
Arrays passed in are modified in place; callers own the copies.
"""

import numpy as np
from numba import njit

CLIP = 0
SPARSE = 1

CONVERGED = 0
MAX_ITERS = 1
NONFINITE = 2


@njit(cache=True)
def activate(z, kind, T, lam):
    if kind == CLIP:
        if z > 1.0:
            return 1.0
        if z < -1.0:
            return -1.0
        return z
    if z >= T + lam:
        return T
    if z >= lam:
        return z - lam
    if z <= -(T + lam):
        return -T
    if z < -lam:
        return z + lam
    return 0.0


@njit(cache=True)
def _drive(W, M, D, x, y, wx, out):
    # out = W x - Mbar D y
    d = W.shape[0]
    for i in range(d):
        s = wx[i]
        for j in range(d):
            if j != i:
                s -= M[i, j] * D[j] * y[j]
        out[i] = s


@njit(cache=True)
def dynamics(W, M, D, x, u, y, step, tol, max_iters, kind, T, lam, path):
    """Forward-Euler integration of du/dtau = -u + W x - Mbar D y.

    ``u`` carries the initial state in and the final state out; ``y`` is
    overwritten with the output. ``path`` (shape (max_iters + 1, d) or
    (0, d)) records y after every iteration when non-empty.
    Returns (iterations, status).
    """
    d = W.shape[0]
    n = x.shape[0]
    wx = np.empty(d)
    gain = np.empty(d)
    drive = np.empty(d)
    for i in range(d):
        s = 0.0
        for j in range(n):
            s += W[i, j] * x[j]
        wx[i] = s
        gain[i] = M[i, i] * D[i]
        y[i] = activate(u[i] / gain[i], kind, T, lam)
    record = path.shape[0] > 0
    if record:
        path[0, :] = y
    for k in range(1, max_iters + 1):
        _drive(W, M, D, x, y, wx, drive)
        delta = 0.0
        for i in range(d):
            u[i] += step * (drive[i] - u[i])
            if not np.isfinite(u[i]):
                return k, NONFINITE
            yi = activate(u[i] / gain[i], kind, T, lam)
            diff = abs(yi - y[i])
            if diff > delta:
                delta = diff
            y[i] = yi
        if record:
            path[k, :] = y
        if delta < tol:
            # components sitting on a flat piece of the activation must also
            # be at rest: the fixed-point target maps to the same output
            _drive(W, M, D, x, y, wx, drive)
            settled = True
            for i in range(d):
                z = u[i] / gain[i]
                if kind == CLIP:
                    flat = abs(z) >= 1.0
                else:
                    flat = abs(z) >= T + lam or abs(z) <= lam
                if flat and activate(drive[i] / gain[i], kind, T, lam) != y[i]:
                    settled = False
                    break
            if settled:
                return k, CONVERGED
    return max_iters, MAX_ITERS


@njit(cache=True)
def update(W, M, D, x, y, g2, eta, beta, d_floor, ups_floor):
    d, n = W.shape
    a = 1.0 - g2
    for i in range(d):
        for j in range(n):
            W[i, j] = g2 * W[i, j] + a * y[i] * x[j]
    for i in range(d):
        for j in range(i, d):
            vij = g2 * M[i, j] + a * y[i] * y[j]
            vji = g2 * M[j, i] + a * y[j] * y[i]
            v = 0.5 * (vij + vji)
            M[i, j] = v
            M[j, i] = v
        if M[i, i] < ups_floor:
            M[i, i] = ups_floor
    gap = np.empty(d)
    for i in range(d):
        exc = 0.0
        for j in range(n):
            exc += W[i, j] * W[i, j]
        inh = 0.0
        for j in range(d):
            inh += D[j] * M[i, j] * M[i, j]
        gap[i] = exc - inh
    for i in range(d):
        v = (1.0 - beta) * D[i] + eta * gap[i]
        D[i] = v if v > d_floor else d_floor


@njit(cache=True)
def stream(W, M, D, u, X, Y, iters, peak, warm, step, tol, max_iters,
           kind, T, lam, g2, eta, beta, d_floor, ups_floor):
    """Run dynamics + update over the columns of X.

    Returns (samples processed, status, unconverged count). On a non-finite
    status the state reflects the last good sample.
    """
    d, n_samples = Y.shape
    n = X.shape[0]
    x = np.empty(n)
    y = np.empty(d)
    u_try = np.empty(d)
    empty = np.empty((0, d))
    unconverged = 0
    for t in range(n_samples):
        for j in range(n):
            x[j] = X[j, t]
        for i in range(d):
            u_try[i] = u[i] if warm else 0.0
        k, status = dynamics(W, M, D, x, u_try, y, step, tol, max_iters,
                             kind, T, lam, empty)
        if status == NONFINITE:
            return t, status, unconverged
        if status == MAX_ITERS:
            unconverged += 1
        p = 0.0
        for i in range(d):
            Y[i, t] = y[i]
            z = abs(u_try[i] / (M[i, i] * D[i]))
            if z > p:
                p = z
            u[i] = u_try[i]
        iters[t] = k
        peak[t] = p
        update(W, M, D, x, y, g2, eta, beta, d_floor, ups_floor)
    return n_samples, CONVERGED, unconverged
