"""Hot inner loops.

Two kernels dominate runtime: fixed-step RK4 for linear matrix ODEs of the
form ``dX/dt = L(t) X + X R(t) + F(t)`` with coefficients sampled on a
uniform grid, and one synchronous round of consensus tracking. Each has a
numba implementation (explicit loops) and a numpy implementation; the module
level names ``rk4_linear`` and ``consensus_round`` point at whichever path
``DISTLQ_DISABLE_NUMBA`` selects.

Coefficients between grid nodes are linearly interpolated, so the RK4
midpoint stage uses the average of the two neighbouring samples.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "rk4_linear",
    "rk4_linear_numpy",
    "rk4_linear_jit",
    "consensus_round",
    "consensus_round_numpy",
    "consensus_round_jit",
    "BACKEND",
]


# ---------------------------------------------------------------------------
# RK4 for linear matrix ODEs
# ---------------------------------------------------------------------------

def rk4_linear_numpy(L, R, F, X0, h, backward):
    """Integrate ``dX/dt = L X + X R + F`` on a uniform grid.

    Parameters
    ----------
    L : (K+1, a, a) array
    R : (K+1, b, b) array
    F : (K+1, a, b) array
    X0 : (a, b) array
        Value at the first node (forward) or the last node (backward).
    h : float
        Grid spacing.
    backward : bool
        Integrate from the last node towards the first.

    Returns
    -------
    (K+1, a, b) array of samples at every node.
    """
    K = L.shape[0] - 1
    out = np.empty((K + 1,) + X0.shape)
    X = np.array(X0, dtype=float)

    def f(Lt, Rt, Ft, Xt):
        return Lt @ Xt + Xt @ Rt + Ft

    if backward:
        out[K] = X
        dt = -h
        order = range(K, 0, -1)
        step = -1
    else:
        out[0] = X
        dt = h
        order = range(0, K)
        step = 1
    for j in order:
        jn = j + step
        Lm = 0.5 * (L[j] + L[jn])
        Rm = 0.5 * (R[j] + R[jn])
        Fm = 0.5 * (F[j] + F[jn])
        k1 = f(L[j], R[j], F[j], X)
        k2 = f(Lm, Rm, Fm, X + 0.5 * dt * k1)
        k3 = f(Lm, Rm, Fm, X + 0.5 * dt * k2)
        k4 = f(L[jn], R[jn], F[jn], X + dt * k3)
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[jn] = X
    return out


@njit
def _lin_rhs(Lt, Rt, Ft, X, out):
    a = X.shape[0]
    b = X.shape[1]
    for r in range(a):
        for c in range(b):
            s = Ft[r, c]
            for q in range(a):
                s += Lt[r, q] * X[q, c]
            for q in range(b):
                s += X[r, q] * Rt[q, c]
            out[r, c] = s


@njit
def rk4_linear_jit(L, R, F, X0, h, backward):
    K = L.shape[0] - 1
    a = X0.shape[0]
    b = X0.shape[1]
    out = np.empty((K + 1, a, b))
    X = X0.copy()
    Lm = np.empty((a, a))
    Rm = np.empty((b, b))
    Fm = np.empty((a, b))
    k1 = np.empty((a, b))
    k2 = np.empty((a, b))
    k3 = np.empty((a, b))
    k4 = np.empty((a, b))
    tmp = np.empty((a, b))
    if backward:
        out[K] = X
        dt = -h
        j = K
        step = -1
    else:
        out[0] = X
        dt = h
        j = 0
        step = 1
    for _ in range(K):
        jn = j + step
        for r in range(a):
            for c in range(a):
                Lm[r, c] = 0.5 * (L[j, r, c] + L[jn, r, c])
        for r in range(b):
            for c in range(b):
                Rm[r, c] = 0.5 * (R[j, r, c] + R[jn, r, c])
        for r in range(a):
            for c in range(b):
                Fm[r, c] = 0.5 * (F[j, r, c] + F[jn, r, c])
        _lin_rhs(L[j], R[j], F[j], X, k1)
        for r in range(a):
            for c in range(b):
                tmp[r, c] = X[r, c] + 0.5 * dt * k1[r, c]
        _lin_rhs(Lm, Rm, Fm, tmp, k2)
        for r in range(a):
            for c in range(b):
                tmp[r, c] = X[r, c] + 0.5 * dt * k2[r, c]
        _lin_rhs(Lm, Rm, Fm, tmp, k3)
        for r in range(a):
            for c in range(b):
                tmp[r, c] = X[r, c] + dt * k3[r, c]
        _lin_rhs(L[jn], R[jn], F[jn], tmp, k4)
        for r in range(a):
            for c in range(b):
                X[r, c] = X[r, c] + (dt / 6.0) * (
                    k1[r, c] + 2.0 * k2[r, c] + 2.0 * k3[r, c] + k4[r, c]
                )
        out[jn] = X
        j = jn
    return out


# ---------------------------------------------------------------------------
# One consensus-tracking round
# ---------------------------------------------------------------------------

def consensus_round_numpy(X, G, alpha, inv_gamma, indptr, indices):
    """``X_i + alpha (G_i - X_i) + inv_gamma * sum_j (X_j - X_i)`` for all i.

    ``X`` and ``G`` are ``(N, D)``; neighbours are given in CSR form. Every
    agent reads the previous-round snapshot only.
    """
    N = X.shape[0]
    coupling = np.zeros_like(X)
    for i in range(N):
        nbrs = indices[indptr[i]:indptr[i + 1]]
        if len(nbrs):
            coupling[i] = X[nbrs].sum(axis=0) - len(nbrs) * X[i]
    return X + alpha * (G - X) + inv_gamma * coupling


@njit
def consensus_round_jit(X, G, alpha, inv_gamma, indptr, indices):
    N, D = X.shape
    out = np.empty_like(X)
    for i in range(N):
        start = indptr[i]
        stop = indptr[i + 1]
        deg = stop - start
        for d in range(D):
            s = 0.0
            for p in range(start, stop):
                s += X[indices[p], d]
            xi = X[i, d]
            out[i, d] = xi + alpha * (G[i, d] - xi) + inv_gamma * (s - deg * xi)
    return out


if USE_NUMBA:
    rk4_linear = rk4_linear_jit
    consensus_round = consensus_round_jit
    BACKEND = "numba"
else:
    rk4_linear = rk4_linear_numpy
    consensus_round = consensus_round_numpy
    BACKEND = "numpy"
