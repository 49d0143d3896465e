"""Dense small-matrix utilities and ODE kernels used by every solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from . import kernels
from .errors import IntegrationDivergenceError, LyapunovSolveError, StructuralError

__all__ = [
    "TimeGrid",
    "MatrixTrajectory",
    "VectorTrajectory",
    "integrate_matrix_ode",
    "integrate_linear_ode",
    "matrix_exponential",
    "pseudo_inverse",
    "solve_lyapunov",
    "psd_order_holds",
    "symmetrize",
    "sqrtm_psd",
    "inv_sqrtm_pd",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[t_start, t_end]`` with ``num_steps`` intervals."""

    t_end: float
    num_steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise StructuralError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        if int(self.num_steps) != self.num_steps or self.num_steps < 2:
            raise StructuralError(f"num_steps must be an integer >= 2, got {self.num_steps}")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.num_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.num_steps + 1)

    def __len__(self):
        return self.num_steps + 1


def _interp(grid: TimeGrid, samples: np.ndarray, t: float) -> np.ndarray:
    if t < grid.t_start - 1e-12 or t > grid.t_end + 1e-12:
        raise ValueError(f"t={t} outside [{grid.t_start}, {grid.t_end}]")
    s = (t - grid.t_start) / grid.h
    j = min(max(int(np.floor(s)), 0), grid.num_steps - 1)
    w = s - j
    return (1.0 - w) * samples[j] + w * samples[j + 1]


@dataclass(frozen=True)
class MatrixTrajectory:
    """Matrix samples at every node of a grid; linear interpolation between nodes."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 3 or s.shape[0] != len(self.grid):
            raise StructuralError(
                f"expected ({len(self.grid)}, r, c) samples, got shape {s.shape}"
            )
        object.__setattr__(self, "samples", s)

    def __call__(self, t: float) -> np.ndarray:
        return _interp(self.grid, self.samples, t)

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]


@dataclass(frozen=True)
class VectorTrajectory:
    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] != len(self.grid):
            raise StructuralError(
                f"expected ({len(self.grid)}, n) samples, got shape {s.shape}"
            )
        object.__setattr__(self, "samples", s)

    def __call__(self, t: float) -> np.ndarray:
        return _interp(self.grid, self.samples, t)

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]


def _check_finite(samples: np.ndarray, backward: bool) -> None:
    flat = samples.reshape(samples.shape[0], -1)
    bad = ~np.isfinite(flat).all(axis=1)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise IntegrationDivergenceError(idx[-1] if backward else idx[0])


def integrate_matrix_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    boundary_value,
    grid: TimeGrid,
    direction: str = "forward",
) -> MatrixTrajectory:
    """Classical RK4 for a general matrix ODE ``dX/dt = rhs(t, X)``.

    ``forward`` fixes the value at ``t_start``, ``backward`` at ``t_end``.
    Scalars and vectors are promoted to matrices (``(1, 1)`` and ``(n, 1)``).
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    X = np.atleast_2d(np.asarray(boundary_value, dtype=float))
    if X.shape[0] == 1 and np.ndim(boundary_value) == 1:
        X = X.T
    t = grid.nodes
    K = grid.num_steps
    out = np.empty((K + 1,) + X.shape)
    backward = direction == "backward"
    dt = -grid.h if backward else grid.h
    j = K if backward else 0
    out[j] = X
    for _ in range(K):
        tj = t[j]
        k1 = rhs(tj, X)
        k2 = rhs(tj + 0.5 * dt, X + 0.5 * dt * k1)
        k3 = rhs(tj + 0.5 * dt, X + 0.5 * dt * k2)
        k4 = rhs(tj + dt, X + dt * k3)
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        j += -1 if backward else 1
        out[j] = X
        if not np.all(np.isfinite(X)):
            raise IntegrationDivergenceError(j)
    return MatrixTrajectory(grid, out)


def integrate_linear_ode(
    grid: TimeGrid,
    boundary_value,
    left=None,
    right=None,
    forcing=None,
    direction: str = "forward",
) -> np.ndarray:
    """RK4 for ``dX/dt = L(t) X + X R(t) + F(t)`` with sampled coefficients.

    ``left``, ``right`` and ``forcing`` are arrays of samples on ``grid``
    (or ``None`` for zero). Returns the ``(K+1, a, b)`` samples; this is the
    path every solver uses, dispatched to the compiled kernel when numba is
    enabled.
    """
    X0 = np.asarray(boundary_value, dtype=float)
    if X0.ndim == 1:
        X0 = X0[:, None]
    a, b = X0.shape
    n1 = len(grid)
    L = np.zeros((n1, a, a)) if left is None else np.ascontiguousarray(left, dtype=float)
    R = np.zeros((n1, b, b)) if right is None else np.ascontiguousarray(right, dtype=float)
    F = np.zeros((n1, a, b)) if forcing is None else np.ascontiguousarray(forcing, dtype=float)
    if F.ndim == 2:
        F = np.ascontiguousarray(F[:, :, None])
    if L.shape != (n1, a, a) or R.shape != (n1, b, b) or F.shape != (n1, a, b):
        raise StructuralError(
            f"coefficient shapes {L.shape}, {R.shape}, {F.shape} do not match boundary {X0.shape}"
        )
    backward = direction == "backward"
    out = kernels.rk4_linear(L, R, F, np.ascontiguousarray(X0), float(grid.h), backward)
    _check_finite(out, backward)
    return out


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling-and-squaring with a Pade approximant."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)) or not np.isfinite(t):
        raise ValueError("matrix_exponential needs finite input")
    return scipy.linalg.expm(M * t)


def pseudo_inverse(M, rank_tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose inverse via SVD.

    Singular values below ``rank_tol * sigma_max`` are treated as zero.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(M.T.shape)
    keep = s > rank_tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def symmetrize(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def solve_lyapunov(Z, V, tol: float = 1e-10, symmetric: bool = True) -> np.ndarray:
    """Solve ``Z' P + P Z + V = 0`` through the vectorized Kronecker system.

    Raises
    ------
    LyapunovSolveError
        If some eigenvalue pair of ``Z`` has ``|l_i + l_j| < tol * max(1, |Z|)``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n = Z.shape[0]
    if Z.shape != (n, n) or V.shape != (n, n):
        raise StructuralError(f"shape mismatch: Z {Z.shape}, V {V.shape}")
    eig = np.linalg.eigvals(Z)
    gap = np.abs(eig[:, None] + eig[None, :]).min()
    scale = max(1.0, np.linalg.norm(Z, 2))
    if gap < tol * scale:
        raise LyapunovSolveError(
            f"Lyapunov operator is singular: min |l_i + l_j| = {gap:.3e}"
        )
    eye = np.eye(n)
    # column-major vec: vec(Z'P) = (I kron Z') vec(P), vec(PZ) = (Z' kron I) vec(P)
    op = np.kron(eye, Z.T) + np.kron(Z.T, eye)
    p = np.linalg.solve(op, -V.reshape(-1, order="F"))
    P = p.reshape(n, n, order="F")
    return symmetrize(P) if symmetric else P


def psd_order_holds(P1, P2, slack: float = 0.0) -> bool:
    """True iff ``P1 - P2`` is PSD up to ``slack`` (min eigenvalue >= -slack)."""
    P1 = np.atleast_2d(np.asarray(P1, dtype=float))
    P2 = np.atleast_2d(np.asarray(P2, dtype=float))
    if P1.shape != P2.shape:
        raise StructuralError(f"shape mismatch: {P1.shape} vs {P2.shape}")
    return bool(np.linalg.eigvalsh(symmetrize(P1 - P2)).min() >= -slack)


def sqrtm_psd(S) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    w, U = np.linalg.eigh(symmetrize(S))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def inv_sqrtm_pd(R) -> np.ndarray:
    """``R^{-1/2}`` for symmetric positive-definite ``R``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.count_nonzero(R - np.diag(np.diag(R))) == 0:
        d = np.diag(R)
        if d.min() <= 0:
            raise StructuralError("R must be positive definite")
        return np.diag(1.0 / np.sqrt(d))
    w, U = np.linalg.eigh(symmetrize(R))
    if w.min() <= 0:
        raise StructuralError("R must be positive definite")
    return (U / np.sqrt(w)) @ U.T
