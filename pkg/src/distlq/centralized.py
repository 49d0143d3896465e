"""Full-information solver for the fixed-endpoint finite-horizon LQ problem.

The Riccati differential equation is never integrated directly. Instead a
sequence of linear Lyapunov ODEs is solved, each one linearised around the
previous iterate (a Newton/Kleinman scheme in function space); the iterates
decrease monotonically to the Riccati solution. With ``P`` in hand the
terminal multiplier comes from the closed-loop reachability Gramian and the
optimal state/control follow from two more linear ODEs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import ConvergenceError, NumericalDegeneracyError, ReachabilityError
from .model import IterationSchedule, LQTerminalProblem, check_reachability
from .numerics import (
    MatrixTrajectory,
    TimeGrid,
    VectorTrajectory,
    integrate_linear_ode,
    pseudo_inverse,
    symmetrize,
)

__all__ = [
    "CentralizedSolution",
    "RiccatiResult",
    "feedback_dynamics",
    "quadratic_forcing",
    "lyapunov_ode",
    "transition_matrices",
    "max_node_norm",
    "riccati_iteration",
    "compute_gramian",
    "solve_lambda",
    "integrate_beta",
    "integrate_optimal_state",
    "optimal_control",
    "feedback_control",
    "evaluate_cost",
    "check_stationarity",
    "solve",
]


# -- building blocks shared with the distributed solver ----------------------

def feedback_dynamics(A, S, P):
    """``A - S P(t)`` at every node."""
    return A - S @ P


def quadratic_forcing(Q, S, P):
    """``Q + P(t) S P(t)`` at every node."""
    return Q + P @ S @ P


def lyapunov_ode(Z, V, grid: TimeGrid) -> np.ndarray:
    """Backward solve of ``dP/dt = -Z'P - PZ - V`` with ``P(T) = 0``."""
    n = Z.shape[-1]
    P = integrate_linear_ode(
        grid,
        np.zeros((n, n)),
        left=-np.swapaxes(Z, 1, 2),
        right=-Z,
        forcing=-V,
        direction="backward",
    )
    return symmetrize(P)


def transition_matrices(Z, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """``Phi`` with ``dPhi = Z Phi`` and ``Psi`` with ``dPsi = -Z' Psi``, both from I."""
    n = Z.shape[-1]
    eye = np.eye(n)
    Phi = integrate_linear_ode(grid, eye, left=Z)
    Psi = integrate_linear_ode(grid, eye, left=-np.swapaxes(Z, 1, 2))
    return Phi, Psi


def max_node_norm(D) -> float:
    """Largest Frobenius (or Euclidean) norm over the leading grid axis."""
    D = np.asarray(D)
    return float(np.sqrt((D.reshape(D.shape[0], -1) ** 2).sum(axis=1)).max())


def feedback_control(gain, P, x, beta) -> np.ndarray:
    """``-gain (P(t) x(t) + beta(t))`` at every node."""
    p = np.einsum("tij,tj->ti", P, x) + beta
    return -p @ gain.T


# -- solver -------------------------------------------------------------------

@dataclass
class RiccatiResult:
    P: MatrixTrajectory
    Z: MatrixTrajectory
    Phi: MatrixTrajectory
    Psi: MatrixTrajectory
    iterations_used: int
    deltas: list[float]
    converged: bool
    history: list[np.ndarray] | None = None


@dataclass
class CentralizedSolution:
    """Everything the full-information solve produces."""

    P: MatrixTrajectory
    Z: MatrixTrajectory
    Phi: MatrixTrajectory
    Psi: MatrixTrajectory
    gramian: np.ndarray
    lambda_star: np.ndarray
    beta: VectorTrajectory
    x_star: VectorTrajectory
    u_star: VectorTrajectory
    J: float
    iterations_used: int
    terminal_error: float
    deltas: list[float] = field(default_factory=list)

    @property
    def grid(self) -> TimeGrid:
        return self.P.grid


def riccati_iteration(
    problem: LQTerminalProblem,
    grid: TimeGrid,
    schedule: IterationSchedule | None = None,
    keep_history: bool = False,
    strict: bool = True,
) -> RiccatiResult:
    """Iterate Lyapunov ODE solves until successive ``P`` agree to ``tol_outer``.

    ``P^0 = 0``. Each sweep forms ``Z = A - S P`` and ``V = Q + P S P`` from
    the previous iterate and solves the linear backward equation. With
    ``keep_history`` every iterate's samples are returned (``P^0`` first).
    When ``max_n`` runs out a :class:`ConvergenceError` carrying the partial
    result is raised, unless ``strict`` is false.
    """
    schedule = schedule or IterationSchedule()
    A, S, Q = problem.A, problem.S, problem.Q
    n = problem.n
    P = np.zeros((len(grid), n, n))
    history = [P] if keep_history else None
    deltas: list[float] = []
    converged = False
    for it in range(1, schedule.max_n + 1):
        Z = feedback_dynamics(A, S, P)
        V = quadratic_forcing(Q, S, P)
        P_new = lyapunov_ode(Z, V, grid)
        deltas.append(max_node_norm(P_new - P))
        P = P_new
        if keep_history:
            history.append(P)
        if deltas[-1] < schedule.tol_outer:
            converged = True
            break
    Phi, Psi = transition_matrices(Z, grid)
    result = RiccatiResult(
        P=MatrixTrajectory(grid, P),
        Z=MatrixTrajectory(grid, Z),
        Phi=MatrixTrajectory(grid, Phi),
        Psi=MatrixTrajectory(grid, Psi),
        iterations_used=it,
        deltas=deltas,
        converged=converged,
        history=history,
    )
    if not converged and strict:
        raise ConvergenceError(
            f"Riccati iteration did not reach {schedule.tol_outer:g} in {schedule.max_n} sweeps",
            deltas[-1],
            result,
        )
    return result


def compute_gramian(Phi, weight, grid: TimeGrid | None = None) -> np.ndarray:
    """``int_0^T Phi(T,s) weight Phi(T,s)' ds`` by composite Simpson.

    ``Phi(T,s)`` is assembled as ``Phi(T) Phi(s)^{-1}``.
    """
    if isinstance(Phi, MatrixTrajectory):
        grid = Phi.grid
        Phi = Phi.samples
    if grid is None:
        raise ValueError("grid is required when Phi is a raw sample array")
    try:
        cond = np.linalg.cond(Phi)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond rarely raises
        raise NumericalDegeneracyError(str(exc)) from exc
    bad = np.flatnonzero(~np.isfinite(cond) | (cond > 1e14))
    if bad.size:
        raise NumericalDegeneracyError(f"Phi is singular at node {bad[0]}")
    # Phi(T) Phi(s)^{-1} = (Phi(s)^{-T} Phi(T)^T)^T
    PhiTs = np.swapaxes(np.linalg.solve(np.swapaxes(Phi, 1, 2), Phi[-1].T[None]), 1, 2)
    integrand = PhiTs @ weight @ np.swapaxes(PhiTs, 1, 2)
    return symmetrize(simpson(integrand, x=grid.nodes, axis=0))


def solve_lambda(
    gramian,
    Phi,
    problem: LQTerminalProblem,
    rank_tol: float = 1e-10,
) -> np.ndarray:
    """Terminal multiplier ``G^+ (Phi(T,0) x0 - xT)``.

    Raises :class:`ReachabilityError` instead of silently projecting when the
    right-hand side leaves the range of ``G``.
    """
    PhiT = Phi.final if isinstance(Phi, MatrixTrajectory) else np.asarray(Phi)[-1]
    if not check_reachability(problem, gramian, PhiT, rank_tol):
        raise ReachabilityError("x_T is not reachable from x0 over the horizon")
    return pseudo_inverse(gramian, rank_tol) @ (PhiT @ problem.x0 - problem.xT)


def _samples(traj):
    return traj.samples if hasattr(traj, "samples") else np.asarray(traj)


def integrate_beta(Z, lambda_star, grid: TimeGrid) -> VectorTrajectory:
    """Backward solve of ``d beta/dt = -Z(t)' beta`` with ``beta(T) = lambda``."""
    Zs = _samples(Z)
    b = integrate_linear_ode(
        grid, np.asarray(lambda_star, dtype=float), left=-np.swapaxes(Zs, 1, 2), direction="backward"
    )
    return VectorTrajectory(grid, b[:, :, 0])


def _state(Z, forcing, x0, grid):
    x = integrate_linear_ode(grid, np.asarray(x0, dtype=float), left=Z, forcing=forcing)
    return x[:, :, 0]


def integrate_optimal_state(Z, beta, problem: LQTerminalProblem, grid: TimeGrid) -> VectorTrajectory:
    """Forward solve of ``dx/dt = Z(t) x - S beta(t)`` from ``x0``."""
    forcing = -_samples(beta) @ problem.S.T
    return VectorTrajectory(grid, _state(_samples(Z), forcing, problem.x0, grid))


def optimal_control(P, beta, x_star, problem: LQTerminalProblem) -> VectorTrajectory:
    """``u(t) = -R^{-1} B' (P(t) x(t) + beta(t))``."""
    u = feedback_control(problem.input_gain, _samples(P), _samples(x_star), _samples(beta))
    return VectorTrajectory(x_star.grid, u)


def evaluate_cost(x, u, Q, R, grid: TimeGrid | None = None) -> float:
    """Simpson quadrature of ``x'Qx + u'Ru`` over the grid."""
    if grid is None:
        grid = x.grid
    xs, us = _samples(x), _samples(u)
    integrand = np.einsum("ti,ij,tj->t", xs, Q, xs) + np.einsum("ti,ij,tj->t", us, R, us)
    return float(simpson(integrand, x=grid.nodes))


def check_stationarity(solution: CentralizedSolution, problem: LQTerminalProblem) -> float:
    """Residual of the first-order optimality conditions.

    With the adjoint ``p = P x + beta`` the optimum satisfies
    ``dp/dt = -A'p - Q x`` and ``u = -R^{-1} B' p``. The derivative is taken
    by second-order finite differences, so expect ``O(h^2)`` noise.
    """
    grid = solution.grid
    x = solution.x_star.samples
    p = np.einsum("tij,tj->ti", solution.P.samples, x) + solution.beta.samples
    dp = np.gradient(p, grid.h, axis=0, edge_order=2)
    adjoint = dp + p @ problem.A + x @ problem.Q
    control = solution.u_star.samples + p @ problem.input_gain.T
    return max_node_norm(adjoint) + max_node_norm(control)


def solve(
    problem: LQTerminalProblem,
    grid: TimeGrid | None = None,
    schedule: IterationSchedule | None = None,
) -> CentralizedSolution:
    """Run the whole full-information pipeline."""
    schedule = schedule or IterationSchedule()
    grid = grid or TimeGrid(problem.T, 2000)
    ric = riccati_iteration(problem, grid, schedule)
    G = compute_gramian(ric.Phi, problem.S)
    lam = solve_lambda(G, ric.Phi, problem, schedule.rank_tol)
    beta = integrate_beta(ric.Z, lam, grid)
    x = integrate_optimal_state(ric.Z, beta, problem, grid)
    u = optimal_control(ric.P, beta, x, problem)
    return CentralizedSolution(
        P=ric.P,
        Z=ric.Z,
        Phi=ric.Phi,
        Psi=ric.Psi,
        gramian=G,
        lambda_star=lam,
        beta=beta,
        x_star=x,
        u_star=u,
        J=evaluate_cost(x, u, problem.Q, problem.R),
        iterations_used=ric.iterations_used,
        terminal_error=float(np.linalg.norm(x.final - problem.xT)),
        deltas=ric.deltas,
    )
