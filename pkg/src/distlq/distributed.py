"""Partial-information solver: each agent rebuilds the global solution from
its own data through consensus-tracking rounds over the communication graph.

Every averaged quantity (the Riccati coefficients Z and V, the input map W,
the terminal multiplier and the state trajectory) is produced by the same
round-synchronous update

    X_i <- X_i + a_k (g_i - X_i) + (1/gamma) sum_{j in N_i} (X_j - X_i),

whose fixed point is the average of the local targets ``g_i``. Trajectories
are tracked node by node on the shared grid.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .centralized import (
    compute_gramian,
    feedback_control,
    integrate_beta,
    lyapunov_ode,
    max_node_norm,
    transition_matrices,
)
from .errors import ConvergenceError, StructuralError, TopologyError
from .model import AgentView, IterationSchedule, Topology, parse_step_rule, validate_gamma
from .numerics import (
    MatrixTrajectory,
    TimeGrid,
    VectorTrajectory,
    integrate_linear_ode,
    inv_sqrtm_pd,
    pseudo_inverse,
)

__all__ = [
    "AgentIterate",
    "ConvergenceDiagnostics",
    "DiagnosticRecord",
    "DistributedSolution",
    "TrackingResult",
    "consensus_tracking_step",
    "track",
    "run_ZV_P_loops",
    "run_W_loop",
    "run_lambda_loop",
    "integrate_beta_agent",
    "run_x_loop",
    "agent_controller",
    "diagnostics",
    "write_diagnostics_csv",
    "solve",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosticRecord:
    round: int
    quantity: str
    delta_consensus: float
    delta_mean: float


@dataclass
class ConvergenceDiagnostics:
    """Per-round consensus error and mean-vs-reference error, per quantity."""

    records: list[DiagnosticRecord] = field(default_factory=list)

    def series(self, quantity: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.records if r.quantity == quantity]
        return (
            np.array([r.delta_consensus for r in rows]),
            np.array([r.delta_mean for r in rows]),
        )

    @property
    def quantities(self) -> list[str]:
        return list(dict.fromkeys(r.quantity for r in self.records))

    def geometric_factor(self, quantity: str, tail: int = 20) -> float:
        """Geometric-mean ratio ``delta_k / delta_{k-1}`` over the last rounds."""
        d, _ = self.series(quantity)
        d = d[d > 0][-(tail + 1):]
        if d.size < 2:
            return 0.0
        return float(np.exp(np.mean(np.diff(np.log(d)))))

    def extend(self, other: "ConvergenceDiagnostics") -> None:
        self.records.extend(other.records)


@dataclass
class AgentIterate:
    index: int
    Z: MatrixTrajectory
    V: MatrixTrajectory
    P: MatrixTrajectory
    Phi: MatrixTrajectory
    Psi: MatrixTrajectory
    W: np.ndarray | None = None
    lambda_: np.ndarray | None = None
    beta: VectorTrajectory | None = None
    x: VectorTrajectory | None = None
    u: VectorTrajectory | None = None


@dataclass
class TrackingResult:
    values: np.ndarray
    rounds: int
    converged: bool
    last_delta: float


@dataclass
class DistributedSolution:
    agents: list[AgentIterate]
    iterations: dict
    diagnostics: ConvergenceDiagnostics

    @property
    def grid(self) -> TimeGrid:
        return self.agents[0].P.grid

    def max_cross_agent_deviation(self) -> dict:
        out = {}
        for name in ("P", "W", "lambda_", "x", "u"):
            vals = [getattr(a, name) for a in self.agents]
            if any(v is None for v in vals):
                continue
            arr = np.array([getattr(v, "samples", v) for v in vals])
            out[name.rstrip("_")] = _pairwise(arr, nodewise=name in ("P", "x", "u"))
        return out


def _as_nodes(X, nodewise: bool) -> np.ndarray:
    """View agent values as ``(N, nodes, D)``; constants count as one node."""
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    return X.reshape(N, X.shape[1], -1) if nodewise else X.reshape(N, 1, -1)


def _pairwise(X, nodewise: bool = True) -> float:
    """Max over agent pairs of the max-node Frobenius deviation."""
    flat = _as_nodes(X, nodewise)
    worst = 0.0
    for i in range(flat.shape[0] - 1):
        d = np.sqrt(((flat[i + 1:] - flat[i]) ** 2).sum(axis=2))
        worst = max(worst, float(d.max()))
    return worst


def _step_delta(Xn, X) -> float:
    """Max over agents and nodes of the Frobenius step size (``(N, nodes, D)`` inputs)."""
    return float(np.sqrt(((Xn - X) ** 2).sum(axis=2)).max())


def consensus_tracking_step(current, targets, k: int, schedule: IterationSchedule, topology: Topology):
    """One synchronous round; every agent reads only round ``k-1`` values."""
    X = np.asarray(current, dtype=float)
    G = np.asarray(targets, dtype=float)
    shape = X.shape
    indptr, indices = topology.csr()
    out = kernels.consensus_round(
        np.ascontiguousarray(X.reshape(shape[0], -1)),
        np.ascontiguousarray(G.reshape(shape[0], -1)),
        float(schedule.step(k)),
        1.0 / topology.gamma,
        indptr,
        indices,
    )
    return out.reshape(shape)


def track(
    targets,
    topology: Topology,
    schedule: IterationSchedule,
    max_rounds: int,
    label: str | None = None,
    diag: ConvergenceDiagnostics | None = None,
    nodewise: bool = True,
) -> TrackingResult:
    """Run rounds from zero until every agent's step is below ``tol_inner``.

    ``targets`` has the agent index first; with ``nodewise`` the second axis
    is the time grid and step sizes are measured node by node. When ``diag``
    is given, each round appends the consensus error and the distance of the
    agent mean from the reference recursion driven by the averaged target.
    """
    G = np.ascontiguousarray(targets, dtype=float)
    N = G.shape[0]
    if N != topology.N:
        raise StructuralError(f"{N} targets for {topology.N} agents")
    shape = G.shape
    G3 = _as_nodes(G, nodewise)
    G2 = G3.reshape(N, -1)
    X = np.zeros_like(G2)
    indptr, indices = topology.csr()
    inv_gamma = 1.0 / topology.gamma
    step = parse_step_rule(schedule.alpha)
    if diag is not None:
        ref = np.zeros(G3.shape[1:])
        gbar = G3.mean(axis=0)
    delta = np.inf
    k = 0
    for k in range(1, max_rounds + 1):
        a = step(k)
        Xn = kernels.consensus_round(X, G2, a, inv_gamma, indptr, indices)
        delta = _step_delta(Xn.reshape(G3.shape), X.reshape(G3.shape))
        X = Xn
        if diag is not None:
            ref = ref + a * (gbar - ref)
            X3 = X.reshape(G3.shape)
            mean_err = float(np.sqrt(((X3.mean(axis=0) - ref) ** 2).sum(axis=1)).max())
            diag.records.append(DiagnosticRecord(k, label or "X", _pairwise(X3), mean_err))
        if delta < schedule.tol_inner and not schedule.fixed_rounds:
            return TrackingResult(X.reshape(shape), k, True, delta)
    return TrackingResult(X.reshape(shape), k, schedule.fixed_rounds or delta < schedule.tol_inner, delta)


def _require_gamma(topology: Topology) -> None:
    ok, rho = validate_gamma(topology)
    if not ok:
        raise TopologyError(
            f"gamma={topology.gamma:g} gives spectral radius {rho:.6g} >= 1; consensus rounds would diverge"
        )


def _check_views(views, topology):
    if len(views) != topology.N:
        raise StructuralError(f"{len(views)} agent views for a {topology.N}-node graph")
    n, m = views[0].n, views[0].B.shape[1]
    for v in views:
        if v.n != n or v.B.shape[1] != m:
            raise StructuralError("agent views have inconsistent dimensions")


def run_ZV_P_loops(
    views,
    topology: Topology,
    schedule: IterationSchedule,
    grid: TimeGrid,
    diagnostics_on: bool = False,
    strict: bool = True,
):
    """Distributed Riccati iteration.

    For each outer sweep ``n`` the agents track ``A_i - M_i M_i' P_i`` and
    ``Q_i + P_i M_i M_i' P_i`` (their own previous ``P_i``) by consensus,
    then each solves its Lyapunov ODE locally. Returns the per-agent
    iterates, the iteration counts and the diagnostics.
    """
    _require_gamma(topology)
    _check_views(views, topology)
    N, n, K1 = topology.N, views[0].n, len(grid)
    A = np.array([v.A for v in views])
    Qi = np.array([v.Q for v in views])
    MM = np.array([v.MM for v in views])
    P = np.zeros((N, K1, n, n))
    diag = ConvergenceDiagnostics()
    counts = {"n": 0, "k": []}
    delta = np.inf
    converged = False
    for it in range(1, schedule.max_n + 1):
        gZ = A[:, None] - MM[:, None] @ P
        gV = Qi[:, None] + P @ MM[:, None] @ P
        rZ = track(gZ, topology, schedule, schedule.max_k, f"Z[n={it}]", diag if diagnostics_on else None)
        rV = track(gV, topology, schedule, schedule.max_k, f"V[n={it}]", diag if diagnostics_on else None)
        counts["k"].append(max(rZ.rounds, rV.rounds))
        Z, V = rZ.values, rV.values
        P_new = np.array([lyapunov_ode(Z[i], V[i], grid) for i in range(N)])
        delta = max(max_node_norm(P_new[i] - P[i]) for i in range(N))
        P = P_new
        counts["n"] = it
        if delta < schedule.tol_inner:
            converged = True
            break
    agents = []
    for i in range(N):
        Phi, Psi = transition_matrices(Z[i], grid)
        agents.append(
            AgentIterate(
                index=i,
                Z=MatrixTrajectory(grid, Z[i]),
                V=MatrixTrajectory(grid, V[i]),
                P=MatrixTrajectory(grid, P[i]),
                Phi=MatrixTrajectory(grid, Phi),
                Psi=MatrixTrajectory(grid, Psi),
            )
        )
    counts["converged"] = converged
    counts["last_delta"] = delta
    if not converged and strict:
        raise ConvergenceError(
            f"distributed Riccati iteration stalled after {schedule.max_n} sweeps (delta {delta:.3g})",
            delta,
            (agents, counts, diag),
        )
    return agents, counts, diag


def run_W_loop(views, topology: Topology, schedule: IterationSchedule, R, diag=None):
    """Agents agree on ``W = R^{-1/2} B'`` from their local ``R^{-1/2} B_i'``."""
    _check_views(views, topology)
    Rm = inv_sqrtm_pd(R)
    targets = np.array([Rm @ v.B.T for v in views])
    res = track(targets, topology, schedule, schedule.max_varpi, "W", diag, nodewise=False)
    return res.values, res


def local_gramian_target(Phi, W, view: AgentView, rank_tol: float, grid: TimeGrid | None = None):
    """``rho_i^+ (Phi_i(T,0) x_i0 - x_iT)`` with ``rho_i`` built from ``W_i'W_i``."""
    rho = compute_gramian(Phi, W.T @ W, grid)
    PhiT = Phi.final if isinstance(Phi, MatrixTrajectory) else np.asarray(Phi)[-1]
    return pseudo_inverse(rho, rank_tol) @ (PhiT @ view.x0 - view.xT)


def run_lambda_loop(Phis, W, views, topology: Topology, schedule: IterationSchedule, diag=None):
    """Consensus on the terminal multiplier from local Gramian solves."""
    targets = np.array(
        [local_gramian_target(Phis[i], W[i], views[i], schedule.gramian_rank_tol) for i in range(len(views))]
    )
    res = track(targets, topology, schedule, schedule.max_q, "lambda", diag, nodewise=False)
    return res.values, res


def integrate_beta_agent(Z, lambda_i, grid: TimeGrid) -> VectorTrajectory:
    """Local backward solve for ``beta_i``; no consensus pass is needed."""
    return integrate_beta(Z, lambda_i, grid)


def local_state_target(Z, W, beta, x0, grid: TimeGrid) -> np.ndarray:
    """``Phi_i(t,0) x_i0 - int_0^t Phi_i(t,s) W_i'W_i beta_i(s) ds``.

    Evaluated as the forward solve of ``dy/dt = Z_i y - W_i'W_i beta_i``.
    """
    Zs = getattr(Z, "samples", Z)
    b = getattr(beta, "samples", beta)
    forcing = -b @ (W.T @ W).T
    y = integrate_linear_ode(grid, np.asarray(x0, dtype=float), left=Zs, forcing=forcing)
    return y[:, :, 0]


def run_x_loop(Zs, W, betas, views, topology: Topology, schedule: IterationSchedule, grid: TimeGrid, diag=None):
    """Node-wise consensus on the optimal state trajectory."""
    targets = np.array(
        [local_state_target(Zs[i], W[i], betas[i], views[i].x0, grid) for i in range(len(views))]
    )
    res = track(targets, topology, schedule, schedule.max_w, "x", diag)
    return res.values, res


def agent_controller(W_i, P_i, x_i, beta_i, R) -> np.ndarray:
    """``u_i = -R^{-1/2} W_i (P_i x_i + beta_i)`` at every node."""
    gain = inv_sqrtm_pd(R) @ W_i
    return feedback_control(gain, getattr(P_i, "samples", P_i), getattr(x_i, "samples", x_i),
                            getattr(beta_i, "samples", beta_i))


def diagnostics(history, reference) -> list[tuple[float, float]]:
    """Consensus error and mean-vs-reference error for a recorded run.

    ``history`` is a sequence of per-round agent arrays (agent index first)
    and ``reference`` the matching sequence of reference values.
    """
    out = []
    for Xk, ref in zip(history, reference):
        Xk = np.asarray(Xk, dtype=float)
        mean = Xk.mean(axis=0)
        dev = np.asarray(mean - ref, dtype=float).reshape(-1)
        out.append((_pairwise(Xk, nodewise=False), float(np.linalg.norm(dev))))
    return out


def write_diagnostics_csv(diag: ConvergenceDiagnostics, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "quantity", "delta_consensus", "delta_mean"])
        for r in diag.records:
            w.writerow([r.round, r.quantity, f"{r.delta_consensus:.17g}", f"{r.delta_mean:.17g}"])


def solve(
    views,
    topology: Topology,
    R,
    grid: TimeGrid,
    schedule: IterationSchedule | None = None,
    diagnostics_on: bool = False,
    strict: bool = True,
) -> DistributedSolution:
    """Run every distributed stage and return the per-agent results."""
    schedule = schedule or IterationSchedule(gamma=topology.gamma)
    agents, counts, diag = run_ZV_P_loops(views, topology, schedule, grid, diagnostics_on, strict)
    d = diag if diagnostics_on else None
    W, rW = run_W_loop(views, topology, schedule, R, d)
    lam, rL = run_lambda_loop([a.Phi for a in agents], W, views, topology, schedule, d)
    betas = [integrate_beta_agent(a.Z, lam[i], grid) for i, a in enumerate(agents)]
    X, rX = run_x_loop([a.Z for a in agents], W, betas, views, topology, schedule, grid, d)
    for i, a in enumerate(agents):
        a.W = W[i]
        a.lambda_ = lam[i]
        a.beta = betas[i]
        a.x = VectorTrajectory(grid, X[i])
        a.u = VectorTrajectory(grid, agent_controller(W[i], a.P, a.x, a.beta, R))
    iterations = {
        "n": counts["n"],
        "k": counts["k"],
        "varpi": rW.rounds,
        "q": rL.rounds,
        "w": rX.rounds,
        "converged": {
            "P": counts["converged"],
            "W": rW.converged,
            "lambda": rL.converged,
            "x": rX.converged,
        },
    }
    for name, r in (("W", rW), ("lambda", rL), ("x", rX)):
        if not r.converged:
            log.warning("%s loop hit its round cap (last step %.3g)", name, r.last_delta)
    return DistributedSolution(agents, iterations, diag)
