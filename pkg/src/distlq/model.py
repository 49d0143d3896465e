"""Problem data, agent-local views, communication graphs and iteration schedules."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .errors import StructuralError, TopologyError
from .numerics import pseudo_inverse, symmetrize

__all__ = [
    "LQTerminalProblem",
    "AgentView",
    "Topology",
    "IterationSchedule",
    "ScenarioSummary",
    "ValidationReport",
    "laplacian",
    "connected_components",
    "validate_decomposition",
    "validate_gamma",
    "check_reachability",
    "parse_step_rule",
]


def _mat(x, name, shape=None):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(a)):
        raise StructuralError(f"{name} contains non-finite entries")
    if shape is not None and a.shape != shape:
        raise StructuralError(f"{name} must have shape {shape}, got {a.shape}")
    return a


def _vec(x, name, n):
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise StructuralError(f"{name} must have length {n}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class LQTerminalProblem:
    """Finite-horizon LQ problem with both endpoint states fixed."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: float
    x0: np.ndarray
    xT: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise StructuralError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        B = _mat(B, "B")
        if B.shape[0] != n:
            raise StructuralError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        Q = _mat(self.Q, "Q", (n, n))
        R = _mat(self.R, "R", (m, m))
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise StructuralError("Q must be symmetric")
        if np.linalg.eigvalsh(symmetrize(Q)).min() < -1e-10:
            raise StructuralError("Q must be positive semi-definite")
        if not np.allclose(R, R.T, atol=1e-12):
            raise StructuralError("R must be symmetric")
        if np.linalg.eigvalsh(symmetrize(R)).min() <= 0:
            raise StructuralError("R must be positive definite")
        if not (np.isfinite(self.T) and self.T > 0):
            raise StructuralError("horizon T must be positive")
        for name, val in (("A", A), ("B", B), ("Q", Q), ("R", R)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "x0", _vec(self.x0, "x0", n))
        object.__setattr__(self, "xT", _vec(self.xT, "xT", n))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def input_gain(self) -> np.ndarray:
        """``R^{-1} B'``."""
        return np.linalg.solve(self.R, self.B.T)

    @property
    def S(self) -> np.ndarray:
        """``B R^{-1} B'``."""
        return self.B @ self.input_gain


@dataclass(frozen=True)
class AgentView:
    """Data agent ``index`` can see: its share of A, B, Q, the endpoints, and M_i."""

    index: int
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    x0: np.ndarray
    xT: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A_i")
        n = A.shape[0]
        if A.shape != (n, n):
            raise StructuralError(f"A_{self.index} must be square")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        B = _mat(B, "B_i")
        if B.shape[0] != n:
            raise StructuralError(f"B_{self.index} must have {n} rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", _mat(self.Q, "Q_i", (n, n)))
        M = _mat(self.M, "M_i")
        if M.shape[0] != n:
            raise StructuralError(f"M_{self.index} must have {n} rows")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "x0", _vec(self.x0, "x_i0", n))
        object.__setattr__(self, "xT", _vec(self.xT, "x_iT", n))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def MM(self) -> np.ndarray:
        return self.M @ self.M.T


def laplacian(N: int, edges) -> np.ndarray:
    """Graph Laplacian of an undirected 0/1 graph on nodes ``0..N-1``."""
    L = np.zeros((N, N))
    for i, j in edges:
        if i == j:
            raise TopologyError(f"self loop at node {i}")
        if not (0 <= i < N and 0 <= j < N):
            raise TopologyError(f"edge ({i}, {j}) outside 0..{N - 1}")
        if L[i, j] != 0:
            continue
        L[i, j] = L[j, i] = -1.0
        L[i, i] += 1.0
        L[j, j] += 1.0
    return L


def connected_components(N: int, edges) -> list[set[int]]:
    parent = list(range(N))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        parent[find(i)] = find(j)
    groups: dict[int, set[int]] = {}
    for v in range(N):
        groups.setdefault(find(v), set()).add(v)
    return list(groups.values())


@dataclass(frozen=True)
class Topology:
    """Undirected connected communication graph plus coupling gain ``gamma``."""

    N: int
    edges: tuple
    gamma: float

    def __post_init__(self):
        if self.N < 1:
            raise TopologyError("need at least one agent")
        norm = sorted({(min(i, j), max(i, j)) for i, j in (tuple(map(int, e)) for e in self.edges)})
        object.__setattr__(self, "edges", tuple(norm))
        if not self.gamma > 0:
            raise TopologyError("gamma must be positive")
        object.__setattr__(self, "gamma", float(self.gamma))
        L = laplacian(self.N, self.edges)  # validates indices
        comps = connected_components(self.N, self.edges)
        if len(comps) != 1:
            raise TopologyError(f"graph is disconnected ({len(comps)} components)")
        object.__setattr__(self, "_L", L)

    @property
    def laplacian(self) -> np.ndarray:
        return self._L.copy()

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.N) if self._L[i, j] != 0 and j != i]

    def csr(self):
        """Neighbour lists in CSR form (``indptr``, ``indices``)."""
        indptr = [0]
        indices: list[int] = []
        for i in range(self.N):
            indices.extend(self.neighbors(i))
            indptr.append(len(indices))
        return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)

    @classmethod
    def ring(cls, N: int, gamma: float) -> "Topology":
        if N == 1:
            return cls(1, (), gamma)
        if N == 2:
            return cls(2, ((0, 1),), gamma)
        return cls(N, tuple((i, (i + 1) % N) for i in range(N)), gamma)

    @classmethod
    def complete(cls, N: int, gamma: float) -> "Topology":
        return cls(N, tuple((i, j) for i in range(N) for j in range(i + 1, N)), gamma)


_RULE = re.compile(
    r"^\s*(?P<c>[0-9.eE+-]+)?\s*/\s*k(?:\s*\^\s*(?P<p>[0-9.eE+-]+))?\s*$"
)


def parse_step_rule(rule: str | Callable[[int], float]) -> Callable[[int], float]:
    """Turn ``"1/k"``, ``"0.5/k"`` or ``"1/k^0.75"`` into ``k -> alpha_k``.

    Only exponents in (0.5, 1] are accepted, which keeps the sum of steps
    divergent and the sum of squares finite.
    """
    if callable(rule):
        return rule
    m = _RULE.match(rule)
    if not m:
        raise StructuralError(f"unsupported step-size rule {rule!r}")
    c = float(m.group("c") or 1.0)
    p = float(m.group("p") or 1.0)
    if c <= 0 or not (0.5 < p <= 1.0):
        raise StructuralError(f"step-size rule {rule!r} violates sum/sum-of-squares conditions")
    if c > 1.0:
        raise StructuralError("leading constant above 1 overshoots the tracking term")
    return lambda k: c / k**p


@dataclass(frozen=True)
class IterationSchedule:
    """Step sizes, coupling, tolerances and iteration caps for every loop.

    ``tol_inner`` is the threshold of the distributed loops, ``tol_outer`` the
    one used by the centralized Riccati iteration. With ``fixed_rounds`` the
    consensus loops ignore ``tol_inner`` and always run their full round
    budget (the outer Riccati sweep still stops on ``tol_inner``); a step
    size of ``1/k`` leaves a disagreement of order ``1/k`` when the step
    test fires, so a fixed budget is the more accurate choice. The ``shift_*`` fields
    drive the spectral-shift continuation of the distributed ARE iteration
    and ``gramian_rank_tol`` the pseudo-inverse of each agent's local
    Gramian.
    """

    alpha: str = "1/k"
    gamma: float = 2.5
    tol_inner: float = 1e-3
    tol_outer: float = 1e-3
    max_n: int = 20
    max_k: int = 200
    max_varpi: int = 200
    max_q: int = 200
    max_w: int = 200
    rank_tol: float = 1e-10
    gramian_rank_tol: float = 1e-3
    fixed_rounds: bool = False
    shift_start: float = 1.0
    shift_decay: float = 0.3
    shift_floor: float = 1e-6

    def __post_init__(self):
        parse_step_rule(self.alpha)
        if not self.gamma > 0:
            raise StructuralError("gamma must be positive")
        if not (self.tol_inner > 0 and self.tol_outer > 0):
            raise StructuralError("tolerances must be positive")
        for name in ("max_n", "max_k", "max_varpi", "max_q", "max_w"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise StructuralError(f"{name} must be an integer >= 1")
        if not (0 < self.shift_decay <= 1) or self.shift_floor < 0 or self.shift_start < self.shift_floor:
            raise StructuralError("invalid shift continuation parameters")

    def step(self, k: int) -> float:
        return parse_step_rule(self.alpha)(k)

    def replace(self, **changes) -> "IterationSchedule":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return IterationSchedule(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ScenarioSummary:
    """Scalar results of one run, serialised to the summary document."""

    solution_norms: dict = field(default_factory=dict)
    cost: float = float("nan")
    terminal_error: float = float("nan")
    iterations: dict = field(default_factory=dict)
    consensus_residuals: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def all_finite(self) -> bool:
        vals = [self.cost, self.terminal_error]
        for d in (self.solution_norms, self.iterations, self.consensus_residuals):
            vals.extend(v for v in d.values() if isinstance(v, (int, float)))
        return all(math.isfinite(v) for v in vals)

    def to_dict(self) -> dict:
        return {
            "solution_norms": self.solution_norms,
            "J": self.cost,
            "terminal_error": self.terminal_error,
            "iterations": self.iterations,
            "consensus_residuals": self.consensus_residuals,
            **self.extra,
        }


@dataclass
class ValidationReport:
    """Per-assumption outcome of :func:`validate_decomposition`."""

    residuals: dict
    tol: float

    @property
    def passed(self) -> dict:
        return {k: v <= self.tol for k, v in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def table(self) -> str:
        rows = [f"{'check':<36}{'residual':>14}  result"]
        for k, v in self.residuals.items():
            rows.append(f"{k:<36}{v:>14.3e}  {'pass' if v <= self.tol else 'FAIL'}")
        return "\n".join(rows)


def validate_decomposition(views, problem: LQTerminalProblem, tol: float = 1e-9) -> ValidationReport:
    """Check that the agents' local data average back to the global problem."""
    if not views:
        raise StructuralError("need at least one agent view")
    n = problem.n
    for v in views:
        if v.n != n or v.B.shape != problem.B.shape:
            raise StructuralError(f"agent {v.index} has dimensions inconsistent with the problem")
    mean = lambda xs: sum(xs) / len(views)  # noqa: E731
    res = {
        "mean(A_i) = A": np.linalg.norm(mean([v.A for v in views]) - problem.A),
        "mean(B_i) = B": np.linalg.norm(mean([v.B for v in views]) - problem.B),
        "mean(Q_i) = Q": np.linalg.norm(mean([v.Q for v in views]) - problem.Q),
        "mean(x_i0) = x0": np.linalg.norm(mean([v.x0 for v in views]) - problem.x0),
        "mean(x_iT) = xT": np.linalg.norm(mean([v.xT for v in views]) - problem.xT),
        "mean(M_i M_i') = BR^-1B'": np.linalg.norm(mean([v.MM for v in views]) - problem.S),
    }
    return ValidationReport({k: float(r) for k, r in res.items()}, tol)


def validate_gamma(topology: Topology) -> tuple[bool, float]:
    """Spectral radius of ``I - L/gamma - 11'/N`` and whether it is below one."""
    N = topology.N
    M = np.eye(N) - topology.laplacian / topology.gamma - np.ones((N, N)) / N
    rho = float(np.abs(np.linalg.eigvalsh(M)).max())
    return rho < 1.0, rho


def check_reachability(
    problem: LQTerminalProblem,
    gramian,
    phi_T0,
    rank_tol: float = 1e-10,
    residual_tol: float = 1e-6,
) -> bool:
    """Is ``Phi(T,0) x0 - xT`` in the range of the Gramian?

    Decided by the relative residual of the least-squares solve through the
    truncated pseudo-inverse.
    """
    G = np.asarray(gramian, dtype=float)
    r = np.asarray(phi_T0, dtype=float) @ problem.x0 - problem.xT
    lam = pseudo_inverse(G, rank_tol) @ r
    resid = np.linalg.norm(G @ lam - r)
    return bool(resid <= residual_tol * max(1.0, np.linalg.norm(r)))
