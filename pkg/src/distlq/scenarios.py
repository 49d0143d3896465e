"""Scenario documents (JSON) for both problem families, and the bundled set.

An ``lq`` scenario carries ``system``, ``agents``, ``topology``,
``schedule`` and ``grid``; a ``consensus`` scenario carries either a ``ugv``
fleet description or generic ``agents`` with pairwise ``weights``. Matrices
are row-major nested lists. Numbers go through ``float`` and back through
``json`` unchanged, so load/dump/load is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .consensus import MultiAgentSystem, build_ugv_scenario
from .errors import DistLQError, ScenarioError
from .model import AgentView, IterationSchedule, LQTerminalProblem, Topology

__all__ = [
    "LQScenario",
    "ConsensusScenario",
    "load_scenario",
    "parse_scenario",
    "dump_scenario",
    "scenario_to_dict",
    "bundled_scenarios",
    "bundled_path",
]

_SCHEDULE_KEYS = {f.name for f in fields(IterationSchedule)}


def _matrix(x, where):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not a numeric array") from exc
    if a.ndim == 0:
        a = a.reshape(1, 1)
    return a


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def _require(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ScenarioError(f"{where}: missing required field '{key}'")
    return d[key]


def _schedule(d, where="schedule") -> IterationSchedule:
    d = dict(d or {})
    unknown = set(d) - _SCHEDULE_KEYS
    if unknown:
        raise ScenarioError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        return IterationSchedule(**d)
    except (TypeError, DistLQError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _topology(d, default_gamma: float, where="topology") -> Topology:
    N = _require(d, "N", where)
    edges = _require(d, "edges", where)
    gamma = d.get("gamma", default_gamma)
    if not isinstance(N, int) or isinstance(N, bool):
        raise ScenarioError(f"{where}.N must be an integer")
    try:
        pairs = tuple((int(e[0]), int(e[1])) for e in edges)
    except (TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"{where}.edges must be a list of [i, j] pairs") from exc
    return Topology(N, pairs, float(gamma))


@dataclass
class LQScenario:
    """Fixed-endpoint LQ problem plus (optionally) its distributed split."""

    problem: LQTerminalProblem
    views: list[AgentView] = field(default_factory=list)
    topology: Topology | None = None
    schedule: IterationSchedule = field(default_factory=IterationSchedule)
    num_steps: int = 2000
    name: str = ""
    notes: str = ""
    tolerances: dict = field(default_factory=dict)

    kind = "lq"


@dataclass
class ConsensusScenario:
    """Multi-agent consensus problem (generic agents or a UGV fleet)."""

    system: MultiAgentSystem
    schedule: IterationSchedule = field(default_factory=IterationSchedule)
    num_steps: int = 3000
    t_sim: float = 30.0
    baseline_K: np.ndarray | None = None
    baseline_set: list = field(default_factory=list)
    ugv: list | None = None
    agents: list | None = None
    weights: dict = field(default_factory=dict)
    cost_split: str = "edge"
    name: str = ""
    notes: str = ""

    kind = "consensus"


def _parse_lq(doc) -> LQScenario:
    s = _require(doc, "system", "scenario")
    try:
        problem = LQTerminalProblem(
            A=_matrix(_require(s, "A", "system"), "system.A"),
            B=_matrix(_require(s, "B", "system"), "system.B"),
            Q=_matrix(_require(s, "Q", "system"), "system.Q"),
            R=_matrix(_require(s, "R", "system"), "system.R"),
            T=float(_require(s, "T", "system")),
            x0=_matrix(_require(s, "x0", "system"), "system.x0").reshape(-1),
            xT=_matrix(_require(s, "xT", "system"), "system.xT").reshape(-1),
        )
    except ScenarioError:
        raise
    except DistLQError as exc:
        raise ScenarioError(f"system: {exc}") from exc
    views = []
    for i, a in enumerate(doc.get("agents", []) or []):
        where = f"agents[{i}]"
        try:
            views.append(
                AgentView(
                    index=i,
                    A=_matrix(_require(a, "A", where), where + ".A"),
                    B=_matrix(_require(a, "B", where), where + ".B"),
                    Q=_matrix(_require(a, "Q", where), where + ".Q"),
                    M=_matrix(_require(a, "M", where), where + ".M"),
                    x0=_matrix(_require(a, "x0", where), where + ".x0").reshape(-1),
                    xT=_matrix(_require(a, "xT", where), where + ".xT").reshape(-1),
                )
            )
        except ScenarioError:
            raise
        except DistLQError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
    schedule = _schedule(doc.get("schedule"))
    topo = _topology(doc["topology"], schedule.gamma) if "topology" in doc else None
    if topo is not None and views and topo.N != len(views):
        raise ScenarioError(f"topology.N={topo.N} but {len(views)} agents given")
    grid = doc.get("grid", {}) or {}
    steps = grid.get("num_steps", 2000)
    if not isinstance(steps, int) or steps < 2:
        raise ScenarioError("grid.num_steps must be an integer >= 2")
    return LQScenario(
        problem=problem,
        views=views,
        topology=topo,
        schedule=schedule,
        num_steps=steps,
        name=doc.get("name", ""),
        notes=doc.get("notes", ""),
        tolerances=dict(doc.get("tolerances", {}) or {}),
    )


def _parse_weights(w, topo: Topology, n: int):
    if not w or w.get("ring") or w.get("edges"):
        blk = np.eye(n) if not w or "block" not in w else _matrix(w["block"], "weights.block")
        out = {}
        for i, j in topo.edges:
            out[(i, j)] = blk
            out[(j, i)] = blk
        return out
    out = {}
    for k, p in enumerate(_require(w, "pairs", "weights")):
        i, j = int(_require(p, "i", f"weights.pairs[{k}]")), int(_require(p, "j", f"weights.pairs[{k}]"))
        out[(i, j)] = _matrix(_require(p, "Q", f"weights.pairs[{k}]"), f"weights.pairs[{k}].Q")
    return out


def _parse_consensus(doc) -> ConsensusScenario:
    sched = _schedule(doc.get("schedule"))
    grid = doc.get("grid", {}) or {}
    steps = grid.get("num_steps", 3000)
    t_sim = float(grid.get("T_sim", 30.0))
    if not isinstance(steps, int) or steps < 2:
        raise ScenarioError("grid.num_steps must be an integer >= 2")
    weights_doc = doc.get("weights", {"ring": True})
    ugv = doc.get("ugv")
    agents = doc.get("agents")
    try:
        if ugv is not None:
            topo_doc = doc.get("topology")
            edges = None if topo_doc is None else [tuple(e) for e in _require(topo_doc, "edges", "topology")]
            gamma = sched.gamma if topo_doc is None else float(topo_doc.get("gamma", sched.gamma))
            for k, p in enumerate(ugv):
                for key in ("C", "D", "q0", "v0"):
                    _require(p, key, f"ugv[{k}]")
            block = None
            if isinstance(weights_doc, dict) and "block" in weights_doc:
                block = _matrix(weights_doc["block"], "weights.block")
            if isinstance(weights_doc, dict) and "pairs" in weights_doc:
                base = build_ugv_scenario(ugv, gamma=gamma, edges=edges)
                system = MultiAgentSystem(
                    base.A, base.B, base.R, base.x0, base.topology,
                    _parse_weights(weights_doc, base.topology, base.n),
                )
            else:
                system = build_ugv_scenario(ugv, gamma=gamma, edges=edges, weight=block)
        else:
            if agents is None:
                raise ScenarioError("consensus scenario needs 'ugv' or 'agents'")
            topo = _topology(_require(doc, "topology", "scenario"), sched.gamma)
            A, B, R, x0 = [], [], [], []
            for k, a in enumerate(agents):
                where = f"agents[{k}]"
                A.append(_matrix(_require(a, "A", where), where + ".A"))
                B.append(_matrix(_require(a, "B", where), where + ".B"))
                R.append(_matrix(a.get("R", np.eye(B[-1].shape[1])), where + ".R"))
                x0.append(_matrix(_require(a, "x0", where), where + ".x0").reshape(-1))
            n = A[0].shape[0]
            system = MultiAgentSystem(tuple(A), tuple(B), tuple(R), tuple(x0), topo,
                                      _parse_weights(weights_doc, topo, n))
    except ScenarioError:
        raise
    except DistLQError as exc:
        raise ScenarioError(str(exc)) from exc
    K = None
    K_set = []
    base = doc.get("baseline") or {}
    if "K" in base:
        K = _matrix(base["K"], "baseline.K")
    for j, Kj in enumerate(base.get("K_set", []) or []):
        K_set.append(_matrix(Kj, f"baseline.K_set[{j}]"))
    split = doc.get("cost_split", "edge")
    if split not in ("edge", "row"):
        raise ScenarioError("cost_split must be 'edge' or 'row'")
    return ConsensusScenario(
        system=system,
        schedule=sched,
        num_steps=steps,
        t_sim=t_sim,
        baseline_K=K,
        baseline_set=K_set,
        ugv=ugv,
        agents=agents,
        weights=weights_doc,
        cost_split=split,
        name=doc.get("name", ""),
        notes=doc.get("notes", ""),
    )


def parse_scenario(doc: dict):
    """Build a scenario object from an already-decoded JSON document."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    kind = doc.get("type") or ("lq" if "system" in doc else "consensus")
    if kind == "lq":
        return _parse_lq(doc)
    if kind == "consensus":
        return _parse_consensus(doc)
    raise ScenarioError(f"unknown scenario type {kind!r}")


def load_scenario(path):
    """Read a scenario file; bare names resolve to the bundled scenarios."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled_path(str(path))
    try:
        doc = json.loads(Path(p).read_text())
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from exc
    return parse_scenario(doc)


def _schedule_dict(s: IterationSchedule) -> dict:
    return s.to_dict()


def scenario_to_dict(sc) -> dict:
    """Inverse of :func:`parse_scenario`."""
    if isinstance(sc, LQScenario):
        p = sc.problem
        doc = {"type": "lq"}
        if sc.name:
            doc["name"] = sc.name
        if sc.notes:
            doc["notes"] = sc.notes
        doc["system"] = {
            "A": _tolist(p.A), "B": _tolist(p.B), "Q": _tolist(p.Q), "R": _tolist(p.R),
            "T": p.T, "x0": _tolist(p.x0), "xT": _tolist(p.xT),
        }
        if sc.views:
            doc["agents"] = [
                {"A": _tolist(v.A), "B": _tolist(v.B), "Q": _tolist(v.Q), "M": _tolist(v.M),
                 "x0": _tolist(v.x0), "xT": _tolist(v.xT)}
                for v in sc.views
            ]
        if sc.topology is not None:
            t = sc.topology
            doc["topology"] = {"N": t.N, "edges": [list(e) for e in t.edges], "gamma": t.gamma}
        doc["schedule"] = _schedule_dict(sc.schedule)
        doc["grid"] = {"num_steps": sc.num_steps}
        if sc.tolerances:
            doc["tolerances"] = dict(sc.tolerances)
        return doc
    if isinstance(sc, ConsensusScenario):
        s = sc.system
        doc = {"type": "consensus"}
        if sc.name:
            doc["name"] = sc.name
        if sc.notes:
            doc["notes"] = sc.notes
        if sc.ugv is not None:
            doc["ugv"] = [
                {"C": float(u["C"]), "D": float(u["D"]), "q0": _tolist(u["q0"]), "v0": _tolist(u["v0"])}
                for u in sc.ugv
            ]
        else:
            doc["agents"] = [
                {"A": _tolist(a), "B": _tolist(b), "R": _tolist(r), "x0": _tolist(x)}
                for a, b, r, x in zip(s.A, s.B, s.R, s.x0)
            ]
        t = s.topology
        doc["topology"] = {"N": t.N, "edges": [list(e) for e in t.edges], "gamma": t.gamma}
        doc["weights"] = sc.weights
        base = {}
        if sc.baseline_K is not None:
            base["K"] = _tolist(sc.baseline_K)
        if sc.baseline_set:
            base["K_set"] = [_tolist(K) for K in sc.baseline_set]
        if base:
            doc["baseline"] = base
        doc["cost_split"] = sc.cost_split
        doc["schedule"] = _schedule_dict(sc.schedule)
        doc["grid"] = {"num_steps": sc.num_steps, "T_sim": sc.t_sim}
        return doc
    raise TypeError(f"not a scenario: {type(sc).__name__}")


def dump_scenario(sc, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def bundled_path(name: str) -> Path:
    ref = resources.files("distlq") / "data" / f"{name}.json"
    with resources.as_file(ref) as p:
        if not p.exists():
            raise ScenarioError(f"no bundled scenario named {name!r}; available: {bundled_scenarios()}")
        return Path(p)


def bundled_scenarios() -> list[str]:
    root = resources.files("distlq") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
