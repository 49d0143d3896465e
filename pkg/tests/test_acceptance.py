"""One test per acceptance criterion; each prints a single PASS/FAIL line.

Criteria with several independent clauses are split (4a/4b, 5a/5b/5c,
6a/6b/6c) so that one unattainable clause does not hide the others.
"""

import csv
import time

import numpy as np
import pytest

from distlq import centralized as c
from distlq import cli
from distlq import consensus as cs
from distlq import distributed as d
from distlq.model import IterationSchedule, LQTerminalProblem, Topology, validate_gamma
from distlq.numerics import TimeGrid, psd_order_holds
from distlq.scenarios import LQScenario, bundled_scenarios, load_scenario

from conftest import identical_views, random_problem

P_UGV = 33.5591
FLEET_REPORTED = (82.7573, 76.2762, 89.3999, 76.4114, 82.7004)


@pytest.fixture
def report(capsys):
    def emit(tag, title, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {tag:<3} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"{tag} {title}: {detail}"

    return emit


@pytest.fixture(scope="module")
def four_agent_runs():
    sc = load_scenario("four_agent")
    grid = TimeGrid(sc.problem.T, 2000)
    t0 = time.perf_counter()
    dist = d.solve(sc.views, sc.topology, sc.problem.R, grid, sc.schedule)
    elapsed = time.perf_counter() - t0
    ref = c.solve(sc.problem, grid, sc.schedule)
    return sc, dist, ref, elapsed


@pytest.fixture(scope="module")
def ugv_run():
    sc = load_scenario("ugv")
    grid = TimeGrid(sc.t_sim, sc.num_steps)
    t0 = time.perf_counter()
    sol = cs.solve_consensus(sc.system, sc.schedule, grid, cost_split=sc.cost_split)
    return sc, sol, time.perf_counter() - t0


def test_c1_scalar_riccati_oracle(report):
    p = LQTerminalProblem([[0.0]], [[1.0]], [[1.0]], [[1.0]], 1.0, [1.0], [0.0])
    g = TimeGrid(1.0, 1000)
    t0 = time.perf_counter()
    r = c.riccati_iteration(p, g)
    dt = time.perf_counter() - t0
    err = float(np.abs(r.P.samples[:, 0, 0] - np.tanh(1.0 - g.nodes)).max())
    ok = r.converged and r.iterations_used <= 10 and err <= 1e-4 and dt < 1.0
    report("1", "scalar Riccati oracle", ok, f"err {err:.2e}, {r.iterations_used} sweeps, {dt:.3f} s")


def _first_monotonicity_violation(problem, grid):
    r = c.riccati_iteration(problem, grid, IterationSchedule(max_n=30, tol_outer=1e-9),
                            keep_history=True, strict=False)
    hist = r.history[1:]
    for n, (a, b) in enumerate(zip(hist, hist[1:]), start=1):
        for j in range(len(grid)):
            if not psd_order_holds(a[j], b[j], 1e-8):
                return n, j
    return None


def test_c2_monotonicity_suite(report):
    rng = np.random.default_rng(2024)
    problems = [random_problem(rng, 1 + k % 4) for k in range(20)]
    problems.append(load_scenario("four_agent").problem)
    bad = []
    for k, p in enumerate(problems):
        v = _first_monotonicity_violation(p, TimeGrid(p.T, 400))
        if v is not None:
            bad.append((k, v))
    report("2", "monotone Riccati iterates", not bad, f"{len(problems)} problems, violations {bad or 'none'}")


def test_c3_terminal_constraint(report):
    sc = load_scenario("four_agent")
    s = c.solve(sc.problem, TimeGrid(sc.problem.T, 2000), sc.schedule)
    stat = c.check_stationarity(s, sc.problem)
    ok = s.terminal_error <= 1e-2 and stat <= 1e-3
    report("3", "terminal constraint", ok, f"|x(T)-xT| {s.terminal_error:.2e}, stationarity {stat:.2e}")


def test_c4a_distributed_matches_centralized(report, four_agent_runs):
    sc, dist, ref, elapsed = four_agent_runs
    errs = {
        "P": max(c.max_node_norm(a.P.samples - ref.P.samples) for a in dist.agents),
        "x": max(c.max_node_norm(a.x.samples - ref.x_star.samples) for a in dist.agents),
        "u": max(c.max_node_norm(a.u.samples - ref.u_star.samples) for a in dist.agents),
    }
    ok = all(v <= 5e-2 for v in errs.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items()) + f", {elapsed:.1f} s"
    report("4a", "distributed vs centralized <= 5e-2", ok, detail)


def test_c4b_cross_agent_deviation(report, four_agent_runs):
    sc, dist, _, _ = four_agent_runs
    dev = dist.max_cross_agent_deviation()
    worst = max(dev.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in dev.items())
    report("4b", "cross-agent deviation <= 1e-3", worst <= 1e-3, detail)


def test_c5a_centralized_are_norm(report, ugv_run):
    _, sol, _ = ugv_run
    nrm = float(np.linalg.norm(sol.P, 2))
    rel = abs(nrm - P_UGV) / P_UGV
    report("5a", "centralized |P|_2 within 1% of 33.5591", rel <= 1e-2, f"{nrm:.4f} ({rel:.2%} off)")


def test_c5b_agent_norms_in_band(report, ugv_run):
    _, sol, elapsed = ugv_run
    norms = sol.agent_norms
    ok = all(33.3 <= v <= 33.7 for v in norms) and elapsed < 300
    report("5b", "agent |P_i|_2 in [33.3, 33.7]", ok, " ".join(f"{v:.4f}" for v in norms) + f", {elapsed:.1f} s")


def test_c5c_agent_norms_agree(report, ugv_run):
    _, sol, _ = ugv_run
    norms = np.array(sol.agent_norms)
    spread = float((norms.max() - norms.min()) / norms.min())
    report("5c", "agent norms within 0.5% of each other", spread <= 5e-3, f"spread {spread:.3%}")


@pytest.fixture(scope="module")
def fleet_cases(tmp_path_factory):
    out = tmp_path_factory.mktemp("fleet_cases")
    code = cli.main(["consensus", "--scenario", "ugv", "--fleet-cases", "--out", str(out)])
    with open(out / "consensus_report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return code, rows


def test_c6a_fleet_cases_cases(report, fleet_cases):
    code, rows = fleet_cases
    detail = []
    ok = code == 0 and len(rows) == 5
    for r, ref in zip(rows, FLEET_REPORTED):
        J = float(r["J_proposed"])
        rel = abs(J - ref) / ref
        vid = float(r["value_identity_rel"])
        # a mismatching reading is acceptable when it is flagged and the value identity holds
        case_ok = rel <= 0.02 or (r["flag"] == "mismatch" and vid <= 5e-3)
        ok &= case_ok and r["flag"] == ("match" if rel <= 0.02 else "mismatch")
        detail.append(f"{J:.2f} vs {ref} ({r['flag']}, identity {vid:.1e})")
    report("6a", "fleet cases match reported costs or are flagged", ok, "; ".join(detail))


def test_c6b_fleet_cases_value_identity(report, fleet_cases):
    _, rows = fleet_cases
    worst = max(float(r["value_identity_rel"]) for r in rows)
    report("6b", "value identity <= 0.5% in every case", worst <= 5e-3, f"worst {worst:.2e}")


def test_c6c_baseline_dominated(report, fleet_cases):
    _, rows = fleet_cases
    pairs = [(float(r["J_proposed"]), float(r["J_baseline"])) for r in rows]
    ok = all(a < b for a, b in pairs)
    report("6c", "J_proposed < J_baseline", ok, "; ".join(f"{a:.1f} < {b:.1f}" for a, b in pairs))


def test_c7_identity_invariants(report):
    worst_dual, worst_sym, min_eig = 0.0, 0.0, np.inf
    worst_rows = 0.0
    for name in bundled_scenarios():
        sc = load_scenario(name)
        if isinstance(sc, LQScenario):
            s = c.solve(sc.problem, TimeGrid(sc.problem.T, sc.num_steps), sc.schedule)
            PsiPhi = np.swapaxes(s.Psi.samples, 1, 2) @ s.Phi.samples
            worst_dual = max(worst_dual, float(np.abs(PsiPhi - np.eye(sc.problem.n)).max()))
            worst_sym = max(worst_sym, float(np.abs(s.gramian - s.gramian.T).max()))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(s.gramian).min()))
        else:
            Qt = cs.build_Qtilde(sc.system)
            worst_rows = max(worst_rows, float(np.abs(cs.block_row_sums(Qt, sc.system.N)).max()))
    ok = worst_dual <= 1e-6 and worst_sym == 0.0 and min_eig >= -1e-10 and worst_rows == 0.0
    detail = (f"Psi'Phi-I {worst_dual:.1e}, Gramian asym {worst_sym:.1e}, min eig {min_eig:.2e}, "
              f"Qtilde row sums {worst_rows:.1e}")
    report("7", "identity invariants", ok, detail)


def test_c8_degeneracy_suite(report):
    sc = load_scenario("single_agent")
    g = TimeGrid(sc.problem.T, sc.num_steps)
    ref = c.solve(sc.problem, g, sc.schedule)
    a = d.solve(sc.views, sc.topology, sc.problem.R, g, sc.schedule).agents[0]
    n1 = max(c.max_node_norm(a.P.samples - ref.P.samples), c.max_node_norm(a.x.samples - ref.x_star.samples),
             c.max_node_norm(a.u.samples - ref.u_star.samples))
    p = load_scenario("four_agent").problem
    views = identical_views(p, 4)
    s = d.solve(views, Topology.ring(4, 2.5), p.R, TimeGrid(1.0, 400), IterationSchedule())
    sym = all(
        np.array_equal(getattr(b, f).samples, getattr(s.agents[0], f).samples)
        for b in s.agents[1:] for f in ("P", "x", "u")
    )
    ok19, rho19 = validate_gamma(Topology.ring(4, 1.9))
    ok25, rho25 = validate_gamma(Topology.ring(4, 2.5))
    ok = (n1 <= 1e-10 and sym and not ok19 and abs(rho19 - 1.105) < 5e-4 and ok25 and abs(rho25 - 0.6) < 1e-12)
    detail = f"N=1 dev {n1:.1e}, symmetric {sym}, rho(1.9) {rho19:.4f}, rho(2.5) {rho25:.4f}"
    report("8", "degeneracy suite", ok, detail)


def test_c9_consensus_achieved(report, ugv_run):
    sc, sol, _ = ugv_run
    N = sc.system.N
    X = sol.x_plant.reshape(len(sol.grid), N, 4)
    pos = X[-1, :, :2]
    spread = max(float(np.linalg.norm(pos[i] - pos[j])) for i in range(N) for j in range(i + 1, N))
    vel = float(np.linalg.norm(X[-1, :, 2:], axis=1).max())
    ok = spread <= 1e-2 and vel <= 1e-2 and sol.grid.t_end >= 30.0
    report("9", "consensus by T_sim = 30", ok, f"position spread {spread:.2e}, max |v| {vel:.2e}")
