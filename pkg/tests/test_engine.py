import numpy as np
import pytest

import dfm
from dfm.engine import (EngineError, Trace, TraceRow, dfm_round, kkt_metric,
                        run, step_sizes, theory_report)
from dfm.model import Graph, NodeLocal, ProblemSpec, QuadraticCost
from dfm.reachability import weighting_matrix

import oracles


def test_step_sizes_examples():
    # complete overlap: every closed neighborhood has size 3
    g = Graph(4, ((0, 1), (1, 2), (2, 3), (0, 3)))
    eta = step_sizes(g)
    assert all(e == pytest.approx(1.0 / 3.0) for e in eta.eta)
    # path: interior closed neighborhoods have size 3, ends see them too
    path = Graph(4, ((0, 1), (1, 2), (2, 3)))
    assert step_sizes(path).eta == tuple([1.0 / 3.0] * 4)
    star = Graph(4, ((0, 1), (0, 2), (0, 3)))
    assert step_sizes(star).eta == tuple([0.25] * 4)


def test_step_size_row_sums_random_graphs():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(2, 12))
        edges = {(i, int(rng.integers(i))) for i in range(1, n)}
        g = Graph(n, tuple((min(a, b), max(a, b)) for a, b in edges))
        eta = step_sizes(g)
        for i in range(n):
            hood = g.closed_neighborhood(i)
            assert sum(eta[j] for j in hood) <= 1.0 + 1e-12


def test_one_round_hand_oracle():
    spec = dfm.example_problems(1, add_edge_14=True)
    x0 = dfm.allocation(spec, [[0.0], [0.0], [0.0], [1.0]])
    nxt, plans = dfm_round(spec, x0, step_sizes(spec.graph))
    expect = [1.0 / 3.0, 0.0, 0.0, 2.0 / 3.0]
    for b, e in zip(nxt.blocks, expect):
        assert b[0] == pytest.approx(e, abs=1e-9)
    assert dfm.evaluate_objective(spec, x0).F == pytest.approx(0.5)
    assert dfm.evaluate_objective(spec, nxt).F == pytest.approx(5.0 / 18.0, abs=1e-9)


def test_fixed_point_when_plans_zero():
    spec = dfm.example_problems(1, add_edge_14=False)
    x0 = dfm.allocation(spec, [[0.0], [0.0], [0.0], [1.0]])
    nxt, plans = dfm_round(spec, x0, step_sizes(spec.graph))
    for a, b in zip(nxt.blocks, x0.blocks):
        assert np.max(np.abs(a - b)) <= 1e-12
    for p in plans:
        for d in p.deltas.values():
            assert np.max(np.abs(d)) <= 1e-12


def test_run_requires_strictly_feasible_start():
    spec = dfm.example_problems(2, add_edge_14=True)
    bad = dfm.allocation(spec, [[0.0], [0.0], [0.0], [1.0]])  # on the boundary
    with pytest.raises(EngineError):
        run(spec, bad, rounds=5)


def test_run_monotone_feasible_and_stops_on_gradient():
    spec = dfm.example_problems(2, add_edge_14=True, rho=1e-4)
    x0 = dfm.feasible_initialization(spec)
    trace, final = run(spec, x0, rounds=500)
    F = trace.column("F")
    assert all(b <= a + 1e-10 for a, b in zip(F, F[1:]))
    assert all(r <= 1e-8 for r in trace.column("coupling_residual"))
    assert all(m < 0 for m in trace.column("interior_margin"))
    assert trace.final.grad_W_sq <= 1e-12
    assert len(trace.rows) < 501  # stopped early
    # descent column telescopes the objective
    for cur, nxt in zip(trace.rows, trace.rows[1:]):
        assert cur.descent == pytest.approx(cur.F - nxt.F, abs=1e-14)


def test_run_matches_workers():
    spec = dfm.example_problems(2, add_edge_14=True, rho=1e-4)
    x0 = dfm.feasible_initialization(spec)
    base = None
    for w in (1, 2, 8):
        trace, _ = run(spec, x0, rounds=40, workers=w)
        lines = "\n".join(trace.csv_lines(include_timing=False))
        if base is None:
            base = lines
        else:
            assert lines == base


def test_trace_csv_header_and_timing_column():
    t = Trace(rows=[TraceRow(k=0, F=1.0, f=0.9, rhoB=0.1, grad_W_sq=0.5,
                             coupling_residual=0.0, interior_margin=-1.0,
                             descent=0.0, ms=12.5)])
    lines = t.csv_lines()
    assert lines[0] == ("round,F,f,rhoB,grad_W_sq,coupling_residual,"
                       "interior_margin,descent,ms")
    assert lines[1].endswith("12.5")
    assert t.csv_lines(include_timing=False)[1].endswith("0.0")


def test_kkt_metric_zero_iff_weighted_gradient_zero():
    spec = dfm.example_problems(1, add_edge_14=False)
    W = weighting_matrix(spec, step_sizes(spec.graph)).W
    # the stuck point of the path instance: gradient nonzero, metric zero
    x = dfm.allocation(spec, [[0.0], [0.0], [0.0], [1.0]])
    assert kkt_metric(spec, x, W) <= 1e-12
    g = dfm.objective_gradient(spec, x)
    assert np.max(np.abs(g)) > 0.5
    # same instance with the extra edge: metric is positive at that point
    spec14 = dfm.example_problems(1, add_edge_14=True)
    W14 = weighting_matrix(spec14, step_sizes(spec14.graph)).W
    assert kkt_metric(spec14, x, W14) > 1e-3


def test_theory_report_bounds_hold():
    spec = dfm.example_problems(2, add_edge_14=True, rho=1e-4)
    x0 = dfm.feasible_initialization(spec)
    trace, _ = run(spec, x0, rounds=200)
    report = theory_report(spec, trace, f_lower=dfm.benchmarks.f_lower_bound(spec))
    assert report is not None
    assert report["descent_inequality_ok"]
    assert report["telescoped_bound_ok"]
    assert report["grad_W_sq_sum"] <= report["grad_W_sq_budget"] + 1e-8


def test_theory_report_none_without_constants():
    spec = dfm.example_problems(1, add_edge_14=True)
    x0 = dfm.allocation(spec, [[0.2], [0.3], [0.1], [0.8]])
    trace, _ = run(spec, x0, rounds=20)
    assert theory_report(spec, trace, f_lower=None) is None


def test_remark1_weighted_gradient_equivalence():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(3, 11))
        edges = {(int(rng.integers(i)), i) for i in range(1, n)}
        extra = {(int(rng.integers(n)), int(rng.integers(n))) for _ in range(n)}
        edges |= {(min(a, b), max(a, b)) for a, b in extra if a != b}
        g = Graph(n, tuple(edges))
        L = float(rng.uniform(1.0, 3.0))
        nodes = tuple(NodeLocal(
            dim=1,
            cost=QuadraticCost([[float(rng.uniform(0.1, L))]],
                               [float(rng.normal())]),
            coupling_block=[[1.0]], smoothness=L) for _ in range(n))
        spec = ProblemSpec(graph=g, nodes=nodes, rhs=[float(rng.normal())])
        x0_blocks = rng.normal(size=n)
        x0_blocks[-1] = spec.rhs[0] - np.sum(x0_blocks[:-1])
        x0 = dfm.allocation(spec, [[v] for v in x0_blocks])
        nxt, _ = dfm_round(spec, x0, step_sizes(g))
        H = oracles.weighted_gradient_matrix(g)
        grad = np.concatenate([nd.cost.grad(b)
                               for nd, b in zip(spec.nodes, x0.blocks)])
        pred = x0.stacked - H @ grad / L
        assert np.max(np.abs(nxt.stacked - pred)) <= 1e-10
