import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dfm
from dfm.model import (AffineConstraint, Graph, ModelError, NodeLocal,
                       ProblemSpec, QuadraticConstraint, QuadraticCost,
                       SigmoidUtilityCost, box_constraints)


def test_graph_normalizes_and_rejects_bad_edges():
    g = Graph(4, ((2, 1), (0, 1)))
    assert g.edges == ((0, 1), (1, 2))
    assert g.neighbors(1) == (0, 2)
    assert g.closed_neighborhood(1) == (0, 1, 2)
    with pytest.raises(ModelError):
        Graph(3, ((0, 0),))
    with pytest.raises(ModelError):
        Graph(3, ((0, 5),))
    with pytest.raises(ModelError):
        Graph(3, ((0, 1), (1, 0)))
    with pytest.raises(ModelError):
        Graph(0)


def test_graph_connectivity():
    assert Graph(1).is_connected()
    assert Graph(3, ((0, 1), (1, 2))).is_connected()
    assert not Graph(3, ((0, 1),)).is_connected()


def test_quadratic_cost_derivatives_and_constants():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.0])
    f = QuadraticCost(Q, b, 3.0)
    x = np.array([0.3, -0.7])
    assert f.value(x) == pytest.approx(0.5 * x @ Q @ x + b @ x + 3.0)
    eps = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        fd = (f.value(x + e) - f.value(x - e)) / (2 * eps)
        assert f.grad(x)[k] == pytest.approx(fd, abs=1e-6)
    eigs = np.linalg.eigvalsh(Q)
    assert f.lipschitz == pytest.approx(eigs[-1])
    assert f.strong_convexity == pytest.approx(eigs[0])


def test_sigmoid_cost_zero_rate_and_envelope():
    f = SigmoidUtilityCost(a=1.5, b=0.4, p=2.0)
    assert f.utility(0.0) == pytest.approx(0.0, abs=1e-15)
    assert f.lipschitz == pytest.approx(2.0 * 1.5 ** 2 / 4.0)
    # the curvature envelope dominates the finite-difference curvature
    for r in np.linspace(0.0, 2.0, 30):
        eps = 1e-5
        curv = (f.value([r + eps]) - 2 * f.value([r]) + f.value([r - eps])) / eps ** 2
        assert abs(curv) <= f.lipschitz + 1e-3


def test_box_constraints_signs():
    lo, hi = box_constraints(0.0, 1.0)
    assert lo.value([0.25]) == pytest.approx(-0.25)
    assert hi.value([0.25]) == pytest.approx(-0.75)
    assert lo.value([-0.1]) > 0
    assert hi.value([1.1]) > 0


def test_quadratic_constraint_requires_psd():
    with pytest.raises(ModelError):
        QuadraticConstraint([[-1.0]], [0.0], -1.0)
    g = QuadraticConstraint([[2.0]], [0.0], -1.0)
    assert g.value([0.5]) == pytest.approx(0.25 - 1.0)
    assert g.grad([0.5])[0] == pytest.approx(1.0)


def _toy_spec(rho=1e-3):
    nodes = tuple(
        NodeLocal(dim=1, cost=QuadraticCost([[1.0]], [0.0]),
                  coupling_block=[[1.0]], constraints=box_constraints(0.0, 1.0))
        for _ in range(3))
    return ProblemSpec(graph=Graph(3, ((0, 1), (1, 2))), nodes=nodes,
                       rhs=[1.5], barrier_weight=rho)


def test_allocation_feasibility_and_margin():
    spec = _toy_spec()
    x = dfm.allocation(spec, [[0.5], [0.5], [0.5]])
    assert x.feasible
    assert x.interior_margin == pytest.approx(-0.5)
    assert np.max(np.abs(x.residual)) == pytest.approx(0.0)
    y = dfm.allocation(spec, [[0.5], [0.5], [0.6]])
    assert not y.feasible
    z = dfm.allocation(spec, [[0.0], [0.5], [1.0]])
    assert z.interior_margin == 0.0 and not z.feasible


def test_allocation_shape_errors():
    spec = _toy_spec()
    with pytest.raises(ModelError):
        dfm.allocation(spec, [[0.5], [0.5]])
    with pytest.raises(ModelError):
        dfm.allocation(spec, [[0.5, 0.5], [0.5], [0.5]])


def test_validate_problem_catches_mismatches():
    spec = _toy_spec()
    assert dfm.validate_problem(spec).ok
    bad = ProblemSpec(graph=Graph(2, ((0, 1),)), nodes=spec.nodes, rhs=[1.0])
    assert not dfm.validate_problem(bad).ok
    neg = ProblemSpec(graph=spec.graph, nodes=spec.nodes, rhs=[1.0],
                      barrier_weight=-1.0)
    assert not dfm.validate_problem(neg).ok
    disc = ProblemSpec(graph=Graph(3), nodes=spec.nodes, rhs=[1.0])
    rep = dfm.validate_problem(disc)
    assert rep.ok and rep.warnings


def test_objective_splits_cost_and_barrier():
    spec = _toy_spec(rho=0.1)
    x = dfm.allocation(spec, [[0.5], [0.5], [0.5]])
    obj = dfm.evaluate_objective(spec, x)
    assert obj.f == pytest.approx(3 * 0.125)
    assert obj.B == pytest.approx(3 * (2.0 + 2.0))
    assert obj.F == pytest.approx(obj.f + 0.1 * obj.B)


def test_objective_gradient_matches_finite_differences():
    spec = _toy_spec(rho=0.05)
    x = [np.array([0.4]), np.array([0.6]), np.array([0.5])]
    g = dfm.objective_gradient(spec, x)
    eps = 1e-6
    for i in range(3):
        xp = [b.copy() for b in x]
        xm = [b.copy() for b in x]
        xp[i][0] += eps
        xm[i][0] -= eps
        fd = (dfm.evaluate_objective(spec, xp).F
              - dfm.evaluate_objective(spec, xm).F) / (2 * eps)
        assert g[i] == pytest.approx(fd, abs=1e-5)


def test_surrogate_upper_bounds_cost():
    nd = NodeLocal(dim=1, cost=QuadraticCost([[0.8]], [0.3]),
                   coupling_block=[[1.0]])
    anchor = np.array([0.2])
    for t in np.linspace(-2, 2, 17):
        x = np.array([t])
        assert dfm.surrogate_value(nd, x, anchor) >= nd.cost.value(x) - 1e-12
    assert dfm.surrogate_value(nd, anchor, anchor) == pytest.approx(
        nd.cost.value(anchor))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.data())
def test_coupling_residual_is_linear(n, data):
    edges = tuple((i, i + 1) for i in range(n - 1))
    nodes = tuple(NodeLocal(dim=1, cost=QuadraticCost([[1.0]], [0.0]),
                            coupling_block=[[1.0]]) for _ in range(n))
    spec = ProblemSpec(graph=Graph(n, edges), nodes=nodes, rhs=[2.0])
    vals = [data.draw(st.floats(-5, 5)) for _ in range(n)]
    res = dfm.coupling_residual(spec, [[v] for v in vals])
    assert res[0] == pytest.approx(sum(vals) - 2.0, abs=1e-9)


def test_affine_rows_cache_matches_constraints():
    nd = NodeLocal(dim=1, cost=QuadraticCost([[1.0]], [0.0]),
                   coupling_block=[[1.0]], constraints=box_constraints(-1.0, 2.0))
    A, b = nd.affine_rows
    x = np.array([0.7])
    expect = [g.value(x) for g in nd.constraints]
    assert np.allclose(A @ x + b, expect)
    mixed = NodeLocal(dim=1, cost=QuadraticCost([[1.0]], [0.0]),
                      coupling_block=[[1.0]],
                      constraints=(QuadraticConstraint([[1.0]], [0.0], -1.0),))
    assert mixed.affine_rows is None
