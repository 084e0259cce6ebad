import numpy as np
import pytest

import dfm
from dfm.model import (Graph, NodeLocal, ProblemSpec, QuadraticConstraint,
                       QuadraticCost, box_constraints)
from dfm.subproblem import (ReallocationPlan, SubproblemNotConverged,
                            boundary_distance, fraction_to_boundary,
                            newton_kkt_step, solve_subproblem)


def _scalar_nodes(n, costs, blocks, constraints=None):
    constraints = constraints or [()] * n
    return tuple(
        NodeLocal(dim=1, cost=c, coupling_block=[[b]], constraints=cs)
        for c, b, cs in zip(costs, blocks, constraints))


def test_fraction_to_boundary_affine_exact():
    cons = box_constraints(0.0, 1.0)
    # heading for the upper bound from 0.5 at unit speed: distance 0.5
    assert fraction_to_boundary([0.5], [1.0], cons) == pytest.approx(0.5)
    assert boundary_distance([0.5], [1.0], cons) == pytest.approx(0.5)
    # short step never reaches a boundary
    assert fraction_to_boundary([0.5], [0.1], cons) == pytest.approx(1.0)
    assert boundary_distance([0.5], [0.1], cons) == pytest.approx(5.0)
    # moving away from every boundary
    assert np.isinf(boundary_distance([0.5], [0.0], cons))


def test_fraction_to_boundary_nonaffine_bisection():
    cons = (QuadraticConstraint([[2.0]], [0.0], -1.0),)  # x^2 <= 1
    a = fraction_to_boundary([0.0], [2.0], cons)
    x_after = 0.0 + 0.99 * a * 2.0
    assert x_after < 1.0
    assert a > 0.4  # lands close to the boundary, not absurdly short


def test_newton_exact_on_barrier_free_quadratic():
    # two nodes, A_i = A_j = 1, f_i = (x-1)^2/2, f_j = x^2/2, from (0, 0)
    costs = [QuadraticCost([[1.0]], [-1.0]), QuadraticCost([[1.0]], [0.0])]
    nodes = _scalar_nodes(2, costs, [1.0, 1.0])
    spec = ProblemSpec(graph=Graph(2, ((0, 1),)), nodes=nodes, rhs=[0.0])
    snap = dfm.allocation(spec, [[0.0], [0.0]])
    plan = solve_subproblem(spec, 0, snap)
    assert plan.deltas[0][0] == pytest.approx(0.5, abs=1e-10)
    assert plan.deltas[1][0] == pytest.approx(-0.5, abs=1e-10)
    assert plan.kkt_residual <= 1e-9


def test_newton_kkt_step_unit_cases():
    H = np.eye(2)
    A = np.array([[1.0, 1.0]])
    d, w, dec = newton_kkt_step(H, np.array([-1.0, 0.0]), A, np.zeros(1))
    assert d @ A[0] == pytest.approx(0.0, abs=1e-12)
    assert d[0] == pytest.approx(0.5) and d[1] == pytest.approx(-0.5)
    # stationary point gives the zero direction
    d0, _, dec0 = newton_kkt_step(H, A[0] * 2.0, A, np.zeros(1))
    assert np.max(np.abs(d0)) <= 1e-12 and dec0 <= 1e-12


def test_newton_kkt_step_rank_deficient_regularized():
    # duplicated columns make the KKT matrix singular; the regularized solve
    # must still return a finite direction with tiny equality residual
    H = np.eye(2)
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    d, w, dec = newton_kkt_step(H, np.array([1.0, -1.0]), A, np.zeros(2))
    assert np.all(np.isfinite(d)) and np.all(np.isfinite(w))
    assert np.max(np.abs(A @ d)) <= 1e-6


def test_isolated_node_square_invertible_block_forces_zero():
    nodes = (NodeLocal(dim=1, cost=QuadraticCost([[1.0]], [-3.0]),
                       coupling_block=[[2.0]]),)
    spec = ProblemSpec(graph=Graph(1), nodes=nodes, rhs=[1.0])
    snap = dfm.allocation(spec, [[0.5]])
    plan = solve_subproblem(spec, 0, snap)
    assert plan.deltas[0][0] == pytest.approx(0.0, abs=1e-12)


def test_example1_node2_plan_is_zero():
    spec = dfm.example_problems(1, add_edge_14=False)
    snap = dfm.allocation(spec, [[0.0], [0.0], [0.0], [1.0]])
    plan = solve_subproblem(spec, 1, snap)
    for j in (0, 1, 2):
        assert plan.deltas[j][0] == pytest.approx(0.0, abs=1e-12)


def _random_spec(rng, with_boxes):
    n = int(rng.integers(3, 6))
    edges = [(i, i + 1) for i in range(n - 1)]
    if n > 3 and rng.random() < 0.5:
        edges.append((0, n - 1))
    costs, blocks, cons = [], [], []
    for _ in range(n):
        a = float(rng.uniform(0.3, 2.0))
        b = float(rng.uniform(-1.0, 1.0))
        costs.append(QuadraticCost([[a]], [b]))
        blocks.append(float(rng.uniform(0.5, 2.0)))
        cons.append(box_constraints(-1.0, 2.0) if with_boxes else ())
    nodes = _scalar_nodes(n, costs, blocks, cons)
    rhs = [float(sum(bl * 0.4 for bl in blocks))]
    spec = ProblemSpec(graph=Graph(n, tuple(edges)), nodes=nodes, rhs=rhs,
                       barrier_weight=1e-2)
    snap = dfm.allocation(spec, [[0.4]] * n)
    return spec, snap


@pytest.mark.parametrize("with_boxes", [False, True])
def test_plan_invariants_random(with_boxes):
    rng = np.random.default_rng(11)
    for _ in range(25):
        spec, snap = _random_spec(rng, with_boxes)
        i = int(rng.integers(spec.n))
        plan = solve_subproblem(spec, i, snap)
        hood = spec.graph.closed_neighborhood(i)
        assert set(plan.deltas) == set(hood)
        # zero-sum over the neighborhood
        s = sum(spec.nodes[j].coupling_block @ plan.deltas[j] for j in hood)
        assert np.max(np.abs(s)) <= 1e-8
        # strict interiority of every touched block
        for j in hood:
            xj = snap.blocks[j] + plan.deltas[j]
            for g in spec.nodes[j].constraints:
                assert g.value(xj) < 0.0
        # descent against the zero plan and stationarity via the multiplier
        phi = _subproblem_phi(spec, i, snap)
        p = np.concatenate([plan.deltas[j] for j in hood])
        assert phi(p) <= phi(np.zeros_like(p)) + 1e-10
        _assert_stationarity(spec, i, snap, plan)


def _subproblem_phi(spec, i, snap):
    hood = spec.graph.closed_neighborhood(i)
    rho = spec.barrier_weight

    def phi(p):
        total, off = 0.0, 0
        for j in hood:
            nd = spec.nodes[j]
            pj = p[off:off + nd.dim]
            off += nd.dim
            total += float(nd.cost.grad(snap.blocks[j]) @ pj)
            total += 0.5 * nd.smoothness * float(pj @ pj)
            for g in nd.constraints:
                total += rho / (-g.value(snap.blocks[j] + pj))
        return total
    return phi


def _assert_stationarity(spec, i, snap, plan, tol=5e-7):
    from dfm.barrier import barrier_eval
    hood = spec.graph.closed_neighborhood(i)
    scale = 1.0
    for j in hood:
        nd = spec.nodes[j]
        xj = snap.blocks[j] + plan.deltas[j]
        g = nd.cost.grad(snap.blocks[j]) + nd.smoothness * plan.deltas[j]
        if nd.constraints:
            g = g + spec.barrier_weight * barrier_eval(nd, xj).gradient
        scale = max(scale, float(np.max(np.abs(g))))
        lhs = g - nd.coupling_block.T @ plan.multiplier
        assert np.max(np.abs(lhs)) <= tol * scale


def test_iteration_cap_raises_with_valid_plan():
    spec = dfm.example_problems(2, add_edge_14=True, rho=1e-4)
    snap = dfm.feasible_initialization(spec)
    with pytest.raises(SubproblemNotConverged) as exc:
        solve_subproblem(spec, 0, snap, max_iter=2)
    plan = exc.value.plan
    assert isinstance(plan, ReallocationPlan)
    hood = spec.graph.closed_neighborhood(0)
    s = sum(spec.nodes[j].coupling_block @ plan.deltas[j] for j in hood)
    assert np.max(np.abs(s)) <= 1e-8
    for j in hood:
        xj = snap.blocks[j] + plan.deltas[j]
        for g in spec.nodes[j].constraints:
            assert g.value(xj) < 0.0


def test_barrier_free_plans_match_direct_kkt_oracle():
    rng = np.random.default_rng(23)
    for _ in range(20):
        spec, snap = _random_spec(rng, with_boxes=False)
        i = int(rng.integers(spec.n))
        plan = solve_subproblem(spec, i, snap)
        hood = spec.graph.closed_neighborhood(i)
        # oracle: one dense KKT solve of the quadratic surrogate model
        L = np.array([spec.nodes[j].smoothness for j in hood])
        g = np.array([float(spec.nodes[j].cost.grad(snap.blocks[j])[0])
                      for j in hood])
        a = np.array([float(spec.nodes[j].coupling_block[0, 0]) for j in hood])
        lam = float(np.sum(a * g / L) / np.sum(a * a / L))
        p_star = (a * lam - g) / L
        got = np.array([float(plan.deltas[j][0]) for j in hood])
        assert np.max(np.abs(got - p_star)) <= 1e-10 * max(1.0, np.max(np.abs(g)))
