"""Benchmark instance generators.

Covers the three motivating applications (single-resource dispatch,
two-resource disutility allocation, rate control with sigmoidal utilities),
the two four-node counterexamples used as regression tests, barrier-weight
selection for a target accuracy, and strictly feasible initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .matpower import CaseData
from .model import (AffineConstraint, Graph, ModelError, NodeLocal, ProblemSpec,
                    QuadraticCost, SigmoidUtilityCost, allocation,
                    box_constraints, validate_problem)


class BenchmarkError(Exception):
    pass


class InfeasibleInstance(BenchmarkError):
    """No strictly feasible point exists (interior-point premise violated)."""


# ---------------------------------------------------------------------------
# dispatch from case data
# ---------------------------------------------------------------------------

def derive_generator_graph(case):
    """Generators become nodes; two are neighbors when some path between
    their buses passes through non-generator buses only."""
    adj = {b.id: set() for b in case.buses}
    for f, t in case.branches:
        adj.setdefault(f, set()).add(t)
        adj.setdefault(t, set()).add(f)
    # connectivity of the full bus graph
    if adj:
        start = next(iter(adj))
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != len(adj):
            raise BenchmarkError("bus graph is disconnected")

    gen_buses = {}
    for idx, g in enumerate(case.gens):
        gen_buses.setdefault(g.bus, []).append(idx)

    edges = set()
    # generators sharing one bus are trivially neighbors (no interior vertices)
    for members in gen_buses.values():
        for a in members:
            for b in members:
                if a < b:
                    edges.add((a, b))
    for bus, members in gen_buses.items():
        # BFS through non-generator buses only
        seen = {bus}
        stack = [bus]
        reached = set()
        while stack:
            u = stack.pop()
            for v in adj.get(u, ()):
                if v in seen:
                    continue
                seen.add(v)
                if v in gen_buses:
                    reached.add(v)
                else:
                    stack.append(v)
        for other in reached:
            for a in members:
                for b in gen_buses[other]:
                    if a != b:
                        edges.add((min(a, b), max(a, b)))
    return Graph(node_count=len(case.gens), edges=tuple(sorted(edges)))


def gen_economic_dispatch(case, c, rho=1e-3):
    """Single-resource dispatch: one scalar block per generator, box local
    sets from the active-power limits, quadratic costs from the cost rows."""
    if not case.gens:
        raise BenchmarkError("case has no generators")
    lo = sum(g.pmin for g in case.gens)
    hi = sum(g.pmax for g in case.gens)
    if not (lo < c < hi):
        raise InfeasibleInstance(
            f"demand {c} admits no strictly interior point of [{lo}, {hi}]")
    graph = derive_generator_graph(case)
    nodes = []
    for g, gc in zip(case.gens, case.gencosts):
        c2, c1, c0 = gc.coeffs
        cost = QuadraticCost([[2.0 * c2]], [c1], c0)
        nodes.append(NodeLocal(dim=1, cost=cost, coupling_block=[[1.0]],
                               constraints=box_constraints(g.pmin, g.pmax)))
    spec = ProblemSpec(graph=graph, nodes=tuple(nodes), rhs=[float(c)],
                       barrier_weight=rho, beta=0.0, beta1=1.0,
                       structure="dispatch", name="economic-dispatch")
    report = validate_problem(spec)
    if not report.ok:
        raise BenchmarkError(f"generated spec invalid: {report.errors}")
    return spec


# ---------------------------------------------------------------------------
# two-resource disutility allocation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceUser:
    alpha: float
    beta: float
    demand: float
    role: str  # "renewable" | "coal" | "consumer"
    capacity: float = 0.0


def gen_multi_resource(users, graph, rho=1e-3):
    """Each node holds a (renewable, coal) pair; both resources must balance
    across the network.  Generators may inject (go negative) in their own
    resource up to capacity; everyone else only consumes."""
    nodes = []
    for u in users:
        if u.alpha <= 0 or u.beta <= 0:
            raise BenchmarkError("alpha and beta must be positive")
        if u.role == "renewable":
            lower = (-u.capacity, 0.0)
        elif u.role == "coal":
            lower = (0.0, -u.capacity)
        elif u.role == "consumer":
            lower = (0.0, 0.0)
        else:
            raise BenchmarkError(f"unknown role {u.role!r}")
        # alpha*(x1 + x2 - D)^2 + beta*x2^2 as an explicit quadratic
        quad = 2.0 * np.array([[u.alpha, u.alpha], [u.alpha, u.alpha + u.beta]])
        lin = np.array([-2.0 * u.alpha * u.demand, -2.0 * u.alpha * u.demand])
        cost = QuadraticCost(quad, lin, u.alpha * u.demand ** 2)
        cons = (AffineConstraint([-1.0, 0.0], lower[0]),
                AffineConstraint([0.0, -1.0], lower[1]))
        nodes.append(NodeLocal(dim=2, cost=cost, coupling_block=np.eye(2),
                               constraints=cons))
    spec = ProblemSpec(graph=graph, nodes=tuple(nodes), rhs=[0.0, 0.0],
                       barrier_weight=rho, beta=0.0, beta1=1.0,
                       structure="multi-resource", name="multi-resource")
    feasible_initialization(spec)  # raises if no strictly feasible point
    return spec


# ---------------------------------------------------------------------------
# rate control
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateNetwork:
    links: tuple          # (link id, capacity) pairs
    routes: tuple         # per transmitter, tuple of link ids crossed

    def __post_init__(self):
        caps = dict(self.links)
        for cap in caps.values():
            if cap <= 0:
                raise BenchmarkError("link capacities must be positive")
        for route in self.routes:
            if not route:
                raise BenchmarkError("every route must cross at least one link")
            for l in route:
                if l not in caps:
                    raise BenchmarkError(f"route references unknown link {l}")

    def transmitters_on(self, link):
        return tuple(i for i, route in enumerate(self.routes) if link in route)


def fig1_chain_network(capacities=(1.0, 1.0, 1.0)):
    """Four sources on a three-link chain; consecutive sources share a link,
    so the communication graph is the path S1-S2-S3-S4."""
    links = tuple((l, float(c)) for l, c in enumerate(capacities))
    routes = ((0,), (0, 1), (1, 2), (2,))
    return RateNetwork(links=links, routes=routes)


def gen_rate_control(net, utilities, rho=1e-3):
    """Inequality-to-equality transform of the rate-control problem.

    Transmitter i's block is (rate, one slack per link on its route); local
    constraints keep the rate nonnegative and below every slack, and each
    link's slacks sum to its capacity.  Transmitters sharing a link are
    neighbors.
    """
    if len(utilities) != len(net.routes):
        raise BenchmarkError("one (a, b, p) triple per transmitter required")
    link_ids = [l for l, _ in net.links]
    link_row = {l: r for r, l in enumerate(link_ids)}
    m = len(link_ids)
    for l in link_ids:
        if not net.transmitters_on(l):
            raise BenchmarkError(f"link {l} carries no traffic")

    nodes = []
    for i, (route, (a, b, p)) in enumerate(zip(net.routes, utilities)):
        route = tuple(sorted(route, key=link_row.get))
        d = 1 + len(route)
        cost = SigmoidUtilityCost(a=a, b=b, p=p, dim=d)
        A = np.zeros((m, d))
        cons = [AffineConstraint([-1.0] + [0.0] * (d - 1), 0.0)]
        for pos, l in enumerate(route):
            A[link_row[l], 1 + pos] = 1.0
            row = np.zeros(d)
            row[0] = 1.0
            row[1 + pos] = -1.0
            cons.append(AffineConstraint(row, 0.0))
        nodes.append(NodeLocal(dim=d, cost=cost, coupling_block=A,
                               constraints=tuple(cons)))

    edges = set()
    for l in link_ids:
        sharing = net.transmitters_on(l)
        for x in sharing:
            for y in sharing:
                if x < y:
                    edges.add((x, y))
    graph = Graph(node_count=len(net.routes), edges=tuple(sorted(edges)))
    rhs = [dict(net.links)[l] for l in link_ids]
    return ProblemSpec(graph=graph, nodes=tuple(nodes), rhs=rhs,
                       barrier_weight=rho, beta=0.0, beta1=math.sqrt(2.0),
                       structure="rate-control", name="rate-control")


def random_rate_utilities(net, seed=0):
    """Seeded sigmoid parameter draws: a in [0.5, 2], b in [0.2, 0.8] of the
    smallest capacity on the route, p in [1, 3]."""
    rng = np.random.default_rng(seed)
    caps = dict(net.links)
    out = []
    for route in net.routes:
        cmin = min(caps[l] for l in route)
        out.append((rng.uniform(0.5, 2.0), cmin * rng.uniform(0.2, 0.8),
                    rng.uniform(1.0, 3.0)))
    return tuple(out)


# ---------------------------------------------------------------------------
# four-node regression examples
# ---------------------------------------------------------------------------

def example_problems(which, add_edge_14=False, rho=1e-4):
    """The two line-graph regression instances: quadratic pull toward
    theta = (1, 0, 0, 1) with either a two-endpoint coupling row (1) or a
    full unit-sum coupling with box sets (2)."""
    theta = (1.0, 0.0, 0.0, 1.0)
    edges = [(0, 1), (1, 2), (2, 3)]
    if add_edge_14:
        edges.append((0, 3))
    graph = Graph(node_count=4, edges=tuple(edges))
    nodes = []
    for i, th in enumerate(theta):
        cost = QuadraticCost([[1.0]], [-th], 0.5 * th * th)
        if which == 1:
            a = [[1.0]] if i in (0, 3) else [[0.0]]
            nodes.append(NodeLocal(dim=1, cost=cost, coupling_block=a))
        elif which == 2:
            nodes.append(NodeLocal(dim=1, cost=cost, coupling_block=[[1.0]],
                                   constraints=box_constraints(0.0, 1.0)))
        else:
            raise BenchmarkError("which must be 1 or 2")
    return ProblemSpec(graph=graph, nodes=tuple(nodes), rhs=[1.0],
                       barrier_weight=rho, beta=0.0, beta1=1.0,
                       structure="dispatch" if which == 2 else None,
                       name=f"example{which}")


# ---------------------------------------------------------------------------
# barrier-weight selection and initialization
# ---------------------------------------------------------------------------

def rho_for_accuracy(epsilon, f_at_xprime, f_lower, B_at_xprime):
    """Largest barrier weight certified to keep the original-cost gap of the
    transformed optimum within epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if B_at_xprime <= 0:
        raise ValueError("barrier value at the reference point must be positive")
    gap = f_at_xprime - f_lower
    if gap < 0:
        raise ValueError("f at the reference point must be >= the lower bound")
    if gap <= epsilon / 2.0:
        return epsilon / (2.0 * B_at_xprime)
    return epsilon ** 2 / (4.0 * gap * B_at_xprime)


def f_lower_bound(spec):
    """Cheap per-node lower bound on the total cost: exact for scalar
    quadratics on boxes, coarse otherwise."""
    total = 0.0
    for nd in spec.nodes:
        cost = nd.cost
        if isinstance(cost, QuadraticCost) and nd.dim == 1 and len(nd.constraints) == 2:
            ends = [-g.b / g.a[0] for g in nd.constraints]
            lo, hi = min(ends), max(ends)
            cands = [lo, hi]
            if cost.quad[0, 0] > 0:
                cands.append(min(max(-cost.lin[0] / cost.quad[0, 0], lo), hi))
            total += min(cost.value(np.array([t])) for t in cands)
        elif isinstance(cost, SigmoidUtilityCost):
            total += -cost.p - cost.q  # utility is bounded above by p + q
        elif isinstance(cost, QuadraticCost) and cost.strong_convexity > -1e-12:
            # convex quadratic: unconstrained minimum is a valid bound
            x, *_ = np.linalg.lstsq(cost.quad, -cost.lin, rcond=None)
            total += cost.value(x)
        # otherwise contribute 0, callers may supply a tighter bound
    return total


def feasible_initialization(spec):
    """A strictly feasible starting allocation.

    Box-constrained single-resource instances use a proportional fill with a
    clamped boundary margin; the rate-control transform spreads capacities
    with a small rate; otherwise a centralized phase-1 program maximizes the
    worst constraint margin subject to the coupling equality.
    """
    if spec.structure == "dispatch":
        return _init_dispatch(spec)
    if spec.structure == "rate-control":
        return _init_rate_control(spec)
    return _init_phase1(spec)


def _init_dispatch(spec):
    ends = [sorted(-g.b / g.a[0] for g in nd.constraints) for nd in spec.nodes]
    lo = np.array([e[0] for e in ends])
    hi = np.array([e[1] for e in ends])
    c = float(spec.rhs[0])
    if not (lo.sum() < c < hi.sum()):
        raise InfeasibleInstance("demand outside the strict interior of the box sum")
    width = hi - lo
    x = lo + (c - lo.sum()) * width / width.sum()
    margin = np.minimum(1e-3, 0.01 * width)
    # near-boundary demand: shrink margins so the shrunk boxes still sum past c
    slack = min(c - lo.sum(), hi.sum() - c)
    if margin.sum() >= 0.5 * slack:
        margin = margin * (0.5 * slack / margin.sum())
    clipped = np.clip(x, lo + margin, hi - margin)
    # repair the sum using the remaining slack of the unclipped coordinates
    deficit = c - clipped.sum()
    if abs(deficit) > 0:
        room = (hi - margin - clipped) if deficit > 0 else (clipped - lo - margin)
        total_room = room.sum()
        if total_room < abs(deficit):
            raise InfeasibleInstance("cannot repair clamped proportional fill")
        clipped = clipped + np.sign(deficit) * room * (abs(deficit) / total_room)
    return allocation(spec, [np.array([v]) for v in clipped])


def _init_rate_control(spec):
    m = spec.m
    shares = np.zeros(m)
    counts = np.zeros(m)
    for nd in spec.nodes:
        counts += np.abs(nd.coupling_block).sum(axis=1)
    shares = spec.rhs / counts
    eps = 0.1 * float(np.min(shares))
    blocks = []
    for nd in spec.nodes:
        b = np.empty(nd.dim)
        b[0] = eps
        # slack for each link on the route = that link's equal share
        rows = np.nonzero(np.abs(nd.coupling_block).sum(axis=1))[0]
        for pos in range(1, nd.dim):
            row = int(np.nonzero(nd.coupling_block[:, pos])[0][0])
            b[pos] = shares[row]
        blocks.append(b)
    x = allocation(spec, blocks)
    if not x.feasible:
        raise InfeasibleInstance("rate-control initialization failed")
    return x


def _init_phase1(spec):
    A = spec.coupling_matrix()
    N = spec.total_dim
    offsets = spec.block_offsets()
    affine = all(getattr(g, "is_affine", False)
                 for nd in spec.nodes for g in nd.constraints)
    if not any(nd.constraints for nd in spec.nodes):
        x, *_ = np.linalg.lstsq(A, spec.rhs, rcond=None)
        if np.max(np.abs(A @ x - spec.rhs)) > 1e-8:
            raise InfeasibleInstance("coupling equality has no solution")
        return allocation(spec, [x[offsets[i]:offsets[i + 1]] for i in range(spec.n)])
    if not affine:
        raise BenchmarkError("phase-1 initialization needs affine local constraints")

    # minimize t subject to g(x) <= t and Ax = c, with a large box on x
    scale = 10.0 * (1.0 + float(np.sum(np.abs(spec.rhs)))
                    + sum(abs(g.b) for nd in spec.nodes for g in nd.constraints))
    n_ineq = sum(len(nd.constraints) for nd in spec.nodes)
    A_ub = np.zeros((n_ineq, N + 1))
    b_ub = np.zeros(n_ineq)
    r = 0
    for i, nd in enumerate(spec.nodes):
        for g in nd.constraints:
            A_ub[r, offsets[i]:offsets[i + 1]] = g.a
            A_ub[r, N] = -1.0
            b_ub[r] = -g.b
            r += 1
    A_eq = np.hstack([A, np.zeros((spec.m, 1))])
    cvec = np.zeros(N + 1)
    cvec[N] = 1.0
    bounds = [(-scale, scale)] * N + [(None, None)]
    res = linprog(cvec, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=spec.rhs,
                  bounds=bounds, method="highs")
    if not res.success or res.x[N] >= 0:
        raise InfeasibleInstance(
            "no strictly feasible point found (interior premise violated)")
    # back off halfway toward the worst margin to stay clearly interior
    x = res.x[:N]
    return allocation(spec, [x[offsets[i]:offsets[i + 1]] for i in range(spec.n)])
