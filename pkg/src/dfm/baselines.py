"""Edge-pairwise reallocation baselines.

These are the straightforward neighbor-exchange schemes that DFM improves
on: each edge solves a two-node surrogate subproblem whose deltas cancel
under the coupling map, and nodes apply the weighted sum of their edge
deltas.  The constrained variant additionally keeps each block inside its
closed local set.  Both preserve coupling feasibility but can stall at
non-optimal fixed points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .model import allocation

PAIR_EQ_TOL = 1e-10


class WeightError(Exception):
    """Edge-weight row sums violate the convex-combination requirement."""


@dataclass(frozen=True)
class PairPlan:
    edge: tuple
    p_ji: np.ndarray  # delta applied to node i
    p_ij: np.ndarray  # delta applied to node j


def default_edge_weights(graph):
    """w_ij = 1 / max(|closed nbhd i|, |closed nbhd j|); row sums <= 1."""
    sizes = [len(graph.closed_neighborhood(i)) for i in range(graph.node_count)]
    return {e: 1.0 / max(sizes[e[0]], sizes[e[1]]) for e in graph.edges}


def _solve_pair_unconstrained(Ai, Aj, gi, gj, Li, Lj):
    """Closed-form KKT solve of the two-node surrogate subproblem."""
    S = Ai @ Ai.T / Li + Aj @ Aj.T / Lj
    rhs = -(Ai @ gi / Li + Aj @ gj / Lj)
    try:
        lam = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        lam, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    p_i = -(gi + Ai.T @ lam) / Li
    p_j = -(gj + Aj.T @ lam) / Lj
    return p_i, p_j


def _interval_from_constraints(node, x):
    """Feasible step interval for a 1-d node with affine constraints."""
    lo, hi = -np.inf, np.inf
    for g in node.constraints:
        a = float(g.a[0])
        gv = g.value(x)
        if a > 0:
            hi = min(hi, -gv / a)
        elif a < 0:
            lo = max(lo, -gv / a)
        elif gv > 0:
            return 0.0, 0.0
    return lo, hi


def _clip_quadratic(half_curv, lin, lo, hi):
    """argmin of half_curv*t^2 + lin*t over [lo, hi] (half_curv > 0)."""
    t = -lin / (2.0 * half_curv)
    return min(max(t, lo), hi)


def _solve_pair_constrained(node_i, node_j, xi, xj, gi, gj):
    Ai, Aj = node_i.coupling_block, node_j.coupling_block
    Li, Lj = node_i.smoothness, node_j.smoothness
    one_d = (node_i.dim == 1 and node_j.dim == 1
             and all(getattr(g, "is_affine", False) for g in node_i.constraints)
             and all(getattr(g, "is_affine", False) for g in node_j.constraints))
    if one_d and Ai.shape[0] == 1:
        ai, aj = float(Ai[0, 0]), float(Aj[0, 0])
        lo_i, hi_i = _interval_from_constraints(node_i, xi)
        lo_j, hi_j = _interval_from_constraints(node_j, xj)
        if aj != 0.0:
            # substitute p_j = -(ai/aj) p_i and minimize the 1-d quadratic
            r = -ai / aj
            lo, hi = lo_i, hi_i
            if r > 0:
                lo, hi = max(lo, lo_j / r), min(hi, hi_j / r)
            elif r < 0:
                lo, hi = max(lo, hi_j / r), min(hi, lo_j / r)
            half = 0.5 * (Li + Lj * r * r)
            lin = float(gi[0] + gj[0] * r)
            t = 0.0 if lo > hi else _clip_quadratic(half, lin, lo, hi)
            return (np.array([t]), np.array([r * t]))
        if ai != 0.0:
            # aj == 0: p_i forced to 0, p_j free within its interval
            t = _clip_quadratic(0.5 * Lj, float(gj[0]), lo_j, hi_j)
            return (np.zeros(1), np.array([t]))
        # both coupling scalars zero: independent clipped minimizations
        ti = _clip_quadratic(0.5 * Li, float(gi[0]), lo_i, hi_i)
        tj = _clip_quadratic(0.5 * Lj, float(gj[0]), lo_j, hi_j)
        return (np.array([ti]), np.array([tj]))

    # general small QP: sequential quadratic programming fallback
    di, dj = node_i.dim, node_j.dim

    def obj(z):
        pi, pj = z[:di], z[di:]
        return (gi @ pi + 0.5 * Li * pi @ pi + gj @ pj + 0.5 * Lj * pj @ pj)

    def obj_grad(z):
        pi, pj = z[:di], z[di:]
        return np.concatenate([gi + Li * pi, gj + Lj * pj])

    cons = [{"type": "eq",
             "fun": lambda z: Ai @ z[:di] + Aj @ z[di:],
             "jac": lambda z: np.hstack([Ai, Aj])}]
    for g, off, x0 in ((node_i.constraints, 0, xi), (node_j.constraints, di, xj)):
        for c in g:
            d = len(x0)
            cons.append({"type": "ineq",
                         "fun": (lambda z, c=c, off=off, x0=x0, d=d:
                                 -c.value(x0 + z[off:off + d])),
                         "jac": (lambda z, c=c, off=off, x0=x0, d=d:
                                 _embed(-c.grad(x0 + z[off:off + d]), off, d, di + dj))})
    res = minimize(obj, np.zeros(di + dj), jac=obj_grad, constraints=cons,
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 200})
    z = res.x
    return z[:di].copy(), z[di:].copy()


def _embed(vec, off, d, total):
    out = np.zeros(total)
    out[off:off + d] = vec
    return out


def pairwise_update(spec, state, weights=None, constrained=False):
    """One round of the edge-pairwise scheme; returns the next allocation.

    With `constrained`, each edge subproblem keeps both blocks inside their
    closed local sets and the weight row sums must not exceed one.
    """
    graph = spec.graph
    if weights is None:
        weights = default_edge_weights(graph)
    if constrained:
        for i in range(graph.node_count):
            s = sum(weights[(min(i, j), max(i, j))] for j in graph.neighbors(i))
            if s > 1.0 + 1e-12:
                raise WeightError(f"weight row sum {s} > 1 at node {i}")

    grads = [nd.cost.grad(b) for nd, b in zip(spec.nodes, state.blocks)]
    plans = []
    for (i, j) in graph.edges:
        ni, nj = spec.nodes[i], spec.nodes[j]
        if constrained:
            p_i, p_j = _solve_pair_constrained(ni, nj, state.blocks[i],
                                               state.blocks[j], grads[i], grads[j])
        else:
            p_i, p_j = _solve_pair_unconstrained(ni.coupling_block, nj.coupling_block,
                                                 grads[i], grads[j],
                                                 ni.smoothness, nj.smoothness)
        if np.max(np.abs(ni.coupling_block @ p_i + nj.coupling_block @ p_j),
                  initial=0.0) > 1e-8:
            raise AssertionError("pair plan violates the zero-sum condition")
        plans.append(PairPlan(edge=(i, j), p_ji=p_i, p_ij=p_j))

    new_blocks = [b.copy() for b in state.blocks]
    for plan in plans:
        i, j = plan.edge
        w = weights[plan.edge]
        new_blocks[i] += w * plan.p_ji
        new_blocks[j] += w * plan.p_ij
    return allocation(spec, new_blocks)


def run_baseline(spec, x0, rounds, constrained=False, weights=None):
    """Iterate the pairwise scheme, recording objective and residual."""
    from .engine import Trace, TraceRow
    import time

    # the pairwise schemes work on the original closed sets, so iterates may
    # sit on the boundary; record the raw cost, not the barrier objective
    def cost(state):
        return sum(nd.cost.value(b) for nd, b in zip(spec.nodes, state.blocks))

    trace = Trace()
    state = x0
    f = cost(state)

    def record(k, state, f, ms):
        trace.rows.append(TraceRow(
            k=k, F=f, f=f, rhoB=0.0, grad_W_sq=float("nan"),
            coupling_residual=float(np.max(np.abs(state.residual), initial=0.0)),
            interior_margin=state.interior_margin, descent=0.0, ms=ms))

    record(0, state, f, 0.0)
    for k in range(rounds):
        t0 = time.perf_counter()
        state = pairwise_update(spec, state, weights=weights, constrained=constrained)
        ms = (time.perf_counter() - t0) * 1e3
        prev = f
        f = cost(state)
        record(k + 1, state, f, ms)
        trace.rows[-2].descent = prev - f
    return trace, state
