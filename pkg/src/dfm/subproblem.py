"""Neighborhood reallocation subproblem.

Each owner node i minimizes the sum of quadratic cost surrogates plus
rho-weighted barriers over its closed neighborhood, subject to the zero-sum
coupling condition sum_j A_j p_j = 0 and strict interiority of every
x_j + p_j.  The inner solver is damped Newton with exact KKT solves, a
fraction-to-boundary cap of 0.99, and Armijo backtracking; p = 0 is always
feasible and is the warm start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import barrier
from .model import ModelError

SUBPROBLEM_TOL = 1e-10
MAX_NEWTON_ITERS = 100
ARMIJO_C = 0.25
BOUNDARY_FRACTION = 0.99
KKT_REGULARIZATION = 1e-10


class RankDeficientCoupling(Exception):
    """Singular KKT system; the caller retries with diagonal regularization."""


class SubproblemNotConverged(Exception):
    """Iteration cap hit before the stationarity tolerance; the best plan
    found (still zero-sum and interior) rides along."""

    def __init__(self, plan):
        super().__init__(f"subproblem not converged (residual {plan.kkt_residual:.3e})")
        self.plan = plan


@dataclass(frozen=True)
class ReallocationPlan:
    """Owner i's proposed deltas over its closed neighborhood."""

    owner: int
    deltas: dict
    multiplier: np.ndarray
    kkt_residual: float


def boundary_distance(x, direction, constraints):
    """Exact distance to the nearest constraint boundary along `direction`
    for affine constraints, backtracking bisection otherwise; inf when the
    ray never leaves the interior."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    alpha = np.inf
    needs_bisection = False
    for g in constraints:
        if getattr(g, "is_affine", False):
            slope = float(g.a @ direction)
            if slope > 0.0:
                alpha = min(alpha, -g.value(x) / slope)
        else:
            needs_bisection = True
    if needs_bisection:
        if not np.isfinite(alpha):
            alpha = 1.0 / BOUNDARY_FRACTION

        def interior(a):
            return all(g.value(x + BOUNDARY_FRACTION * a * direction) < 0.0
                       for g in constraints if not getattr(g, "is_affine", False))
        hi = alpha
        while alpha > 1e-16 and not interior(alpha):
            hi = alpha
            alpha *= 0.5
        if alpha < hi:  # sharpen between the accepted and rejected steps
            lo = alpha
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if interior(mid):
                    lo = mid
                else:
                    hi = mid
            alpha = lo
    return alpha


def fraction_to_boundary(x, direction, constraints):
    """Largest step alpha_max <= 1 such that BOUNDARY_FRACTION*alpha_max along
    `direction` keeps every constraint strictly negative."""
    return min(1.0, boundary_distance(x, direction, constraints))


def solve_kkt(hess, grad, eq_matrix, eq_residual):
    """Solve the symmetric KKT system of the second-order model.

    Returns (direction, multiplier).  A singular system is retried once with
    tiny diagonal regularization.
    """
    d = hess.shape[0]
    m = eq_matrix.shape[0]
    kkt = np.zeros((d + m, d + m))
    kkt[:d, :d] = hess
    kkt[:d, d:] = eq_matrix.T
    kkt[d:, :d] = eq_matrix
    rhs = np.concatenate([-grad, -eq_residual])
    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.all(np.isfinite(sol)):
            raise RankDeficientCoupling("non-finite KKT solution")
    except (np.linalg.LinAlgError, RankDeficientCoupling):
        kkt[:d, :d] += KKT_REGULARIZATION * np.eye(d)
        kkt[d:, d:] -= KKT_REGULARIZATION * np.eye(m)
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:d], sol[d:]


def newton_kkt_step(hess, grad, eq_matrix, eq_residual):
    """One Newton direction for the equality-constrained model.

    Returns (direction, multiplier, decrement) where decrement is the Newton
    decrement of the quadratic model.
    """
    direction, w = solve_kkt(hess, grad, eq_matrix, eq_residual)
    decrement = float(np.sqrt(max(direction @ hess @ direction, 0.0)))
    return direction, w, decrement


def solve_subproblem(spec, i, snapshot, tol=SUBPROBLEM_TOL,
                     max_iter=MAX_NEWTON_ITERS, grads=None):
    """Solve owner i's neighborhood subproblem against `snapshot`.

    `grads` optionally carries precomputed cost gradients for all nodes
    (shared across owners within a round).  The returned plan satisfies the
    zero-sum condition and strict interiority; stationarity is certified by
    the recovered multiplier.
    """
    hood = spec.graph.closed_neighborhood(i)
    nodes = [spec.nodes[j] for j in hood]
    rho = spec.barrier_weight
    dims = [nd.dim for nd in nodes]
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    D = int(offsets[-1])
    m = spec.m
    eq_matrix = np.hstack([nd.coupling_block for nd in nodes])

    anchors = [snapshot.blocks[j] for j in hood]
    base_grads = [grads[j] if grads is not None else nodes[t].cost.grad(anchors[t])
                  for t, j in enumerate(hood)]
    smooth_eyes = [nd.smoothness * np.eye(nd.dim) for nd in nodes]

    def phi_and_grad(p, want_grad=True):
        """Surrogate + barrier objective (and gradient/hessian blocks)."""
        val = 0.0
        grad = np.empty(D) if want_grad else None
        hblocks = [] if want_grad else None
        for t, nd in enumerate(nodes):
            sl = slice(offsets[t], offsets[t + 1])
            pt = p[sl]
            val += float(base_grads[t] @ pt) + 0.5 * nd.smoothness * float(pt @ pt)
            if want_grad:
                gt = base_grads[t] + nd.smoothness * pt
                ht = smooth_eyes[t]
            if nd.constraints:
                be = barrier.barrier_eval(nd, anchors[t] + pt)
                val += rho * be.value
                if want_grad:
                    gt = gt + rho * be.gradient
                    ht = ht + rho * be.hessian
            if want_grad:
                grad[sl] = gt
                hblocks.append(ht)
        return val, grad, hblocks

    def phi_only(p):
        val = 0.0
        for t, nd in enumerate(nodes):
            pt = p[offsets[t]:offsets[t + 1]]
            val += float(base_grads[t] @ pt) + 0.5 * nd.smoothness * float(pt @ pt)
            if nd.constraints:
                val += rho * barrier.node_barrier_value(nd, anchors[t] + pt)
        return val

    def stationarity(grad, v):
        return float(np.max(np.abs(grad - eq_matrix.T @ v))) if m else float(np.max(np.abs(grad)))

    p = np.zeros(D)
    val, grad, hblocks = phi_and_grad(p)
    # stationarity is measured relative to the gradient scale; an absolute
    # 1e-10 is finer than float granularity on large-magnitude instances
    tol_eff = tol * max(1.0, float(np.max(np.abs(grad), initial=0.0)))

    # float-noise floor of phi: its terms cancel, so noise scales with their
    # magnitudes, not with the value itself
    noise = 1e-13 * (1.0 + sum(
        float(np.abs(g).sum()) * (1.0 + float(np.max(np.abs(a), initial=0.0)))
        for g, a in zip(base_grads, anchors)))

    # common fast path: p = 0 already stationary (fixed points, late rounds)
    v0, *_ = np.linalg.lstsq(eq_matrix.T, grad, rcond=None)
    res0 = stationarity(grad, v0)
    if res0 <= tol_eff:
        deltas = {j: np.zeros(nodes[t].dim) for t, j in enumerate(hood)}
        return ReallocationPlan(owner=i, deltas=deltas, multiplier=v0,
                                kkt_residual=res0)

    best = None
    for _ in range(max_iter):
        hess = np.zeros((D, D))
        for t in range(len(nodes)):
            hess[offsets[t]:offsets[t + 1], offsets[t]:offsets[t + 1]] = hblocks[t]
        eq_res = eq_matrix @ p
        direction, w, decrement = newton_kkt_step(hess, grad, eq_matrix, eq_res)
        v = -w
        res = stationarity(grad, v)
        best = (p.copy(), v, res)
        if res <= tol_eff and np.max(np.abs(eq_res), initial=0.0) <= tol_eff:
            break
        if decrement <= 1e-14 and np.max(np.abs(eq_res), initial=0.0) <= tol_eff:
            break

        # step length: stay strictly interior, then Armijo backtracking
        dist = np.inf
        for t, nd in enumerate(nodes):
            if not nd.constraints:
                continue
            sl = slice(offsets[t], offsets[t + 1])
            rows = nd.affine_rows
            if rows is not None:
                slopes = rows[0] @ direction[sl]
                hit = slopes > 0.0
                if np.any(hit):
                    gv = rows[0][hit] @ (anchors[t] + p[sl]) + rows[1][hit]
                    dist = min(dist, float(np.min(-gv / slopes[hit])))
            else:
                dist = min(dist, boundary_distance(
                    anchors[t] + p[sl], direction[sl], nd.constraints))
        alpha = min(1.0, BOUNDARY_FRACTION * dist)
        slope = float(grad @ direction)
        # inside the quadratic convergence region the predicted decrease sits
        # below the float noise of the objective; skip the value test there
        if abs(alpha * slope) < noise:
            nxt = p + alpha * direction
            if np.array_equal(nxt, p):
                break
            p = nxt
            val, grad, hblocks = phi_and_grad(p)
            continue
        while alpha > 1e-16:
            cand = p + alpha * direction
            cand_val = phi_only(cand)
            if cand_val <= val + ARMIJO_C * alpha * slope:
                break
            alpha *= 0.5
        else:
            break
        nxt = p + alpha * direction
        if np.array_equal(nxt, p):
            break
        p = nxt
        val, grad, hblocks = phi_and_grad(p)
    else:
        p, v, res = best
        deltas = {j: p[offsets[t]:offsets[t + 1]].copy() for t, j in enumerate(hood)}
        raise SubproblemNotConverged(ReallocationPlan(
            owner=i, deltas=deltas, multiplier=v, kkt_residual=res))

    p, v, res = best
    deltas = {j: p[offsets[t]:offsets[t + 1]].copy() for t, j in enumerate(hood)}
    if m and np.max(np.abs(eq_matrix @ p)) > max(tol, 1e-9) * (
            1.0 + float(np.max(np.abs(p), initial=0.0))):
        raise ModelError("subproblem produced a non-zero-sum plan")
    return ReallocationPlan(owner=i, deltas=deltas, multiplier=v, kkt_residual=res)
