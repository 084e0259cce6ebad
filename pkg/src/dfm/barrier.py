"""Inverse-barrier calculus: values, derivatives, and smoothness bounds.

For a local set {x : g^j(x) <= 0, j=1..q} the barrier is
B(x) = sum_j 1/(-g^j(x)), finite on the strict interior and diverging at
the boundary.  The derived constant `smoothness_constant_LB` bounds the
barrier curvature on a sublevel set and enters the descent diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BarrierError(Exception):
    """Barrier evaluated at a point that is not strictly interior."""


def barrier_value(constraints, x):
    total = 0.0
    for g in constraints:
        gv = g.value(x)
        if gv >= 0.0:
            raise BarrierError(f"barrier undefined: constraint value {gv} >= 0")
        total += 1.0 / (-gv)
    return total


def node_barrier_value(node, x):
    """Barrier value of a node's whole constraint set; vectorized when the
    set is entirely affine."""
    rows = getattr(node, "affine_rows", None)
    if rows is None:
        return barrier_value(node.constraints, x)
    gv = rows[0] @ x + rows[1]
    if np.any(gv >= 0.0):
        raise BarrierError(
            f"barrier undefined: constraint value {float(gv.max())} >= 0")
    return float(np.sum(-1.0 / gv))


@dataclass(frozen=True)
class BarrierEval:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def barrier_eval(node, x):
    """Value, gradient, and Hessian of the node barrier at an interior x.

    Empty constraint lists give the identically-zero barrier.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    rows = getattr(node, "affine_rows", None)
    if rows is None and not node.constraints:
        return BarrierEval(0.0, np.zeros(d), np.zeros((d, d)))
    if rows is not None:
        A, b = rows
        gv = A @ x + b
        if np.any(gv >= 0.0):
            raise BarrierError(
                f"barrier undefined: constraint value {float(gv.max())} >= 0")
        val = float(np.sum(-1.0 / gv))
        grad = A.T @ (1.0 / gv ** 2)
        hess = (A * (-2.0 / gv ** 3)[:, None]).T @ A
        return BarrierEval(value=val, gradient=grad, hessian=hess)
    val = 0.0
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    for g in node.constraints:
        gv = g.value(x)
        if gv >= 0.0:
            raise BarrierError(f"barrier undefined: constraint value {gv} >= 0")
        gg = g.grad(x)
        val += 1.0 / (-gv)
        grad += gg / gv ** 2
        hess += g.hess(x) / gv ** 2 - 2.0 * np.outer(gg, gg) / gv ** 3
    return BarrierEval(value=val, gradient=grad, hessian=hess)


def smoothness_constant_LB(F0_minus_fstar, rho, beta, beta1, q_max):
    """Curvature bound of the weighted barrier on the sublevel set reached
    from the initial objective value.

    With M = F0_minus_fstar / rho the bound is
    (4*beta1^2*M^3 + 2*beta*M^2) * q_max.  beta may be zero (affine
    constraints); the other arguments must be positive.
    """
    if rho <= 0 or F0_minus_fstar <= 0 or beta1 <= 0 or q_max <= 0:
        raise ValueError("rho, F0_minus_fstar, beta1, q_max must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    M = F0_minus_fstar / rho
    return (4.0 * beta1 ** 2 * M ** 3 + 2.0 * beta * M ** 2) * q_max


def local_smoothness_residual(node, j, x, y, M, beta, beta1):
    """Bregman residual of the j-th single-constraint barrier between x and y
    against its local-smoothness lower bound.

    Returns (lhs, rhs) with the contract lhs >= rhs whenever both barrier
    values are at most M.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    g = node.constraints[j]
    gx, gy = g.value(x), g.value(y)
    if gx >= 0.0 or gy >= 0.0:
        raise BarrierError("points must be strictly interior")
    bx, by = 1.0 / (-gx), 1.0 / (-gy)
    if bx > M or by > M:
        raise ValueError("barrier values exceed the sublevel bound M")
    grad_bx = g.grad(x) / gx ** 2
    grad_by = g.grad(y) / gy ** 2
    lhs = by - bx - float(grad_bx @ (y - x))
    denom = 8.0 * beta1 ** 2 * M ** 3 + 4.0 * beta * M ** 2
    rhs = float(np.sum((grad_by - grad_bx) ** 2)) / denom if denom > 0 else 0.0
    return lhs, rhs
