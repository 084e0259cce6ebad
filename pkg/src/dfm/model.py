"""Problem instances, allocation state, and objective evaluation.

A problem couples n nodes through a linear equality sum_i A_i x_i = c.
Each node carries a smooth cost oracle, optional convex inequality
constraints defining its local set, and its block A_i of the coupling map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import barrier

# Floating-point surrogates for exact feasibility / strict interiority.
FEASIBILITY_TOL = 1e-9
INTERIOR_TOL = -1e-12


class ModelError(Exception):
    """Raised on structurally invalid inputs (dimension mismatch etc.)."""


class BarrierDomainError(ModelError):
    """Raised when a barrier is evaluated on or outside the boundary."""


# ---------------------------------------------------------------------------
# communication graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Graph:
    """Undirected graph on nodes 0..n-1 with no self-loops or duplicates."""

    node_count: int
    edges: tuple = ()

    def __post_init__(self):
        if self.node_count <= 0:
            raise ModelError("graph needs at least one node")
        seen = set()
        norm = []
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ModelError(f"self-loop at node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ModelError(f"edge {e} out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ModelError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        object.__setattr__(self, "edges", tuple(sorted(norm)))
        adj = {i: set() for i in range(self.node_count)}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        object.__setattr__(self, "_adj", {i: tuple(sorted(s)) for i, s in adj.items()})

    def neighbors(self, i):
        return self._adj[i]

    def closed_neighborhood(self, i):
        """Node i together with its neighbors, sorted."""
        return tuple(sorted((i,) + self._adj[i]))

    def is_connected(self):
        if self.node_count == 1:
            return True
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.node_count


# ---------------------------------------------------------------------------
# cost families
# ---------------------------------------------------------------------------

class QuadraticCost:
    """f(x) = 1/2 x'Qx + b'x + c0 with Q symmetric."""

    def __init__(self, quad, lin, const=0.0):
        self.quad = np.atleast_2d(np.asarray(quad, dtype=float))
        self.lin = np.atleast_1d(np.asarray(lin, dtype=float))
        self.const = float(const)
        if self.quad.shape[0] != self.quad.shape[1]:
            raise ModelError("quadratic matrix must be square")
        if self.quad.shape[0] != self.lin.shape[0]:
            raise ModelError("quadratic/linear dimension mismatch")
        eigs = np.linalg.eigvalsh(0.5 * (self.quad + self.quad.T))
        self.lipschitz = max(float(np.max(np.abs(eigs))), 1e-12)
        self.strong_convexity = float(np.min(eigs))

    @property
    def dim(self):
        return self.lin.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad @ x + self.lin @ x + self.const)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.quad @ x + self.lin

    def hess(self, x):
        return self.quad.copy()


class SigmoidUtilityCost:
    """Negated sigmoidal utility, a function of the first coordinate only.

    f(x) = -(p / (1 + exp(-a (x[0] - b))) + q) with q fixed so the utility
    vanishes at zero rate.  Non-convex but gradient-Lipschitz; the curvature
    envelope p*a^2/4 is used as the smoothness constant (conservative).
    """

    def __init__(self, a, b, p, dim=1):
        self.a = float(a)
        self.b = float(b)
        self.p = float(p)
        self._dim = int(dim)
        self.q = -self.p / (1.0 + math.exp(self.a * self.b))
        self.lipschitz = self.p * self.a ** 2 / 4.0

    @property
    def dim(self):
        return self._dim

    def utility(self, rate):
        return self.p / (1.0 + math.exp(-self.a * (rate - self.b))) + self.q

    def value(self, x):
        return -self.utility(float(np.asarray(x).ravel()[0]))

    def grad(self, x):
        rate = float(np.asarray(x).ravel()[0])
        s = 1.0 / (1.0 + math.exp(-self.a * (rate - self.b)))
        g = np.zeros(self._dim)
        g[0] = -self.p * self.a * s * (1.0 - s)
        return g


class CallbackCost:
    """Generic cost oracle; the smoothness constant is caller-supplied."""

    def __init__(self, value, grad, lipschitz, dim):
        self._value = value
        self._grad = grad
        self.lipschitz = float(lipschitz)
        self.dim = int(dim)

    def value(self, x):
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x):
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)


# ---------------------------------------------------------------------------
# constraint families (value / gradient / hessian oracles)
# ---------------------------------------------------------------------------

class AffineConstraint:
    """g(x) = a'x + b <= 0."""

    is_affine = True

    def __init__(self, a, b):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = float(b)
        # smoothness 0, gradient norm constant
        self.lipschitz_bound = float(np.linalg.norm(self.a))

    def value(self, x):
        return float(self.a @ np.asarray(x, dtype=float) + self.b)

    def grad(self, x):
        return self.a

    def hess(self, x):
        d = self.a.shape[0]
        return np.zeros((d, d))


class QuadraticConstraint:
    """g(x) = 1/2 x'Qx + a'x + b <= 0 with Q positive semidefinite."""

    is_affine = False

    def __init__(self, quad, lin, const):
        self.quad = np.atleast_2d(np.asarray(quad, dtype=float))
        self.lin = np.atleast_1d(np.asarray(lin, dtype=float))
        self.const = float(const)
        if np.min(np.linalg.eigvalsh(0.5 * (self.quad + self.quad.T))) < -1e-10:
            raise ModelError("constraint quadratic must be positive semidefinite")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad @ x + self.lin @ x + self.const)

    def grad(self, x):
        return self.quad @ np.asarray(x, dtype=float) + self.lin

    def hess(self, x):
        return self.quad.copy()


class CallbackConstraint:
    """Generic smooth convex constraint; hess may be None (Gauss-Newton)."""

    is_affine = False

    def __init__(self, value, grad, hess=None):
        self._value = value
        self._grad = grad
        self._hess = hess

    def value(self, x):
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x):
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)

    def hess(self, x):
        if self._hess is None:
            d = np.asarray(x).shape[0]
            return np.zeros((d, d))
        return np.asarray(self._hess(np.asarray(x, dtype=float)), dtype=float)


def box_constraints(lower, upper):
    """Two affine rows encoding the scalar interval [lower, upper]."""
    return (AffineConstraint([-1.0], lower), AffineConstraint([1.0], -upper))


# ---------------------------------------------------------------------------
# node and problem containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeLocal:
    """One node: cost oracle, local constraints, and coupling block."""

    dim: int
    cost: object
    coupling_block: np.ndarray
    constraints: tuple = ()
    smoothness: float = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.coupling_block, dtype=float))
        if A.shape[1] != self.dim:
            raise ModelError(
                f"coupling block width {A.shape[1]} does not match dim {self.dim}")
        object.__setattr__(self, "coupling_block", A)
        if self.smoothness is None:
            object.__setattr__(self, "smoothness", float(self.cost.lipschitz))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        # stacked coefficients let the barrier and step-length code work on
        # whole constraint sets at once when every row is affine
        if self.constraints and all(getattr(g, "is_affine", False)
                                    for g in self.constraints):
            object.__setattr__(self, "affine_rows", (
                np.vstack([g.a for g in self.constraints]),
                np.array([g.b for g in self.constraints])))
        else:
            object.__setattr__(self, "affine_rows", None)

    @property
    def q(self):
        return len(self.constraints)


@dataclass(frozen=True)
class ProblemSpec:
    """Full instance: graph, per-node locals, coupling rhs, barrier weight."""

    graph: Graph
    nodes: tuple
    rhs: np.ndarray
    barrier_weight: float = 1e-3
    beta: float = None
    beta1: float = None
    structure: str = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "rhs", np.atleast_1d(np.asarray(self.rhs, dtype=float)))

    @property
    def n(self):
        return len(self.nodes)

    @property
    def m(self):
        return self.rhs.shape[0]

    @property
    def total_dim(self):
        return sum(nd.dim for nd in self.nodes)

    def block_offsets(self):
        offs = [0]
        for nd in self.nodes:
            offs.append(offs[-1] + nd.dim)
        return offs

    def coupling_matrix(self):
        """Stacked m x N coupling map [A_1 ... A_n]."""
        return np.hstack([nd.coupling_block for nd in self.nodes])


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple = ()
    warnings: tuple = ()

    @property
    def ok(self):
        return not self.errors


def validate_problem(spec):
    """Structural checks; dimension/positivity violations become errors,
    a disconnected graph only a warning."""
    errors = []
    warnings = []
    if spec.n == 0:
        return ValidationReport(errors=("empty node set",))
    if spec.graph.node_count != spec.n:
        errors.append("node count does not match graph")
    m = spec.m
    for i, nd in enumerate(spec.nodes):
        A = nd.coupling_block
        if A.shape != (m, nd.dim):
            errors.append(f"coupling row mismatch at node {i}: {A.shape} vs ({m},{nd.dim})")
        if not nd.smoothness > 0:
            errors.append(f"non-positive smoothness constant at node {i}")
    if not spec.barrier_weight > 0:
        errors.append("barrier weight must be positive")
    if not spec.graph.is_connected():
        warnings.append("graph is disconnected")
    return ValidationReport(errors=tuple(errors), warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# allocation state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Allocation:
    """Stacked iterate with feasibility metadata, recomputed on construction."""

    blocks: tuple
    residual: np.ndarray
    interior_margin: float

    @property
    def stacked(self):
        return np.concatenate(self.blocks)

    @property
    def feasible(self):
        return (np.max(np.abs(self.residual)) <= FEASIBILITY_TOL
                and self.interior_margin <= INTERIOR_TOL)


def allocation(spec, blocks):
    """Build an Allocation for `spec`, computing residual and margin."""
    blocks = tuple(np.atleast_1d(np.asarray(b, dtype=float)) for b in blocks)
    if len(blocks) != spec.n:
        raise ModelError("wrong number of blocks")
    for nd, b in zip(spec.nodes, blocks):
        if b.shape != (nd.dim,):
            raise ModelError(f"block shape {b.shape} does not match node dim {nd.dim}")
    res = coupling_residual(spec, blocks)
    margin = -math.inf
    for nd, b in zip(spec.nodes, blocks):
        rows = getattr(nd, "affine_rows", None)
        if rows is not None:
            margin = max(margin, float(np.max(rows[0] @ b + rows[1])))
        else:
            for g in nd.constraints:
                margin = max(margin, g.value(b))
    return Allocation(blocks=blocks, residual=res, interior_margin=margin)


def coupling_residual(spec, x):
    """sum_i A_i x_i - c."""
    blocks = x.blocks if isinstance(x, Allocation) else x
    res = -spec.rhs.copy()
    for nd, b in zip(spec.nodes, blocks):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if b.shape != (nd.dim,):
            raise ModelError("block dimension mismatch in residual")
        res += nd.coupling_block @ b
    return res


@dataclass(frozen=True)
class ObjectiveValue:
    f: float
    B: float
    F: float


def evaluate_objective(spec, x):
    """Total cost, barrier sum, and their rho-weighted combination."""
    blocks = x.blocks if isinstance(x, Allocation) else x
    f_total = 0.0
    b_total = 0.0
    for nd, b in zip(spec.nodes, blocks):
        f_total += nd.cost.value(b)
        if nd.constraints:
            b_total += barrier.node_barrier_value(nd, b)
    return ObjectiveValue(f=f_total, B=b_total,
                          F=f_total + spec.barrier_weight * b_total)


def objective_gradient(spec, x):
    """Stacked gradient of f + rho*B at a strictly interior point."""
    blocks = x.blocks if isinstance(x, Allocation) else x
    parts = []
    for nd, b in zip(spec.nodes, blocks):
        g = nd.cost.grad(b).astype(float, copy=True)
        if nd.constraints:
            g += spec.barrier_weight * barrier.barrier_eval(nd, b).gradient
        parts.append(g)
    return np.concatenate(parts)


def surrogate_value(node, x, anchor):
    """Quadratic upper model of the node cost anchored at `anchor`."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    d = x - anchor
    return (node.cost.value(anchor) + node.cost.grad(anchor) @ d
            + 0.5 * node.smoothness * float(d @ d))
