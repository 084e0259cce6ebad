"""Synchronous round engine.

Each round solves every node's neighborhood subproblem against the same
snapshot, then merges the proposed deltas with the degree-based step sizes.
Feasibility of every iterate and monotone objective descent are enforced at
runtime; the trace carries the per-round diagnostics.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import allocation, evaluate_objective, objective_gradient
from .subproblem import solve_subproblem

DESCENT_SLACK = 1e-10
FEASIBILITY_GUARD = 1e-8
DEFAULT_GRAD_TOL = 1e-12
DENSE_DIAGNOSTICS_CAP = 2000


class EngineError(Exception):
    """Runtime invariant (feasibility or descent) violated."""


@dataclass(frozen=True)
class StepSizes:
    eta: tuple

    def __getitem__(self, i):
        return self.eta[i]


def step_sizes(graph):
    """eta_j = 1 / max over the closed neighborhood of the closed-neighborhood
    sizes; row sums over any closed neighborhood never exceed one."""
    sizes = [len(graph.closed_neighborhood(i)) for i in range(graph.node_count)]
    eta = tuple(1.0 / max(sizes[l] for l in graph.closed_neighborhood(j))
                for j in range(graph.node_count))
    for i in range(graph.node_count):
        assert sum(eta[j] for j in graph.closed_neighborhood(i)) <= 1.0 + 1e-12
    return StepSizes(eta=eta)


@dataclass
class TraceRow:
    k: int
    F: float
    f: float
    rhoB: float
    grad_W_sq: float
    coupling_residual: float
    interior_margin: float
    descent: float
    ms: float


@dataclass
class Trace:
    rows: list = field(default_factory=list)

    def csv_lines(self, include_timing=True):
        """Stable CSV rendering: fixed header, shortest round-trip floats."""
        header = "round,F,f,rhoB,grad_W_sq,coupling_residual,interior_margin,descent,ms"
        lines = [header]
        for r in self.rows:
            ms = r.ms if include_timing else 0.0
            lines.append(",".join([str(r.k)] + [repr(float(v)) for v in (
                r.F, r.f, r.rhoB, r.grad_W_sq, r.coupling_residual,
                r.interior_margin, r.descent, ms)]))
        return lines

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    @property
    def final(self):
        return self.rows[-1]


def theory_report(spec, trace, f_lower):
    """Check the per-round descent inequality and the telescoped gradient
    bound against a recorded trace.

    Needs the instance's constraint-smoothness constants and a lower bound
    on the optimal cost; returns None when any of those (or the weighted
    gradient metric) is unavailable.
    """
    import math as _math
    from .barrier import smoothness_constant_LB

    if spec.beta is None or spec.beta1 is None or f_lower is None:
        return None
    if any(_math.isnan(r.grad_W_sq) for r in trace.rows):
        return None
    q_max = max(nd.q for nd in spec.nodes)
    L = max(nd.smoothness for nd in spec.nodes)
    rho = spec.barrier_weight
    F0 = trace.rows[0].F
    if q_max == 0:
        LB = 0.0
    else:
        LB = smoothness_constant_LB(max(F0 - f_lower, 1e-300), rho,
                                    spec.beta, spec.beta1, q_max)
    denom = 2.0 * (L + rho * LB)
    descent_ok = all(
        nxt.F - cur.F <= -cur.grad_W_sq / denom + 1e-8
        for cur, nxt in zip(trace.rows, trace.rows[1:]))
    running = np.cumsum([r.grad_W_sq for r in trace.rows])
    telescoped_ok = bool(np.all(running <= denom * (F0 - f_lower) + 1e-8))
    return {"L": L, "L_B": LB, "descent_inequality_ok": descent_ok,
            "telescoped_bound_ok": telescoped_ok,
            "grad_W_sq_sum": float(running[-1]),
            "grad_W_sq_budget": denom * (F0 - f_lower)}


def kkt_metric(spec, x, W):
    """Squared W-weighted norm of the barrier-objective gradient; zero
    together with feasibility characterizes a stationary point."""
    g = objective_gradient(spec, x)
    return float(g @ W @ g)


def compute_plans(spec, state, workers=1):
    """All owners' plans against one immutable snapshot, merged by index."""
    grads = [nd.cost.grad(b) for nd, b in zip(spec.nodes, state.blocks)]
    indices = range(spec.n)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            plans = list(pool.map(
                lambda i: solve_subproblem(spec, i, state, grads=grads), indices))
    else:
        plans = [solve_subproblem(spec, i, state, grads=grads) for i in indices]
    return plans


def dfm_round(spec, state, eta, workers=1, plans=None):
    """One synchronous round: broadcast snapshot, solve, merge.

    Returns (next_state, plans).  Aborts if the merged iterate would violate
    the coupling or interiority guarantees.
    """
    if plans is None:
        plans = compute_plans(spec, state, workers=workers)
    new_blocks = []
    for i in range(spec.n):
        b = state.blocks[i].copy()
        for j in spec.graph.closed_neighborhood(i):
            b += eta[j] * plans[j].deltas[i]
        new_blocks.append(b)
    nxt = allocation(spec, new_blocks)
    if np.max(np.abs(nxt.residual), initial=0.0) > FEASIBILITY_GUARD:
        raise EngineError("coupling feasibility lost after merge")
    if any(nd.constraints for nd in spec.nodes) and nxt.interior_margin >= 0.0:
        raise EngineError("iterate left the strict interior")
    return nxt, plans


def run(spec, x0, rounds, grad_tol=DEFAULT_GRAD_TOL, workers=1, W=None,
        collect_W="auto"):
    """Run up to `rounds` synchronous rounds from the strictly feasible x0.

    Stops early once the W-weighted gradient metric drops below grad_tol
    (when W is available).  Returns (trace, final_allocation).
    """
    if not x0.feasible:
        raise EngineError("initial allocation is not strictly feasible")
    if W is None and collect_W == "auto" and spec.total_dim <= DENSE_DIAGNOSTICS_CAP:
        from .reachability import weighting_matrix
        try:
            W = weighting_matrix(spec, step_sizes(spec.graph)).W
        except Exception:
            W = None

    eta = step_sizes(spec.graph)
    trace = Trace()
    state = x0

    def record(k, state, ms):
        obj = evaluate_objective(spec, state)
        gw = kkt_metric(spec, state, W) if W is not None else float("nan")
        trace.rows.append(TraceRow(
            k=k, F=obj.F, f=obj.f, rhoB=spec.barrier_weight * obj.B,
            grad_W_sq=gw,
            coupling_residual=float(np.max(np.abs(state.residual), initial=0.0)),
            interior_margin=state.interior_margin,
            descent=0.0, ms=ms))
        return obj, gw

    obj, gw = record(0, state, 0.0)
    for k in range(rounds):
        if W is not None and gw <= grad_tol:
            break
        t0 = time.perf_counter()
        state, _ = dfm_round(spec, state, eta, workers=workers)
        ms = (time.perf_counter() - t0) * 1e3
        prev_F = obj.F
        obj, gw = record(k + 1, state, ms)
        if obj.F > prev_F + DESCENT_SLACK:
            raise EngineError(f"objective increased at round {k}: "
                              f"{prev_F} -> {obj.F}")
        trace.rows[-2].descent = prev_F - obj.F
    return trace, state
