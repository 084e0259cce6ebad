"""Reallocation subspaces, projection-based weighting matrix, and the
reachability verdict.

Node i's subspace S_i collects stacked directions supported on its closed
neighborhood whose coupling image vanishes; the sum of all S_i spanning the
null space of the coupling map is exactly the condition under which local
moves can reach any feasible point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .engine import DENSE_DIAGNOSTICS_CAP

SVD_RELATIVE_THRESHOLD = 1e-9
EIG_THRESHOLD = 1e-9


class DiagnosticsUnavailable(Exception):
    """Instance too large for the dense-algebra diagnostics."""


@dataclass(frozen=True)
class SubspaceBasis:
    owner: int
    basis: np.ndarray  # N x k, orthonormal columns


@dataclass(frozen=True)
class WeightingMatrix:
    W: np.ndarray
    lambda_min_nonzero: float
    rank: int
    null_matches_coupling_range: bool


@dataclass(frozen=True)
class ReachabilityVerdict:
    holds: bool
    dim_sum: int
    dim_null_A: int


def _rank(mat):
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > SVD_RELATIVE_THRESHOLD * sv[0]))


def local_subspace_basis(spec, i):
    """Orthonormal basis of S_i embedded in the stacked space."""
    hood = spec.graph.closed_neighborhood(i)
    offsets = spec.block_offsets()
    local = np.hstack([spec.nodes[j].coupling_block for j in hood])
    ns = null_space(local, rcond=SVD_RELATIVE_THRESHOLD)
    basis = np.zeros((spec.total_dim, ns.shape[1]))
    pos = 0
    for j in hood:
        d = spec.nodes[j].dim
        basis[offsets[j]:offsets[j] + d, :] = ns[pos:pos + d, :]
        pos += d
    return SubspaceBasis(owner=i, basis=basis)


def check_reachability(spec):
    """Whether the summed subspaces span the full null space of the coupling
    map (rank comparison on concatenated bases)."""
    A = spec.coupling_matrix()
    bases = [local_subspace_basis(spec, i).basis for i in range(spec.n)]
    stacked = np.hstack(bases) if bases else np.zeros((spec.total_dim, 0))
    for b in bases:
        if b.size and np.max(np.abs(A @ b)) > 1e-10:
            raise AssertionError("subspace basis leaves the coupling null space")
    dim_sum = _rank(stacked)
    dim_null = spec.total_dim - _rank(A)
    return ReachabilityVerdict(holds=dim_sum == dim_null, dim_sum=dim_sum,
                               dim_null_A=dim_null)


def check_lemma1_shortcut(spec):
    """Sufficient conditions avoiding the rank computation: full-row-rank
    blocks on a connected graph, or the shared-link rate-control structure."""
    if spec.structure == "rate-control":
        return True, "rate-control transform with shared-link neighbor rule"
    if not spec.graph.is_connected():
        return False, "graph is disconnected"
    for i, nd in enumerate(spec.nodes):
        if _rank(nd.coupling_block) < spec.m:
            return False, f"coupling block of node {i} lacks full row rank"
    return True, "all coupling blocks have full row rank and the graph is connected"


def weighting_matrix(spec, eta, cap=DENSE_DIAGNOSTICS_CAP):
    """W = sum_i eta_i P_i from the subspace projectors, with its smallest
    nonzero eigenvalue.  Dense; refused above the size cap."""
    N = spec.total_dim
    if N > cap:
        raise DiagnosticsUnavailable(f"diagnostics unavailable at this size (N={N})")
    W = np.zeros((N, N))
    for i in range(spec.n):
        U = local_subspace_basis(spec, i).basis
        if U.size:
            W += eta[i] * (U @ U.T)
    W = 0.5 * (W + W.T)
    eigs = np.linalg.eigvalsh(W)
    nonzero = eigs[eigs > EIG_THRESHOLD]
    lam = float(nonzero[0]) if nonzero.size else 0.0
    rank = int(nonzero.size)

    # under reachability, Null(W) should coincide with Range(A^T)
    A = spec.coupling_matrix()
    rank_At = _rank(A)
    null_matches = False
    if rank == N - rank_At:
        # containment Range(A^T) subset Null(W) is enough given equal dims
        null_matches = bool(A.size == 0 or np.max(np.abs(W @ A.T)) <= 1e-8)
    return WeightingMatrix(W=W, lambda_min_nonzero=lam, rank=rank,
                           null_matches_coupling_range=null_matches)
