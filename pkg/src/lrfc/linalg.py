"""Dense-matrix decomposition primitives used by every other module.

The singular value decomposition is a one-sided Jacobi (column
orthogonalization) with a parallel round-robin rotation ordering, which
keeps the whole pipeline deterministic and accurate down to tiny
singular values.  Matrices here are at most a few hundred wide, so the
O(m*n^2)-per-sweep cost is fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import NumericError, ValidationError

# Rotation sweeps stop once every column pair is orthogonal to this
# relative level; singular values below RANK_TOL * sigma_max are treated
# as exact zeros.
CONVERGENCE_TOL = 1e-12
SWEEP_LIMIT = 60
RANK_TOL = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD triple: ``u @ diag(sigma) @ vt`` rebuilds the source."""

    u: np.ndarray       # (m, r), orthonormal columns
    sigma: np.ndarray   # (r,), non-increasing, non-negative
    vt: np.ndarray      # (r, n), orthonormal rows

    @property
    def rank_limit(self) -> int:
        return len(self.sigma)


@dataclass(frozen=True)
class TruncatedFactors:
    """Rank-k factor pair; ``w_k`` carries the singular values."""

    rank: int
    u_k: np.ndarray     # (m, k)
    w_k: np.ndarray     # (k, n)


def as_matrix(values) -> np.ndarray:
    """Validate and canonicalize a dense 2-D real matrix."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValidationError("matrix contains NaN or Inf entries")
    return m


@lru_cache(maxsize=32)
def _round_robin_rounds(n: int) -> tuple:
    """Tournament schedule: each unordered column pair exactly once.

    Returns rounds of disjoint (p, q) index arrays so every rotation in
    a round touches distinct columns and can be applied vectorized.
    """
    players = list(range(n))
    if n % 2 == 1:
        players.append(-1)  # bye
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        # rotate all but the first player
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_orthogonalize(work: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-rotate ``work`` (m x n, m >= n) until its columns are orthogonal.

    Returns (work, v) with ``work_in @ v == work_out``.  Internally the
    columns live as contiguous rows so the per-round gathers and rotation
    scatters stay cache-friendly; squared column norms are carried through
    each sweep via the rotation identities instead of being recomputed.
    """
    m, n = work.shape
    if n == 1:
        return work, np.eye(1)
    # rows[i] = [column i of work | column i of the accumulated V]; the
    # same plane rotation applies to both halves, so they travel together.
    rows = np.concatenate([np.ascontiguousarray(work.T), np.eye(n)], axis=1)
    data = rows[:, :m]
    rounds = _round_robin_rounds(n)
    tol_sq = CONVERGENCE_TOL * CONVERGENCE_TOL
    off = np.inf
    for _ in range(SWEEP_LIMIT):
        off_sq = 0.0
        norms = np.einsum("ij,ij->i", data, data)
        for p, q in rounds:
            rp = rows[p]
            rq = rows[q]
            gamma = np.einsum("ij,ij->i", rp[:, :m], rq[:, :m])
            alpha = norms[p]
            beta = norms[q]
            denom = alpha * beta
            gamma_sq = gamma * gamma
            live = denom > 0.0
            if live.any():
                off_sq = max(off_sq, float((gamma_sq[live] / denom[live]).max()))
            active = gamma_sq > tol_sq * denom
            if not active.any():
                continue
            if active.all():
                pa, qa, ga, rpa, rqa = p, q, gamma, rp, rq
                aa, ba = alpha, beta
            else:
                pa, qa, ga = p[active], q[active], gamma[active]
                rpa, rqa = rp[active], rq[active]
                aa, ba = alpha[active], beta[active]

            zeta = (ba - aa) / (2.0 * ga)
            t = np.where(zeta >= 0.0, 1.0, -1.0) / (
                np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)
            )
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = t[:, None] * c
            rows[pa] = c * rpa - s * rqa
            rows[qa] = s * rpa + c * rqa
            norms[pa] = np.maximum(aa - t * ga, 0.0)
            norms[qa] = np.maximum(ba + t * ga, 0.0)
        off = math.sqrt(off_sq)
        if off < CONVERGENCE_TOL:
            return np.ascontiguousarray(rows[:, :m].T), rows[:, m:].T
    raise NumericError(
        f"column orthogonalization did not converge within {SWEEP_LIMIT} sweeps "
        f"(residual off-diagonal level {off:.3e})",
        detail=off,
    )


def _fill_null_columns(u: np.ndarray, start: int) -> None:
    """Replace columns ``start:`` with a deterministic orthonormal completion."""
    m, r = u.shape
    col = start
    for basis in range(m):
        if col >= r:
            return
        cand = np.zeros(m)
        cand[basis] = 1.0
        cand -= u[:, :col] @ (u[:, :col].T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            u[:, col] = cand / norm
            col += 1
    if col < r:  # cannot happen for r <= m
        raise NumericError("failed to complete an orthonormal basis")


def svd(matrix) -> SvdFactors:
    """Thin SVD via one-sided Jacobi rotations.

    Deterministic: repeated calls on identical input produce bit-identical
    factors, and each left-singular column is oriented so its
    largest-magnitude entry (lowest row index on ties) is non-negative.
    """
    m = as_matrix(matrix)
    rows, cols = m.shape
    transposed = rows < cols
    work = (m.T if transposed else m).copy()

    work, v = _jacobi_orthogonalize(work)

    norms = np.linalg.norm(work, axis=0)
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    v = v[:, order]
    work = work[:, order]

    nonzero = sigma > 0.0
    u = np.zeros_like(work)
    u[:, nonzero] = work[:, nonzero] / sigma[nonzero]
    if not nonzero.all():
        _fill_null_columns(u, int(np.count_nonzero(nonzero)))

    if sigma[0] > 0.0:
        sigma = np.where(sigma < RANK_TOL * sigma[0], 0.0, sigma)

    if transposed:
        u, vt = v, u.T
    else:
        vt = v.T

    # Sign convention: per column of u, the largest-|entry| (first such
    # row on ties) must be non-negative.
    for j in range(u.shape[1]):
        idx = int(np.argmax(np.abs(u[:, j])))
        if u[idx, j] < 0.0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]

    return SvdFactors(u=u, sigma=sigma, vt=vt)


def truncate(factors: SvdFactors, rank: int) -> TruncatedFactors:
    """Keep the top ``rank`` singular directions, folding sigma into w_k."""
    limit = factors.rank_limit
    if not 1 <= rank <= limit:
        raise ValidationError(f"rank {rank} out of range [1, {limit}]")
    u_k = factors.u[:, :rank].copy()
    w_k = factors.sigma[:rank, None] * factors.vt[:rank, :]
    return TruncatedFactors(rank=rank, u_k=u_k, w_k=w_k)


def reconstruct(truncated: TruncatedFactors) -> np.ndarray:
    """Dense product of a factor pair."""
    if truncated.u_k.shape[1] != truncated.w_k.shape[0]:
        raise NumericError(
            f"inconsistent factor shapes {truncated.u_k.shape} / {truncated.w_k.shape}"
        )
    return truncated.u_k @ truncated.w_k


def _cumulative_fractions(sigma: np.ndarray) -> np.ndarray:
    total = float(np.sum(sigma))
    if total <= 0.0:
        raise ValidationError("all singular values are zero; energy is undefined")
    fracs = np.cumsum(sigma) / total
    fracs[-1] = 1.0
    return fracs


def energy(factors: SvdFactors, rank: int) -> float:
    """Fraction of the singular-value sum captured by the top ``rank``."""
    limit = factors.rank_limit
    if not 1 <= rank <= limit:
        raise ValidationError(f"rank {rank} out of range [1, {limit}]")
    return float(_cumulative_fractions(factors.sigma)[rank - 1])


def energy_to_rank(factors: SvdFactors, target: float) -> int:
    """Smallest rank whose energy reaches ``target`` (0 < target <= 1)."""
    if not 0.0 < target <= 1.0:
        raise ValidationError(f"energy target {target} outside (0, 1]")
    fracs = _cumulative_fractions(factors.sigma)
    return int(np.searchsorted(fracs, target, side="left")) + 1
