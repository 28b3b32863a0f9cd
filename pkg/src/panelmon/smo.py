"""Pairwise coordinate-ascent solver for box-constrained SVM duals.

Solves  min  1/2 a'Qa + p'a   s.t.  y'a = 0,  0 <= a <= C,  y_i in {+-1},
by exactly optimizing one violating pair per iteration (working set of
two).  The first index is the maximal violator; the second is chosen by
second-order gain (the pair whose exact subproblem decreases the objective
most given the first), which saves iterations at no extra kernel cost.
Shrinking is deliberately not implemented, keeping the iterate sequence
deterministic for a given problem.

Both the classifier dual (n variables, p = -1) and the epsilon-insensitive
regression dual (2n variables a = (alpha, alpha*), sign pattern
s = (+1, -1)) reduce to this form; the regression case shares one kernel
row between the paired variables.

Two data paths back the same iteration: small problems precompute the full
kernel matrix in float64 (so tight tolerances are reachable exactly);
large ones produce float32 kernel rows on demand into a bounded
round-robin cache, which is what keeps reference-scale training inside a
desk-time budget.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import SolverWarning

_ETA_FLOOR = 1e-12
# full-matrix float64 path is used while the kernel fits in this budget
_DENSE_BUDGET_BYTES = 192 * 2**20

KERNEL_LINEAR = 0
KERNEL_RBF = 1


@dataclass
class SmoResult:
    a: np.ndarray
    bias: float
    objective: float
    iterations: int
    kkt_violation: float
    converged: bool


@njit(cache=True, fastmath=False)
def _select_i(g, s, at_lo, at_hi):
    n = len(g)
    vi = -np.inf
    i = -1
    gmin = np.inf
    for idx in range(n):
        v = -s[idx] * g[idx]
        if s[idx] > 0:
            up = not at_hi[idx]
            low = not at_lo[idx]
        else:
            up = not at_lo[idx]
            low = not at_hi[idx]
        if up and v > vi:
            vi = v
            i = idx
        if low and v < gmin:
            gmin = v
    return i, vi, gmin


@njit(cache=True, fastmath=False)
def _select_j(g, s, at_lo, at_hi, diag, row_i, n_base, d_i, vi):
    n = len(g)
    best = -np.inf
    j = -1
    b_j = 0.0
    for idx in range(n):
        if s[idx] > 0:
            low = not at_lo[idx]
        else:
            low = not at_hi[idx]
        if not low:
            continue
        b = vi + s[idx] * g[idx]
        if b <= 0.0:
            continue
        base = idx if idx < n_base else idx - n_base
        eta = d_i + diag[idx] - 2.0 * row_i[base]
        if eta < _ETA_FLOOR:
            eta = _ETA_FLOOR
        sc = b * b / eta
        if sc > best:
            best = sc
            j = idx
            b_j = b
    return j, b_j


@njit(cache=True, fastmath=False)
def _apply_pair(a, g, s, at_lo, at_hi, diag, row_i, row_j, n_base, i, j,
                b_ij, c_bound):
    bi = i if i < n_base else i - n_base
    bj = j if j < n_base else j - n_base
    eta = diag[i] + diag[j] - 2.0 * row_i[bj]
    if eta < _ETA_FLOOR:
        eta = _ETA_FLOOR
    t = b_ij / eta
    lim = (c_bound - a[i]) if s[i] > 0 else a[i]
    if t > lim:
        t = lim
    lim = a[j] if s[j] > 0 else (c_bound - a[j])
    if t > lim:
        t = lim
    if t <= 0.0:
        return 0.0
    da_i = s[i] * t
    da_j = -s[j] * t
    a[i] += da_i
    a[j] += da_j
    snap = 1e-12 * (1.0 if c_bound < 1.0 else c_bound)
    for idx in (i, j):
        if a[idx] < snap:
            a[idx] = 0.0
        elif a[idx] > c_bound - snap:
            a[idx] = c_bound
        at_lo[idx] = a[idx] == 0.0
        at_hi[idx] = a[idx] == c_bound
    n = len(g)
    # delta-g = da_i Q[:,i] + da_j Q[:,j]; with Q = (s s') o K and
    # s_i da_i = t, s_j da_j = -t the coefficients collapse to +-t
    for idx in range(n):
        base = idx if idx < n_base else idx - n_base
        g[idx] += s[idx] * t * (row_i[base] - row_j[base])
    return t


@njit(cache=True, fastmath=False)
def _loop_dense(k_matrix, diag, p, s, a, g, at_lo, at_hi, c_bound, tol,
                max_iter):
    n_base = k_matrix.shape[0]
    it = 0
    violation = np.inf
    while it < max_iter:
        i, vi, gmin = _select_i(g, s, at_lo, at_hi)
        violation = vi - gmin
        if i < 0 or not np.isfinite(violation) or violation <= tol:
            break
        bi = i if i < n_base else i - n_base
        row_i = k_matrix[bi]
        j, b_ij = _select_j(g, s, at_lo, at_hi, diag, row_i, n_base,
                            diag[i], vi)
        if j < 0:
            break
        bj = j if j < n_base else j - n_base
        if _apply_pair(a, g, s, at_lo, at_hi, diag, row_i, k_matrix[bj],
                       n_base, i, j, b_ij, c_bound) <= 0.0:
            break
        it += 1
    return it, violation


@njit(cache=True, fastmath=False)
def _row_into(x32, sq32, gamma, kernel_code, base, out32):
    d = x32 @ x32[base]
    if kernel_code == KERNEL_RBF:
        for jj in range(len(d)):
            v = sq32[jj] + sq32[base] - 2.0 * d[jj]
            if v < 0.0:
                v = 0.0
            out32[jj] = np.exp(-gamma * v)
    else:
        for jj in range(len(d)):
            out32[jj] = d[jj]


@njit(cache=True, fastmath=False)
def _cached_row(base, x32, sq32, gamma, kernel_code, rows32, slot_of, owner,
                state):
    slot = slot_of[base]
    if slot >= 0:
        return slot
    slot = state[0]
    state[0] = (slot + 1) % rows32.shape[0]
    state[1] += 1  # miss counter
    old = owner[slot]
    if old >= 0:
        slot_of[old] = -1
    _row_into(x32, sq32, gamma, kernel_code, base, rows32[slot])
    owner[slot] = base
    slot_of[base] = slot
    return slot


@njit(cache=True, fastmath=False)
def _loop_cached(x32, sq32, gamma, kernel_code, diag, p, s, a, g, at_lo,
                 at_hi, c_bound, tol, max_iter, rows32, slot_of, owner,
                 state):
    n_base = x32.shape[0]
    it = 0
    violation = np.inf
    while it < max_iter:
        i, vi, gmin = _select_i(g, s, at_lo, at_hi)
        violation = vi - gmin
        if i < 0 or not np.isfinite(violation) or violation <= tol:
            break
        bi = i if i < n_base else i - n_base
        slot_i = _cached_row(bi, x32, sq32, gamma, kernel_code, rows32,
                             slot_of, owner, state)
        row_i = rows32[slot_i]
        j, b_ij = _select_j(g, s, at_lo, at_hi, diag, row_i, n_base,
                            diag[i], vi)
        if j < 0:
            break
        bj = j if j < n_base else j - n_base
        slot_j = _cached_row(bj, x32, sq32, gamma, kernel_code, rows32,
                             slot_of, owner, state)
        if _apply_pair(a, g, s, at_lo, at_hi, diag, row_i, rows32[slot_j],
                       n_base, i, j, b_ij, c_bound) <= 0.0:
            break
        it += 1
    return it, violation


def _dense_kernel(x, kernel_code, gamma):
    if kernel_code == KERNEL_LINEAR:
        return x @ x.T
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def solve_dual(x, p, s, c_bound, kernel_code, gamma, tolerance=1e-3,
               max_iterations=500_000, cache_bytes=512 * 2**20):
    """Solve the dual; `x` holds the n_base training vectors and `p`/`s`
    may cover 2*n_base variables (regression doubling)."""
    x = np.ascontiguousarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    n = len(p)
    n_base = len(x)
    if n not in (n_base, 2 * n_base):
        raise ValueError("p must cover n or 2n variables")
    if kernel_code == KERNEL_RBF:
        base_diag = np.ones(n_base)
    else:
        base_diag = np.einsum("ij,ij->i", x, x)
    diag = base_diag if n == n_base else np.concatenate([base_diag, base_diag])
    a = np.zeros(n)
    g = p.copy()
    at_lo = np.ones(n, dtype=np.bool_)
    at_hi = np.zeros(n, dtype=np.bool_)

    if n_base * n_base * 8 <= _DENSE_BUDGET_BYTES:
        k_matrix = _dense_kernel(x, kernel_code, gamma)
        it, violation = _loop_dense(k_matrix, diag, p, s, a, g, at_lo, at_hi,
                                    float(c_bound), float(tolerance),
                                    int(max_iterations))
    else:
        x32 = np.ascontiguousarray(x, dtype=np.float32)
        sq32 = np.einsum("ij,ij->i", x32, x32).astype(np.float32)
        capacity = max(16, int(cache_bytes // (4 * n_base)))
        capacity = min(capacity, n_base)
        rows32 = np.empty((capacity, n_base), dtype=np.float32)
        slot_of = np.full(n_base, -1, dtype=np.int64)
        owner = np.full(capacity, -1, dtype=np.int64)
        state = np.zeros(2, dtype=np.int64)
        it, violation = _loop_cached(x32, sq32, np.float32(gamma),
                                     kernel_code, diag, p, s, a, g, at_lo,
                                     at_hi, float(c_bound), float(tolerance),
                                     int(max_iterations), rows32, slot_of,
                                     owner, state)
    converged = bool(np.isfinite(violation) and violation <= tolerance)
    if not converged:
        warnings.warn(
            f"solver stopped at {it} iterations with KKT violation "
            f"{violation:.3g} > tolerance {tolerance:.3g}; returning the "
            "best iterate",
            SolverWarning,
        )
    minus_sg = -s * g
    free = (a > 1e-12) & (a < c_bound - 1e-12)
    if free.any():
        bias = float(minus_sg[free].mean())
    else:
        pos = s > 0
        up = (pos & ~at_hi) | (~pos & ~at_lo)
        low = (pos & ~at_lo) | (~pos & ~at_hi)
        hi = minus_sg[up].max() if up.any() else 0.0
        lo = minus_sg[low].min() if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    objective = float(0.5 * (a @ g) + 0.5 * (a @ p))
    return SmoResult(a, bias, objective, it,
                     float(max(violation, 0.0)) if np.isfinite(violation) else 0.0,
                     converged)
