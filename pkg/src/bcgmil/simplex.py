"""Exact minimization of small convex quadratics over the probability simplex.

Solves  min 0.5 * x'Qx + q'x  subject to  sum(x) = 1, x >= 0  with Q
symmetric positive semidefinite.  Two routes:

* ``solve_simplex_qp``: primal active-set iteration on one problem, with a
  projected-gradient fallback if pivoting fails to terminate.
* ``solve_simplex_qp_batch``: many problems of the same (small) dimension
  at once.  For dimension <= 8 every support set is enumerated and the
  bordered KKT systems are solved batched, which is exact and orders of
  magnitude faster than looping; larger dimensions fall back to the
  per-problem active-set solver.

Both routes return exact minimizers up to floating-point resolution, so
either may be checked against a brute-force grid.
"""

from __future__ import annotations

import warnings

import numpy as np

MAX_PIVOTS = 100
SUPPORT_ENUM_LIMIT = 8
_FEAS_TOL = 1e-11
_PG_STEP_TOL = 1e-10
_PG_MAX_ITERS = 200_000


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _objective(Q: np.ndarray, q: np.ndarray, x: np.ndarray) -> float:
    return 0.5 * float(x @ Q @ x) + float(q @ x)


def _equality_solve(Q: np.ndarray, q: np.ndarray, free: np.ndarray):
    """Minimize on the affine slice {x_free: sum = 1, x_rest = 0}.

    Returns (x_free, nu) where nu is the multiplier of the sum constraint,
    or None when the bordered system is singular and inconsistent.
    """
    k = free.size
    A = np.empty((k + 1, k + 1))
    A[:k, :k] = Q[np.ix_(free, free)]
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    A[k, k] = 0.0
    b = np.empty(k + 1)
    b[:k] = -q[free]
    b[k] = 1.0
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        if not np.allclose(A @ sol, b, atol=1e-8):
            return None
    # Stationarity reads Q x + q = nu * 1 on the free set.
    return sol[:k], -sol[k]


def _projected_gradient(Q: np.ndarray, q: np.ndarray, x0: np.ndarray) -> np.ndarray:
    eigs = np.linalg.eigvalsh(Q)
    step = 1.0 / max(float(eigs[-1]), 1e-12)
    x = x0.copy()
    for _ in range(_PG_MAX_ITERS):
        x_new = project_simplex(x - step * (Q @ x + q))
        if np.linalg.norm(x_new - x) < _PG_STEP_TOL:
            return x_new
        x = x_new
    return x


def solve_simplex_qp(Q: np.ndarray, q: np.ndarray, max_pivots: int = MAX_PIVOTS) -> np.ndarray:
    """Active-set solution of one simplex-constrained QP.

    Starts at the uniform point with no active bounds, alternates equality
    solves with blocking-constraint line searches, and verifies the bound
    multipliers before declaring optimality.  If the pivot budget runs out
    (possible only for degenerate Q) a projected-gradient descent finishes
    the job, with a warning.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    if n == 1:
        return np.ones(1)

    x = np.full(n, 1.0 / n)
    active = np.zeros(n, dtype=bool)
    for _ in range(max_pivots):
        free = np.flatnonzero(~active)
        sol = _equality_solve(Q, q, free)
        if sol is None:
            break  # degenerate subproblem: let the fallback handle it
        x_free, nu = sol
        if np.all(x_free >= -_FEAS_TOL):
            x = np.zeros(n)
            x[free] = np.maximum(x_free, 0.0)
            if not np.any(active):
                return x
            grad = Q @ x + q
            mult = grad[active] - nu
            worst = np.argmin(mult)
            if mult[worst] >= -_FEAS_TOL:
                return x
            active[np.flatnonzero(active)[worst]] = False
            continue
        # Blocked: step toward the equality solution until a bound hits zero.
        target = np.zeros(n)
        target[free] = x_free
        direction = target - x
        shrinking = np.flatnonzero(direction < -1e-15)
        ratios = x[shrinking] / -direction[shrinking]
        block = shrinking[np.argmin(ratios)]
        alpha = min(1.0, float(np.min(ratios)))
        x = np.maximum(x + alpha * direction, 0.0)
        x[block] = 0.0
        x /= x.sum()
        active[block] = True

    warnings.warn(
        "simplex QP active set did not terminate; falling back to projected gradient",
        RuntimeWarning,
        stacklevel=2,
    )
    return _projected_gradient(Q, q, x)


def _enumerate_supports(n: int):
    """All non-empty index subsets of range(n), in fixed bitmask order."""
    for mask in range(1, 1 << n):
        yield np.flatnonzero([(mask >> j) & 1 for j in range(n)])


def solve_simplex_qp_batch(Q: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve a batch of simplex QPs sharing dimension ``n``.

    ``Q`` has shape (B, n, n), ``q`` shape (B, n).  For n <= 8 the solver
    enumerates every candidate support, solves the bordered KKT systems
    for the whole batch at once, and keeps the feasible candidate with the
    lowest objective per problem (first support wins ties, so results are
    deterministic).  Any KKT point of a convex problem is globally
    optimal, hence the winner is the exact solution.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    batch, n = q.shape
    if batch == 0:
        return np.zeros((0, n))
    if n == 1:
        return np.ones((batch, 1))
    if n > SUPPORT_ENUM_LIMIT:
        return np.stack([solve_simplex_qp(Q[i], q[i]) for i in range(batch)])

    best_val = np.full(batch, np.inf)
    best_x = np.zeros((batch, n))
    for support in _enumerate_supports(n):
        s = support.size
        A = np.zeros((batch, s + 1, s + 1))
        A[:, :s, :s] = Q[np.ix_(np.arange(batch), support, support)]
        A[:, :s, s] = 1.0
        A[:, s, :s] = 1.0
        b = np.empty((batch, s + 1))
        b[:, :s] = -q[:, support]
        b[:, s] = 1.0

        # Keep singular bordered systems out of the batched solve.
        row_scale = np.sqrt(np.einsum("bij,bij->b", A, A) / (s + 1)) + 1e-300
        dets = np.linalg.det(A)
        solvable = np.abs(dets) > 1e-12 * row_scale ** (s + 1)
        sol = np.zeros((batch, s + 1))
        if np.any(solvable):
            sol[solvable] = np.linalg.solve(A[solvable], b[solvable])

        x_sup = sol[:, :s]
        feasible = solvable & np.all(x_sup >= -_FEAS_TOL, axis=1)
        if not np.any(feasible):
            continue
        candidate = np.zeros((batch, n))
        clipped = np.maximum(x_sup, 0.0)
        sums = clipped.sum(axis=1, keepdims=True)
        np.divide(clipped, sums, out=clipped, where=sums > 0)
        candidate[:, support] = clipped
        vals = 0.5 * np.einsum("bi,bij,bj->b", candidate, Q, candidate) + np.einsum(
            "bi,bi->b", candidate, q
        )
        better = feasible & (vals < best_val)
        best_val[better] = vals[better]
        best_x[better] = candidate[better]

    # Safety net for problems every enumerated system skipped (all-singular
    # degeneracy, e.g. duplicated concepts): solve those individually.
    missing = ~np.isfinite(best_val)
    for i in np.flatnonzero(missing):
        best_x[i] = solve_simplex_qp(Q[i], q[i])
    return best_x
