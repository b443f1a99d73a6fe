"""LP relaxation of FTFL, a dense revised simplex solver, and canonicalization.

Variable order is ``y_0 .. y_{m-1}`` followed by ``x[j, i]`` flattened
client-major (index ``m + j*m + i``). Rows are, in order: ``n`` coverage rows
``sum_i x_ij >= r_j``, ``n*m`` linkage rows ``x_ij - y_i <= 0`` and ``m`` bound
rows ``y_i <= 1``. Nonnegativity is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InfeasibleError, SolverError
from .instance import Instance

SNAP = 1e-9

GE, LE, EQ = ">=", "<=", "=="


def snap01(a, tol: float = SNAP) -> np.ndarray:
    """Snap entries within ``tol`` of 0 or 1 onto 0 or 1."""
    a = np.array(a, dtype=float, copy=True)
    a[np.abs(a) <= tol] = 0.0
    a[np.abs(a - 1.0) <= tol] = 1.0
    return a


@dataclass
class LpProblem:
    """``minimize cost @ z`` subject to ``A z (sense) b``, ``z >= 0``."""

    cost: np.ndarray
    A: np.ndarray
    sense: list
    b: np.ndarray
    m: int
    n: int

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def row_counts(self) -> dict:
        return {"coverage": self.n, "linkage": self.n * self.m, "bound": self.m}


@dataclass
class FractionalSolution:
    x: np.ndarray  # (n, m)
    y: np.ndarray  # (m,)
    objective: float


def build_lp(inst: Instance) -> LpProblem:
    m, n = inst.m, inst.n
    nv = m + n * m
    rows = n + n * m + m
    A = np.zeros((rows, nv))
    b = np.zeros(rows)
    sense = []
    for j in range(n):
        A[j, m + j * m : m + (j + 1) * m] = 1.0
        b[j] = inst.r[j]
        sense.append(GE)
    row = n
    for j in range(n):
        for i in range(m):
            A[row, m + j * m + i] = 1.0
            A[row, i] = -1.0
            sense.append(LE)
            row += 1
    for i in range(m):
        A[row, i] = 1.0
        b[row] = 1.0
        sense.append(LE)
        row += 1
    cost = np.concatenate([inst.f, inst.c.reshape(-1)])
    return LpProblem(cost=cost, A=A, sense=sense, b=b, m=m, n=n)


# ---------------------------------------------------------------------------
# revised simplex


@dataclass
class SimplexResult:
    z: np.ndarray
    objective: float
    iterations: int
    basis: np.ndarray


def _standard_form(lp: LpProblem):
    """Return (A, b, c, n_orig, initial_basis, n_art) for ``A z = b, z >= 0``.

    Slacks for ``<=`` rows serve as the initial basis where possible; ``>=``
    and ``==`` rows get an artificial column.
    """
    A0 = np.asarray(lp.A, dtype=float)
    b0 = np.asarray(lp.b, dtype=float).copy()
    rows, nv = A0.shape
    sense = list(lp.sense)
    A0 = A0.copy()
    for k in range(rows):
        if b0[k] < 0:
            A0[k] *= -1
            b0[k] *= -1
            sense[k] = {GE: LE, LE: GE, EQ: EQ}[sense[k]]
    n_slack = sum(1 for s in sense if s != EQ)
    need_art = [k for k in range(rows) if sense[k] != LE]
    A = np.zeros((rows, nv + n_slack + len(need_art)))
    A[:, :nv] = A0
    basis = np.empty(rows, dtype=np.int64)
    col = nv
    for k in range(rows):
        if sense[k] == LE:
            A[k, col] = 1.0
            basis[k] = col
            col += 1
        elif sense[k] == GE:
            A[k, col] = -1.0
            col += 1
    first_art = col
    for k in need_art:
        A[k, col] = 1.0
        basis[k] = col
        col += 1
    c = np.zeros(A.shape[1])
    c[:nv] = lp.cost
    return A, b0, c, nv, basis, first_art


def _simplex(A, b, c, basis, tol, max_iter, allowed, refactor_every=64):
    """Primal revised simplex with Bland's rule on columns ``allowed``.

    Keeps an explicit basis inverse updated by elementary row operations and
    recomputed from scratch every ``refactor_every`` pivots.
    """
    rows = A.shape[0]
    basis = basis.copy()
    Binv = np.linalg.inv(A[:, basis])
    in_basis = np.zeros(A.shape[1], dtype=bool)
    in_basis[basis] = True
    since_refactor = 0
    for it in range(max_iter):
        xB = Binv @ b
        pi = c[basis] @ Binv
        d = c - pi @ A
        cand = np.nonzero((d < -tol) & allowed & ~in_basis)[0]
        if cand.size == 0:
            return basis, Binv, it
        e = int(cand[0])  # Bland: lowest index
        u = Binv @ A[:, e]
        pos = u > tol
        if not np.any(pos):
            raise SolverError("LP is unbounded")
        ratios = np.full(rows, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / u[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + tol * max(1.0, abs(best)))[0]
        # Bland: among tied rows, leave the basic variable with lowest index
        r = int(ties[np.argmin(basis[ties])])
        leaving = basis[r]
        basis[r] = e
        in_basis[leaving] = False
        in_basis[e] = True
        since_refactor += 1
        if since_refactor >= refactor_every:
            Binv = np.linalg.inv(A[:, basis])
            since_refactor = 0
        else:
            piv = u[r]
            row_r = Binv[r] / piv
            Binv -= np.outer(u, row_r)
            Binv[r] = row_r
    raise SolverError(f"simplex iteration limit ({max_iter}) exceeded")


def simplex_solve(lp: LpProblem, tol: float = 1e-9, max_iter: int = 50_000) -> SimplexResult:
    """Two-phase dense revised simplex. Returns a basic optimal solution."""
    A, b, c, nv, basis, first_art = _standard_form(lp)
    ncols = A.shape[1]
    iters = 0
    if first_art < ncols:
        c1 = np.zeros(ncols)
        c1[first_art:] = 1.0
        allowed = np.ones(ncols, dtype=bool)
        basis, Binv, k = _simplex(A, b, c1, basis, tol, max_iter, allowed)
        iters += k
        xB = Binv @ b
        infeas = float(xB[basis >= first_art].sum())
        if infeas > max(tol, 1e-7) * max(1.0, float(np.abs(b).max())):
            raise InfeasibleError(f"LP infeasible (phase I residual {infeas:.3g})")
        # drive zero-level artificials out of the basis where possible
        for r in np.nonzero(basis >= first_art)[0]:
            row = Binv[r] @ A[:, :first_art]
            nz = np.nonzero((np.abs(row) > 1e-7) & ~np.isin(np.arange(first_art), basis))[0]
            if nz.size:
                e = int(nz[0])
                u = Binv @ A[:, e]
                basis[r] = e
                row_r = Binv[r] / u[r]
                Binv -= np.outer(u, row_r)
                Binv[r] = row_r
    allowed = np.zeros(ncols, dtype=bool)
    allowed[:first_art] = True
    basis, Binv, k = _simplex(A, b, c, basis, tol, max_iter - iters, allowed)
    iters += k
    xB = Binv @ b
    z = np.zeros(ncols)
    z[basis] = xB
    z = np.maximum(z, 0.0)
    if np.any(z[first_art:] > 1e-7):
        raise SolverError("artificial variable left positive after phase II")
    zo = z[:nv]
    return SimplexResult(z=zo, objective=float(lp.cost @ zo), iterations=iters, basis=basis)


LpBackend = Callable[[LpProblem, float], np.ndarray]


def _default_backend(lp: LpProblem, tol: float) -> np.ndarray:
    return simplex_solve(lp, tol=tol).z


def solve_lp(lp: LpProblem, tol: float = 1e-9, backend: LpBackend | None = None) -> FractionalSolution:
    """Solve the relaxation and package it as a :class:`FractionalSolution`.

    ``backend`` maps ``(lp, tol)`` to the primal vector; the built-in simplex is
    used when omitted.
    """
    z = (backend or _default_backend)(lp, tol)
    z = np.asarray(z, dtype=float)
    m, n = lp.m, lp.n
    y = np.clip(z[:m], 0.0, 1.0)
    x = np.clip(z[m:].reshape(n, m), 0.0, 1.0)
    obj = float(lp.cost[:m] @ y + lp.cost[m:] @ x.reshape(-1))
    sol = FractionalSolution(x=x, y=y, objective=obj)
    bad = check_fractional(sol, lp, tol=max(1e-7, 10 * tol))
    if bad:
        raise SolverError("solver returned an infeasible point: " + "; ".join(bad))
    return sol


def check_fractional(sol: FractionalSolution, lp: LpProblem, tol: float = 1e-7) -> list[str]:
    """List violated FractionalSolution invariants (empty when valid)."""
    out = []
    m = lp.m
    r = lp.b[: lp.n]
    cover = sol.x.sum(axis=1)
    if np.any(cover < r - tol):
        out.append(f"coverage short by {float((r - cover).max()):.3g}")
    if np.any(sol.x > sol.y[None, :] + tol):
        out.append("x exceeds y")
    if np.any(sol.y > 1 + tol) or np.any(sol.y < -tol) or np.any(sol.x < -tol):
        out.append("bounds violated")
    obj = float(lp.cost[:m] @ sol.y + lp.cost[m:] @ sol.x.reshape(-1))
    if abs(obj - sol.objective) > tol * max(1.0, abs(obj)):
        out.append("objective mismatch")
    return out


def greedy_fill(weights: np.ndarray, dist: np.ndarray, need: float, tol: float = SNAP) -> np.ndarray:
    """Fill ``need`` units from capacities ``weights`` in order of (dist, index).

    Returns the assignment; at most one entry is strictly between 0 and its
    capacity, and it is the last one used.
    """
    order = np.lexsort((np.arange(dist.size), dist))
    out = np.zeros_like(weights, dtype=float)
    left = float(need)
    for i in order:
        if left <= tol:
            break
        w = float(weights[i])
        if w <= 0.0:
            continue
        if left >= w - tol:
            out[i] = w
            left -= w
        else:
            out[i] = left
            left = 0.0
    if left > tol:
        raise InfeasibleError(f"capacity short by {left:.3g}")
    return out


def canonicalize(sol: FractionalSolution, inst: Instance, tol: float = SNAP) -> FractionalSolution:
    """Reassign ``x`` greedily by distance for the fixed ``y``.

    Each client then has at most one facility with ``0 < x_ij < y_i``, and it
    is the farthest facility the client uses.
    """
    y = snap01(sol.y, tol)
    x = np.zeros((inst.n, inst.m))
    for j in range(inst.n):
        if y.sum() < inst.r[j] - 1e-7:
            raise InfeasibleError(f"sum of openings {y.sum():.6g} < r_{j} = {inst.r[j]}")
        x[j] = greedy_fill(y, inst.c[j], float(inst.r[j]), tol=1e-7)
    x = snap01(x, tol)
    obj = float(inst.f @ y + (inst.c * x).sum())
    return FractionalSolution(x=x, y=y, objective=obj)


def lp_optimum(inst: Instance, tol: float = 1e-9, backend: LpBackend | None = None) -> FractionalSolution:
    """Build, solve and canonicalize the relaxation of ``inst``."""
    return canonicalize(solve_lp(build_lp(inst), tol, backend), inst)
