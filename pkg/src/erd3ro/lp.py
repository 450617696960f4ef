"""Dense revised simplex engine and a general LP front end.

The core works on equality form ``min c^T x  s.t.  A x = b, x >= 0`` and
returns basic solutions, which is what the decomposition needs: every dual
vector handed to a cut is an extreme point of the dual polyhedron.

General programs (row senses, variable bounds, maximisation) are reduced to
equality form by :func:`solve_lp`.  A ``highs`` backend (scipy) is available
for large master LPs where only optimal values and primal points matter.
"""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

LE, EQ, GE = -1, 0, 1
_SENSE_NAMES = {LE: "<=", EQ: "=", GE: ">="}


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SimplexError(RuntimeError):
    """Numerical breakdown or iteration cap; ``log`` holds the pivot trace."""

    def __init__(self, message, log_lines=()):
        super().__init__(message)
        self.log = list(log_lines)


@dataclass(frozen=True)
class SimplexOptions:
    tol_feas: float = 1e-7
    tol_opt: float = 1e-7
    tol_pivot: float = 1e-9
    refactor_every: int = 50
    stall_threshold: int = 30
    bland: bool = False
    max_iter: int | None = None


class _Factor:
    """LU of the basis matrix plus a product-form eta file."""

    def __init__(self, B):
        self.m = B.shape[0]
        if self.m:
            lu, piv = sla.lu_factor(B, check_finite=False)
            diag = np.abs(np.diag(lu))
            if diag.min() <= 1e-11 * max(1.0, diag.max()):
                raise np.linalg.LinAlgError("singular basis")
            self.lu = (lu, piv)
        self.etas = []

    def ftran(self, a):
        if not self.m:
            return np.zeros(0)
        x = sla.lu_solve(self.lu, a, check_finite=False)
        for r, d in self.etas:
            xr = x[r] / d[r]
            x -= d * xr
            x[r] = xr
        return x

    def btran(self, c):
        if not self.m:
            return np.zeros(0)
        w = np.array(c, dtype=float)
        for r, d in reversed(self.etas):
            w[r] = (w[r] - (d @ w - d[r] * w[r])) / d[r]
        return sla.lu_solve(self.lu, w, trans=1, check_finite=False)

    def update(self, r, d):
        self.etas.append((r, d.copy()))


@dataclass
class StandardResult:
    status: LpStatus
    x: np.ndarray | None
    y: np.ndarray | None
    objective: float
    basis: tuple
    iterations: int


class EqualityFormLP:
    """``min/max c^T x  s.t.  A x = b, x >= 0`` with a fixed constraint system.

    Only the cost vector may change between :meth:`solve` calls, so a basis
    that was primal feasible once stays feasible; warm starts therefore skip
    phase one entirely.  Artificial columns (indices ``>= n``) may remain
    basic at zero level on redundant rows.
    """

    def __init__(self, A, b, options: SimplexOptions | None = None):
        A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.size:
            raise ValueError(f"inconsistent shapes A{A.shape} b{b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite LP data")
        self.m, self.n = A.shape
        self.options = options or SimplexOptions()
        self.flip = np.where(b < 0, -1.0, 1.0)
        self.A = A * self.flip[:, None]
        self.b = b * self.flip
        # Artificial identity appended once; columns >= n are artificial.
        self.full = np.hstack([self.A, np.eye(self.m)])
        self._factor_basis = None
        self._factor = None
        self._feasible_basis = None

    # -- basis handling -------------------------------------------------
    def _factorize(self, basis):
        key = tuple(basis)
        if self._factor_basis == key and self._factor is not None and not self._factor.etas:
            return self._factor
        f = _Factor(self.full[:, list(basis)])
        self._factor_basis, self._factor = key, f
        return f

    def _check_basis(self, basis):
        try:
            f = _Factor(self.full[:, list(basis)])
        except (np.linalg.LinAlgError, ValueError):
            return None
        xb = f.ftran(self.b)
        if xb.size and xb.min() < -self.options.tol_feas * (1.0 + np.abs(self.b).max(initial=0.0)):
            return None
        return f

    # -- main loop --------------------------------------------------------
    def _iterate(self, cost, basis, factor, allowed, log_lines, start_iter=0):
        """Primal simplex on ``self.full`` from a feasible basis."""
        opt = self.options
        m = self.m
        basis = list(basis)
        cap = opt.max_iter or 50 * (self.m + self.n + 1)
        bland = opt.bland
        stall = 0
        xb = np.maximum(factor.ftran(self.b), 0.0) if m else np.zeros(0)
        scale = max(1.0, np.abs(cost).max(initial=0.0))
        it = start_iter
        in_basis = np.zeros(self.full.shape[1], dtype=bool)
        in_basis[basis] = True
        while True:
            if it >= cap:
                raise SimplexError(f"iteration cap {cap} reached", log_lines)
            y = factor.btran(cost[basis]) if m else np.zeros(0)
            d = cost - self.full.T @ y if m else cost.copy()
            d[in_basis] = 0.0
            d[~allowed] = 0.0
            cand = np.flatnonzero(d < -opt.tol_opt * scale)
            if cand.size == 0:
                return LpStatus.OPTIMAL, basis, xb, y, factor, it
            q = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
            u = factor.ftran(self.full[:, q])
            pos = np.flatnonzero(u > opt.tol_pivot * max(1.0, np.abs(u).max()))
            if pos.size == 0:
                return LpStatus.UNBOUNDED, basis, xb, y, factor, it
            ratios = xb[pos] / u[pos]
            theta = ratios.min()
            ties = pos[ratios <= theta + opt.tol_feas * 1e-3]
            if bland:
                r = int(min(ties, key=lambda i: basis[i]))
            else:
                # Largest pivot among ties keeps the basis well conditioned.
                r = int(min(ties, key=lambda i: (-u[i], basis[i])))
            theta = max(xb[r] / u[r], 0.0)
            xb = xb - theta * u
            xb[r] = theta
            np.maximum(xb, 0.0, out=xb)
            in_basis[basis[r]] = False
            in_basis[q] = True
            basis[r] = q
            it += 1
            if theta <= opt.tol_feas:
                stall += 1
                if stall > opt.stall_threshold and not bland:
                    bland = True
                    log_lines.append(f"iter {it}: stalled, switching to Bland's rule")
            else:
                stall = 0
            factor.update(r, u)
            if len(factor.etas) >= opt.refactor_every:
                try:
                    factor = _Factor(self.full[:, basis])
                except np.linalg.LinAlgError as exc:
                    raise SimplexError(f"singular basis at iteration {it}", log_lines) from exc
                xb = np.maximum(factor.ftran(self.b), 0.0)
            if len(log_lines) < 2000:
                log_lines.append(f"iter {it}: enter {q} leave row {r} step {theta:.3e}")

    def _phase_one(self, log_lines):
        m, n = self.m, self.n
        basis = list(range(n, n + m))
        factor = _Factor(self.full[:, basis])
        cost = np.concatenate([np.zeros(n), np.ones(m)])
        allowed = np.ones(n + m, dtype=bool)
        status, basis, xb, _, factor, it = self._iterate(cost, basis, factor, allowed, log_lines)
        infeas = float(cost[basis] @ xb)
        if infeas > self.options.tol_feas * (1.0 + np.abs(self.b).max(initial=0.0)):
            return None, it
        # Drive zero-level artificials out of the basis where possible.
        for r in range(m):
            if basis[r] < n:
                continue
            e = np.zeros(m)
            e[r] = 1.0
            row = factor.btran(e) @ self.full[:, :n]
            row[[j for j in basis if j < n]] = 0.0
            j = int(np.argmax(np.abs(row))) if n else 0
            if n and abs(row[j]) > 1e-7:
                u = factor.ftran(self.full[:, j])
                basis[r] = j
                factor.update(r, u)
        factor = _Factor(self.full[:, basis])
        return (basis, factor), it

    def solve(self, c, maximize=False, basis=None):
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.size != self.n or not np.all(np.isfinite(c)):
            raise ValueError("cost vector has wrong size or non-finite entries")
        sign = -1.0 if maximize else 1.0
        log_lines = []
        factor = None
        it0 = 0
        for cand in (basis, self._feasible_basis):
            if cand is not None and len(cand) == self.m:
                factor = self._check_basis(cand)
                if factor is not None:
                    basis = list(cand)
                    break
        if factor is None:
            res, it0 = self._phase_one(log_lines)
            if res is None:
                return StandardResult(LpStatus.INFEASIBLE, None, None, np.nan, (), it0)
            basis, factor = res
        self._feasible_basis = tuple(basis)
        cost = np.concatenate([sign * c, np.zeros(self.m)])
        allowed = np.concatenate([np.ones(self.n, dtype=bool), np.zeros(self.m, dtype=bool)])
        status, basis, xb, y, factor, it = self._iterate(
            cost, basis, factor, allowed, log_lines, start_iter=it0
        )
        self._feasible_basis = tuple(basis)
        if status is LpStatus.UNBOUNDED:
            return StandardResult(status, None, None, sign * -np.inf, tuple(basis), it)
        x = np.zeros(self.n + self.m)
        x[basis] = xb
        x = x[: self.n]
        y = y * self.flip * sign
        return StandardResult(LpStatus.OPTIMAL, x, y, float(c @ x), tuple(basis), it)

    def check_optimal_basis(self, basis, costs, maximize=False):
        """Vectorised optimality test of one basis against many cost vectors.

        ``costs`` has shape (k, n).  Returns a boolean mask of the cost
        vectors for which ``basis`` is optimal, together with the primal
        values at that basis (identical for all costs).
        """
        f = self._factorize(basis)
        sign = -1.0 if maximize else 1.0
        C = sign * np.atleast_2d(costs)
        full_c = np.hstack([C, np.zeros((C.shape[0], self.m))])
        cb = full_c[:, list(basis)]
        Y = np.stack([f.btran(row) for row in cb]) if self.m else np.zeros((C.shape[0], 0))
        reduced = C - Y @ self.A
        nonbasic = np.ones(self.n, dtype=bool)
        nonbasic[[j for j in basis if j < self.n]] = False
        scale = np.maximum(1.0, np.abs(C).max(axis=1))
        ok = (reduced[:, nonbasic] >= -self.options.tol_opt * scale[:, None]).all(axis=1)
        return ok


def _as_csr(A, m, n):
    if sp.issparse(A):
        return A.tocsr()
    if isinstance(A, tuple) and len(A) == 3:
        rows, cols, vals = A
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return sp.csr_matrix((m, n))
    return sp.csr_matrix(A)


@dataclass
class LinearProgram:
    """``min/max c^T x`` subject to ``A x (<=,=,>=) b`` and ``lower <= x <= upper``.

    ``A`` may be dense, scipy-sparse or a ``(rows, cols, vals)`` triplet.
    ``senses`` uses ``LE``/``EQ``/``GE`` (-1/0/1).
    """

    c: np.ndarray
    A: object
    senses: np.ndarray
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    maximize: bool = False
    names: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        n, m = self.c.size, self.b.size
        self.A = _as_csr(self.A, m, n)
        self.senses = np.asarray(self.senses, dtype=int).reshape(-1)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float).reshape(-1)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).reshape(-1)
        if self.A.shape != (m, n) or self.senses.size != m or self.lower.size != n or self.upper.size != n:
            raise ValueError("inconsistent LP dimensions")
        if not set(np.unique(self.senses)) <= {LE, EQ, GE}:
            raise ValueError("row senses must be LE, EQ or GE")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A.data))):
            raise ValueError("non-finite LP data")
        if np.any(self.lower > self.upper) or np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise ValueError("empty variable bounds")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    duals: np.ndarray | None
    objective: float
    basis: tuple = ()
    iterations: int = 0
    backend: str = "simplex"
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status is LpStatus.OPTIMAL


def _to_equality_form(lp: LinearProgram):
    """Map a general LP to equality form; returns data plus a back-map."""
    m, n = lp.shape
    A = lp.A.toarray()
    lo, up = lp.lower, lp.upper
    cols = []      # list of (orig var, coefficient) per standard column
    shift = np.zeros(n)
    extra_rows = []
    for j in range(n):
        if np.isfinite(lo[j]):
            shift[j] = lo[j]
            cols.append((j, 1.0))
            if np.isfinite(up[j]):
                extra_rows.append((len(cols) - 1, up[j] - lo[j]))
        elif np.isfinite(up[j]):
            shift[j] = up[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nstd = len(cols)
    n_ineq = int(np.sum(lp.senses != EQ))
    mm = m + len(extra_rows)
    ntot = nstd + n_ineq + len(extra_rows)
    S = np.zeros((mm, ntot))
    cstd = np.zeros(ntot)
    for k, (j, s) in enumerate(cols):
        S[:m, k] = s * A[:, j]
        cstd[k] = s * lp.c[j]
    rhs = np.concatenate([lp.b - A @ shift, [u for _, u in extra_rows]])
    k = nstd
    for i in range(m):
        if lp.senses[i] == LE:
            S[i, k] = 1.0
            k += 1
        elif lp.senses[i] == GE:
            S[i, k] = -1.0
            k += 1
    for r, (col, _) in enumerate(extra_rows):
        S[m + r, col] = 1.0
        S[m + r, k] = 1.0
        k += 1
    const = float(lp.c @ shift)
    return S, rhs, cstd, cols, shift, const


def solve_lp(lp: LinearProgram, backend: str = "simplex", options: SimplexOptions | None = None,
             warm_basis=None) -> LpSolution:
    """Solve a general LP.

    ``duals[i]`` is the sensitivity of the optimal objective to ``b[i]`` (in
    the program's own sense).  ``backend='auto'`` picks the dense simplex for
    small programs and HiGHS otherwise.
    """
    m, n = lp.shape
    if backend == "auto":
        backend = "simplex" if (m + 2 * n) * (m + n) <= 3_000 else "highs"
    if backend == "highs":
        return _solve_highs(lp)
    if backend != "simplex":
        raise ValueError(f"unknown LP backend {backend!r}")
    S, rhs, cstd, cols, shift, const = _to_equality_form(lp)
    eq = EqualityFormLP(S, rhs, options)
    res = eq.solve(cstd, maximize=lp.maximize, basis=warm_basis)
    if res.status is not LpStatus.OPTIMAL:
        obj = np.nan if res.status is LpStatus.INFEASIBLE else (np.inf if lp.maximize else -np.inf)
        return LpSolution(res.status, None, None, obj, res.basis, res.iterations)
    x = shift.copy()
    for k, (j, s) in enumerate(cols):
        x[j] += s * res.x[k]
    duals = res.y[:m].copy()
    return LpSolution(LpStatus.OPTIMAL, x, duals, float(lp.c @ x), res.basis, res.iterations)


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    sign = -1.0 if lp.maximize else 1.0
    A = lp.A
    le = lp.senses == LE
    ge = lp.senses == GE
    eq = lp.senses == EQ
    A_ub = sp.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = lp.b[eq] if eq.any() else None
    bounds = np.column_stack([np.where(np.isfinite(lp.lower), lp.lower, -np.inf),
                              np.where(np.isfinite(lp.upper), lp.upper, np.inf)])
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in bounds]
    res = linprog(sign * lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs-ds")
    if res.status == 2:
        # HiGHS presolve may report "infeasible or unbounded" as infeasible.
        feas = linprog(np.zeros_like(lp.c), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                       bounds=bounds, method="highs-ds")
        if feas.status == 0:
            return LpSolution(LpStatus.UNBOUNDED, None, None, sign * -np.inf, backend="highs")
        return LpSolution(LpStatus.INFEASIBLE, None, None, np.nan, backend="highs")
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, None, None, sign * -np.inf, backend="highs")
    if res.status != 0:
        raise SimplexError(f"HiGHS failed: {res.message}")
    duals = np.zeros(lp.b.size)
    if A_ub is not None:
        mu = res.ineqlin.marginals * sign
        nle = int(le.sum())
        duals[le] = mu[:nle]
        duals[ge] = -mu[nle:]
    if A_eq is not None:
        duals[eq] = res.eqlin.marginals * sign
    x = np.asarray(res.x, dtype=float)
    return LpSolution(LpStatus.OPTIMAL, x, duals, float(lp.c @ x), backend="highs",
                      iterations=int(getattr(res, "nit", 0)))


def lp_to_text(lp: LinearProgram, decimals: int = 6) -> str:
    """Fixed-decimal dump in the CPLEX LP file style (debugging aid)."""
    names = lp.names or [f"x{j}" for j in range(lp.c.size)]
    fmt = f"{{:+.{decimals}f}}"
    out = io.StringIO()
    out.write("Maximize\n" if lp.maximize else "Minimize\n")
    out.write(" obj: " + " ".join(f"{fmt.format(v)} {names[j]}" for j, v in enumerate(lp.c) if v != 0) + "\n")
    out.write("Subject To\n")
    A = lp.A.tocsr()
    for i in range(lp.b.size):
        row = A.getrow(i)
        terms = " ".join(f"{fmt.format(v)} {names[j]}" for j, v in zip(row.indices, row.data))
        out.write(f" c{i}: {terms or '0 ' + names[0]} {_SENSE_NAMES[int(lp.senses[i])]} "
                  f"{fmt.format(lp.b[i])}\n")
    out.write("Bounds\n")
    for j, (lo, up) in enumerate(zip(lp.lower, lp.upper)):
        lo_s = "-inf" if not np.isfinite(lo) else fmt.format(lo)
        up_s = "+inf" if not np.isfinite(up) else fmt.format(up)
        out.write(f" {lo_s} <= {names[j]} <= {up_s}\n")
    out.write("End\n")
    return out.getvalue()
