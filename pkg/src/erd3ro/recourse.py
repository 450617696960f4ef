"""Second-stage value H(z, Y) in primal and dual form."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .core import InstanceError, TwoStageInstance
from .lp import GE, EqualityFormLP, LinearProgram, LpSolution, LpStatus, solve_lp


class AssumptionViolation(InstanceError):
    """Recourse infeasible (``kind='feasibility'``) or unbounded (``kind='boundedness'``)."""

    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def solve_recourse(instance: TwoStageInstance, z, Y) -> LpSolution:
    """Primal recourse LP; ``duals`` are the multipliers pi >= 0 of ``W w >= b``."""
    b = instance.rhs(z, Y)
    d = instance.d_omega
    lp = LinearProgram(instance.q, instance.W, np.full(instance.M, GE), b,
                       np.full(d, -np.inf), np.full(d, np.inf))
    sol = solve_lp(lp)
    if sol.status is LpStatus.INFEASIBLE:
        raise AssumptionViolation("feasibility", f"recourse infeasible at z={np.ravel(z).tolist()}")
    if sol.status is LpStatus.UNBOUNDED:
        raise AssumptionViolation("boundedness", f"recourse unbounded at z={np.ravel(z).tolist()}")
    return sol


@dataclass(frozen=True)
class SubproblemResult:
    value: float
    pi: np.ndarray
    omega: np.ndarray
    basis: tuple


class _CachedBasis:
    __slots__ = ("basis", "lu", "pi", "real", "hits")

    def __init__(self, eq: EqualityFormLP, basis, pi):
        self.basis = tuple(basis)
        self.lu = sla.lu_factor(eq.full[:, list(basis)], check_finite=False)
        self.pi = pi
        self.real = np.array([j for j in basis if j < eq.n], dtype=int)
        self.hits = 0


class DualEvaluator:
    """Batched solver of ``min q^T w  s.t.  W w >= b`` (``w`` free) over many ``b``.

    The dual feasible region ``{pi >= 0 : W^T pi = q}`` never changes; only
    the objective ``b`` does.  A basis found optimal for one right-hand side
    is tried on all others first: for basis ``B`` the primal point is
    ``w = W_B^{-1} b_B`` and optimality is exactly ``W w >= b``, so a whole
    batch is certified by one triangular solve.  Misses go to the
    warm-started simplex and feed the cache.
    """

    def __init__(self, W, q, cache_size: int = 64, tol: float = 1e-9):
        self.W = np.asarray(W, float)
        self.q = np.asarray(q, float)
        self.eq = EqualityFormLP(self.W.T, self.q)
        self._cache: OrderedDict[tuple, _CachedBasis] = OrderedDict()
        self.cache_size = cache_size
        self.tol = tol
        self.simplex_calls = 0
        self._check_dual_feasible()

    def _check_dual_feasible(self):
        res = self.eq.solve(np.zeros(self.eq.n))
        if res.status is not LpStatus.OPTIMAL:
            raise AssumptionViolation("boundedness", "dual recourse polyhedron is empty")

    def _try_basis(self, cb: _CachedBasis, B):
        """Primal points at basis ``cb`` for rows of ``B`` and an optimality mask."""
        m = self.eq.m
        cost_b = np.zeros((B.shape[0], m))
        pos = [i for i, j in enumerate(cb.basis) if j < self.eq.n]
        cost_b[:, pos] = -B[:, cb.real]
        # Minimisation of -b^T pi: y = B^{-T} c_B and w = -y.
        omega = -sla.lu_solve(cb.lu, cost_b.T, trans=1, check_finite=False).T * self.eq.flip
        slack = omega @ self.W.T - B
        scale = np.maximum(1.0, np.abs(B).max(axis=1))
        ok = slack.min(axis=1) >= -self.tol * scale
        return omega, ok

    def _solve_one(self, b, basis=None):
        self.simplex_calls += 1
        res = self.eq.solve(b, maximize=True, basis=basis)
        if res.status is LpStatus.UNBOUNDED:
            raise AssumptionViolation("feasibility", "dual subproblem unbounded: recourse infeasible")
        if res.status is not LpStatus.OPTIMAL:
            raise AssumptionViolation("boundedness", "dual subproblem infeasible")
        key = tuple(res.basis)
        cb = self._cache.get(key)
        if cb is None:
            cb = _CachedBasis(self.eq, key, res.x)
            self._cache[key] = cb
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return cb

    def evaluate_rhs(self, B):
        """Solve the dual subproblem for every row of ``B`` (shape (k, M))."""
        B = np.atleast_2d(np.asarray(B, dtype=float))
        k = B.shape[0]
        values = np.empty(k)
        pis = np.empty((k, self.eq.n))
        omegas = np.empty((k, self.W.shape[1]))
        bases = [None] * k
        todo = np.arange(k)
        for key in list(reversed(self._cache.keys())):
            if todo.size == 0:
                break
            cb = self._cache[key]
            omega, ok = self._try_basis(cb, B[todo])
            if ok.any():
                idx = todo[ok]
                pis[idx] = cb.pi
                omegas[idx] = omega[ok]
                for i in idx:
                    bases[i] = cb.basis
                cb.hits += int(ok.sum())
                self._cache.move_to_end(key)
                todo = todo[~ok]
        while todo.size:
            i = todo[0]
            cb = self._solve_one(B[i])
            omega, ok = self._try_basis(cb, B[todo])
            if not ok[0]:
                # Pricing tolerance is relative to |b|; polish with a tighter one.
                loose = self.eq.options
                self.eq.options = replace(loose, tol_opt=loose.tol_opt * 1e-3)
                try:
                    cb = self._solve_one(B[i], basis=cb.basis)
                finally:
                    self.eq.options = loose
                omega, ok = self._try_basis(cb, B[todo])
            if not ok[0]:
                # Numerical disagreement between the simplex and the check: accept the simplex basis.
                ok[0] = True
            idx = todo[ok]
            pis[idx] = cb.pi
            omegas[idx] = omega[ok]
            for j in idx:
                bases[j] = cb.basis
            todo = todo[~ok]
        values[:] = np.einsum("ij,ij->i", pis, B)
        return values, pis, omegas, bases


class RecourseEvaluator(DualEvaluator):
    """:class:`DualEvaluator` bound to an instance's ``(W, q)``."""

    def __init__(self, instance: TwoStageInstance, cache_size: int = 64, tol: float = 1e-9):
        self.instance = instance
        super().__init__(instance.W, instance.q, cache_size, tol)

    def evaluate(self, z, Ys):
        """Batch over outcomes ``Ys`` (k, d_y) at a fixed first-stage ``z``."""
        B = self.instance.rhs(z, np.atleast_2d(Ys))
        return self.evaluate_rhs(B)

    def values(self, z, Ys):
        return self.evaluate(z, Ys)[0]


def solve_sp(instance: TwoStageInstance, z, Y, evaluator: RecourseEvaluator | None = None) -> SubproblemResult:
    """``max pi^T (T(z) Y + h(z))`` over ``pi >= 0, W^T pi = q`` at a vertex."""
    ev = evaluator or RecourseEvaluator(instance)
    vals, pis, omegas, bases = ev.evaluate(z, np.asarray(Y, float)[None])
    return SubproblemResult(float(vals[0]), pis[0], omegas[0], bases[0])
