"""Brute-force reference solvers used to validate the decomposition.

These never touch the cut machinery: the grid oracle assembles the full
extensive-form LP at fixed coupling values from ``predict`` alone.
"""

from __future__ import annotations

import itertools

import numpy as np

from .core import TwoStageInstance
from .lp import GE, LinearProgram, LpStatus, solve_lp
from .recourse import DualEvaluator
from .regression import EmptyNeighborhoodError, Regressor


def vertex_enumeration_min(c, A_ub, b_ub, tol=1e-9):
    """``min c^T x  s.t.  A_ub x <= b_ub, x >= 0`` by enumerating all bases.

    Returns ``(value, x)``; ``value`` is ``nan`` when no vertex is feasible.
    The caller must ensure boundedness (e.g. by including box rows).
    """
    A_ub = np.atleast_2d(np.asarray(A_ub, float))
    m, n = A_ub.shape
    G = np.vstack([A_ub, -np.eye(n)])
    h = np.concatenate([np.asarray(b_ub, float), np.zeros(n)])
    best, arg = np.nan, None
    for rows in itertools.combinations(range(m + n), n):
        S = G[list(rows)]
        if abs(np.linalg.det(S)) < 1e-12:
            continue
        x = np.linalg.solve(S, h[list(rows)])
        if np.all(G @ x <= h + tol * (1 + np.abs(h))):
            v = float(c @ x)
            if np.isnan(best) or v < best:
                best, arg = v, x
    return best, arg


def polyhedron_vertices(A_eq, b_eq, tol=1e-9):
    """Vertices of ``{x >= 0 : A_eq x = b_eq}`` for small, full-row-rank ``A_eq``."""
    A_eq = np.atleast_2d(np.asarray(A_eq, float))
    m, n = A_eq.shape
    r = np.linalg.matrix_rank(A_eq)
    verts = []
    for cols in itertools.combinations(range(n), r):
        B = A_eq[:, list(cols)]
        if np.linalg.matrix_rank(B) < r:
            continue
        xb, *_ = np.linalg.lstsq(B, b_eq, rcond=None)
        if np.linalg.norm(B @ xb - b_eq) > 1e-8 * (1 + np.linalg.norm(b_eq)):
            continue
        if np.any(xb < -tol):
            continue
        x = np.zeros(n)
        x[list(cols)] = np.maximum(xb, 0.0)
        if not any(np.allclose(x, v, atol=1e-9) for v in verts):
            verts.append(x)
    return verts


def permutation_transport(a, b, p=1, norm="l1"):
    """``W_p`` between uniform laws of equal size by enumerating all matchings.

    Extreme points of the transport polytope with uniform marginals are
    permutation matrices (Birkhoff), so the best matching is optimal.
    """
    a = np.asarray(a, float).reshape(len(a), -1)
    b = np.asarray(b, float).reshape(len(b), -1)
    if a.shape != b.shape:
        raise ValueError("matching needs equally many atoms of equal dimension")
    d = a[:, None, :] - b[None, :, :]
    C = (np.abs(d).sum(axis=2) if norm == "l1" else np.sqrt((d ** 2).sum(axis=2))) ** p
    m = len(a)
    best = min(C[np.arange(m), list(perm)].sum() for perm in itertools.permutations(range(m)))
    return (best / m) ** (1.0 / p)


def transport_lp_highs(a, wa, b, wb, p=1, norm="l1"):
    """Transport LP assembled independently and solved with HiGHS."""
    from scipy.optimize import linprog

    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[0] != len(wa):
        a = a.T
    if b.shape[0] != len(wb):
        b = b.T
    m1, m2 = len(wa), len(wb)
    C = np.empty((m1, m2))
    for i in range(m1):
        for j in range(m2):
            d = a[i] - b[j]
            C[i, j] = (np.abs(d).sum() if norm == "l1" else np.sqrt(d @ d)) ** p
    A_eq = np.zeros((m1 + m2, m1 * m2))
    for i in range(m1):
        A_eq[i, i * m2:(i + 1) * m2] = 1.0
    for j in range(m2):
        A_eq[m1 + j, j::m2] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([wa, wb]), bounds=(0, None), method="highs")
    return res.fun ** (1.0 / p)


class ExtensiveForm:
    """``V(z_c) = c_c z_c + min { rest of the reformulation }`` at fixed coupling ``z_c``.

    Variables ``x = [z_{-c} | lambda | phi | psi | w_1..w_n]`` (all free,
    bounds as rows) and rows ``A x >= b(z_c)``.  With ``include_lambda=False``
    the Lipschitz block is dropped (sample-average problem).
    """

    def __init__(self, instance: TwoStageInstance, residuals, xi, include_lambda=True):
        self.inst = instance
        self.eps = np.atleast_2d(np.asarray(residuals, float))
        self.xi = float(xi)
        self.include_lambda = include_lambda
        inst = instance
        c = inst.coupling_index
        self.c = c
        self.others = [i for i in range(inst.d_z) if i != c]
        n, dw, dy, M = self.eps.shape[0], inst.d_omega, inst.d_y, inst.M
        no = len(self.others)
        nl = (1 + 2 * dy * dw) if include_lambda else 0
        self.n_vars = no + nl + n * dw
        self.i_lam = no
        self.i_w = no + nl
        cost = np.zeros(self.n_vars)
        cost[:no] = inst.c_z[self.others]
        if include_lambda:
            cost[self.i_lam] = self.xi
        for k in range(n):
            cost[self.i_w + k * dw:self.i_w + (k + 1) * dw] = inst.q / n
        self.cost = cost
        self.matrix_depends_on_zc = any(np.any(inst.T.coeffs[i]) for i in self.others)

    def system(self, zc, F):
        """``(A, b)`` at coupling value ``zc`` with regression value ``F``."""
        inst = self.inst
        n, dw, dy, M = self.eps.shape[0], inst.d_omega, inst.d_y, inst.M
        no = len(self.others)
        rows, rhs = [], []

        def row():
            return np.zeros(self.n_vars)

        for t, i in enumerate(self.others):
            r = row()
            r[t] = 1.0
            rows.append(r)
            rhs.append(inst.z_lower[i])
            r = row()
            r[t] = -1.0
            rows.append(r)
            rhs.append(-inst.z_upper[i])
        Tc = inst.T.constant + zc * inst.T.coeffs[self.c]
        hc = inst.h.constant + zc * inst.h.coeffs[self.c]
        if self.include_lambda:
            r = row()
            r[self.i_lam] = 1.0
            rows.append(r)
            rhs.append(0.0)
            for s_idx, sign in enumerate((1.0, -1.0)):
                for m in range(dy):
                    off = self.i_lam + 1 + (s_idx * dy + m) * dw
                    r = row()
                    r[self.i_lam] = 1.0
                    r[off:off + dw] = -inst.q
                    rows.append(r)
                    rhs.append(0.0)
                    blk = np.zeros((M, self.n_vars))
                    blk[:, off:off + dw] = inst.W
                    for t, i in enumerate(self.others):
                        blk[:, t] = -sign * inst.T.coeffs[i][:, m]
                    rows.extend(blk)
                    rhs.extend(sign * Tc[:, m])
        for k in range(n):
            Y = F + self.eps[k]
            blk = np.zeros((M, self.n_vars))
            blk[:, self.i_w + k * dw:self.i_w + (k + 1) * dw] = inst.W
            for t, i in enumerate(self.others):
                blk[:, t] = -(inst.T.coeffs[i] @ Y + inst.h.coeffs[i])
            rows.extend(blk)
            rhs.extend(Tc @ Y + hc)
        return np.array(rows), np.array(rhs)

    def rhs_batch(self, zcs, Fs):
        """Right-hand sides for many ``(z_c, F)`` pairs; ``b`` is bilinear in ``(z_c, F)``."""
        if not hasattr(self, "_bil"):
            dy = self.inst.d_y
            E = np.eye(dy)
            b00 = self.system(0.0, np.zeros(dy))[1]
            b10 = self.system(1.0, np.zeros(dy))[1] - b00
            b01 = np.array([self.system(0.0, E[m])[1] - b00 for m in range(dy)])
            b11 = np.array([self.system(1.0, E[m])[1] - b00 - b10 for m in range(dy)]) - b01
            self._bil = (b00, b10, b01, b11)
        b00, b10, b01, b11 = self._bil
        zcs = np.asarray(zcs, float)[:, None]
        Fs = np.atleast_2d(Fs)
        return b00 + zcs * b10 + Fs @ b01 + zcs * (Fs @ b11)

    def value_lp(self, zc, F, backend="simplex"):
        A, b = self.system(zc, F)
        lp = LinearProgram(self.cost, A, np.full(b.size, GE), b,
                           np.full(self.n_vars, -np.inf), np.full(self.n_vars, np.inf))
        sol = solve_lp(lp, backend=backend)
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(f"extensive LP {sol.status} at z_c={zc}")
        return sol.objective + self.inst.c_z[self.c] * zc


def _predict_or_nan(model: Regressor, x, zcs):
    zcs = np.asarray(zcs, float)
    X = np.repeat(np.asarray(x, float)[None], zcs.size, axis=0)
    try:
        return model.predict_many(X, zcs[:, None])
    except EmptyNeighborhoodError:
        out = np.full((zcs.size, model.d_y), np.nan)
        for i, z in enumerate(zcs):
            try:
                out[i] = model.predict(x, [z])
            except EmptyNeighborhoodError:
                pass
        return out


class GridOracle:
    """Minimise ``V(z_c)`` on a dense grid plus local refinement around the best points."""

    def __init__(self, instance, model, x, xi, residuals, include_lambda=True):
        self.ext = ExtensiveForm(instance, residuals, xi, include_lambda)
        self.model = model
        self.x = np.asarray(x, float)
        self._ev = None

    def values(self, zcs):
        zcs = np.asarray(zcs, float)
        F = _predict_or_nan(self.model, self.x, zcs)
        ok = ~np.isnan(F).any(axis=1)
        out = np.full(zcs.size, np.inf)
        if not ok.any():
            return out
        ext = self.ext
        cc = ext.inst.c_z[ext.c]
        if ext.matrix_depends_on_zc:
            for i in np.flatnonzero(ok):
                out[i] = ext.value_lp(zcs[i], F[i])
            return out
        if self._ev is None:
            A, _ = ext.system(zcs[ok][0], F[ok][0])
            self._ev = DualEvaluator(A, ext.cost, cache_size=256)
        B = ext.rhs_batch(zcs[ok], F[ok])
        vals, _, _, _ = self._ev.evaluate_rhs(B)
        out[ok] = vals + cc * zcs[ok]
        return out

    def minimize(self, grid=10_000, extra_points=(), keep=20, rounds=4, sub=21):
        lo, hi = self.ext.inst.coupling_range
        pts = np.unique(np.concatenate([np.linspace(lo, hi, grid), np.asarray(extra_points, float)]))
        pts = pts[(pts >= lo) & (pts <= hi)]
        vals = self.values(pts)
        step = (hi - lo) / (grid - 1)
        all_p, all_v = [pts], [vals]
        cand = pts[np.argsort(vals)[:keep]]
        for _ in range(rounds):
            new = np.unique(np.concatenate([np.linspace(max(lo, g - step), min(hi, g + step), sub)
                                            for g in cand]))
            nv = self.values(new)
            all_p.append(new)
            all_v.append(nv)
            P, V = np.concatenate(all_p), np.concatenate(all_v)
            cand = P[np.argsort(V)[:keep]]
            step *= 2.0 / (sub - 1)
        P, V = np.concatenate(all_p), np.concatenate(all_v)
        i = int(np.argmin(V))
        return float(V[i]), float(P[i])


def golden_section(f, a, b, tol=1e-10, max_iter=200):
    """Minimiser of a unimodal ``f`` on ``[a, b]``."""
    g = (np.sqrt(5.0) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)
