"""Global solution of the nonconvex master by branch-and-bound over the coupling coordinate.

Every cut is affine in all first-stage variables except ``z_c``, through
which it is piecewise quadratic.  The search partitions the coupling range
into nodes:

* group nodes span several embedding pieces; the regression value F is
  relaxed to its range over the group and products ``z_i F_j`` are replaced
  by McCormick envelopes;
* piece nodes lie inside one piece, where ``F = P + S z_c``; ``z_c^2`` and
  ``z_i z_c`` get secant/tangent and McCormick envelopes;
* on constant pieces (``S = 0``) the node LP is exact.

The node pool persists between calls: adding cuts only raises node bounds,
so an old bound stays valid and nodes are re-solved lazily when popped.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import GE, LinearProgram, LpStatus, solve_lp
from .reformulation import CutPool, ReformulationSkeleton, cut_coefficients

log = logging.getLogger(__name__)


class MasterError(RuntimeError):
    pass


@dataclass
class BnBNode:
    a: float
    b: float
    p_lo: int            # range of feasible-piece positions [p_lo, p_hi)
    p_hi: int
    bound: float = -np.inf
    version: int = -1    # number of cuts when the bound was computed
    depth: int = 0
    hint: float | None = None
    exact: bool = False
    node_id: int = 0

    @property
    def single(self):
        return self.p_hi - self.p_lo == 1


@dataclass
class MasterSolution:
    v: np.ndarray
    value: float
    bound: float
    z: np.ndarray
    zc: float
    piece: int
    F: np.ndarray
    nodes: int
    lp_solves: int


def _interval_product(lo1, hi1, lo2, hi2):
    c = np.stack([lo1 * lo2, lo1 * hi2, hi1 * lo2, hi1 * hi2])
    return c.min(axis=0), c.max(axis=0)


def _scaled_lower(coef, lo, hi):
    return np.where(coef >= 0, coef * lo, coef * hi)


def interval_cut_lower_bound(a0, A, b0, b, z_lo, z_hi, F_lo, F_hi):
    """Lower bound of ``a0.F + sum_i z_i A_i.F + b0 + b.z`` over a box."""
    val = b0 + _scaled_lower(a0, F_lo, F_hi).sum() + _scaled_lower(b, z_lo, z_hi).sum()
    plo, phi = _interval_product(z_lo[:, None], z_hi[:, None], F_lo[None, :], F_hi[None, :])
    return float(val + _scaled_lower(A, plo, phi).sum())


class MasterProblem:
    """Master LP family over a fixed skeleton and a growing cut pool."""

    def __init__(self, skel: ReformulationSkeleton, pool: CutPool, theta_min, backend="auto",
                 eps_master=1e-7, tangents=5, trace=False):
        self.skel = skel
        self.pool = pool
        self.theta_min = np.asarray(theta_min, float)
        self.backend = backend
        self.eps_master = float(eps_master)
        self.tangents = int(tangents)
        inst = skel.instance
        self.c = skel.coupling
        self.z_lo = inst.z_lower.astype(float).copy()
        self.z_hi = inst.z_upper.astype(float).copy()
        emb = skel.embedding
        lo, hi = emb.lo, emb.hi
        self.range = hi - lo
        self.delta_min = 1e-6 * self.range if self.range > 0 else 0.0
        self.t_active = [int(i) for i in skel.t_active()]
        self.bil_idx = [i for i in self.t_active if i != self.c]
        # Feasible pieces with their (slightly shrunk) closed intervals.
        bp = emb.breakpoints
        shrink = 1e-9 * self.range
        self.pieces = []
        for p in np.flatnonzero(emb.feasible):
            a, b = float(bp[p]), float(bp[p + 1])
            a2 = a + shrink if p > 0 else a
            b2 = b - shrink if p < emb.n_pieces - 1 else b
            if b2 <= a2:
                a2 = b2 = 0.5 * (a + b)
            self.pieces.append((int(p), a2, b2))
        if not self.pieces:
            raise MasterError("every piece of the regression embedding is infeasible")
        self._base_lp = None
        self.lp_solves = 0
        self.nodes_created = 0
        self._heap = []
        self._ids = itertools.count()
        self._set_aside = []
        self.trace_rows = [] if trace else None
        self.last_zc = None
        root = self._make_node(0, len(self.pieces), 0)
        self._push(root)

    # -- node helpers ------------------------------------------------------
    def _make_node(self, p_lo, p_hi, depth, a=None, b=None):
        a = self.pieces[p_lo][1] if a is None else a
        b = self.pieces[p_hi - 1][2] if b is None else b
        self.nodes_created += 1
        return BnBNode(a, b, p_lo, p_hi, depth=depth, node_id=next(self._ids))

    def _push(self, node):
        heapq.heappush(self._heap, (node.bound, node.node_id, node))

    def piece_slope(self, pos):
        p = self.pieces[pos][0]
        return self.skel.embedding.intercepts[p], self.skel.embedding.slopes[p]

    def _F_range(self, p_lo, p_hi):
        emb = self.skel.embedding
        vals = []
        for pos in range(p_lo, p_hi):
            p, a, b = self.pieces[pos]
            vals.append(emb.intercepts[p] + emb.slopes[p] * a)
            vals.append(emb.intercepts[p] + emb.slopes[p] * b)
        vals = np.array(vals)
        return vals.min(axis=0), vals.max(axis=0)

    def F_range(self):
        return self._F_range(0, len(self.pieces))

    def locate(self, zc):
        """Nearest feasible point to ``zc`` and its piece position."""
        best = None
        for pos, (_, a, b) in enumerate(self.pieces):
            z = min(max(zc, a), b)
            d = abs(z - zc)
            if best is None or d < best[0]:
                best = (d, z, pos)
                if d == 0:
                    break
        return best[1], best[2]

    # -- LP assembly ---------------------------------------------------------
    def _bounds(self, a, b, n_aux_lo, n_aux_hi):
        sk = self.skel
        lo = np.full(sk.n_vars, -np.inf)
        hi = np.full(sk.n_vars, np.inf)
        lo[: sk.d_z] = self.z_lo
        hi[: sk.d_z] = self.z_hi
        lo[self.c], hi[self.c] = a, b
        lo[sk.i_lambda] = 0.0
        lo[sk.i_theta:] = self.theta_min
        return np.concatenate([lo, n_aux_lo]), np.concatenate([hi, n_aux_hi])

    def _assemble(self, blocks, n_aux, lo, hi):
        """``blocks``: list of (rows, cols, vals, rhs) in GE form over [fixed | aux]."""
        sk = self.skel
        nv = sk.n_vars + n_aux
        G = sk.G
        mats = [sp.hstack([G, sp.csr_matrix((G.shape[0], n_aux))]).tocsr()] if n_aux else [G]
        rhs = [sk.g]
        for rows, cols, vals, r in blocks:
            mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(r), nv)))
            rhs.append(r)
        A = sp.vstack(mats).tocsr()
        b = np.concatenate(rhs)
        c = np.concatenate([sk.objective(), np.zeros(n_aux)])
        return LinearProgram(c, A, np.full(b.size, GE), b, lo, hi)

    def _cut_rows_piece(self, P, S, n_aux_map):
        """Cut rows on a piece; ``n_aux_map`` maps 's' and bilinear coords to aux columns."""
        sk = self.skel
        K = len(self.pool)
        if K == 0:
            return None
        const, lin, bil, quad = self.pool.on_piece(P, S, self.c)
        th = self.pool.arrays()[4]
        dz = sk.d_z
        rows = [np.arange(K)]
        cols = [sk.i_theta + th]
        vals = [np.ones(K)]
        for i in range(dz):
            rows.append(np.arange(K))
            cols.append(np.full(K, i))
            vals.append(-lin[:, i])
        if "s" in n_aux_map:
            rows.append(np.arange(K))
            cols.append(np.full(K, n_aux_map["s"]))
            vals.append(-quad)
        for i in self.bil_idx:
            if i in n_aux_map:
                rows.append(np.arange(K))
                cols.append(np.full(K, n_aux_map[i]))
                vals.append(-bil[:, i])
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        keep = v != 0
        return r[keep], c[keep], v[keep], const

    def _mccormick(self, xi, yi, wi, xl, xu, yl, yu, row0):
        """Rows for ``w = x*y`` in GE form: four envelope inequalities."""
        rows, cols, vals, rhs = [], [], [], []
        env = [  # w - yl x - xl y >= -xl yl ; w - yu x - xu y >= -xu yu
            (1.0, -yl, -xl, -xl * yl),
            (1.0, -yu, -xu, -xu * yu),
            (-1.0, yu, xl, xl * yu),     # w <= yu x + xl y - xl yu
            (-1.0, yl, xu, xu * yl),     # w <= yl x + xu y - xu yl
        ]
        for k, (cw, cx, cy, r) in enumerate(env):
            rr = row0 + k
            rows += [rr, rr, rr]
            cols += [wi, xi, yi]
            vals += [cw, cx, cy]
            rhs.append(r)
        return rows, cols, vals, rhs

    def build_piece_lp(self, pos, a, b):
        """LP on ``[a, b]`` inside feasible piece ``pos`` (exact when the piece is constant)."""
        sk = self.skel
        P, S = self.piece_slope(pos)
        curved = bool(np.any(S != 0)) and b > a
        n_aux, aux = 0, {}
        aux_lo, aux_hi = [], []
        if curved:
            _, _, bil, quad = self.pool.on_piece(P, S, self.c) if len(self.pool) else (None, None, None, None)
            need_s = quad is not None and np.any(quad != 0)
            if need_s:
                aux["s"] = sk.n_vars + n_aux
                n_aux += 1
                aux_lo.append(min(a * a, b * b) if a * b > 0 else 0.0)
                aux_hi.append(max(a * a, b * b))
            for i in self.bil_idx:
                if bil is not None and np.any(bil[:, i] != 0):
                    aux[i] = sk.n_vars + n_aux
                    n_aux += 1
                    plo, phi = _interval_product(np.array([self.z_lo[i]]), np.array([self.z_hi[i]]),
                                                 np.array([a]), np.array([b]))
                    aux_lo.append(plo[0])
                    aux_hi.append(phi[0])
        lo, hi = self._bounds(a, b, np.array(aux_lo), np.array(aux_hi))
        blocks = []
        if not curved:
            # Constant piece, or a sloped piece collapsed to a point.
            P, S = P + S * a, np.zeros_like(S)
        cr = self._cut_rows_piece(P, S, aux)
        if cr is not None:
            blocks.append(cr)
        if curved and "s" in aux:
            si = aux["s"]
            rows, cols, vals, rhs = [], [], [], []
            pts = np.linspace(a, b, max(self.tangents, 2))
            for k, t in enumerate(pts):
                rows += [k, k]
                cols += [si, self.c]
                vals += [1.0, -2.0 * t]
                rhs.append(-t * t)
            k = len(pts)
            rows += [k, k]
            cols += [si, self.c]
            vals += [-1.0, a + b]
            rhs.append(a * b)
            blocks.append((rows, cols, vals, np.array(rhs)))
        if curved:
            for i in self.bil_idx:
                if i in aux:
                    rows, cols, vals, rhs = self._mccormick(i, self.c, aux[i], self.z_lo[i], self.z_hi[i], a, b, 0)
                    blocks.append((rows, cols, vals, np.array(rhs)))
        return self._assemble(blocks, n_aux, lo, hi), not curved

    def build_piece_point_lp(self, pos, zc):
        """LP with ``z_c`` fixed: the cut RHS is affine in the remaining variables."""
        P, S = self.piece_slope(pos)
        F = P + S * zc
        sk = self.skel
        lo, hi = self._bounds(zc, zc, np.zeros(0), np.zeros(0))
        blocks = []
        cr = self._cut_rows_piece(F, np.zeros_like(F), {})
        if cr is not None:
            blocks.append(cr)
        return self._assemble(blocks, 0, lo, hi), F

    def build_group_lp(self, node):
        sk = self.skel
        Flo, Fhi = self._F_range(node.p_lo, node.p_hi)
        dy = sk.d_y
        n_aux = dy + len(self.t_active) * dy
        iF = sk.n_vars
        w_index = {}
        aux_lo = list(Flo)
        aux_hi = list(Fhi)
        zl = self.z_lo.copy()
        zh = self.z_hi.copy()
        zl[self.c], zh[self.c] = node.a, node.b
        for t, i in enumerate(self.t_active):
            for j in range(dy):
                w_index[(i, j)] = iF + dy + t * dy + j
                plo, phi = _interval_product(np.array([zl[i]]), np.array([zh[i]]),
                                             np.array([Flo[j]]), np.array([Fhi[j]]))
                aux_lo.append(plo[0])
                aux_hi.append(phi[0])
        lo, hi = self._bounds(node.a, node.b, np.array(aux_lo), np.array(aux_hi))
        blocks = []
        K = len(self.pool)
        if K:
            a0, A, b0, b, th = self.pool.arrays()
            rows = [np.arange(K)]
            cols = [sk.i_theta + th]
            vals = [np.ones(K)]
            for j in range(dy):
                rows.append(np.arange(K))
                cols.append(np.full(K, iF + j))
                vals.append(-a0[:, j])
            for i in range(sk.d_z):
                rows.append(np.arange(K))
                cols.append(np.full(K, i))
                vals.append(-b[:, i])
            for i in self.t_active:
                for j in range(dy):
                    rows.append(np.arange(K))
                    cols.append(np.full(K, w_index[(i, j)]))
                    vals.append(-A[:, i, j])
            r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
            keep = v != 0
            blocks.append((r[keep], c[keep], v[keep], b0))
        for (i, j), wi in w_index.items():
            rows, cols, vals, rhs = self._mccormick(i, iF + j, wi, zl[i], zh[i], Flo[j], Fhi[j], 0)
            blocks.append((rows, cols, vals, np.array(rhs)))
        return self._assemble(blocks, n_aux, lo, hi)

    def _solve(self, lp):
        self.lp_solves += 1
        sol = solve_lp(lp, backend=self.backend)
        if sol.status is LpStatus.INFEASIBLE:
            return None
        if sol.status is LpStatus.UNBOUNDED:
            raise MasterError("master LP unbounded; Theta lower bounds missing")
        return sol

    # -- public evaluations ----------------------------------------------------
    def fixed_coupling_lp(self, zc):
        """Exact master restricted to ``z_c = zc`` (snapped to the nearest feasible point)."""
        zc, pos = self.locate(float(zc))
        lp, F = self.build_piece_point_lp(pos, zc)
        sol = self._solve(lp)
        if sol is None:
            raise MasterError(f"fixed-coupling LP infeasible at z_c={zc}")
        return sol, zc, pos, F

    def node_relaxation(self, node):
        """Lower bound on the master restricted to ``node`` and the relaxation point."""
        if node.single:
            lp, exact = self.build_piece_lp(node.p_lo, node.a, node.b)
        else:
            lp, exact = self.build_group_lp(node), False
        sol = self._solve(lp)
        if sol is None:
            return np.inf, None, exact
        return sol.objective, sol, exact

    def theta_lower_bounds(self, evaluator):
        return theta_lower_bounds(self.skel, evaluator, self)

    # -- search -------------------------------------------------------------------
    def solve(self, hint=None) -> MasterSolution:
        ncuts = len(self.pool)
        inc = None   # (value, sol, zc, pos, F)

        def offer(zc):
            nonlocal inc
            sol, zc2, pos, F = self.fixed_coupling_lp(zc)
            if inc is None or sol.objective < inc[0]:
                inc = (sol.objective, sol, zc2, pos, F)

        for zc0 in (hint, self.last_zc):
            if zc0 is not None:
                offer(zc0)
        if self._set_aside:
            for node in self._set_aside:
                self._push(node)
            self._set_aside = []
        while self._heap:
            bound, _, node = self._heap[0]
            tol = self.eps_master * max(1.0, abs(inc[0])) if inc else 0.0
            if inc is not None and bound >= inc[0] - tol:
                break
            heapq.heappop(self._heap)
            if node.version < ncuts or node.version < 0:
                val, sol, exact = self.node_relaxation(node)
                node.version = ncuts
                node.exact = exact
                if sol is None:
                    self._trace(node, np.inf, inc, "infeasible")
                    continue   # empty node: drop from the partition
                node.bound = max(node.bound, val)
                node.hint = float(sol.x[self.c])
                offer(node.hint)
                self._trace(node, node.bound, inc, "bound")
                self._push(node)
                continue
            width = node.b - node.a
            if node.exact or (node.single and width <= self.delta_min):
                self._set_aside.append(node)
                self._trace(node, node.bound, inc, "leaf")
                continue
            for child in self._branch(node):
                child.bound = node.bound
                self._push(child)
            self._trace(node, node.bound, inc, "branch")
        if inc is None:
            raise MasterError("no feasible master point found")
        bounds = [n.bound for n in self._set_aside] + [self._heap[0][0]] if self._heap else \
            [n.bound for n in self._set_aside]
        best_bound = min([inc[0]] + bounds)
        value, sol, zc, pos, F = inc
        self.last_zc = zc
        v = sol.x[: self.skel.n_vars]
        return MasterSolution(v, value, best_bound, v[: self.skel.d_z].copy(), zc,
                              self.pieces[pos][0], F, self.nodes_created, self.lp_solves)

    def _branch(self, node):
        if not node.single:
            mid = (node.p_lo + node.p_hi) // 2
            return [self._make_node(node.p_lo, mid, node.depth + 1),
                    self._make_node(mid, node.p_hi, node.depth + 1)]
        a, b = node.a, node.b
        t = node.hint
        if t is None or not (a + 0.1 * (b - a) <= t <= b - 0.1 * (b - a)):
            t = 0.5 * (a + b)
        return [self._make_node(node.p_lo, node.p_hi, node.depth + 1, a, t),
                self._make_node(node.p_lo, node.p_hi, node.depth + 1, t, b)]

    def _trace(self, node, bound, inc, decision):
        if self.trace_rows is not None:
            self.trace_rows.append((node.node_id, node.a, node.b, bound,
                                    np.nan if inc is None else inc[0], decision))

    def trace_csv_rows(self):
        head = [("node_id", "interval_lo", "interval_hi", "bound", "incumbent", "decision")]
        return head + [tuple(repr(float(v)) if isinstance(v, float) else v for v in r)
                       for r in (self.trace_rows or [])]


def theta_lower_bounds(skel: ReformulationSkeleton, evaluator, mp: MasterProblem | None = None,
                       margin=1e-6):
    """Valid ``Theta_k`` floors from one dual vertex per scenario.

    For any dual-feasible ``pi``, ``H_k(z) >= r_pi(z)`` and interval
    arithmetic bounds ``r_pi`` from below over the box times the range of
    the regression values; the result is therefore a valid floor.
    """
    inst = skel.instance
    mp = mp or MasterProblem(skel, CutPool(inst.d_z, inst.d_y), np.zeros(skel.n_theta))
    z_mid = 0.5 * (inst.z_lower + inst.z_upper)
    zc, pos = mp.locate(z_mid[skel.coupling])
    z_mid[skel.coupling] = zc
    P, S = mp.piece_slope(pos)
    F = P + S * zc
    _, pis, _, _ = evaluator.evaluate(z_mid, F + skel.residuals)
    Flo, Fhi = mp.F_range()
    lows = []
    coeffs = [cut_coefficients(inst, pis[k], skel.residuals[k]) for k in range(skel.n_scen)]
    if skel.mode == "single":
        coeffs = [tuple(np.mean([c[j] for c in coeffs], axis=0) for j in range(4))]
    for a0, A, b0, b in coeffs:
        lb = interval_cut_lower_bound(a0, A, b0, b, inst.z_lower, inst.z_upper, Flo, Fhi)
        lows.append(lb - margin * (1.0 + abs(lb)))
    return np.array(lows)
