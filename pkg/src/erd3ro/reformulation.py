"""Static part of the dual reformulation and the algebra of nonconvex cuts.

A cut built from a dual vertex ``pi`` and residual ``eps`` bounds a
scenario variable Theta from below by

    r(z) = pi^T (T(z) (F(z_c) + eps) + h(z))
         = a0 . F + sum_i z_i (A_i . F) + b0 + sum_i b_i z_i

with ``a0 = T0^T pi``, ``A_i = T_i^T pi``, ``b0 = pi^T h0 + a0 . eps`` and
``b_i = pi^T h_i + A_i . eps``.  On an embedding piece ``F = P + S z_c`` this
is quadratic in ``z_c`` and bilinear in ``(z_i, z_c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import TwoStageInstance
from .regression import PiecewiseAffineEmbedding, Regressor, ResidualSet


class UnsupportedAmbiguityError(ValueError):
    pass


@dataclass(eq=False)
class ReformulationSkeleton:
    """Variables ``[z | lambda | phi_1..phi_dy | psi_1..psi_dy | Theta]`` and rows 7b-7d.

    ``lambda_rows`` holds the dual-norm block as ``G v >= g`` (sparse), with
    ``v`` the fixed variable vector.
    """

    instance: TwoStageInstance
    embedding: PiecewiseAffineEmbedding
    residuals: np.ndarray
    xi: float
    mode: str
    G: sp.csr_matrix
    g: np.ndarray
    x: np.ndarray | None = None

    @property
    def n_scen(self):
        return self.residuals.shape[0]

    @property
    def n_theta(self):
        return self.n_scen if self.mode == "multi" else 1

    @property
    def d_z(self):
        return self.instance.d_z

    @property
    def d_y(self):
        return self.instance.d_y

    @property
    def d_omega(self):
        return self.instance.d_omega

    @property
    def i_lambda(self):
        return self.d_z

    @property
    def i_phi(self):
        return self.d_z + 1

    @property
    def i_psi(self):
        return self.i_phi + self.d_y * self.d_omega

    @property
    def i_theta(self):
        return self.i_psi + self.d_y * self.d_omega

    @property
    def n_vars(self):
        return self.i_theta + self.n_theta

    @property
    def coupling(self):
        return self.instance.coupling_index

    def objective(self):
        c = np.zeros(self.n_vars)
        c[: self.d_z] = self.instance.c_z
        c[self.i_lambda] = self.xi
        c[self.i_theta:] = 1.0 / self.n_theta
        return c

    def t_active(self):
        """First-stage coordinates ``i`` whose ``T_i`` is nonzero."""
        return np.flatnonzero(np.abs(self.instance.T.coeffs).reshape(self.d_z, -1).max(axis=1) > 0)

    def count_summary(self):
        return {"phi_blocks": self.d_y, "psi_blocks": self.d_y, "block_length": self.d_omega,
                "norm_rows": 2 * self.d_y, "lipschitz_rows": 2 * self.d_y * self.instance.M}

    def split(self, v):
        v = np.asarray(v, float)
        dy, dw = self.d_y, self.d_omega
        return {
            "z": v[: self.d_z],
            "lambda": float(v[self.i_lambda]),
            "phi": v[self.i_phi:self.i_psi].reshape(dy, dw),
            "psi": v[self.i_psi:self.i_theta].reshape(dy, dw),
            "theta": v[self.i_theta:self.n_vars],
        }


def _lambda_block(inst: TwoStageInstance, n_vars, i_lambda, i_phi, i_psi):
    """Rows ``lambda - q^T phi_m >= 0``, ``W phi_m - T(z) e_m >= 0`` and the psi mirror."""
    M, dw, dy, dz = inst.M, inst.d_omega, inst.d_y, inst.d_z
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    Wc = sp.coo_matrix(inst.W)
    for sign, base in ((1.0, i_phi), (-1.0, i_psi)):
        for m in range(dy):
            off = base + m * dw
            # lambda - q^T v_m >= 0
            rows += [r] * (dw + 1)
            cols += [i_lambda] + list(range(off, off + dw))
            vals += [1.0] + list(-inst.q)
            rhs.append(0.0)
            r += 1
            # W v_m - sign * (T0 e_m + sum_i z_i T_i e_m) >= 0
            rows += list(r + Wc.row)
            cols += list(off + Wc.col)
            vals += list(Wc.data)
            for i in range(dz):
                col = inst.T.coeffs[i][:, m]
                nz = np.flatnonzero(col)
                rows += list(r + nz)
                cols += [i] * nz.size
                vals += list(-sign * col[nz])
            rhs += list(sign * inst.T.constant[:, m])
            r += M
    G = sp.csr_matrix((vals, (rows, cols)), shape=(r, n_vars))
    return G, np.asarray(rhs, float)


def build_reformulation(instance: TwoStageInstance, model: Regressor, x, xi: float,
                        residuals, mode: str = "multi", p: int = 1, norm: str = "l1",
                        embedding: PiecewiseAffineEmbedding | None = None) -> ReformulationSkeleton:
    if p != 1 or norm != "l1":
        raise UnsupportedAmbiguityError("the solver supports only the 1-Wasserstein ball with l1 ground norm")
    if mode not in ("multi", "single"):
        raise ValueError("mode must be 'multi' or 'single'")
    if not (np.isfinite(xi) and xi >= 0):
        raise ValueError("radius must be finite and nonnegative")
    eps = residuals.residuals if isinstance(residuals, ResidualSet) else np.atleast_2d(np.asarray(residuals, float))
    if eps.shape[1] != instance.d_y:
        raise ValueError("residual dimension does not match d_y")
    if embedding is None:
        if model.decision_dependent and model.d_z != 1:
            raise ValueError("only one decision coordinate may enter the regression model")
        embedding = model.embed(x, instance.coupling_range, coupling=0)
    if embedding.d_y != instance.d_y:
        raise ValueError("regression output dimension does not match d_y")
    n_theta = eps.shape[0] if mode == "multi" else 1
    dz, dy, dw = instance.d_z, instance.d_y, instance.d_omega
    i_lambda, i_phi = dz, dz + 1
    i_psi = i_phi + dy * dw
    n_vars = i_psi + dy * dw + n_theta
    G, g = _lambda_block(instance, n_vars, i_lambda, i_phi, i_psi)
    return ReformulationSkeleton(instance, embedding, eps, float(xi), mode, G, g,
                                 None if x is None else np.asarray(x, float))


@dataclass(eq=False)
class CutPool:
    """Cuts in coefficient form; ``theta[k]`` is the Theta index bounded by cut ``k``."""

    d_z: int
    d_y: int
    a0: list = field(default_factory=list)
    A: list = field(default_factory=list)
    b0: list = field(default_factory=list)
    b: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    iteration: list = field(default_factory=list)
    meta: list = field(default_factory=list)
    _cache: tuple | None = None

    def __len__(self):
        return len(self.b0)

    def add(self, a0, A, b0, b, theta, iteration, meta=None):
        self.a0.append(np.asarray(a0, float))
        self.A.append(np.asarray(A, float))
        self.b0.append(float(b0))
        self.b.append(np.asarray(b, float))
        self.theta.append(int(theta))
        self.iteration.append(int(iteration))
        self.meta.append(meta)
        self._cache = None

    def arrays(self):
        if self._cache is None or len(self._cache[0]) != len(self):
            if len(self):
                self._cache = (np.array(self.a0), np.array(self.A), np.array(self.b0),
                               np.array(self.b), np.array(self.theta, dtype=int))
            else:
                self._cache = (np.zeros((0, self.d_y)), np.zeros((0, self.d_z, self.d_y)), np.zeros(0),
                               np.zeros((0, self.d_z)), np.zeros(0, dtype=int))
        return self._cache

    def evaluate(self, z, F, idx=None):
        """Cut right-hand sides at first-stage ``z`` with regression value ``F``."""
        a0, A, b0, b, _ = self.arrays()
        if idx is not None:
            a0, A, b0, b = a0[idx], A[idx], b0[idx], b[idx]
        z = np.asarray(z, float)
        F = np.asarray(F, float)
        return a0 @ F + np.einsum("i,kij,j->k", z, A, F) + b0 + b @ z

    def on_piece(self, P, S, c):
        """Coefficients of r on a piece ``F = P + S z_c``.

        Returns ``(const, lin, bil, quad)`` with ``r = const + lin . z +
        sum_{i != c} bil_i z_i z_c + quad z_c^2``.
        """
        a0, A, b0, b, _ = self.arrays()
        AP = A @ P                                # (K, d_z)
        AS = A @ S
        const = a0 @ P + b0
        lin = AP + b
        lin[:, c] += a0 @ S
        quad = AS[:, c].copy()
        bil = AS
        bil[:, c] = 0.0
        return const, lin, bil, quad


def cut_coefficients(instance: TwoStageInstance, pi, eps):
    """``(a0, A, b0, b)`` of the cut from dual vertex ``pi`` and residual ``eps``."""
    pi = np.asarray(pi, float)
    eps = np.asarray(eps, float)
    a0 = instance.T.constant.T @ pi
    A = np.einsum("imy,m->iy", instance.T.coeffs, pi)
    b0 = float(pi @ instance.h.constant + a0 @ eps)
    b = instance.h.coeffs @ pi + A @ eps
    return a0, A, b0, b
