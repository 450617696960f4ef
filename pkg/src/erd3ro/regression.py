"""Regression models f(x, z) and their piecewise-affine slices in the coupling decision."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset


class RegressionError(ValueError):
    pass


class RankDeficientError(RegressionError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; dependent columns: {columns}")
        self.columns = columns


class EmptyNeighborhoodError(RegressionError):
    """No training point lies inside the kernel ball around the query."""


class TrainingDivergedError(RegressionError):
    pass


@dataclass(frozen=True, eq=False)
class PiecewiseAffineEmbedding:
    """``f(z_c) = intercepts[p] + slopes[p] * z_c`` on ``[breakpoints[p], breakpoints[p+1]]``.

    ``feasible[p]`` is False where the model is undefined (empty kernel
    neighbourhood).  ``point_values`` optionally overrides the value exactly
    at a breakpoint (kernel balls are closed, so a boundary point belongs to
    the neighbourhood on both sides).
    """

    breakpoints: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray
    feasible: np.ndarray
    point_values: np.ndarray | None = None

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, float)
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing with at least two entries")
        if self.intercepts.shape[0] != bp.size - 1 or self.slopes.shape != self.intercepts.shape:
            raise ValueError("one affine piece per interval is required")

    @property
    def n_pieces(self):
        return self.breakpoints.size - 1

    @property
    def d_y(self):
        return self.intercepts.shape[1]

    @property
    def lo(self):
        return float(self.breakpoints[0])

    @property
    def hi(self):
        return float(self.breakpoints[-1])

    def piece_index(self, zc):
        """Index of the piece containing ``zc`` (interior points are unambiguous)."""
        p = int(np.searchsorted(self.breakpoints, zc, side="right") - 1)
        return min(max(p, 0), self.n_pieces - 1)

    def piece_value(self, p, zc):
        return self.intercepts[p] + self.slopes[p] * zc

    def evaluate(self, zc):
        zc = float(zc)
        if self.point_values is not None:
            hit = np.flatnonzero(self.breakpoints == zc)
            if hit.size:
                v = self.point_values[hit[0]]
                if np.any(np.isnan(v)):
                    raise EmptyNeighborhoodError(f"empty neighbourhood at z_c={zc}")
                return v.copy()
        p = self.piece_index(zc)
        if not self.feasible[p]:
            raise EmptyNeighborhoodError(f"z_c={zc} lies in an undefined piece")
        return self.piece_value(p, zc)

    def is_affine(self):
        return self.n_pieces == 1

    def is_piecewise_constant(self):
        return not np.any(self.slopes[self.feasible])


def _single_piece(lo, hi, a, b):
    return PiecewiseAffineEmbedding(np.array([lo, hi], float), np.atleast_2d(a).astype(float),
                                    np.atleast_2d(b).astype(float), np.array([True]))


class Regressor:
    """Common interface: ``predict`` / ``predict_many`` / ``embed``.

    ``decision_dependent=False`` means the model was fit without z columns
    and ignores any z passed in.
    """

    kind = "base"

    def __init__(self, d_x, d_z, d_y, decision_dependent=True):
        self.d_x, self.d_z, self.d_y = int(d_x), int(d_z), int(d_y)
        self.decision_dependent = bool(decision_dependent)

    def _inputs(self, X, Z):
        X = np.atleast_2d(np.asarray(X, float))
        Z = np.asarray(Z, float)
        Z = Z.reshape(X.shape[0], -1) if Z.size else np.zeros((X.shape[0], 0))
        if X.shape[1] != self.d_x:
            raise ValueError(f"x has dimension {X.shape[1]}, model expects {self.d_x}")
        if self.decision_dependent:
            if Z.shape[1] != self.d_z:
                raise ValueError(f"z has dimension {Z.shape[1]}, model expects {self.d_z}")
            return np.hstack([X, Z])
        return X

    def predict(self, x, z):
        return self.predict_many(np.asarray(x, float)[None], np.asarray(z, float).reshape(1, -1))[0]

    def predict_many(self, X, Z):
        raise NotImplementedError

    def embed(self, x, z_range, coupling=0, z_other=None) -> PiecewiseAffineEmbedding:
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    def _slice_base(self, x, coupling, z_other):
        """Input vector at ``z_c = 0`` and the unit direction of ``z_c``."""
        x = np.asarray(x, float).reshape(-1)
        if not self.decision_dependent:
            return x, np.zeros_like(x)
        z0 = np.zeros(self.d_z) if z_other is None else np.asarray(z_other, float).reshape(-1).copy()
        z0[coupling] = 0.0
        base = np.concatenate([x, z0])
        e = np.zeros_like(base)
        e[self.d_x + coupling] = 1.0
        return base, e


def _design(data: Dataset, decision_dependent):
    cols = [data.X] + ([data.Z] if decision_dependent else [])
    names = [f"x_{i}" for i in range(data.d_x)] + ([f"z_{i}" for i in range(data.d_z)] if decision_dependent else [])
    return np.hstack(cols + [np.ones((data.n, 1))]), names + ["intercept"]


class OLSModel(Regressor):
    kind = "ols"

    def __init__(self, coef, intercept, d_x, d_z, decision_dependent=True):
        coef = np.atleast_2d(np.asarray(coef, float))
        super().__init__(d_x, d_z, coef.shape[0], decision_dependent)
        self.coef = coef                               # (d_y, d_x [+ d_z])
        self.intercept = np.asarray(intercept, float).reshape(-1)

    @property
    def A(self):
        return self.coef[:, : self.d_x]

    @property
    def B(self):
        return self.coef[:, self.d_x:] if self.decision_dependent else np.zeros((self.d_y, self.d_z))

    def predict_many(self, X, Z):
        U = self._inputs(X, Z)
        return U @ self.coef.T + self.intercept

    def embed(self, x, z_range, coupling=0, z_other=None):
        lo, hi = map(float, z_range)
        if not lo < hi:
            raise ValueError("embedding range must satisfy lo < hi")
        base, e = self._slice_base(x, coupling, z_other)
        return _single_piece(lo, hi, self.coef @ base + self.intercept, self.coef @ e)

    def to_json(self):
        return {"kind": self.kind, "coef": self.coef.tolist(), "intercept": self.intercept.tolist(),
                "d_x": self.d_x, "d_z": self.d_z, "decision_dependent": self.decision_dependent}


def fit_ols(data: Dataset, decision_dependent: bool = True) -> OLSModel:
    D, names = _design(data, decision_dependent)
    if data.n < D.shape[1]:
        raise RankDeficientError(names[data.n:])
    Q, R = np.linalg.qr(D)
    diag = np.abs(np.diag(R))
    tol = max(D.shape) * np.finfo(float).eps * max(diag.max(initial=0.0), 1.0)
    if np.any(diag <= tol):
        # Identify columns that are linear combinations of the preceding ones.
        bad = []
        for j in range(D.shape[1]):
            sub = D[:, : j + 1]
            if np.linalg.matrix_rank(sub) < j + 1 - len(bad):
                bad.append(names[j])
        raise RankDeficientError(bad or [names[int(np.argmin(diag))]])
    beta = np.linalg.solve(R, Q.T @ data.Y)          # (p, d_y)
    return OLSModel(beta[:-1].T, beta[-1], data.d_x, data.d_z, decision_dependent)


class KernelModel(Regressor):
    """Uniform-kernel Nadaraya-Watson with a closed joint ball of radius ``bandwidth``."""

    kind = "kernel"

    def __init__(self, data: Dataset, bandwidth, decision_dependent=True):
        super().__init__(data.d_x, data.d_z, data.d_y, decision_dependent)
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.data = data
        self.bandwidth = float(bandwidth)
        self._U = np.hstack([data.X, data.Z]) if decision_dependent else data.X

    def _neighbors(self, U):
        d2 = ((U[:, None, :] - self._U[None, :, :]) ** 2).sum(axis=2)
        return d2 <= self.bandwidth ** 2

    def predict_many(self, X, Z):
        U = self._inputs(X, Z)
        mask = self._neighbors(U)
        cnt = mask.sum(axis=1)
        if np.any(cnt == 0):
            i = int(np.argmin(cnt))
            raise EmptyNeighborhoodError(f"no training point within bandwidth of query {U[i].tolist()}")
        return (mask.astype(float) @ self.data.Y) / cnt[:, None]

    def embed(self, x, z_range, coupling=0, z_other=None):
        lo, hi = map(float, z_range)
        if not lo < hi:
            raise ValueError("embedding range must satisfy lo < hi")
        base, e = self._slice_base(x, coupling, z_other)
        if not self.decision_dependent:
            vals = self._value_slice_constant(base)
            ok = vals is not None
            a = vals if ok else np.full(self.d_y, np.nan)
            return PiecewiseAffineEmbedding(np.array([lo, hi]), a[None], np.zeros((1, self.d_y)),
                                            np.array([ok]))
        ci = self.d_x + coupling
        off = self._U.copy()
        off_d2 = ((np.delete(off, ci, axis=1) - np.delete(base, ci)) ** 2).sum(axis=1)
        rad2 = self.bandwidth ** 2 - off_d2
        inside = rad2 >= 0
        r = np.sqrt(np.maximum(rad2[inside], 0.0))
        centers = off[inside, ci]
        cand = np.concatenate([centers - r, centers + r])
        cand = cand[(cand > lo) & (cand < hi)]
        bp = np.unique(np.concatenate([[lo, hi], cand]))
        # Membership of point k on the open interval (bp[p], bp[p+1]) is decided at its midpoint.
        mids = 0.5 * (bp[:-1] + bp[1:])
        zk = off[:, ci]
        mask = ((mids[:, None] - zk[None, :]) ** 2 <= rad2[None, :])
        cnt = mask.sum(axis=1)
        feas = cnt > 0
        vals = np.full((mids.size, self.d_y), np.nan)
        vals[feas] = (mask[feas].astype(float) @ self.data.Y) / cnt[feas, None]
        pmask = ((bp[:, None] - zk[None, :]) ** 2 <= rad2[None, :])
        pcnt = pmask.sum(axis=1)
        pv = np.full((bp.size, self.d_y), np.nan)
        pv[pcnt > 0] = (pmask[pcnt > 0].astype(float) @ self.data.Y) / pcnt[pcnt > 0, None]
        return PiecewiseAffineEmbedding(bp, np.where(feas[:, None], vals, 0.0), np.zeros_like(vals),
                                        feas, point_values=pv)

    def _value_slice_constant(self, base):
        mask = ((self._U - base) ** 2).sum(axis=1) <= self.bandwidth ** 2
        if not mask.any():
            return None
        return self.data.Y[mask].mean(axis=0)

    def to_json(self):
        return {"kind": self.kind, "bandwidth": self.bandwidth, "decision_dependent": self.decision_dependent,
                "X": self.data.X.tolist(), "Z": self.data.Z.tolist(), "Y": self.data.Y.tolist()}


def fit_kernel(data: Dataset, bandwidth: float = 8.0, decision_dependent: bool = True) -> KernelModel:
    return KernelModel(data, bandwidth, decision_dependent)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 5000
    learning_rate: float = 0.05
    seed: int = 0
    batch_size: int | None = None   # None = full batch


def _forward(params, U):
    V1, a1, V2, a2 = params
    pre = U @ V1.T + a1
    hid = np.maximum(pre, 0.0)
    return pre, hid, hid @ V2.T + a2


def loss_and_grad(params, U, T):
    """Mean squared error ``mean_k ||f(u_k) - t_k||^2 / 2`` and its gradient."""
    V1, a1, V2, a2 = params
    pre, hid, out = _forward(params, U)
    n = U.shape[0]
    err = out - T
    loss = 0.5 * float(np.sum(err ** 2)) / n
    g_out = err / n
    gV2 = g_out.T @ hid
    ga2 = g_out.sum(axis=0)
    g_hid = g_out @ V2
    g_pre = g_hid * (pre > 0)
    gV1 = g_pre.T @ U
    ga1 = g_pre.sum(axis=0)
    return loss, (gV1, ga1, gV2, ga2)


class ReluNetModel(Regressor):
    """``f(u) = V2 max(V1 u + a1, 0) + a2`` with weights in raw input/output units."""

    kind = "relu_nn"

    def __init__(self, V1, a1, V2, a2, d_x, d_z, decision_dependent=True, history=None):
        V2 = np.atleast_2d(np.asarray(V2, float))
        super().__init__(d_x, d_z, V2.shape[0], decision_dependent)
        self.V1 = np.atleast_2d(np.asarray(V1, float))
        self.a1 = np.asarray(a1, float).reshape(-1)
        self.V2 = V2
        self.a2 = np.asarray(a2, float).reshape(-1)
        self.history = history or []

    @property
    def hidden_width(self):
        return self.a1.size

    def predict_many(self, X, Z):
        U = self._inputs(X, Z)
        return _forward((self.V1, self.a1, self.V2, self.a2), U)[2]

    def embed(self, x, z_range, coupling=0, z_other=None):
        lo, hi = map(float, z_range)
        if not lo < hi:
            raise ValueError("embedding range must satisfy lo < hi")
        base, e = self._slice_base(x, coupling, z_other)
        c0 = self.V1 @ base + self.a1
        w = self.V1 @ e
        nz = w != 0
        roots = -c0[nz] / w[nz]
        roots = roots[(roots > lo) & (roots < hi)]
        bp = np.unique(np.concatenate([[lo, hi], roots]))
        mids = 0.5 * (bp[:-1] + bp[1:])
        active = (c0[None, :] + mids[:, None] * w[None, :]) > 0       # (P, H)
        A = active.astype(float)
        inter = (A * c0) @ self.V2.T + self.a2
        slope = (A * w) @ self.V2.T
        return PiecewiseAffineEmbedding(bp, inter, slope, np.ones(mids.size, dtype=bool))

    def to_json(self):
        return {"kind": self.kind, "V1": self.V1.tolist(), "a1": self.a1.tolist(), "V2": self.V2.tolist(),
                "a2": self.a2.tolist(), "d_x": self.d_x, "d_z": self.d_z,
                "decision_dependent": self.decision_dependent}


def _standardize(M):
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
    return mu, sd


def fit_relu_nn(data: Dataset, hidden_width: int = 16, training_config: TrainingConfig | None = None,
                decision_dependent: bool = True) -> ReluNetModel:
    """Gradient descent on standardized data; the affine scalings are folded into the weights."""
    if hidden_width < 1:
        raise ValueError("hidden_width must be >= 1")
    cfg = training_config or TrainingConfig()
    U = np.hstack([data.X, data.Z]) if decision_dependent else data.X
    T = data.Y
    mu_u, sd_u = _standardize(U)
    mu_t, sd_t = _standardize(T)
    Us, Ts = (U - mu_u) / sd_u, (T - mu_t) / sd_t
    rng = np.random.default_rng(cfg.seed)
    d_in, d_out = U.shape[1], T.shape[1]
    params = [rng.uniform(-1, 1, (hidden_width, d_in)) / np.sqrt(d_in),
              rng.uniform(-1, 1, hidden_width) / np.sqrt(d_in),
              np.zeros((d_out, hidden_width)),    # zero output layer: starts at the target mean
              np.zeros(d_out)]
    history = []
    n = Us.shape[0]
    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        for idx in batches:
            loss, grads = loss_and_grad(params, Us[idx], Ts[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}; last losses {history[-5:]}")
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
        if epoch % 100 == 0 or epoch == cfg.epochs - 1:
            history.append(loss)
    V1s, a1s, V2s, a2s = params
    V1 = V1s / sd_u[None, :]
    a1 = a1s - V1 @ mu_u
    V2 = V2s * sd_t[:, None]
    a2 = a2s * sd_t + mu_t
    return ReluNetModel(V1, a1, V2, a2, data.d_x, data.d_z, decision_dependent, history)


@dataclass(frozen=True, eq=False)
class ResidualSet:
    residuals: np.ndarray
    mean: np.ndarray = field(default=None)

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.residuals, float))
        object.__setattr__(self, "residuals", r)
        object.__setattr__(self, "mean", r.mean(axis=0))

    @property
    def n(self):
        return self.residuals.shape[0]


def residuals(model: Regressor, data: Dataset) -> ResidualSet:
    return ResidualSet(data.Y - model.predict_many(data.X, data.Z))


def predict(model: Regressor, x, z):
    return model.predict(x, z)


def embed(model: Regressor, x, z_range, coupling=0, z_other=None):
    return model.embed(x, z_range, coupling, z_other)


def model_from_json(d) -> Regressor:
    kind = d["kind"]
    dd = bool(d.get("decision_dependent", True))
    if kind == "ols":
        return OLSModel(np.array(d["coef"]), np.array(d["intercept"]), d["d_x"], d["d_z"], dd)
    if kind == "kernel":
        return KernelModel(Dataset(np.array(d["X"]), np.array(d["Z"]), np.array(d["Y"])), d["bandwidth"], dd)
    if kind == "relu_nn":
        return ReluNetModel(np.array(d["V1"]), np.array(d["a1"]), np.array(d["V2"]), np.array(d["a2"]),
                            d["d_x"], d["d_z"], dd)
    raise ValueError(f"unknown model kind {kind!r}")


def load_model(path) -> Regressor:
    with open(path) as fh:
        return model_from_json(json.load(fh))


def fit_model(kind: str, data: Dataset, decision_dependent=True, bandwidth=8.0, hidden_width=16,
              training_config: TrainingConfig | None = None) -> Regressor:
    if kind == "ols":
        return fit_ols(data, decision_dependent)
    if kind == "kernel":
        return fit_kernel(data, bandwidth, decision_dependent)
    if kind == "relu_nn":
        return fit_relu_nn(data, hidden_width, training_config, decision_dependent)
    raise ValueError(f"unknown regressor kind {kind!r}")
