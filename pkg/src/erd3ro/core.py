"""Problem data types for two-stage recourse problems with affine dependence on z."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np


class InstanceError(ValueError):
    """Malformed instance data or a failed recourse spot check."""


def _vec(a, name, size=None):
    a = np.asarray(a, dtype=float).reshape(-1)
    if size is not None and a.size != size:
        raise InstanceError(f"{name} has length {a.size}, expected {size}")
    if not np.all(np.isfinite(a)):
        raise InstanceError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Joint observations (x^k, z^k, y^k) stored as three row-aligned arrays."""

    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        arrays = []
        for name in ("X", "Z", "Y"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2:
                raise ValueError(f"{name} must be 2-D (n, d)")
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        n = {a.shape[0] for a in arrays}
        if len(n) != 1:
            raise ValueError(f"observation counts differ: {[a.shape[0] for a in arrays]}")
        if arrays[0].shape[0] < 1:
            raise ValueError("a dataset needs n >= 1 observations")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d_x(self):
        return self.X.shape[1]

    @property
    def d_z(self):
        return self.Z.shape[1]

    @property
    def d_y(self):
        return self.Y.shape[1]

    @property
    def observations(self):
        return [(self.X[k], self.Z[k], self.Y[k]) for k in range(self.n)]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.Z[idx], self.Y[idx])

    def drop(self, k):
        keep = np.ones(self.n, dtype=bool)
        keep[k] = False
        return self.subset(np.flatnonzero(keep))

    def head(self, n):
        return self.subset(np.arange(n))

    def fingerprint(self):
        h = hashlib.sha256()
        for a in (self.X, self.Z, self.Y):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def to_csv(self, path):
        header = ([f"x_{i}" for i in range(self.d_x)] + [f"z_{i}" for i in range(self.d_z)]
                  + [f"y_{i}" for i in range(self.d_y)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.hstack([self.X, self.Z, self.Y]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        cols = {p: [i for i, h in enumerate(header) if h.startswith(p + "_")] for p in "xzy"}
        return cls(body[:, cols["x"]], body[:, cols["z"]], body[:, cols["y"]])


@dataclass(frozen=True, eq=False)
class AffineMapInZ:
    """``M(z) = constant + sum_i z_i * coeffs[i]`` for matrix- or vector-valued maps."""

    constant: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.constant, dtype=float)
        k = np.asarray(self.coeffs, dtype=float)
        if k.ndim == c.ndim:  # single coefficient given without the leading axis
            k = k[None]
        if k.shape[1:] != c.shape:
            raise InstanceError(f"coefficient shape {k.shape[1:]} does not match constant {c.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(k))):
            raise InstanceError("affine map has non-finite entries")
        c, k = c.copy(), k.copy()
        c.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "constant", c)
        object.__setattr__(self, "coeffs", k)

    @property
    def n_z(self):
        return self.coeffs.shape[0]

    def evaluate(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n_z:
            raise ValueError(f"z has length {z.size}, map expects {self.n_z}")
        return self.constant + np.tensordot(z, self.coeffs, axes=(0, 0))

    __call__ = evaluate

    def is_constant(self):
        return not np.any(self.coeffs)

    def extend(self, n_new):
        """Append ``n_new`` zero coefficients (new z coordinates that do not enter)."""
        pad = np.zeros((n_new,) + self.constant.shape)
        return AffineMapInZ(self.constant, np.concatenate([self.coeffs, pad]))

    def to_json(self):
        return {"constant": self.constant.tolist(), "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["constant"], dtype=float), np.array(d["coeffs"], dtype=float))


def evaluate_affine(map_: AffineMapInZ, z):
    return map_.evaluate(z)


@dataclass(frozen=True)
class SupportSet:
    kind: str = "all_space"
    lower: tuple | None = None
    upper: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("all_space", "nonnegative_orthant", "box"):
            raise ValueError(f"unsupported support kind {self.kind!r}")
        if self.kind == "box":
            if self.lower is None or self.upper is None:
                raise ValueError("box support needs lower and upper bounds")
            lo, up = np.asarray(self.lower, float), np.asarray(self.upper, float)
            if lo.shape != up.shape or np.any(lo > up):
                raise ValueError("box support bounds are inconsistent")
            object.__setattr__(self, "lower", tuple(lo.tolist()))
            object.__setattr__(self, "upper", tuple(up.tolist()))

    def project(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "all_space":
            return y.copy()
        if self.kind == "nonnegative_orthant":
            return np.maximum(y, 0.0)
        return np.clip(y, np.asarray(self.lower), np.asarray(self.upper))

    def to_json(self):
        d = {"kind": self.kind}
        if self.kind == "box":
            d.update(lower=list(self.lower), upper=list(self.upper))
        return d

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(d["kind"], d.get("lower"), d.get("upper"))


def project(support: SupportSet, y):
    return support.project(y)


@dataclass(frozen=True)
class RiskSpec:
    """Objective ``E[H] + rho * CVaR_theta(H)``."""

    rho: float = 0.0
    theta: float = 0.9

    def __post_init__(self):
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if not (0.0 < self.theta < 1.0):
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")


@dataclass(frozen=True)
class CvarAugmentation:
    """Bookkeeping left behind by :func:`augment_cvar`."""

    rho: float
    theta: float
    eta_index: int
    n_orig_z: int
    n_orig_omega: int


@dataclass(frozen=True, eq=False)
class TwoStageInstance:
    """``min c_z^T z + E[H(z, Y)]`` with ``H(z,Y) = min{q^T w : W w >= T(z) Y + h(z)}``.

    ``w`` is a free variable; sign restrictions belong in the rows of ``W``.
    Only ``z[coupling_index]`` enters the regression model.
    """

    c_z: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    q: np.ndarray
    W: np.ndarray
    T: AffineMapInZ
    h: AffineMapInZ
    coupling_index: int = 0
    risk: RiskSpec | None = None
    support: SupportSet = field(default_factory=SupportSet)
    cvar: CvarAugmentation | None = None
    spot_checks: int = 5

    def __post_init__(self):
        c_z = _vec(self.c_z, "c_z")
        d_z = c_z.size
        lo = np.asarray(self.z_lower, float).reshape(-1)
        up = np.asarray(self.z_upper, float).reshape(-1)
        if lo.size != d_z or up.size != d_z:
            raise InstanceError("Z_box dimension does not match c_z")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
            raise InstanceError("Z_box must be bounded")
        if np.any(lo > up):
            raise InstanceError("Z_box is empty")
        q = _vec(self.q, "q")
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2 or W.shape[1] != q.size:
            raise InstanceError(f"W has shape {W.shape}, expected (M, {q.size})")
        M = W.shape[0]
        if self.T.constant.ndim != 2 or self.T.constant.shape[0] != M:
            raise InstanceError("T(z) must be an M x d_y matrix map")
        if self.h.constant.shape != (M,):
            raise InstanceError("h(z) must be an M-vector map")
        if self.T.n_z != d_z or self.h.n_z != d_z:
            raise InstanceError("affine maps must have one coefficient per z coordinate")
        if not (0 <= int(self.coupling_index) < d_z):
            raise InstanceError("coupling_index out of range")
        for name, val in (("c_z", c_z), ("z_lower", lo), ("z_upper", up), ("q", q), ("W", W)):
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "coupling_index", int(self.coupling_index))
        if self.spot_checks:
            self._spot_check()

    # -- dimensions ------------------------------------------------------
    @property
    def d_z(self):
        return self.c_z.size

    @property
    def d_y(self):
        return self.T.constant.shape[1]

    @property
    def d_omega(self):
        return self.q.size

    @property
    def M(self):
        return self.W.shape[0]

    @property
    def coupling_range(self):
        c = self.coupling_index
        return float(self.z_lower[c]), float(self.z_upper[c])

    def T_at(self, z):
        return self.T.evaluate(z)

    def h_at(self, z):
        return self.h.evaluate(z)

    def rhs(self, z, Y):
        """``T(z) Y + h(z)``; ``Y`` may be (d_y,) or (k, d_y)."""
        Y = np.asarray(Y, dtype=float)
        return Y @ self.T_at(z).T + self.h_at(z)

    # -- checks ------------------------------------------------------------
    def _spot_check(self):
        from .lp import EQ, GE, LinearProgram, LpStatus, solve_lp

        dual = LinearProgram(np.zeros(self.M), self.W.T, np.full(self.d_omega, EQ), self.q)
        if solve_lp(dual).status is not LpStatus.OPTIMAL:
            raise InstanceError("dual recourse polyhedron {pi >= 0 : W^T pi = q} is empty; "
                                "H(z, Y) is unbounded below for every (z, Y)")
        rng = np.random.default_rng(0)
        lo, up = self.z_lower, self.z_upper
        for _ in range(self.spot_checks):
            z = lo + rng.random(self.d_z) * (up - lo)
            Y = rng.normal(scale=10.0, size=self.d_y)
            b = self.rhs(z, Y)
            lp = LinearProgram(np.zeros(self.d_omega), self.W, np.full(self.M, GE), b,
                               np.full(self.d_omega, -np.inf), np.full(self.d_omega, np.inf))
            if solve_lp(lp).status is not LpStatus.OPTIMAL:
                raise InstanceError(f"recourse infeasible at sampled z={z.tolist()}, Y={Y.tolist()}")

    def with_box(self, lower, upper):
        return replace(self, z_lower=np.asarray(lower, float), z_upper=np.asarray(upper, float),
                       spot_checks=0)

    # -- serialization -----------------------------------------------------
    def to_json(self):
        d = {
            "c_z": self.c_z.tolist(),
            "Z_box": {"lower": self.z_lower.tolist(), "upper": self.z_upper.tolist()},
            "q": self.q.tolist(),
            "W": self.W.tolist(),
            "T": self.T.to_json(),
            "h": self.h.to_json(),
            "coupling_index": self.coupling_index,
            "risk": None if self.risk is None else {"rho": self.risk.rho, "theta": self.risk.theta},
            "support": self.support.to_json(),
        }
        if self.cvar is not None:
            d["cvar"] = {"rho": self.cvar.rho, "theta": self.cvar.theta,
                         "eta_index": self.cvar.eta_index, "n_orig_z": self.cvar.n_orig_z,
                         "n_orig_omega": self.cvar.n_orig_omega}
        return d

    @classmethod
    def from_json(cls, d, spot_checks=5):
        risk = d.get("risk")
        cv = d.get("cvar")
        return cls(
            c_z=np.array(d["c_z"], float),
            z_lower=np.array(d["Z_box"]["lower"], float),
            z_upper=np.array(d["Z_box"]["upper"], float),
            q=np.array(d["q"], float),
            W=np.array(d["W"], float),
            T=AffineMapInZ.from_json(d["T"]),
            h=AffineMapInZ.from_json(d["h"]),
            coupling_index=int(d.get("coupling_index", 0)),
            risk=None if risk is None else RiskSpec(float(risk["rho"]), float(risk["theta"])),
            support=SupportSet.from_json(d.get("support", "all_space")),
            cvar=None if cv is None else CvarAugmentation(**cv),
            spot_checks=spot_checks,
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path, spot_checks=5):
        with open(path) as fh:
            return cls.from_json(json.load(fh), spot_checks=spot_checks)


def augment_cvar(instance: TwoStageInstance, risk: RiskSpec, eta_bounds=(-1e6, 1e6)) -> TwoStageInstance:
    """Rewrite ``E[H] + rho*CVaR_theta(H)`` as an expectation.

    The returned instance has first stage ``(z, eta)`` with cost ``rho*eta``
    on ``eta`` and recourse ``(w, t, u)`` with rows ``t >= q^T w``,
    ``u >= t - eta`` and ``u >= 0``; its recourse value is
    ``H + rho/(1-theta) * (H - eta)_+``.
    """
    if not isinstance(risk, RiskSpec):
        raise TypeError("risk must be a RiskSpec")
    if instance.cvar is not None:
        raise InstanceError("instance is already CVaR-augmented")
    lo_eta, hi_eta = map(float, eta_bounds)
    if not (np.isfinite(lo_eta) and np.isfinite(hi_eta) and lo_eta <= hi_eta):
        raise InstanceError("eta bounds must be finite and ordered")
    M, d_w, d_z, d_y = instance.M, instance.d_omega, instance.d_z, instance.d_y
    W = np.zeros((M + 3, d_w + 2))
    W[:M, :d_w] = instance.W
    W[M, :d_w] = -instance.q
    W[M, d_w] = 1.0               # t - q^T w >= 0
    W[M + 1, d_w] = -1.0
    W[M + 1, d_w + 1] = 1.0       # u - t >= -eta
    W[M + 2, d_w + 1] = 1.0       # u >= 0
    q = np.concatenate([np.zeros(d_w), [1.0, risk.rho / (1.0 - risk.theta)]])

    T_const = np.vstack([instance.T.constant, np.zeros((3, d_y))])
    T_coef = np.concatenate([instance.T.coeffs, np.zeros((d_z, 3, d_y))], axis=1)
    T_coef = np.concatenate([T_coef, np.zeros((1, M + 3, d_y))], axis=0)
    h_const = np.concatenate([instance.h.constant, np.zeros(3)])
    h_coef = np.concatenate([instance.h.coeffs, np.zeros((d_z, 3))], axis=1)
    eta_row = np.zeros((1, M + 3))
    eta_row[0, M + 1] = -1.0
    h_coef = np.concatenate([h_coef, eta_row], axis=0)

    return TwoStageInstance(
        c_z=np.concatenate([instance.c_z, [risk.rho]]),
        z_lower=np.concatenate([instance.z_lower, [lo_eta]]),
        z_upper=np.concatenate([instance.z_upper, [hi_eta]]),
        q=q,
        W=W,
        T=AffineMapInZ(T_const, T_coef),
        h=AffineMapInZ(h_const, h_coef),
        coupling_index=instance.coupling_index,
        risk=risk,
        support=instance.support,
        cvar=CvarAugmentation(risk.rho, risk.theta, d_z, d_z, d_w),
        spot_checks=instance.spot_checks,
    )
