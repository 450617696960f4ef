"""Shipment planning and pricing instances with a synthetic demand law."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import AffineMapInZ, Dataset, RiskSpec, SupportSet, TwoStageInstance, augment_cvar


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """``Y_j = sum_l A_jl g(x_l) - B_j z1 + alpha_j + sigma * eps_j`` with ``g(x) = x^2`` (or ``x``)."""

    A: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    noise_std: float = 1.0
    features: str = "square"

    @property
    def d_y(self):
        return self.B.size

    @property
    def d_x(self):
        return self.A.shape[1]

    def _phi(self, X):
        X = np.asarray(X, float)
        return X ** 2 if self.features == "square" else X

    def mean(self, x, z1):
        """Noise-free demand; ``x`` (d_x,) or (m, d_x), ``z1`` scalar or (m,)."""
        x = np.asarray(x, float)
        z1 = np.asarray(z1, float)
        return self._phi(x) @ self.A.T - np.multiply.outer(z1, self.B) + self.alpha

    def sample(self, x, z1, m, rng, noise=None):
        noise = rng.standard_normal((m, self.d_y)) if noise is None else noise
        return self.mean(x, z1) + self.noise_std * noise

    def max_total_demand(self, x_cap):
        """Total demand bound over ``x in [0, x_cap]^L``, ``z1 >= 0`` and noise within 6 sigma."""
        return float((self.A.sum(axis=1) * self._phi(np.array(x_cap)) + self.alpha).sum()
                     + 6 * self.noise_std * self.d_y)

    def to_json(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "alpha": self.alpha.tolist(),
                "noise_std": self.noise_std, "features": self.features}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["A"], float), np.array(d["B"], float), np.array(d["alpha"], float),
                   float(d.get("noise_std", 1.0)), d.get("features", "square"))


def draw_ground_truth(rng, n_sites=3, n_covariates=3, features="square", noise_std=1.0):
    A = rng.uniform(3, 5, (n_sites, n_covariates))
    B = rng.uniform(3, 5, n_sites)
    alpha = rng.uniform(1000, 2000, n_sites)
    return GroundTruth(A, B, alpha, noise_std, features)


def transport_costs(rng, n_warehouses, n_sites, grid=100.0):
    wh = rng.uniform(0, grid, (n_warehouses, 2))
    st = rng.uniform(0, grid, (n_sites, 2))
    return np.linalg.norm(wh[:, None, :] - st[None, :, :], axis=2), wh, st


def pricing_instance(c, p1=5.0, p2=100.0, z1_max=500.0, z2_max=1e5, spot_checks=5) -> TwoStageInstance:
    """Recourse ``min p2 sum t + sum c s - z1 sum Y`` with demand and capacity rows.

    First stage ``z = (z1, z2_1..z2_I)``.  Recourse ``w = (s_ij, t_i, r)``;
    the revenue ``-z1 sum_j Y_j`` is carried by the epigraph variable ``r``
    through the row ``r >= -z1 sum_j Y_j`` so that it sits in ``T(z) Y``.
    """
    c = np.atleast_2d(np.asarray(c, float))
    I, J = c.shape
    d_w = I * J + I + 1
    i_t, i_r = I * J, I * J + I
    rows = []
    T0, Tz1, h0, hz2 = [], [], [], []

    def add(row, t0, tz1, h, hz):
        rows.append(row)
        T0.append(t0)
        Tz1.append(tz1)
        h0.append(h)
        hz2.append(hz)

    for j in range(J):                       # sum_i s_ij >= Y_j
        r = np.zeros(d_w)
        r[[i * J + j for i in range(I)]] = 1.0
        e = np.zeros(J)
        e[j] = 1.0
        add(r, e, np.zeros(J), 0.0, np.zeros(I))
    for i in range(I):                       # z2_i + t_i - sum_j s_ij >= 0
        r = np.zeros(d_w)
        r[i * J:(i + 1) * J] = -1.0
        r[i_t + i] = 1.0
        hz = np.zeros(I)
        hz[i] = -1.0
        add(r, np.zeros(J), np.zeros(J), 0.0, hz)
    r = np.zeros(d_w)                        # r >= -z1 sum_j Y_j
    r[i_r] = 1.0
    add(r, np.zeros(J), -np.ones(J), 0.0, np.zeros(I))
    for k in range(I * J + I):               # s, t >= 0
        r = np.zeros(d_w)
        r[k] = 1.0
        add(r, np.zeros(J), np.zeros(J), 0.0, np.zeros(I))
    W = np.array(rows)
    M = W.shape[0]
    T_coef = np.zeros((1 + I, M, J))
    T_coef[0] = np.array(Tz1)
    h_coef = np.zeros((1 + I, M))
    h_coef[1:] = np.array(hz2).T
    q = np.concatenate([c.ravel(), np.full(I, p2), [1.0]])
    return TwoStageInstance(
        c_z=np.concatenate([[0.0], np.full(I, p1)]),
        z_lower=np.zeros(1 + I),
        z_upper=np.concatenate([[z1_max], np.full(I, z2_max)]),
        q=q, W=W,
        T=AffineMapInZ(np.array(T0), T_coef),
        h=AffineMapInZ(np.array(h0), h_coef),
        coupling_index=0,
        support=SupportSet("all_space"),
        spot_checks=spot_checks,
    )


def eta_bounds(c, p2, d_y, z1_max, y_cap):
    """Range containing the recourse value whenever ``|Y_j| <= y_cap``."""
    cmax = float(np.max(c))
    return (-z1_max * d_y * y_cap, (p2 + cmax) * d_y * y_cap + z1_max * d_y * y_cap)


@dataclass(frozen=True)
class PricingSetup:
    instance: TwoStageInstance          # CVaR-augmented when rho > 0
    base: TwoStageInstance
    truth: GroundTruth
    costs: np.ndarray
    risk: RiskSpec


def generate_instance(rng, n_warehouses=2, n_sites=3, n_covariates=3, p1=5.0, p2=100.0,
                      rho=1.0, theta=0.9, z1_max=500.0, grid=100.0, features="square",
                      noise_std=1.0, y_cap=1e4, costs=None, truth=None) -> PricingSetup:
    if p2 <= p1:
        raise ValueError("late production must cost more than advance production (p2 > p1)")
    if costs is None:
        costs, _, _ = transport_costs(rng, n_warehouses, n_sites, grid)
    if truth is None:
        truth = draw_ground_truth(rng, n_sites, n_covariates, features, noise_std)
    gamma_cap = 60.0   # far tail of Gamma(2, 3)
    z2_max = 10.0 * truth.max_total_demand(gamma_cap)
    risk = RiskSpec(rho, theta)
    base = replace(pricing_instance(costs, p1, p2, z1_max, z2_max), risk=risk, spot_checks=0)
    inst = base
    if rho > 0:
        inst = augment_cvar(base, risk, eta_bounds(costs, p2, n_sites, z1_max, y_cap))
    return PricingSetup(inst, base, truth, costs, risk)


def sample_covariates(rng, m, d_x, shape=2.0, scale=3.0):
    return rng.gamma(shape, scale, (m, d_x))


def sample_prices(rng, m, z1_max=500.0):
    return z1_max * rng.beta(2.0, 5.0, m)


def sample_dataset(truth: GroundTruth, n: int, rng, z1_max=500.0, zero_noise=False) -> Dataset:
    """Draw covariates, prices, noise (in that order) and demands."""
    if n < 1:
        raise ValueError("n must be >= 1")
    X = sample_covariates(rng, n, truth.d_x)
    z = sample_prices(rng, n, z1_max)
    eps = np.zeros((n, truth.d_y)) if zero_noise else rng.standard_normal((n, truth.d_y))
    Y = truth._phi(X) @ truth.A.T - np.outer(z, truth.B) + truth.alpha + truth.noise_std * eps
    return Dataset(X, z[:, None], Y)
