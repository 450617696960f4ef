"""Residual-based nominal distributions, Wasserstein radii and a transport-LP distance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lp import EQ, LinearProgram, LpStatus, solve_lp
from .regression import ResidualSet

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, float)
        if a.ndim == 1:
            a = a[:, None]
        w = np.asarray(self.weights, float).reshape(-1)
        if a.shape[0] != w.size or w.size == 0:
            raise ValueError("one weight per atom is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms):
        a = np.atleast_1d(np.asarray(atoms, float))
        n = a.shape[0]
        return cls(a, np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.weights.size

    @property
    def dim(self):
        return self.atoms.shape[1]

    def shift(self, v):
        return DiscreteDistribution(self.atoms + np.asarray(v, float), self.weights)

    def mean(self):
        return self.weights @ self.atoms


def empirical_residual_distribution(res: ResidualSet | np.ndarray) -> DiscreteDistribution:
    r = res.residuals if isinstance(res, ResidualSet) else np.asarray(res, float)
    return DiscreteDistribution.uniform(r)


def _ground_cost(A, B, p, norm):
    diff = A[:, None, :] - B[None, :, :]
    if norm == "l1":
        d = np.abs(diff).sum(axis=2)
    elif norm == "l2":
        d = np.sqrt((diff ** 2).sum(axis=2))
    else:
        raise ValueError(f"unsupported norm {norm!r}")
    return d ** p


def wasserstein_distance(P1: DiscreteDistribution, P2: DiscreteDistribution, p: int = 1,
                         norm: str = "l1") -> float:
    """Exact ``W_p`` between discrete laws by the transport LP on the simplex engine."""
    if p not in (1, 2):
        raise ValueError("only p in {1, 2} is supported")
    if P1.dim != P2.dim:
        raise ValueError("atom dimensions differ")
    C = _ground_cost(P1.atoms, P2.atoms, p, norm)
    m1, m2 = C.shape
    rows, cols = [], []
    for i in range(m1):
        for j in range(m2):
            rows += [i, m1 + j]
            cols += [i * m2 + j] * 2
    vals = np.ones(len(rows))
    lp = LinearProgram(C.ravel(), (np.array(rows), np.array(cols), vals), np.full(m1 + m2, EQ),
                       np.concatenate([P1.weights, P2.weights]))
    sol = solve_lp(lp)
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"transport LP failed with status {sol.status}")
    return max(sol.objective, 0.0) ** (1.0 / p)


@dataclass(frozen=True)
class RadiusSpec:
    """How the Wasserstein radius is produced.

    ``theoretical`` uses the OLS-type constants: C1, C3 for the covariate
    term, C2 for the noise term and c1, c2, c3 for the empirical
    concentration term.
    """

    mode: str = "fixed"
    fixed_value: float = 0.0
    alpha: float = 0.2
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 2.0
    candidates: tuple = (1.0, 10.0, 50.0, 100.0)

    def __post_init__(self):
        if self.mode not in ("fixed", "theoretical", "cross_validated"):
            raise ValueError(f"unknown radius mode {self.mode!r}")
        if self.mode == "fixed" and not (np.isfinite(self.fixed_value) and self.fixed_value >= 0):
            raise ValueError("fixed radius must be finite and >= 0")
        if self.mode == "theoretical":
            for name in ("C1", "C2", "C3", "c1", "c2", "c3"):
                if not getattr(self, name) > 0:
                    raise ValueError(f"constant {name} must be positive")
        if self.mode == "cross_validated" and not self.candidates:
            raise ValueError("cross-validation needs at least one candidate")
        object.__setattr__(self, "candidates", tuple(float(c) for c in self.candidates))

    @classmethod
    def parse(cls, text: str, **kw):
        """``fixed:<v>``, ``loocv`` or ``theory``."""
        if text.startswith("fixed:"):
            return cls("fixed", float(text.split(":", 1)[1]), **kw)
        if text == "loocv":
            return cls("cross_validated", **kw)
        if text == "theory":
            return cls("theoretical", **kw)
        raise ValueError(f"cannot parse radius {text!r}")


def kappa_covariate(alpha, n, x, C1, C3):
    return math.sqrt((C1 * float(np.dot(x, x)) + C3) / n * math.log(1.0 / alpha))


def kappa_noise(alpha, n, C2):
    return math.sqrt(C2 / n * math.log(1.0 / alpha))


def kappa_concentration(alpha, n, c1, c2, c3):
    return (math.log(2.0 * c1 / alpha) / (c2 * n)) ** (1.0 / c3)


def theoretical_radius(spec: RadiusSpec, n: int, x) -> float:
    """``kappa(alpha/4, x) + kappa(alpha/4) + (log(2 c1/alpha) / (c2 n))^(1/c3)``."""
    a = spec.alpha
    if not 0.0 < a < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be positive")
    x = np.asarray(x, float).reshape(-1)
    k1 = kappa_covariate(a / 4, n, x, spec.C1, spec.C3) + kappa_noise(a / 4, n, spec.C2)
    return k1 + kappa_concentration(a, n, spec.c1, spec.c2, spec.c3)


@dataclass
class LoocvResult:
    radius: float
    mean_costs: dict
    table: list = field(default_factory=list)   # (candidate, fold, realized_cost)
    failed: tuple = ()

    def to_csv_rows(self):
        return [("candidate", "fold", "realized_cost")] + [
            (repr(c), k, repr(v)) for c, k, v in self.table]


def radius_by_loocv(data, candidates: Sequence[float], fold_cost: Callable[[int, Sequence[float]], Sequence[float]],
                    folds: Sequence[int] | None = None) -> LoocvResult:
    """Pick the candidate radius with the lowest mean held-out realized cost.

    ``fold_cost(k, candidates)`` returns one realized cost per candidate for
    held-out observation ``k`` (``nan`` marks a failed inner solve); the
    callback receives all candidates at once so it can share work across
    radii.  Ties go to the smaller radius.
    """
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("no candidate radii")
    if len(cands) == 1:
        return LoocvResult(cands[0], {cands[0]: float("nan")})
    n = data.n if hasattr(data, "n") else int(data)
    folds = list(range(n)) if folds is None else [int(k) for k in folds]
    costs = np.full((len(folds), len(cands)), np.nan)
    table = []
    order = np.argsort(cands, kind="stable")
    for i, k in enumerate(folds):
        vals = np.asarray(fold_cost(k, [cands[j] for j in order]), float)
        costs[i, order] = vals
    for i, k in enumerate(folds):
        for j, c in enumerate(cands):
            table.append((c, k, float(costs[i, j])))
    ok = [j for j in range(len(cands)) if not np.any(np.isnan(costs[:, j]))]
    failed = tuple(c for j, c in enumerate(cands) if j not in ok)
    if not ok:
        raise RuntimeError("every candidate radius failed in cross-validation")
    means = {cands[j]: float(np.mean(costs[:, j])) for j in range(len(cands))}
    best = min(ok, key=lambda j: (means[cands[j]], cands[j]))
    return LoocvResult(cands[best], means, table, failed)
