"""Experiment engine: variants, out-of-sample evaluation, guarantee checks and sweeps."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ambiguity import LoocvResult, RadiusSpec, radius_by_loocv, theoretical_radius
from .benders import BendersOptions, BendersSolution, run_benders
from .core import Dataset
from .lp import SimplexError
from .master import MasterError
from .pricing import (GroundTruth, PricingSetup, generate_instance, sample_covariates,
                      sample_dataset)
from .recourse import AssumptionViolation, RecourseEvaluator
from .regression import Regressor, RegressionError, TrainingConfig, fit_model, residuals

log = logging.getLogger(__name__)

VARIANTS = ("er_d3ro", "er_dd_saa", "er_dro")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_warehouses: int = 2
    n_sites: int = 3
    n_covariates: int = 3
    grid: float = 100.0
    p1: float = 5.0
    p2: float = 100.0
    rho: float = 1.0
    theta: float = 0.9
    z1_max: float = 500.0
    features: str = "square"
    noise_std: float = 1.0
    sample_sizes: tuple = (100, 200, 300, 400)
    replications: int = 5
    oos_scenarios: int = 1000
    radius: str = "loocv"
    radius_candidates: tuple = (1.0, 10.0, 50.0, 100.0)
    alpha: float = 0.2
    regressors: tuple = ("ols", "kernel")
    variants: tuple = VARIANTS
    bandwidth: float = 8.0
    hidden_width: int = 16
    nn_epochs: int = 5000
    cut_mode: str = "multi"
    eps_gap: float = 1e-6
    max_iter: int = 500
    loocv_folds: int | None = 10        # None: every observation is a fold
    loocv_shared_fit: bool = False
    clamp_demand: bool = True

    def __post_init__(self):
        for name in ("n_warehouses", "n_sites", "n_covariates", "replications", "oos_scenarios"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.p2 > self.p1:
            raise ValueError("p2 must exceed p1")
        if any(n < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be >= 1")
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ValueError(f"unknown variants {sorted(bad)}")
        for name in ("sample_sizes", "radius_candidates", "regressors", "variants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        RadiusSpec.parse(self.radius)

    def radius_spec(self):
        return RadiusSpec.parse(self.radius, alpha=self.alpha, candidates=self.radius_candidates)

    def benders_options(self):
        return BendersOptions(mode=self.cut_mode, eps_gap=self.eps_gap, max_iter=self.max_iter,
                              raise_on_limit=False)

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named stream (e.g. ``instance``, ``data:rep:3``)."""
    words = np.frombuffer(hashlib.sha256(name.encode()).digest()[:16], dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, words)]))


def make_setup(config: ExperimentConfig) -> PricingSetup:
    return generate_instance(substream(config.seed, "instance"), config.n_warehouses, config.n_sites,
                             config.n_covariates, config.p1, config.p2, config.rho, config.theta,
                             config.z1_max, config.grid, config.features, config.noise_std)


def replication_data(config: ExperimentConfig, truth: GroundTruth, rep: int, n_max: int | None = None) -> Dataset:
    """The largest dataset of a replication; smaller sizes are its prefixes."""
    n_max = n_max or max(config.sample_sizes)
    return sample_dataset(truth, n_max, substream(config.seed, f"data:rep:{rep}"), config.z1_max)


def draw_x_new(config: ExperimentConfig, truth: GroundTruth, rep: int, data: Dataset | None = None,
               max_tries: int = 1000):
    """Covariate for solving and evaluation, drawn from the covariate law.

    With ``data`` given, draws are rejected until some training point lies
    within the kernel bandwidth of ``x`` (otherwise the kernel regressor is
    undefined for every price).
    """
    rng = substream(config.seed, f"xnew:rep:{rep}")
    for _ in range(max_tries):
        x = sample_covariates(rng, 1, truth.d_x)[0]
        if data is None or "kernel" not in config.regressors:
            return x
        d2 = ((data.X - x) ** 2).sum(axis=1)
        if d2.min() < config.bandwidth ** 2:
            return x
    raise RuntimeError("could not draw a covariate with a nonempty kernel neighborhood")


def fit_regressor(config: ExperimentConfig, kind: str, data: Dataset, decision_dependent=True) -> Regressor:
    tc = None
    if kind == "relu_nn":
        nn_seed = int(substream(config.seed, "nn-init").integers(2 ** 31))
        tc = TrainingConfig(epochs=config.nn_epochs, seed=nn_seed)
    return fit_model(kind, data, decision_dependent, bandwidth=config.bandwidth,
                     hidden_width=config.hidden_width, training_config=tc)


def realized_cost(inst, z, Y, evaluator: RecourseEvaluator | None = None, clamp=True):
    """Per-outcome cost ``c^T z + H(z, Y)`` of a (possibly risk-augmented) instance at fixed ``z``."""
    Y = np.atleast_2d(np.asarray(Y, float))
    if clamp:
        Y = np.maximum(Y, 0.0)
    ev = evaluator or RecourseEvaluator(inst)
    return float(inst.c_z @ z) + ev.values(z, Y)


@dataclass
class VariantResult:
    variant: str
    regressor: str
    n: int
    xi: float
    solution: BendersSolution | None
    status: str
    seconds: float
    loocv: LoocvResult | None = None
    model: Regressor | None = None
    state: object = None
    message: str = ""

    @property
    def z(self):
        return None if self.solution is None else self.solution.z


def _solve(inst, model, x, xi, res, config, evaluator, initial_cuts=None):
    try:
        return run_benders(inst, model, x, xi, res, config.benders_options(),
                           evaluator=evaluator, initial_cuts=initial_cuts)
    except (MasterError, RegressionError, AssumptionViolation, SimplexError) as exc:
        log.info("solve failed: %s", exc)
        return None, None


def fold_indices(n: int, folds: int | None):
    if folds is None or folds >= n:
        return list(range(n))
    return sorted(set(np.linspace(0, n - 1, folds).round().astype(int).tolist()))


def loocv_radius(config: ExperimentConfig, inst, kind: str, data: Dataset,
                 decision_dependent=True, evaluator=None, full_model=None) -> LoocvResult:
    """Leave-one-out selection over ``config.radius_candidates`` by realized held-out cost.

    For held-out ``k`` the decision ``z*`` from the fold model is scored at
    the counterfactual outcome ``f_{-k}(x^k, z*) + (y^k - f_{-k}(x^k, z^k))``:
    the observed residual carried over to the chosen price.  Cuts are shared
    across radii inside a fold.  Folds where every candidate fails (e.g. an
    empty kernel neighborhood for every price) carry no information and are
    dropped.
    """
    ev = evaluator or RecourseEvaluator(inst)
    folds = fold_indices(data.n, config.loocv_folds)
    full = full_model if full_model is not None else (
        fit_regressor(config, kind, data, decision_dependent) if config.loocv_shared_fit else None)

    def cost(k, cands):
        train = data.drop(k)
        try:
            model = full if full is not None else fit_regressor(config, kind, train, decision_dependent)
            res = residuals(model, train).residuals
            xk, zk, yk = data.X[k], data.Z[k], data.Y[k]
            eps_k = yk - model.predict(xk, zk)
        except RegressionError:
            return [np.nan] * len(cands)
        out, cuts = [], None
        for xi in cands:
            sol, st = _solve(inst, model, xk, xi, res, config, ev, cuts)
            if sol is None or sol.status == "unbounded":
                out.append(np.nan)
                continue
            cuts = st.cuts
            zc = sol.z[inst.coupling_index]
            try:
                Y = model.predict(xk, [zc]) + eps_k
            except RegressionError:
                out.append(np.nan)
                continue
            out.append(float(realized_cost(inst, sol.z, Y, ev, config.clamp_demand)[0]))
        return out

    cands = sorted(config.radius_candidates)
    table = {k: cost(k, cands) for k in folds}
    keep = [k for k in folds if not np.all(np.isnan(table[k]))]
    if not keep:
        raise RuntimeError("cross-validation failed on every fold")
    return radius_by_loocv(data, cands, lambda k, c: table[k], folds=keep)


def select_radius(config, inst, kind, data, x, decision_dependent=True, evaluator=None):
    spec = config.radius_spec()
    if spec.mode == "fixed":
        return spec.fixed_value, None
    if spec.mode == "theoretical":
        return theoretical_radius(spec, data.n, x), None
    cv = loocv_radius(config, inst, kind, data, decision_dependent, evaluator)
    return cv.radius, cv


def run_variant(variant: str, data: Dataset, instance, x_new, config: ExperimentConfig,
                regressor: str = "ols", xi: float | None = None, evaluator=None) -> VariantResult:
    """``er_d3ro``: radius per config; ``er_dd_saa``: radius 0; ``er_dro``: price-blind regressor.

    ``instance`` is the (risk-augmented) model instance or a :class:`PricingSetup`.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    inst = instance.instance if isinstance(instance, PricingSetup) else instance
    ev = evaluator or RecourseEvaluator(inst)
    t0 = time.perf_counter()
    dd = variant != "er_dro"
    cv = None
    try:
        model = fit_regressor(config, regressor, data, dd)
        res = residuals(model, data).residuals
    except RegressionError as exc:
        return VariantResult(variant, regressor, data.n, np.nan, None, "failed", time.perf_counter() - t0,
                             message=str(exc))
    if xi is None:
        if variant == "er_dd_saa":
            xi = 0.0
        else:
            try:
                xi, cv = select_radius(config, inst, regressor, data, x_new, dd, ev)
            except RuntimeError as exc:
                return VariantResult(variant, regressor, data.n, np.nan, None, "failed",
                                     time.perf_counter() - t0, model=model, message=str(exc))
    sol, st = _solve(inst, model, x_new, xi, res, config, ev)
    secs = time.perf_counter() - t0
    if sol is None:
        return VariantResult(variant, regressor, data.n, xi, None, "failed", secs, cv, model)
    return VariantResult(variant, regressor, data.n, xi, sol, sol.status, secs, cv, model, st)


def empirical_cvar(costs, theta):
    """``min_eta eta + E[(C - eta)_+] / (1 - theta)`` for equally weighted samples."""
    c = np.sort(np.asarray(costs, float))
    m = c.size
    tail = np.cumsum(c[::-1])[::-1]                  # tail[i] = sum_{j >= i} c_j
    above = tail - c * np.arange(m, 0, -1)           # sum (c_j - c_i)_+
    vals = c + above / ((1.0 - theta) * m)
    return float(vals.min())


@dataclass
class OosStats:
    mean_cost: float
    std_error: float
    cvar: float
    composite: float
    clamp_count: int
    m: int
    costs: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {"mean_cost": self.mean_cost, "std_error": self.std_error, "cvar": self.cvar,
                "composite": self.composite, "clamp_count": self.clamp_count, "m": self.m}


def evaluate_oos(z, truth: GroundTruth, base, x_new, m: int, rng, clamp=True,
                 evaluator=None) -> OosStats:
    """Cost ``c^T z + H(z, Y)`` of the base (not risk-augmented) model over ``m`` ground-truth scenarios.

    ``z`` may carry trailing auxiliary coordinates, which are ignored.
    ``composite`` is ``first stage + mean H + rho * CVaR_theta(H)`` with
    ``rho, theta`` from ``base.risk``; negative demands are clamped at zero
    (and counted) when ``clamp`` is set.
    """
    if isinstance(base, PricingSetup):
        base = base.base
    zb = np.asarray(z, float)[:base.d_z]
    z1 = zb[base.coupling_index]
    noise = rng.standard_normal((m, truth.d_y))
    Y = truth.sample(x_new, z1, m, rng, noise=noise)
    clamps = int((Y < 0).sum())
    if clamp:
        Y = np.maximum(Y, 0.0)
    ev = evaluator or RecourseEvaluator(base)
    H = ev.values(zb, Y)
    first = float(base.c_z @ zb)
    costs = first + H
    se = float(costs.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    cv = empirical_cvar(H, base.risk.theta)
    return OosStats(float(costs.mean()), se, cv + first, first + float(H.mean()) + base.risk.rho * cv,
                    clamps, m, costs)


# ---------------------------------------------------------------------------
# guarantees

def true_objective(setup: PricingSetup, truth: GroundTruth, z, x, m: int, rng, evaluator=None):
    """Monte Carlo estimate of ``g(z, x) = c^T z + E[H(z, Y)]`` under the true law (risk-augmented)."""
    inst = setup.instance
    z1 = z[inst.coupling_index]
    Y = truth.sample(x, z1, m, rng)
    ev = evaluator or RecourseEvaluator(inst)
    return float(inst.c_z @ z) + float(ev.values(z, Y).mean())


def calibrate_radius(setup, truth, config, n, x, reps, rng, grid=101, noise_draws=100_000):
    """``(1 - alpha)``-quantile of ``sup_z |f_n(x,z) - f(x,z)|_1 + W1(residuals, noise law)``.

    Simulated over ``reps`` training sets.  The noise term uses the exact
    one-dimensional transport formula, so ``d_y`` must be 1.
    """
    if truth.d_y != 1:
        raise ValueError("radius calibration supports one demand site")
    zs = np.linspace(0.0, config.z1_max, grid)
    ref = truth.noise_std * rng.standard_normal(noise_draws)
    vals = []
    for _ in range(reps):
        data = sample_dataset(truth, n, rng, config.z1_max)
        model = fit_regressor(config, "ols", data)
        F = model.predict_many(np.repeat(x[None], grid, 0), zs[:, None])
        reg = np.abs(F - truth.mean(x, zs)).sum(axis=1).max()
        eps = residuals(model, data).residuals[:, 0]
        vals.append(reg + stats.wasserstein_distance(eps, ref))
    return float(np.quantile(vals, 1.0 - config.alpha))


def certificate_coverage(config: ExperimentConfig, n=100, reps=50, radius_scale=10.0, mc=100_000,
                         calibration_reps=50):
    """Frequency of ``g(z_n, x) <= v_n`` over independent replications (OLS regressor)."""
    setup = make_setup(config)
    truth = setup.truth
    x = draw_x_new(dataclasses.replace(config, regressors=("ols",)), truth, 0)
    xi_mc = calibrate_radius(setup, truth, config, n, x, calibration_reps, substream(config.seed, "calibrate"))
    xi = radius_scale * xi_mc
    ev = RecourseEvaluator(setup.instance)
    rows = []
    for r in range(reps):
        data = sample_dataset(truth, n, substream(config.seed, f"cover:data:{r}"), config.z1_max)
        res = run_variant("er_d3ro", data, setup, x, config, "ols", xi=xi, evaluator=ev)
        if res.solution is None:
            rows.append((r, np.nan, np.nan, False))
            continue
        g = true_objective(setup, truth, res.solution.z, x, mc, substream(config.seed, f"cover:mc:{r}"), ev)
        v = res.solution.objective
        rows.append((r, v, g, bool(g <= v)))
    freq = float(np.mean([row[3] for row in rows]))
    return {"n": n, "alpha": config.alpha, "xi_calibrated": xi_mc, "xi": xi, "replications": reps,
            "frequency": freq, "target": 1.0 - config.alpha, "rows": rows,
            "warning": "fewer than 5 replications" if reps < 5 else ""}


def consistency_trend(config: ExperimentConfig, sizes=(50, 100, 200, 400), reps=5, ref_n=10_000):
    """Median ``|v_n - v*|`` per sample size, theoretical radius, OLS on a linear-feature truth."""
    cfg = dataclasses.replace(config, features="linear", radius="theory", regressors=("ols",))
    setup = make_setup(cfg)
    truth = setup.truth
    x = draw_x_new(cfg, truth, 0)
    ev = RecourseEvaluator(setup.instance)
    ref_data = sample_dataset(truth, ref_n, substream(cfg.seed, "consistency:reference"), cfg.z1_max)
    ref_cfg = dataclasses.replace(cfg, cut_mode="single")
    ref = run_variant("er_d3ro", ref_data, setup, x, ref_cfg, "ols", xi=0.0, evaluator=ev)
    if ref.solution is None:
        raise RuntimeError("reference solve failed")
    v_star = ref.solution.objective
    medians, radii, table = [], [], []
    for n in sizes:
        gaps = []
        xi = theoretical_radius(cfg.radius_spec(), n, x)
        radii.append(xi)
        for r in range(reps):
            data = sample_dataset(truth, n, substream(cfg.seed, f"consistency:data:{n}:{r}"), cfg.z1_max)
            res = run_variant("er_d3ro", data, setup, x, cfg, "ols", xi=xi, evaluator=ev)
            v = np.nan if res.solution is None else res.solution.objective
            gaps.append(abs(v - v_star))
            table.append((n, r, xi, v))
        medians.append(float(np.nanmedian(gaps)))
    med = np.array(medians)
    slope = float(np.polyfit(np.log(radii), np.log(np.maximum(med, 1e-300)), 1)[0])
    return {"sizes": list(sizes), "v_star": v_star, "medians": medians, "radii": radii,
            "monotone": bool(np.all(np.diff(med) < 0)), "loglog_slope": slope, "rows": table,
            "warning": "fewer than 5 replications" if reps < 5 else ""}


def validate_guarantees(config: ExperimentConfig, coverage_reps=50, consistency_reps=5, mc=100_000,
                        coverage_sites=1):
    """Coverage on a one-site, linear-feature variant of the configured instance, then the consistency trend."""
    cov_cfg = dataclasses.replace(config, n_sites=coverage_sites, regressors=("ols",), features="linear")
    return {"coverage": certificate_coverage(cov_cfg, reps=coverage_reps, mc=mc),
            "consistency": consistency_trend(config, reps=consistency_reps)}


# ---------------------------------------------------------------------------
# sweeps

DETAIL_HEAD = ("variant", "regressor", "n", "replication", "dataset_sha256", "xi", "z1", "objective",
               "lower_bound", "gap", "iterations", "status", "oos_cost", "oos_mean", "oos_se", "oos_cvar",
               "clamp_count", "seconds")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def compare(config: ExperimentConfig, record_timings=False, progress=None, replication_offset=0):
    """Every (replication, n, regressor, variant) cell on paired data; returns detail rows.

    Replications ``replication_offset .. replication_offset + replications - 1``
    are run, so a sweep can be split across workers without changing results.
    """
    setup = make_setup(config)
    truth = setup.truth
    ev = RecourseEvaluator(setup.instance)
    ev_base = RecourseEvaluator(setup.base)
    rows = []
    for rep in range(replication_offset, replication_offset + config.replications):
        full = replication_data(config, truth, rep)
        x_new = draw_x_new(config, truth, rep, full.head(min(config.sample_sizes)))
        for n in config.sample_sizes:
            data = full.head(n)
            sha = data.fingerprint()
            for kind in config.regressors:
                for variant in config.variants:
                    res = run_variant(variant, data, setup, x_new, config, kind, evaluator=ev)
                    oos = None
                    if res.solution is not None and res.status != "unbounded":
                        oos = evaluate_oos(res.solution.z, truth, setup.base, x_new, config.oos_scenarios,
                                           substream(config.seed, f"oos:rep:{rep}"), config.clamp_demand,
                                           ev_base)
                    sol = res.solution
                    gap = np.nan if sol is None else (sol.objective - sol.lower_bound) / max(1.0, abs(sol.objective))
                    row = (variant, kind, n, rep, sha, float(res.xi),
                           np.nan if sol is None else float(sol.z[setup.instance.coupling_index]),
                           np.nan if sol is None else float(sol.objective),
                           np.nan if sol is None else float(sol.lower_bound), float(gap),
                           0 if sol is None else sol.iterations, res.status,
                           np.nan if oos is None else oos.composite, np.nan if oos is None else oos.mean_cost,
                           np.nan if oos is None else oos.std_error, np.nan if oos is None else oos.cvar,
                           -1 if oos is None else oos.clamp_count,
                           float(res.seconds) if record_timings else 0.0)
                    rows.append(row)
                    if progress:
                        progress(row)
    return rows


SUMMARY_HEAD = ("variant", "regressor", "n", "mean_oos_cost", "std_error", "mean_seconds", "mean_gap",
                "runs", "optimal", "unbounded", "failed", "iteration_limit", "mean_z1")


def summarize(rows):
    """Figure-1 table: one row per (variant, regressor, n), ordered by those keys."""
    idx = {h: i for i, h in enumerate(DETAIL_HEAD)}
    cells = {}
    for r in rows:
        cells.setdefault((r[idx["variant"]], r[idx["regressor"]], int(r[idx["n"]])), []).append(r)
    order = {v: i for i, v in enumerate(VARIANTS)}
    out = []
    for key in sorted(cells, key=lambda k: (order.get(k[0], 99), k[1], k[2])):
        rs = cells[key]
        cost = np.array([float(r[idx["oos_cost"]]) for r in rs])
        ok = cost[~np.isnan(cost)]
        status = [r[idx["status"]] for r in rs]
        se = float(ok.std(ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else 0.0
        out.append(key + (float(ok.mean()) if ok.size else np.nan, se,
                          float(np.mean([float(r[idx["seconds"]]) for r in rs])),
                          float(np.nanmean([float(r[idx["gap"]]) for r in rs])) if ok.size else np.nan,
                          len(rs), status.count("optimal"), status.count("unbounded"), status.count("failed"),
                          status.count("iteration_limit"),
                          float(np.nanmean([float(r[idx["z1"]]) for r in rs]))))
    return out


def summary_lookup(summary):
    """``{(variant, regressor, n): row-dict}`` for the summary rows."""
    return {tuple(s[:3]): dict(zip(SUMMARY_HEAD, s)) for s in summary}
