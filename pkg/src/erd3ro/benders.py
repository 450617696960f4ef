"""Decomposition loop: master B&B, per-scenario dual subproblems and nonconvex cuts."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import TwoStageInstance
from .master import MasterError, MasterProblem, theta_lower_bounds
from .recourse import RecourseEvaluator
from .reformulation import (CutPool, ReformulationSkeleton, build_reformulation,
                            cut_coefficients)
from .regression import Regressor

log = logging.getLogger(__name__)


class BendersIterationLimit(RuntimeError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class BendersOptions:
    mode: str = "multi"
    eps_gap: float = 1e-6          # relative
    eps_cut: float = 1e-6          # absolute
    eps_master: float | None = None
    max_iter: int = 500
    backend: str = "auto"
    unbounded_floor: float = -1e10
    tangents: int = 5
    trace: bool = False
    raise_on_limit: bool = True

    @property
    def master_tol(self):
        return self.eps_gap / 10 if self.eps_master is None else self.eps_master


@dataclass
class BendersCut:
    scenario: int              # -1 for the averaged cut
    pi: np.ndarray | None
    iteration: int
    coefficients: tuple        # (a0, A, b0, b)

    def rhs(self, z, F):
        a0, A, b0, b = self.coefficients
        z = np.asarray(z, float)
        return float(a0 @ F + z @ (A @ F) + b0 + b @ z)


@dataclass
class BendersState:
    iteration: int = 0
    pool: CutPool | None = None
    LB: float = -np.inf
    UB: float = np.inf
    incumbent: dict | None = None
    eps_gap: float = 1e-6
    log: list = field(default_factory=list)
    z_history: list = field(default_factory=list)
    violated_history: list = field(default_factory=list)
    status: str = "running"

    def gap(self):
        if not np.isfinite(self.UB) or not np.isfinite(self.LB):
            return np.inf
        return (self.UB - self.LB) / max(1.0, abs(self.UB))

    def log_rows(self, record_timings=True):
        head = ("iteration", "LB", "UB", "gap", "cuts_added", "master_seconds", "subproblem_seconds")
        rows = [head]
        for r in self.log:
            ms, ss = (r["master_seconds"], r["subproblem_seconds"]) if record_timings else (0.0, 0.0)
            rows.append((r["iteration"], repr(r["LB"]), repr(r["UB"]), repr(r["gap"]), r["cuts_added"],
                         repr(ms), repr(ss)))
        return rows


@dataclass
class BendersSolution:
    z: np.ndarray
    lam: float
    phi: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    objective: float
    lower_bound: float
    iterations: int
    status: str
    zc: float
    F: np.ndarray
    piece: int

    def to_json(self):
        return {"z": [float(v) for v in self.z], "lambda": float(self.lam),
                "Theta": [float(v) for v in self.theta], "objective": float(self.objective),
                "lower_bound": float(self.lower_bound), "iterations": int(self.iterations),
                "status": self.status}


def generate_cuts(skel: ReformulationSkeleton, evaluator: RecourseEvaluator, z, F, iteration: int):
    """Solve every scenario subproblem at ``z`` and return the cuts and values ``Omega_k``."""
    inst = skel.instance
    Y = F[None, :] + skel.residuals
    values, pis, _, bases = evaluator.evaluate(z, Y)
    cuts = []
    coeffs = [cut_coefficients(inst, pis[k], skel.residuals[k]) for k in range(skel.n_scen)]
    if skel.mode == "multi":
        for k in range(skel.n_scen):
            cuts.append(BendersCut(k, pis[k], iteration, coeffs[k]))
    else:
        avg = tuple(np.mean([c[j] for c in coeffs], axis=0) for j in range(4))
        avg = (avg[0], avg[1], float(avg[2]), avg[3])
        cuts.append(BendersCut(-1, pis.mean(axis=0), iteration, avg))
    return cuts, values, bases


def run_benders(instance: TwoStageInstance, model: Regressor | None, x, xi: float, residuals,
                options: BendersOptions | None = None, embedding=None, evaluator=None,
                initial_cuts=None):
    """Algorithm: master -> subproblems -> bounds -> cuts, until cuts hold or the gap closes.

    ``initial_cuts`` (a list of ``BendersCut`` from an earlier run on the
    same instance, model, covariate and residuals) warm-starts the pool; cuts
    do not depend on the radius.
    """
    opt = options or BendersOptions()
    skel = build_reformulation(instance, model, x, xi, residuals, opt.mode, embedding=embedding)
    ev = evaluator or RecourseEvaluator(instance)
    pool = CutPool(instance.d_z, instance.d_y)
    seen = set()
    all_cuts = []

    def add(cut, key):
        if key in seen:
            return False
        seen.add(key)
        a0, A, b0, b = cut.coefficients
        th = 0 if cut.scenario < 0 else cut.scenario
        pool.add(a0, A, b0, b, th, cut.iteration, cut.scenario)
        all_cuts.append(cut)
        return True

    for cut in initial_cuts or []:
        add(cut, _cut_key(cut))
    theta_min = theta_lower_bounds(skel, ev)
    mp = MasterProblem(skel, pool, theta_min, backend=opt.backend, eps_master=opt.master_tol,
                       tangents=opt.tangents, trace=opt.trace)
    state = BendersState(pool=pool, eps_gap=opt.eps_gap)
    n = skel.n_scen
    best = None
    hint = None
    for t in range(1, opt.max_iter + 1):
        state.iteration = t
        t0 = time.perf_counter()
        ms = mp.solve(hint)
        t1 = time.perf_counter()
        state.LB = max(state.LB, ms.bound)
        parts = skel.split(ms.v)
        z = parts["z"]
        state.z_history.append(z.copy())
        if state.LB < opt.unbounded_floor:
            state.status = "unbounded"
            best = (np.inf, parts, ms, np.full(skel.n_theta, np.nan))
            _log(state, t, 0, t1 - t0, 0.0)
            break
        cuts, omega, bases = generate_cuts(skel, ev, z, ms.F, t)
        t2 = time.perf_counter()
        ub_t = float(instance.c_z @ z + parts["lambda"] * xi + omega.mean())
        theta_val = omega if skel.mode == "multi" else np.array([omega.mean()])
        if ub_t < state.UB:
            state.UB = ub_t
            best = (ub_t, parts, ms, theta_val)
        if skel.mode == "multi":
            violated = parts["theta"] < omega - opt.eps_cut
        else:
            violated = np.array([parts["theta"][0] < omega.mean() - opt.eps_cut])
        state.violated_history.append(bool(violated.any()))
        added = 0
        for cut in cuts:
            idx = 0 if cut.scenario < 0 else cut.scenario
            if violated[idx]:
                added += add(cut, _cut_key(cut))
        _log(state, t, added, t1 - t0, t2 - t1)
        hint = ms.zc
        if not violated.any():
            state.status = "optimal"
            break
        if state.gap() <= opt.eps_gap:
            state.status = "optimal"
            break
        if added == 0:
            # Violations only at LP-tolerance level: the pool already holds every cut at z^t.
            state.status = "optimal"
            break
    else:
        state.status = "iteration_limit"
        if opt.raise_on_limit:
            raise BendersIterationLimit(f"no convergence within {opt.max_iter} iterations "
                                        f"(LB={state.LB}, UB={state.UB})", state)
    ub, parts, ms, theta_val = best
    state.incumbent = {"z": parts["z"], "lambda": parts["lambda"], "phi": parts["phi"],
                       "psi": parts["psi"], "theta": theta_val}
    sol = BendersSolution(parts["z"].copy(), parts["lambda"], parts["phi"], parts["psi"], theta_val,
                          ub, state.LB, state.iteration, state.status, ms.zc, ms.F, ms.piece)
    state.cuts = all_cuts
    state.master = mp
    state.theta_min = theta_min
    return sol, state


def _cut_key(cut: BendersCut):
    a0, A, b0, b = cut.coefficients
    return (cut.scenario, np.round(np.concatenate([a0.ravel(), A.ravel(), [b0], b.ravel()]), 9).tobytes())


def _log(state, t, added, m_sec, s_sec):
    state.log.append({"iteration": t, "LB": float(state.LB), "UB": float(state.UB),
                      "gap": float(state.gap()), "cuts_added": int(added),
                      "master_seconds": float(m_sec), "subproblem_seconds": float(s_sec)})


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def write_solution(path, sol: BendersSolution):
    with open(path, "w") as fh:
        json.dump(sol.to_json(), fh, indent=1, sort_keys=True)
