"""Command line interface: generate, fit, solve, evaluate, validate, compare."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .ambiguity import RadiusSpec
from .benders import run_benders, write_rows
from .core import Dataset, TwoStageInstance
from .pricing import GroundTruth
from .regression import load_model, residuals

log = logging.getLogger("erd3ro")


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def _config(args) -> ex.ExperimentConfig:
    d = _load(args.config) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.tol_gap is not None:
        d["eps_gap"] = args.tol_gap
    if args.radius is not None:
        d["radius"] = args.radius
    return ex.ExperimentConfig.from_json(d)


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _vector(text):
    if text.endswith(".json"):
        return np.asarray(_load(text), float)
    return np.array([float(v) for v in text.split(",")])


def cmd_generate(args):
    cfg = _config(args)
    setup = ex.make_setup(cfg)
    setup.instance.save(_out(args, "instance.json"))
    setup.base.save(_out(args, "base_instance.json"))
    _dump(_out(args, "truth.json"), setup.truth.to_json())
    _dump(_out(args, "config.json"), cfg.to_json())
    for rep in range(cfg.replications):
        full = ex.replication_data(cfg, setup.truth, rep)
        x = ex.draw_x_new(cfg, setup.truth, rep, full.head(min(cfg.sample_sizes)))
        _dump(_out(args, f"x_new_rep{rep}.json"), [float(v) for v in x])
        for n in cfg.sample_sizes:
            full.head(n).to_csv(_out(args, f"data_rep{rep}_n{n}.csv"))
    return 0


def cmd_fit(args):
    cfg = _config(args)
    data = Dataset.from_csv(args.data)
    model = ex.fit_regressor(cfg, args.kind, data, decision_dependent=not args.decision_independent)
    model.save(args.out if args.out else _out(args, "model.json"))
    return 0


def cmd_solve(args):
    cfg = _config(args)
    inst = TwoStageInstance.load(args.instance)
    model = load_model(args.model)
    data = Dataset.from_csv(args.data)
    x = _vector(args.x)
    res = residuals(model, data).residuals
    spec = cfg.radius_spec()
    if spec.mode == "cross_validated":
        cv = ex.loocv_radius(cfg, inst, model.kind, data, model.decision_dependent)
        xi = cv.radius
        write_rows(_out(args, "loocv.csv"), cv.to_csv_rows())
    elif spec.mode == "theoretical":
        xi = ex.theoretical_radius(spec, data.n, x)
    else:
        xi = spec.fixed_value
    opts = dataclasses.replace(cfg.benders_options(), trace=args.trace)
    sol, state = run_benders(inst, model, x, xi, res, opts)
    doc = sol.to_json()
    doc["xi"] = float(xi)
    _dump(_out(args, "solution.json"), doc)
    write_rows(_out(args, "iterations.csv"), state.log_rows(args.record_timings))
    if args.trace:
        write_rows(_out(args, "search_trace.csv"), state.master.trace_csv_rows())
    if args.lp_dump:
        from .lp import lp_to_text
        mp = state.master
        zc, pos = mp.locate(sol.zc)
        with open(_out(args, "fixed_coupling.lp"), "w") as fh:
            fh.write(lp_to_text(mp.build_piece_point_lp(pos, zc)[0]))
    print(json.dumps({"objective": doc["objective"], "status": doc["status"], "xi": xi}))
    return 0 if sol.status in ("optimal", "unbounded") else 2


def cmd_evaluate(args):
    cfg = _config(args)
    base = TwoStageInstance.load(args.instance)
    truth = GroundTruth.from_json(_load(args.truth))
    sol = _load(args.solution)
    x = _vector(args.x)
    m = args.scenarios or cfg.oos_scenarios
    st = ex.evaluate_oos(np.asarray(sol["z"]), truth, base, x, m, ex.substream(cfg.seed, "oos:evaluate"),
                         cfg.clamp_demand)
    head = ("mean_cost", "std_error", "cvar", "composite", "clamp_count", "m")
    d = st.to_json()
    write_rows(_out(args, "oos.csv"), [head, tuple(repr(d[h]) if isinstance(d[h], float) else d[h] for h in head)])
    return 0


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def cmd_validate(args):
    cfg = _config(args)
    rep = ex.validate_guarantees(cfg, coverage_reps=args.coverage_reps, consistency_reps=args.consistency_reps,
                                 mc=args.mc)
    _dump(_out(args, "guarantees.json"), _clean(rep))
    return 0


def _compare_job(payload):
    cfg, rep, record = payload
    return ex.compare(dataclasses.replace(cfg, replications=1), record, replication_offset=rep)


def cmd_compare(args):
    cfg = _config(args)
    if args.threads and args.threads > 1 and cfg.replications > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            parts = list(pool.map(_compare_job, [(cfg, r, args.record_timings) for r in range(cfg.replications)]))
        rows = [row for part in parts for row in part]
    else:
        rows = ex.compare(cfg, args.record_timings)
    write_rows(_out(args, "detail.csv"), [ex.DETAIL_HEAD] + [tuple(ex._fmt(v) for v in r) for r in rows])
    summary = ex.summarize(rows)
    write_rows(_out(args, "summary.csv"), [ex.SUMMARY_HEAD] + [tuple(ex._fmt(v) for v in r) for r in summary])
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--config", default=None, help="experiment config JSON")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for replications")
    common.add_argument("--tol-gap", type=float, default=None, help="relative Benders gap tolerance")
    common.add_argument("--radius", default=None, help="fixed:<v> | loocv | theory")
    common.add_argument("--record-timings", action="store_true",
                        help="write wall-clock seconds (otherwise zeros, for byte-identical reruns)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="erd3ro", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="instance, ground truth and datasets")

    f = sub.add_parser("fit", parents=[common], help="fit a regressor to a dataset CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--kind", choices=("ols", "kernel", "relu_nn"), default="ols")
    f.add_argument("--decision-independent", action="store_true", help="drop the decision columns")
    f.add_argument("--out", default=None)

    s = sub.add_parser("solve", parents=[common], help="solve the robust model at a covariate")
    s.add_argument("--instance", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="training data (residuals, cross-validation)")
    s.add_argument("--x", required=True, help="comma-separated covariate or a JSON list file")
    s.add_argument("--trace", action="store_true", help="also write the branch-and-bound trace")
    s.add_argument("--lp-dump", action="store_true", help="write the final fixed-price master LP")

    e = sub.add_parser("evaluate", parents=[common], help="out-of-sample cost of a solution")
    e.add_argument("--instance", required=True, help="base (not risk-augmented) instance JSON")
    e.add_argument("--truth", required=True)
    e.add_argument("--solution", required=True)
    e.add_argument("--x", required=True)
    e.add_argument("--scenarios", type=int, default=None)

    v = sub.add_parser("validate", parents=[common], help="coverage and consistency report")
    v.add_argument("--coverage-reps", type=int, default=50)
    v.add_argument("--consistency-reps", type=int, default=5)
    v.add_argument("--mc", type=int, default=100_000)

    sub.add_parser("compare", parents=[common], help="variant x regressor x n sweep")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        RadiusSpec.parse(args.radius) if args.radius else None
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handler = {"generate": cmd_generate, "fit": cmd_fit, "solve": cmd_solve, "evaluate": cmd_evaluate,
               "validate": cmd_validate, "compare": cmd_compare}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
