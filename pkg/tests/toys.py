"""Small seeded instances shared by the tests."""

import numpy as np

from erd3ro.core import AffineMapInZ, TwoStageInstance
from erd3ro.pricing import generate_instance, sample_dataset
from erd3ro.regression import fit_model, residuals

# Filled by the acceptance tests, printed by the terminal summary hook.
ACCEPTANCE_LINES = []


def toy_pricing(seed, I=1, J=1, n=5, rho=1.0, L=1):
    rng = np.random.default_rng(seed)
    setup = generate_instance(rng, I, J, L, rho=rho)
    data = sample_dataset(setup.truth, n, rng)
    return setup, data


def toy_problem(seed, kind="ols", I=1, J=1, n=5, rho=1.0, bandwidth=60.0):
    setup, data = toy_pricing(seed, I, J, n, rho)
    model = fit_model(kind, data, bandwidth=bandwidth)
    x = data.X[0]
    return setup, data, model, x, residuals(model, data).residuals


def identity_recourse(c_z=(1.0,), lower=(0.0,), upper=(1.0,)):
    """``H(z, Y) = Y`` for scalar ``Y``; ``z`` does not enter the recourse."""
    d = len(c_z)
    return TwoStageInstance(
        c_z=np.array(c_z, float), z_lower=np.array(lower, float), z_upper=np.array(upper, float),
        q=np.array([1.0]), W=np.array([[1.0]]),
        T=AffineMapInZ(np.array([[1.0]]), np.zeros((d, 1, 1))),
        h=AffineMapInZ(np.zeros(1), np.zeros((d, 1))))


TINY_CONFIG = {"n_warehouses": 1, "n_sites": 2, "n_covariates": 2, "sample_sizes": [10, 15],
               "replications": 1, "oos_scenarios": 100, "radius": "loocv", "radius_candidates": [1.0, 50.0],
               "loocv_folds": 2, "bandwidth": 40.0}


def cli_pipeline(out, config=None, seed=7, validate=False):
    """Run every CLI subcommand into ``out``; returns ``{relative path: bytes}``."""
    import json
    import os

    from erd3ro.cli import main

    os.makedirs(out, exist_ok=True)
    cfg = os.path.join(out, "config_in.json")
    with open(cfg, "w") as fh:
        json.dump(config or TINY_CONFIG, fh)
    common = ["--config", cfg, "--seed", str(seed)]
    d = lambda *p: os.path.join(out, *p)
    assert main(["generate", *common, "--out-dir", d("gen")]) == 0
    assert main(["fit", *common, "--data", d("gen", "data_rep0_n15.csv"), "--kind", "kernel",
                 "--out", d("model.json")]) == 0
    assert main(["solve", *common, "--instance", d("gen", "instance.json"), "--model", d("model.json"),
                 "--data", d("gen", "data_rep0_n15.csv"), "--x", d("gen", "x_new_rep0.json"), "--trace",
                 "--lp-dump", "--out-dir", d("solve")]) == 0
    assert main(["solve", *common, "--radius", "fixed:3", "--instance", d("gen", "instance.json"),
                 "--model", d("model.json"), "--data", d("gen", "data_rep0_n15.csv"),
                 "--x", d("gen", "x_new_rep0.json"), "--out-dir", d("solve_fixed")]) == 0
    assert main(["evaluate", *common, "--instance", d("gen", "base_instance.json"), "--truth",
                 d("gen", "truth.json"), "--solution", d("solve", "solution.json"), "--x",
                 d("gen", "x_new_rep0.json"), "--out-dir", d("eval")]) == 0
    assert main(["compare", *common, "--radius", "fixed:2", "--out-dir", d("compare")]) == 0
    if validate:
        assert main(["validate", *common, "--coverage-reps", "5", "--consistency-reps", "5", "--mc", "2000",
                     "--out-dir", d("validate")]) == 0
    files = {}
    for root, _, names in os.walk(out):
        for name in names:
            if name == "config_in.json":
                continue
            p = os.path.join(root, name)
            with open(p, "rb") as fh:
                files[os.path.relpath(p, out)] = fh.read()
    return files
