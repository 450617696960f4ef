import dataclasses

import numpy as np
import pytest

from erd3ro import experiments as ex
from erd3ro.experiments import ExperimentConfig
from erd3ro.pricing import GroundTruth, generate_instance, sample_dataset

TINY = ExperimentConfig(n_warehouses=1, n_sites=2, n_covariates=2, sample_sizes=(12, 20), replications=2,
                        oos_scenarios=200, radius="fixed:5", bandwidth=40.0)


def test_config_json_roundtrip_and_validation(tmp_path):
    d = TINY.to_json()
    assert ExperimentConfig.from_json(d) == TINY
    with pytest.raises(ValueError):
        ExperimentConfig.from_json({**d, "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentConfig(p1=200.0)
    with pytest.raises(ValueError):
        ExperimentConfig(radius="median")
    with pytest.raises(ValueError):
        ExperimentConfig(variants=("er_xx",))


def test_substreams():
    a = ex.substream(3, "data:rep:0").standard_normal(5)
    b = ex.substream(3, "data:rep:0").standard_normal(5)
    c = ex.substream(3, "data:rep:1").standard_normal(5)
    d = ex.substream(4, "data:rep:0").standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_paired_datasets_and_prefixes():
    setup = ex.make_setup(TINY)
    full = ex.replication_data(TINY, setup.truth, 0)
    again = ex.replication_data(TINY, setup.truth, 0)
    assert full.fingerprint() == again.fingerprint()
    assert full.n == 20
    assert ex.replication_data(TINY, setup.truth, 1).fingerprint() != full.fingerprint()
    x = ex.draw_x_new(TINY, setup.truth, 0, full.head(12))
    assert ((full.head(12).X - x) ** 2).sum(axis=1).min() < TINY.bandwidth ** 2


def test_empirical_cvar():
    assert ex.empirical_cvar([5.0] * 7, 0.9) == pytest.approx(5.0)
    assert ex.empirical_cvar([0.0, 10.0], 0.5) == pytest.approx(10.0)
    c = np.random.default_rng(0).normal(size=1000)
    assert ex.empirical_cvar(c, 0.9) == pytest.approx(np.sort(c)[-100:].mean(), abs=1e-12)


def test_oos_zero_noise_and_stream_stability():
    setup = ex.make_setup(TINY)
    quiet = dataclasses.replace(setup.truth, noise_std=0.0)
    z = np.array([200.0, 800.0])
    x = np.array([4.0, 6.0])
    st = ex.evaluate_oos(z, quiet, setup.base, x, 50, np.random.default_rng(0))
    single = ex.realized_cost(setup.base, z, quiet.mean(x, 200.0)[None])[0]
    assert st.mean_cost == pytest.approx(single, rel=1e-12)
    assert st.std_error == pytest.approx(0.0, abs=1e-9)
    a = ex.evaluate_oos(z, setup.truth, setup.base, x, 100, ex.substream(0, "oos:rep:0"))
    b = ex.evaluate_oos(z, setup.truth, setup.base, x, 200, ex.substream(0, "oos:rep:0"))
    np.testing.assert_array_equal(a.costs, b.costs[:100])
    # trailing auxiliary coordinates are ignored
    c = ex.evaluate_oos(np.append(z, 1e4), setup.truth, setup, x, 100, ex.substream(0, "oos:rep:0"))
    np.testing.assert_array_equal(a.costs, c.costs)


def test_clamping_counts_negative_demand():
    setup = ex.make_setup(TINY)
    truth = dataclasses.replace(setup.truth, alpha=np.array([-5000.0, 1000.0]))
    st = ex.evaluate_oos(np.array([0.0, 0.0]), truth, setup.base, np.ones(2), 20, np.random.default_rng(1))
    assert st.clamp_count == 20
    st = ex.evaluate_oos(np.array([400.0, 0.0]), truth, setup.base, np.ones(2), 20, np.random.default_rng(1))
    assert st.clamp_count == 40 and st.mean_cost == 0.0


def test_variants_and_radius_zero_identity():
    setup = ex.make_setup(TINY)
    data = ex.replication_data(TINY, setup.truth, 0)
    x = ex.draw_x_new(TINY, setup.truth, 0, data)
    saa = ex.run_variant("er_dd_saa", data, setup, x, TINY, "ols")
    d0 = ex.run_variant("er_d3ro", data, setup, x, TINY, "ols", xi=0.0)
    assert saa.xi == 0.0
    assert saa.solution.objective == pytest.approx(d0.solution.objective, rel=1e-12)
    np.testing.assert_allclose(saa.z, d0.z)
    dro = ex.run_variant("er_dro", data, setup, x, TINY, "ols")
    assert dro.z[0] == pytest.approx(TINY.z1_max)
    assert not dro.model.decision_dependent
    d5 = ex.run_variant("er_d3ro", data, setup, x, TINY, "ols")
    assert d5.xi == 5.0 and d5.solution.objective >= d0.solution.objective - 1e-6 * abs(d0.solution.objective)


def test_price_blind_truth_makes_variants_agree():
    rng = np.random.default_rng(5)
    truth = GroundTruth(rng.uniform(3, 5, (2, 2)), np.zeros(2), rng.uniform(1000, 2000, 2), features="linear")
    setup = generate_instance(rng, 1, 2, 2, truth=truth)
    data = sample_dataset(truth, 30, rng, zero_noise=True)
    cfg = dataclasses.replace(TINY, radius="fixed:1")
    x = data.X[0]
    a = ex.run_variant("er_d3ro", data, setup, x, cfg, "ols")
    b = ex.run_variant("er_dro", data, setup, x, cfg, "ols")
    np.testing.assert_allclose(a.z[:2], b.z[:2], rtol=1e-5, atol=1e-3)


def test_loocv_selects_a_candidate():
    cfg = dataclasses.replace(TINY, radius="loocv", radius_candidates=(1.0, 100.0), loocv_folds=3)
    setup = ex.make_setup(cfg)
    data = ex.replication_data(cfg, setup.truth, 0, 20)
    cv = ex.loocv_radius(cfg, setup.instance, "ols", data)
    assert cv.radius in (1.0, 100.0)
    assert len(cv.table) == 2 * 3
    assert ex.fold_indices(10, None) == list(range(10))
    assert ex.fold_indices(400, 10)[0] == 0 and ex.fold_indices(400, 10)[-1] == 399


def test_compare_rows_are_paired():
    cfg = dataclasses.replace(TINY, replications=1, sample_sizes=(12,))
    rows = ex.compare(cfg)
    idx = {h: i for i, h in enumerate(ex.DETAIL_HEAD)}
    assert len(rows) == 2 * 3
    assert len({r[idx["dataset_sha256"]] for r in rows}) == 1
    assert all(r[idx["seconds"]] == 0.0 for r in rows)
    summary = ex.summarize(rows)
    look = ex.summary_lookup(summary)
    assert set(look) == {(v, k, 12) for v in ex.VARIANTS for k in ("ols", "kernel")}
    assert look[("er_dro", "ols", 12)]["mean_z1"] == pytest.approx(cfg.z1_max)


def test_coverage_with_huge_radius():
    cfg = ExperimentConfig(n_warehouses=1, n_sites=1, n_covariates=2, features="linear", regressors=("ols",))
    rep = ex.certificate_coverage(cfg, n=30, reps=3, radius_scale=1000.0, mc=5000, calibration_reps=5)
    assert rep["frequency"] == 1.0
    assert rep["warning"]
