import json
import math
import warnings

import mpmath
import numpy as np
import pytest
from scipy import stats as sps
from scipy.special import ndtri

from mdev.bounds import lm21_bound
from mdev.harness import (ExperimentSpec, clopper_pearson, concentration_check,
                          em_stationary_q_mean, estimate_tail_ratio, fit_c_alpha,
                          fit_envelope_constant, ks_distance, ks_rate_slope, lm21_falsifier,
                          lm21_moment, mdp_estimate, min_prefactor, prepare, replicate,
                          run_experiment, run_replications)
from mdev.integrator import noise_block


def normal_draws(n, seed=0):
    return noise_block(seed, 99, n, 1)[:, 0]


def test_spec_validation():
    with pytest.raises(ValueError, match="n_reps"):
        ExperimentSpec(n_reps=50)
    with pytest.raises(ValueError, match=r"eta\[1\]"):
        ExperimentSpec(eta=(0.1, 1.5))
    with pytest.raises(ValueError, match="x_grid"):
        ExperimentSpec(x_grid=(0.0, 2.0, 1.0))
    with pytest.raises(ValueError, match="statistic"):
        ExperimentSpec(statistic="T")
    spec = ExperimentSpec(eta=[0.1])
    assert spec.eta == (0.1,) and spec.x_grid[-1] == 2.5 and len(spec.x_grid) == 11


def test_clopper_pearson_matches_scipy():
    for k, n in [(0, 50), (3, 50), (50, 50), (1097, 50_000), (17, 10_000)]:
        ci = sps.binomtest(k, n).proportion_ci(confidence_level=0.95, method="exact")
        assert clopper_pearson(k, n) == pytest.approx((ci.low, ci.high), rel=1e-9, abs=1e-15)


def test_tail_ratio_on_normal_draws():
    z = normal_draws(100_000)
    row = estimate_tail_ratio(z, [1.0])[0]
    assert row.ci_lo <= 1.0 <= row.ci_hi
    assert row.exceed_count == int(np.sum(z > 1.0))
    assert row.ci_lo <= row.ratio <= row.ci_hi
    sym = estimate_tail_ratio(z, [0.0])[0]
    assert sym.ci_lo <= 1.0 <= sym.ci_hi


def test_tail_ratio_zero_counts():
    n = 1000
    row = estimate_tail_ratio(np.zeros(n), [1.0])[0]
    assert row.ratio == 0.0 and row.ci_lo == 0.0
    assert row.ci_hi * row.normal_tail == pytest.approx(1 - 0.025 ** (1 / n), rel=1e-9)
    assert row.ci_hi == pytest.approx(3.689 / n / 0.1587, rel=2e-3)
    # strict inequality: samples equal to x do not count
    assert estimate_tail_ratio(np.ones(10), [1.0])[0].exceed_count == 0


def test_ks_distance_examples():
    assert ks_distance(np.zeros(10)) == 0.5
    n = 100
    assert ks_distance(ndtri((np.arange(1, n + 1) - 0.5) / n)) == pytest.approx(0.005, abs=1e-12)
    z = normal_draws(20_000, seed=1)
    assert ks_distance(z) == pytest.approx(sps.kstest(z, "norm").statistic, abs=1e-15)
    assert ks_distance(z) <= 0.012
    with pytest.raises(ValueError):
        ks_distance([1.0])


def test_ks_rate_slope_recovers_power():
    etas = np.array([0.2, 0.1, 0.05])
    ks = 0.3 * np.sqrt(etas * np.abs(np.log(etas)))
    assert ks_rate_slope(etas, ks) == pytest.approx(1.0, abs=1e-12)


def test_mdp_estimate_on_normal_draws():
    z = normal_draws(400_000, seed=2)
    row = mdp_estimate(z, 2.0, 1.0)
    exact = -math.log(0.022750131948179) / 4
    assert exact == pytest.approx(0.945796, abs=1e-6)
    assert row.target == 0.5
    assert row.ci_lo <= exact <= row.ci_hi
    zero = mdp_estimate(z, 2.0, 0.0)
    assert zero.target == 0.0 and abs(zero.estimate - math.log(2) / 4) < 0.01
    half = mdp_estimate(z[:200_000], 2.0, 1.0)
    assert row.ci_hi - row.ci_lo < half.ci_hi - half.ci_lo
    none = mdp_estimate(np.zeros(100), 2.0, 1.0)
    assert none.estimate == math.inf and none.low_count
    with pytest.raises(ValueError):
        mdp_estimate(z, 0.0, 1.0)


def test_envelope_fit_ignores_consistent_cells():
    z = normal_draws(100_000, seed=3)
    rows = estimate_tail_ratio(z, [0.5, 1.0, 1.5], eta=0.05, statistic="W", side="upper")
    assert fit_envelope_constant(rows) <= 0.5


def test_min_prefactor_solves_boundary():
    for K, p in [(0.0, 0.3), (2.0, 0.01), (50.0, 1e-30), (0.5, 0.9)]:
        c = min_prefactor(K, p)
        assert c * math.exp(-K / c) == pytest.approx(p, rel=1e-10)
    assert min_prefactor(3.0, 0.0) == 0.0


def test_replication_results_do_not_depend_on_workers_or_chunks():
    spec = ExperimentSpec(eta=(0.2,), n_reps=300, chunk_size=64)
    setup = prepare(spec)
    q = {"W", "S", "psi_sum", "drift_sum"}
    serial = replicate(spec, setup, 0.2, q, threads=1)
    parallel = replicate(spec, setup, 0.2, q, threads=4)
    rechunked = replicate(ExperimentSpec(eta=(0.2,), n_reps=300, chunk_size=300), setup, 0.2, q, threads=1)
    for k in q:
        assert np.array_equal(serial[k], parallel[k])
        assert np.array_equal(serial[k], rechunked[k])


def test_run_replications_is_reproducible():
    spec = ExperimentSpec(eta=(0.2,), n_reps=100)
    a = json.dumps(run_replications(spec, threads=1).to_dict(), allow_nan=False)
    b = json.dumps(run_replications(spec, threads=3).to_dict(), allow_nan=False)
    assert a == b
    res = json.loads(a)
    assert len(res["samples"]["0.2"]["W"]) == 100
    assert res["samples"]["0.2"]["W"] == sorted(res["samples"]["0.2"]["W"])


def test_mdp_warning_for_large_scaling():
    spec = ExperimentSpec(eta=(0.2,), n_reps=100, a_mdp=2.0, statistic="W")
    with pytest.warns(UserWarning, match="large"):
        run_replications(spec)


def test_y_sum_degenerate_for_constant_gradient():
    out = concentration_check("y_sum", ExperimentSpec(eta=(0.2,), n_reps=1000))
    assert all(r.empirical_tail == 0.0 for r in out.rows)
    with pytest.raises(ValueError):
        concentration_check("y_sum", ExperimentSpec(eta=(0.2,), n_reps=500))


def test_drift_sum_mean_matches_stationary_moment():
    spec = ExperimentSpec(eta=(0.05,), n_reps=1000)
    out = concentration_check("drift_sum", spec)
    # eta * m * E g^2 with E g^2 = 1/(2 - eta)
    assert out.constants["mean"] == pytest.approx(0.05 * 400 / 1.95, rel=0.03)
    assert out.constants["rate"] > 0 and not out.violation


def test_q_mean_under_em_law(ou, ou_x2_solution):
    assert em_stationary_q_mean(ou, ou_x2_solution, 0.1) == pytest.approx(1 / 1.9, rel=1e-12)


def test_lm21_moments_against_independent_quadrature():
    f = lambda x: (x - 1) ** 2 * mpmath.exp(0.5 * abs(x - 1) - x)
    ref = mpmath.quad(f, [0, 1, mpmath.inf])
    assert lm21_moment("centered_exponential", 1.0) == pytest.approx(float(ref), rel=1e-9)
    g = lambda z: (z * z - 1) ** 2 * mpmath.exp(0.25 * abs(z * z - 1) - z * z / 2) / mpmath.sqrt(2 * mpmath.pi)
    ref = mpmath.quad(g, [-mpmath.inf, -1, 0, 1, mpmath.inf])
    assert lm21_moment("gaussian_square", 1.0) == pytest.approx(float(ref), rel=1e-9)
    assert lm21_moment("bounded", 0.5) == pytest.approx(math.e)


def test_lm21_falsifier_small_run():
    out = lm21_falsifier("bounded", 1.0, n=200, n_reps=2000, seed=1)
    assert not out.violation
    assert out.constants["piecewise_dominates"]
    assert lm21_bound(0.0, 10.0, 1.0, 1.0, 1.0, form="piecewise")[0] == 1.0
    ps = [r.empirical_tail for r in out.rows]
    assert fit_c_alpha([r.y for r in out.rows], ps, out.constants["u_n"], 1.0) == out.constants["c_alpha"]


def test_run_experiment_rejects_unknown_kind():
    with pytest.raises(ValueError):
        run_experiment("wobble", ExperimentSpec(n_reps=100))
    with pytest.raises(ValueError, match="a_mdp"):
        run_experiment("mdp", ExperimentSpec(n_reps=100))
