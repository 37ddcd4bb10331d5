import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leptocast.evalbench import SyntheticSpec, generate_synthetic, nse
from leptocast.series import DataError, Month, TimeSeries, segment
from leptocast.sfplr import (
    KERNELS,
    DegenerateWeightsError,
    SemiMetricSpec,
    SfplrModel,
    TargetSpec,
    build_dataset,
    cv_bandwidth,
    default_h_grid,
    distance_matrix,
    estimate_m,
    fit_beta,
    fit_pca_basis,
    fit_sfplr,
    nw_weights,
    predict,
    predict_detail,
    query_row,
    semi_metric,
    smoother_matrix,
)

EUCLID = SemiMetricSpec("euclid_grid")
DERIV = SemiMetricSpec("deriv_grid")

curves_st = arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(2, 12)),
                   elements=st.floats(-100, 100, allow_nan=False))


# ------------------------------------------------------------------ semi-metrics

def test_euclid_three_four_five():
    a = np.zeros(12)
    a[:2] = [3, 4]
    assert semi_metric(a, np.zeros(12), EUCLID) == pytest.approx(5.0)


def test_deriv_ignores_constant_shift():
    a = np.random.default_rng(0).standard_normal(12)
    assert semi_metric(a, a + 4.2, DERIV) == pytest.approx(0.0, abs=1e-12)


@given(curves_st)
def test_semi_metrics_symmetric_and_zero_on_diagonal(C):
    basis = fit_pca_basis(C, 1)
    for spec, b in [(EUCLID, None), (DERIV, None), (SemiMetricSpec("pca_q", q=1), basis)]:
        D = distance_matrix(C, C, spec, b)
        np.testing.assert_allclose(D, D.T, atol=1e-9)
        np.testing.assert_allclose(np.diag(D), 0.0, atol=1e-9)


@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
def test_euclid_triangle_inequality(C):
    a, b, c = C
    assert semi_metric(a, c) <= semi_metric(a, b) + semi_metric(b, c) + 1e-9


def test_pca_metric_needs_basis():
    with pytest.raises(ValueError):
        semi_metric(np.zeros(3), np.ones(3), SemiMetricSpec("pca_q", q=1))


# ------------------------------------------------------------------ weights

def test_kernels_are_one_sided():
    u = np.array([-0.1, 0.0, 0.5, 1.0, 1.5])
    for name, k in KERNELS.items():
        v = k(u)
        assert v[0] == 0 and v[1] > 0 and v[2] > 0, name
        if name != "gaussian":
            assert v[-1] == 0, name


def test_equal_distances_give_uniform_weights():
    target = np.zeros(4)
    sample = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, -1.0, 0]])
    np.testing.assert_allclose(nw_weights(target, sample, 2.0), [1 / 3] * 3)


def test_huge_bandwidth_gives_uniform_weights():
    rng = np.random.default_rng(1)
    sample = rng.standard_normal((7, 12))
    target = rng.standard_normal(12)
    h = 1e9 * distance_matrix(target, sample).max()
    for kernel in KERNELS:
        np.testing.assert_allclose(nw_weights(target, sample, h, kernel), 1 / 7, atol=1e-6)


def test_point_mass_when_others_beyond_bandwidth():
    sample = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 7.0]])
    w = nw_weights(np.zeros(2), sample, 1.0)
    np.testing.assert_array_equal(w, [1.0, 0.0, 0.0])


def test_empty_neighbourhood_raises():
    with pytest.raises(DegenerateWeightsError):
        nw_weights(np.zeros(2), np.array([[5.0, 0.0], [0.0, 7.0]]), 1.0)


@settings(max_examples=200)
@given(curves_st, st.floats(0.01, 1e3), st.sampled_from(sorted(KERNELS)))
def test_weights_nonnegative_and_sum_to_one(C, h, kernel):
    target = C[0] + 0.01
    try:
        w = nw_weights(target, C, h, kernel)
    except DegenerateWeightsError:
        return
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) <= 1e-12


def test_smoother_includes_self_weight():
    C = np.array([[0.0], [0.5], [10.0]])
    W = smoother_matrix(C, 1.0)
    assert W[2, 2] == 1.0
    assert W[0, 0] > W[0, 1] > 0


def test_weights_scale_invariance():
    rng = np.random.default_rng(2)
    C, t = rng.standard_normal((8, 12)), rng.standard_normal(12)
    w1 = nw_weights(t, C, 4.0)
    w2 = nw_weights(3.7 * t, 3.7 * C, 3.7 * 4.0)
    np.testing.assert_allclose(w1, w2, atol=1e-12)


# ------------------------------------------------------------------ dataset

def toy_calendar(years=3):
    # covariate value encodes its own calendar month: 2009-03 -> 200903
    start = Month(2009, 1)
    months = [start + k for k in range(12 * years)]
    code = np.array([m.year * 100 + m.month for m in months], dtype=float)
    covs = {"precip": TimeSeries(code, start), "hydro": TimeSeries(code + 0.1, start),
            "oni": TimeSeries(code + 0.2, start)}
    inc = TimeSeries(np.arange(12.0 * years), start)
    return segment(inc, 12), covs


def test_build_dataset_sizes_and_response():
    y = np.arange(120.0)
    y[12::12] = 7.0
    fs = segment(TimeSeries(y, Month(2009, 1)), 12)
    covs = {"x": TimeSeries(np.ones(120), Month(2009, 1))}
    ds = build_dataset(fs, covs, TargetSpec("month_value", 0))
    assert ds.curves.shape == (9, 12)
    assert ds.X.rows.shape == (9, 1)
    np.testing.assert_array_equal(ds.Z, 7.0)


def test_contemporaneous_march_index_arithmetic():
    fs, covs = toy_calendar()
    ds = build_dataset(fs, covs, TargetSpec("month_value", 2), "contemporaneous")
    np.testing.assert_array_equal(ds.X.rows, [[201003, 201003.1, 201003.2], [201103, 201103.1, 201103.2]])
    np.testing.assert_array_equal(ds.Z, [14, 26])
    assert ds.response_months == (Month(2010, 3), Month(2011, 3))
    # the query needs March of a fourth year, absent from the toy calendar
    with pytest.raises(DataError, match="2012-03"):
        query_row(fs, covs, TargetSpec("month_value", 2), "contemporaneous")


def test_prior_year_mode_uses_current_curve_year():
    fs, covs = toy_calendar()
    ds = build_dataset(fs, covs, TargetSpec("month_value", 2), "same_month_prior_year")
    np.testing.assert_array_equal(ds.X.rows[:, 0], [200903, 201003])
    x_new, _ = query_row(fs, covs, TargetSpec("month_value", 2), "same_month_prior_year")
    assert x_new[0] == 201103


def test_period_targets_average_covariates():
    fs, covs = toy_calendar()
    ds = build_dataset(fs, covs, TargetSpec("period_sum"))
    assert ds.X.rows[0, 0] == pytest.approx(np.mean([201000 + k for k in range(1, 13)]))
    assert ds.Z[0] == sum(range(12, 24))


def test_build_dataset_needs_three_curves():
    fs = segment(TimeSeries(np.arange(24.0), Month(2009, 1)), 12)
    with pytest.raises(DataError):
        build_dataset(fs, {}, TargetSpec())


# ------------------------------------------------------------------ beta

def test_zero_smoother_gives_ols():
    rng = np.random.default_rng(3)
    X, Z = rng.standard_normal((20, 2)), rng.standard_normal(20)
    beta = fit_beta(X, Z, None, W=np.zeros((20, 20)))
    np.testing.assert_allclose(beta, np.linalg.lstsq(X, Z, rcond=None)[0], atol=1e-12)


def test_uniform_smoother_gives_centered_ols():
    rng = np.random.default_rng(4)
    X, Z = rng.standard_normal((10, 3)), rng.standard_normal(10)
    beta = fit_beta(X, Z, None, W=np.full((10, 10), 0.1))
    Xc, Zc = X - X.mean(0), Z - Z.mean()
    np.testing.assert_allclose(beta, np.linalg.solve(Xc.T @ Xc, Xc.T @ Zc), atol=1e-8)


def test_ill_conditioned_covariates_rejected():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(12)
    with pytest.raises(DataError):
        fit_beta(np.column_stack((x, x)), rng.standard_normal(12), None, W=np.zeros((12, 12)))


# ------------------------------------------------------------------ m-hat and prediction

def model_for(X, Z, C, h, beta=None):
    m = fit_sfplr(X, Z, C, h=h)
    if beta is not None:
        import dataclasses

        m = dataclasses.replace(m, beta=np.asarray(beta, dtype=float))
    return m


def test_constant_residuals_give_constant_m():
    rng = np.random.default_rng(6)
    C = rng.standard_normal((8, 12))
    model = model_for(rng.standard_normal((8, 1)), np.full(8, 2.5), C, 100.0, beta=[0.0])
    for q in rng.standard_normal((5, 12)):
        assert estimate_m(model, q) == pytest.approx(2.5, abs=1e-12)


def test_point_mass_m_hat_returns_partial_residual():
    # with h below every inter-curve distance W_h = I and beta is not
    # identifiable, so the model is assembled with a given beta
    rng = np.random.default_rng(7)
    C = rng.standard_normal((6, 12)) * 10
    X, Z = rng.standard_normal((6, 1)), rng.standard_normal(6)
    D = distance_matrix(C, C)
    model = SfplrModel(np.array([0.8]), 0.5 * D[D > 0].min(), "quadratic", EUCLID, C, X, Z)
    for k in range(6):
        assert estimate_m(model, C[k]) == pytest.approx(Z[k] - 0.8 * X[k, 0], abs=1e-12)


def test_m_hat_permutation_invariant():
    rng = np.random.default_rng(8)
    C, X, Z = rng.standard_normal((9, 12)), rng.standard_normal((9, 2)), rng.standard_normal(9)
    m1 = fit_sfplr(X, Z, C, h=8.0)
    perm = rng.permutation(9)
    m2 = fit_sfplr(X[perm], Z[perm], C[perm], h=8.0)
    np.testing.assert_allclose(m1.beta, m2.beta, atol=1e-12)
    q = rng.standard_normal(12)
    assert estimate_m(m1, q) == pytest.approx(estimate_m(m2, q), abs=1e-12)


def test_predict_reductions():
    rng = np.random.default_rng(9)
    C, X = rng.standard_normal((8, 12)), rng.standard_normal((8, 2))
    q, x_new = rng.standard_normal(12), rng.standard_normal(2)
    m = model_for(X, rng.standard_normal(8), C, 20.0, beta=[0.0, 0.0])
    assert predict(m, x_new, q) == pytest.approx(estimate_m(m, q), abs=1e-12)
    beta = np.array([1.5, -0.5])
    m = model_for(X, X @ beta, C, 20.0)
    np.testing.assert_allclose(m.partial_residuals, 0.0, atol=1e-10)
    assert predict(m, x_new, q) == pytest.approx(x_new @ beta, abs=1e-9)


def test_prediction_falls_back_to_nearest_curve():
    C = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0]])
    X = np.array([[1.0], [2.0], [0.0], [5.0]])
    model = SfplrModel(np.array([0.5]), 0.5, "quadratic", EUCLID, C, X, np.array([1.0, 2.0, 3.0, 4.0]))
    res = predict_detail(model, [2.0], [10.0, 10.0])
    assert res.nearest_fallback
    assert res.m_hat == pytest.approx(4.0 - 2.5)
    assert res.value == pytest.approx(1.0 + 1.5)
    with pytest.raises(DegenerateWeightsError):
        estimate_m(model, [10.0, 10.0])


def test_nonnegative_model_clamps_prediction():
    C = np.eye(4)
    model = fit_sfplr(np.arange(4.0)[:, None], np.full(4, -3.0), C, h=10.0, nonnegative=True)
    res = predict_detail(model, [0.0], np.zeros(4))
    assert res.raw < 0 and res.value == 0.0


# ------------------------------------------------------------------ bandwidth

def test_single_element_grid():
    rng = np.random.default_rng(10)
    assert cv_bandwidth(rng.standard_normal((8, 1)), rng.standard_normal(8),
                        rng.standard_normal((8, 12)), h_grid=[3.3]) == 3.3


def test_duplicate_grid_entries_do_not_matter():
    rng = np.random.default_rng(11)
    X, Z, C = rng.standard_normal((15, 1)), rng.standard_normal(15), rng.standard_normal((15, 12))
    grid = default_h_grid(C)
    assert cv_bandwidth(X, Z, C, h_grid=np.concatenate((grid, grid[::-1]))) == cv_bandwidth(X, Z, C, h_grid=grid)


def test_default_grid_spans_distance_percentiles():
    C = np.random.default_rng(12).standard_normal((10, 12))
    D = distance_matrix(C, C)[np.triu_indices(10, 1)]
    g = default_h_grid(C)
    assert g.size == 20
    assert g[0] == pytest.approx(np.percentile(D, 5))
    assert g[-1] == pytest.approx(np.percentile(D, 95))


def recovery_data(seed, sigma=0.1, n_years=251):
    spec = SyntheticSpec(n_years=n_years, p=2, beta=(2.0, -1.0), noise_sigma=sigma, n_regions=1, counts=False,
                         cov_mean=(0, 0), cov_amplitude=(1, 0.5), cov_phase=(0, 6), cov_sigma=(1, 1),
                         cov_monthly_sigma=(0.1, 0.1), baseline=3.0, m_amplitude=1.0, seed=seed)
    d = generate_synthetic(spec)
    ds = build_dataset(segment(d.regions["region_1"], 12), d.covariates, TargetSpec("month_value", 0))
    return ds, d.truth["m"]["region_1"][:, 0]


def test_cv_bandwidth_close_to_oracle_bandwidth():
    ds, _ = recovery_data(0)
    n = 200
    X, Z, C = ds.X.rows, ds.Z, ds.curves
    grid = default_h_grid(C[:n])
    h_cv = cv_bandwidth(X[:n], Z[:n], C[:n], h_grid=grid)

    def held_out_mse(h):
        m = fit_sfplr(X[:n], Z[:n], C[:n], h=h)
        pred = [predict(m, X[i], C[i]) for i in range(n, Z.size)]
        return np.mean((np.array(pred) - Z[n:]) ** 2)

    mses = {}
    for h in grid:
        try:
            mses[h] = held_out_mse(h)
        except (DegenerateWeightsError, DataError):
            continue
    assert held_out_mse(h_cv) <= 1.2 * min(mses.values())


def test_sfplr_beats_intercept_only_baseline():
    wins = 0
    for seed in range(100):
        # 19 training curves; with only 9 the baseline wins too often by chance
        d = generate_synthetic(SyntheticSpec(n_years=20, start=Month(1999, 1), n_regions=1, seed=seed))
        series = d.regions["region_1"]
        fs = segment(series.window(series.start, Month(2017, 12)), 12)
        obs = series.window(Month(2018, 1), Month(2018, 12)).values
        pred = []
        for k in range(12):
            target = TargetSpec("month_value", k)
            ds = build_dataset(fs, d.covariates, target)
            model = fit_sfplr(ds.X, ds.Z, ds.curves, target=target)
            pred.append(predict(model, *query_row(fs, d.covariates, target)))
        baseline = np.full(12, fs.curves.mean())
        wins += nse(pred, obs) > nse(baseline, obs)
    assert wins >= 90
