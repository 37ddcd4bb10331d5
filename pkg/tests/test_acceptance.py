"""Acceptance criteria 1-10; each test records one PASS/FAIL line."""

import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from leptocast.arima import (
    ArimaSpec,
    fit_arima,
    fit_arimax,
    fit_arma,
    forecast,
    polynomial_root_moduli,
    select_order,
)
from leptocast.cli import main
from leptocast.evalbench import ComparisonConfig, SplitSpec, SyntheticSpec, generate_synthetic, nse, parse_report_csv, rmse, run_comparison
from leptocast.ingest import read_series_csv
from leptocast.series import Month, segment
from leptocast.sfplr import KERNELS, TargetSpec, build_dataset, distance_matrix, estimate_m, fit_beta, fit_sfplr, nw_weights


class Check:
    """Context manager timing a criterion and recording its verdict."""

    def __init__(self, number, title, budget=None):
        self.number, self.title, self.budget = number, title, budget
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc_type is None
        if ok and self.budget is not None and elapsed >= self.budget:
            ok = False
            self.detail += f" (over the {self.budget:g}s budget)"
        line = f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {self.title}  [{elapsed:.1f}s]{self.detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if exc_type is None and not ok:
            pytest.fail(line)
        return False


def ar_sim(phi, n, rng, burn=200):
    e = rng.standard_normal(n + burn)
    y = np.zeros(n + burn)
    for t in range(1, n + burn):
        y[t] = phi * y[t - 1] + e[t]
    return y[burn:]


def roots_outside(phi, theta):
    mods = np.concatenate((polynomial_root_moduli(phi, -1.0), polynomial_root_moduli(theta, 1.0)))
    return bool(np.all(mods > 1.0))


def test_c01_metric_identities():
    with Check(1, "metric identities on 1000 vectors", budget=1.0) as c:
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            y = rng.normal(rng.uniform(-10, 10), rng.uniform(0.1, 10), rng.integers(2, 50))
            assert nse(y, y) == 1.0
            assert rmse(y, y) == 0.0
            worst = max(worst, abs(nse(np.full(y.size, y.mean()), y)))
        assert worst <= 1e-12
        c.detail = f" max|nse(mean)|={worst:.1e}"


def test_c02_weight_law():
    with Check(2, "NW weights nonnegative and sum to one over 10,000 draws", budget=5.0) as c:
        rng = np.random.default_rng(2)
        kernels = sorted(KERNELS)
        worst = 0.0
        for i in range(10_000):
            n, tau = rng.integers(2, 15), rng.integers(2, 13)
            C = rng.normal(0, rng.uniform(0.1, 100), (n, tau))
            target = C[rng.integers(n)] + rng.normal(0, 0.1, tau) * rng.integers(0, 2)
            d = distance_matrix(target, C)[0]
            # at least one curve inside the bandwidth
            h = d.min() * 1.01 + 1e-9 + rng.uniform(0, 3) * d.max()
            w = nw_weights(target, C, h, kernels[i % len(kernels)])
            assert np.all(w >= 0)
            worst = max(worst, abs(w.sum() - 1.0))
        assert worst <= 1e-12
        c.detail = f" max|sum-1|={worst:.1e}"


def test_c03_uniform_weights_reduce_to_centered_ols():
    with Check(3, "uniform-W beta equals centered OLS on 100 instances", budget=5.0) as c:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            p = int(rng.integers(1, 4))
            n = int(rng.integers(p + 2, 11))
            X, Z = rng.normal(size=(n, p)), rng.normal(size=n)
            beta = fit_beta(X, Z, None, W=np.full((n, n), 1.0 / n))
            Xc, Zc = X - X.mean(axis=0), Z - Z.mean()
            A = [[sum(Xc[i, a] * Xc[i, b] for i in range(n)) for b in range(p)] for a in range(p)]
            rhs = [sum(Xc[i, a] * Zc[i] for i in range(n)) for a in range(p)]
            oracle = np.linalg.solve(np.array(A), np.array(rhs))
            worst = max(worst, float(np.max(np.abs(beta - oracle))))
        assert worst <= 1e-8
        c.detail = f" max|diff|={worst:.1e}"


def test_c04_sfplr_recovery():
    with Check(4, "SFPLR recovers beta=(2,-1) and m on n=200, sigma=0.1", budget=30.0) as c:
        sigma = 0.1
        spec = SyntheticSpec(n_years=251, p=2, beta=(2.0, -1.0), noise_sigma=sigma, n_regions=1, counts=False,
                             cov_mean=(0, 0), cov_amplitude=(1, 0.5), cov_phase=(0, 6), cov_sigma=(1, 1),
                             cov_monthly_sigma=(0.1, 0.1), baseline=3.0, m_amplitude=1.0, seed=0)
        d = generate_synthetic(spec)
        ds = build_dataset(segment(d.regions["region_1"], 12), d.covariates, TargetSpec("month_value", 0))
        n = 200
        model = fit_sfplr(ds.X.rows[:n], ds.Z[:n], ds.curves[:n])
        err = float(np.max(np.abs(model.beta - np.array([2.0, -1.0]))))
        m_true = d.truth["m"]["region_1"][:, 0]
        held = range(n, ds.Z.size)
        m_hat = np.array([estimate_m(model, ds.curves[i], fallback=True) for i in held])
        mae = float(np.mean(np.abs(m_hat - m_true[n : ds.Z.size])))
        c.detail = f" max|beta err|={err:.4f} held-out MAE={mae:.3f}"
        assert err < 0.1
        assert mae < 3 * sigma


def test_c05_arma_recovery():
    with Check(5, "AR(1) and MA(1) recovery over 20 seeds, N=2000", budget=60.0) as c:
        phis, thetas = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            fa = fit_arma(ar_sim(0.6, 2000, rng), 1, 0)
            e = rng.standard_normal(2001)
            fm = fit_arma(e[1:] + 0.5 * e[:-1], 0, 1)
            assert roots_outside(fa.phi, fa.theta) and roots_outside(fm.phi, fm.theta)
            phis.append(fa.phi[0])
            thetas.append(fm.theta[0])
        c.detail = f" mean phi={np.mean(phis):.3f} mean theta={np.mean(thetas):.3f}"
        assert abs(np.mean(phis) - 0.6) <= 0.05
        assert abs(np.mean(thetas) - 0.5) <= 0.05


def test_c06_differencing_order():
    # d comes from the ADF step alone; a 2x2 (p,q) grid keeps 200 selections inside the budget
    with Check(6, "random walk -> d=1 and white noise -> d=0, 100 seeds each", budget=120.0) as c:
        rw = wn = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for seed in range(100):
                rng = np.random.default_rng(seed)
                rw += select_order(np.cumsum(rng.standard_normal(500)), p_max=1, q_max=1).d == 1
                wn += select_order(rng.standard_normal(500), p_max=1, q_max=1).d == 0
        c.detail = f" random walk {rw}/100, white noise {wn}/100"
        assert rw >= 80 and wn >= 80


def test_c07_arimax_beta():
    with Check(7, "ARIMAX beta in [1.9, 2.1] for 20 seeds, N=2000", budget=60.0) as c:
        betas = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal(2000)
            y = 2.0 * x + ar_sim(0.5, 2000, rng)
            betas.append(fit_arimax(y, x, ArimaSpec(1, 0, 0)).beta_x[0])
        c.detail = f" range [{min(betas):.3f}, {max(betas):.3f}]"
        assert all(1.9 <= b <= 2.1 for b in betas)


def test_c08_sfplr_ranks_first():
    with Check(8, "SFPLR best NSE in >=80% of 50 synthetic seeds", budget=600.0) as c:
        wins = 0
        for seed in range(50):
            spec = SyntheticSpec(n_years=30, start=Month(1989, 1), n_regions=1, seed=seed)
            rep = run_comparison(generate_synthetic(spec).dataset(), SplitSpec(Month(2017, 12), 12),
                                 ComparisonConfig())
            wins += rep.row("region_1", "SFPLR").best_nse
        c.detail = f" {wins}/50"
        assert wins >= 40


def test_c09_cli_end_to_end(tmp_path):
    with Check(9, "synth -> compare writes 9 rows, Jan-Dec predictions, stable SVGs", budget=120.0):
        outputs = []
        for run in ("a", "b"):
            data = tmp_path / run
            assert main(["synth", "--seed", "11", "--out", str(data)]) == 0
            out = data / "results"
            assert main(["compare", "--manifest", str(data / "manifest.json"),
                         "--config", str(data / "config.json"), "--emit-plots"]) == 0
            outputs.append(out)
        a, b = outputs
        rows = parse_report_csv((a / "report.csv").read_text())
        assert len(rows) == 9
        for region in ("region_1", "region_2", "region_3"):
            for method in ("ARIMA", "ARIMAX", "SFPLR"):
                s = read_series_csv(a / f"predictions_{region}_{method}.csv")
                assert (s.start, s.end) == (Month(2018, 1), Month(2018, 12))
        files = sorted(p.name for p in a.iterdir())
        assert sum(f.endswith(".svg") for f in files) == 3
        assert files == sorted(p.name for p in b.iterdir())
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_c10_ar1_closed_form_forecast():
    with Check(10, "AR(1) forecasts match mu + phi^k (y_N - mu) for k=1..12") as c:
        y = ar_sim(0.6, 500, np.random.default_rng(10)) + 3.0
        model = fit_arima(y, ArimaSpec(1, 0, 0))
        mu, phi = model.intercept, model.phi[0]
        k = np.arange(1, 13)
        err = float(np.max(np.abs(forecast(model, 12) - (mu + phi ** k * (y[-1] - mu)))))
        c.detail = f" max err={err:.1e}"
        assert err <= 1e-10
