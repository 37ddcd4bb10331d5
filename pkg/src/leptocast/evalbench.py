"""Train/test protocol, forecast skill metrics and the synthetic data generator."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import arima as _arima
from . import sfplr as _sfplr
from .series import DataError, Month, TimeSeries, segment

__all__ = [
    "METHODS",
    "nse",
    "rmse",
    "SplitSpec",
    "ArimaConfig",
    "ArimaxConfig",
    "SfplrConfig",
    "ComparisonConfig",
    "Dataset",
    "ReportRow",
    "EvaluationReport",
    "SyntheticSpec",
    "SyntheticData",
    "generate_synthetic",
    "forecast_method",
    "run_comparison",
    "select_for",
    "parse_report_csv",
]

METHODS = ("ARIMA", "ARIMAX", "SFPLR")


def _pair(pred, obs) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    obs = np.asarray(obs, dtype=float).reshape(-1)
    if pred.shape != obs.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {obs.size} observations")
    return pred, obs


def nse(pred, obs, reference: float | None = None) -> float:
    """Nash-Sutcliffe efficiency.

    ``1 - sum((pred - obs)^2) / sum((ref - obs)^2)`` where ``ref`` defaults to
    the mean of ``obs``.  Perfect forecasts give 1 and the observed mean gives 0.
    """
    pred, obs = _pair(pred, obs)
    if obs.size < 2:
        raise ValueError("NSE needs at least 2 observations")
    ref = obs.mean() if reference is None else float(reference)
    den = float(np.sum((ref - obs) ** 2))
    if den == 0.0:
        raise ValueError("NSE undefined: observations have zero spread around the reference")
    return 1.0 - float(np.sum((pred - obs) ** 2)) / den


def rmse(pred, obs) -> float:
    pred, obs = _pair(pred, obs)
    if obs.size < 1:
        raise ValueError("RMSE needs at least one observation")
    return math.sqrt(float(np.mean((pred - obs) ** 2)))


@dataclass(frozen=True)
class SplitSpec:
    train_end: Month
    horizon: int = 12

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class ArimaConfig:
    p_max: int = 5
    q_max: int = 5
    d_max: int = 2
    use_boxcox: bool = False
    alpha: float = 0.05


@dataclass(frozen=True)
class ArimaxConfig:
    covariate_lags: tuple | None = None


@dataclass(frozen=True)
class SfplrConfig:
    metric: _sfplr.SemiMetricSpec = _sfplr.SemiMetricSpec()
    kernel: str = "quadratic"
    covariate_mode: str = "contemporaneous"
    h_grid: tuple | None = None
    tau: int = 12

    def __post_init__(self):
        _sfplr._kernel(self.kernel)
        if self.covariate_mode not in ("contemporaneous", "same_month_prior_year"):
            raise ValueError(f"unknown covariate_mode {self.covariate_mode!r}")
        if self.tau < 2:
            raise ValueError("tau must be at least 2")


@dataclass(frozen=True)
class ComparisonConfig:
    arima: ArimaConfig = ArimaConfig()
    arimax: ArimaxConfig = ArimaxConfig()
    sfplr: SfplrConfig = SfplrConfig()
    methods: tuple[str, ...] = METHODS
    clamp_nonnegative: bool = True
    nse_reference: str = "test"

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.nse_reference not in ("test", "train"):
            raise ValueError("nse_reference must be 'test' or 'train'")


@dataclass(frozen=True)
class Dataset:
    """Per-region incidence plus shared monthly covariates, no missing values."""

    regions: Mapping[str, TimeSeries]
    covariates: Mapping[str, TimeSeries]


@dataclass
class ReportRow:
    region: str
    method: str
    nse: float
    rmse: float
    predictions: np.ndarray
    observed: np.ndarray
    months: tuple[Month, ...]
    best_nse: bool = False
    best_rmse: bool = False
    error: str | None = None
    info: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class EvaluationReport:
    rows: list[ReportRow]
    split: SplitSpec

    def row(self, region: str, method: str) -> ReportRow:
        for r in self.rows:
            if r.region == region and r.method == method:
                return r
        raise KeyError((region, method))

    def regions(self) -> list[str]:
        return list(dict.fromkeys(r.region for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region", "method", "nse", "rmse", "best_nse", "best_rmse"])
        for r in self.rows:
            w.writerow([
                r.region,
                r.method,
                "" if r.failed else repr(float(r.nse)),
                "" if r.failed else repr(float(r.rmse)),
                int(r.best_nse),
                int(r.best_rmse),
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned per-region tables; ``*`` marks the best value in a column."""
        out = []
        for region in self.regions():
            rows = [r for r in self.rows if r.region == region]
            out.append(region)
            out.append(f"{'Method':<8} {'NSE':>10} {'RMSE':>10}")
            out.append("-" * 30)
            for r in rows:
                if r.failed:
                    out.append(f"{r.method:<8} {'failed':>10} {'failed':>10}")
                    continue
                n = f"{r.nse:.2f}{'*' if r.best_nse else ' '}"
                e = f"{r.rmse:.2f}{'*' if r.best_rmse else ' '}"
                out.append(f"{r.method:<8} {n:>10} {e:>10}")
            out.append("")
        return "\n".join(out)


def parse_report_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({
            "region": rec["region"],
            "method": rec["method"],
            "nse": float(rec["nse"]) if rec["nse"] else math.nan,
            "rmse": float(rec["rmse"]) if rec["rmse"] else math.nan,
            "best_nse": rec["best_nse"] == "1",
            "best_rmse": rec["best_rmse"] == "1",
        })
    return rows


# ---------------------------------------------------------------- synthetic

_DEFAULT_COVARIATES = ("precipitation", "hydrometric_level", "oni")


def _broadcast(value, p: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, p)
    if arr.size != p:
        raise ValueError(f"{name} must have 1 or {p} entries")
    return arr


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic incidence generator.

    Each covariate is ``mean + amplitude * cos(2 pi (month - phase) / 12)``
    plus a yearly AR(1) anomaly (``cov_rho``, ``cov_sigma``) and independent
    monthly noise (``cov_monthly_sigma``).  Incidence in year ``y`` and month
    ``k`` is ``sum_j beta_j x_j(y, k) + m_k(Y_{y-1}) + noise`` with
    ``m_k(c) = profile_k * (baseline + m_amplitude * g(c))``.
    """

    n_years: int = 10
    tau: int = 12
    p: int = 3
    beta: tuple[float, ...] = (0.02, 0.8, 1.5)
    noise_sigma: float = 0.5
    n_regions: int = 3
    start: Month = Month(2009, 1)
    cov_mean: tuple[float, ...] = (100.0, 3.0, 0.0)
    cov_amplitude: tuple[float, ...] = (40.0, 1.0, 0.0)
    cov_phase: tuple[float, ...] = (0.0, 9.0, 0.0)
    cov_rho: float = 0.5
    cov_sigma: tuple[float, ...] = (30.0, 0.8, 0.8)
    cov_monthly_sigma: tuple[float, ...] = (15.0, 0.2, 0.2)
    baseline: float = 3.0
    season_peak: int = 3
    season_strength: float = 0.9
    m_shape: str = "quadratic"
    m_amplitude: float = 6.0
    counts: bool = True
    population: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if len(self.beta) != self.p:
            raise ValueError(f"beta has {len(self.beta)} entries, expected p={self.p}")
        if self.n_years < 2 or self.tau < 2:
            raise ValueError("need at least 2 years and tau >= 2")
        if self.m_shape not in _SHAPES:
            raise ValueError(f"unknown m_shape {self.m_shape!r}; choose from {sorted(_SHAPES)}")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        if self.p == len(_DEFAULT_COVARIATES):
            return _DEFAULT_COVARIATES
        return tuple(f"x{j + 1}" for j in range(self.p))


def _g_quadratic(z):
    return z * z / (1.0 + z * z)


def _g_sine(z):
    return 0.5 * (1.0 + np.sin(np.pi * z / 2.0))


def _g_zero(z):
    return 0.0 * z


_SHAPES = {"quadratic": _g_quadratic, "sine": _g_sine, "zero": _g_zero}


@dataclass(frozen=True)
class SyntheticData:
    regions: dict[str, TimeSeries]
    covariates: dict[str, TimeSeries]
    populations: dict[str, int]
    truth: dict

    def dataset(self) -> Dataset:
        return Dataset(self.regions, self.covariates)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Covariates, per-region incidence and the ground truth, deterministic per seed.

    ``truth["m"][region]`` holds ``m_k(Y_{y-1})`` for years ``1..n_years-1``
    (row ``y - 1``), the noiseless nonparametric part of each month.
    """
    rng = np.random.default_rng(spec.seed)
    p, tau, ny = spec.p, spec.tau, spec.n_years
    mean = _broadcast(spec.cov_mean, p, "cov_mean")
    amp = _broadcast(spec.cov_amplitude, p, "cov_amplitude")
    phase = _broadcast(spec.cov_phase, p, "cov_phase")
    sig = _broadcast(spec.cov_sigma, p, "cov_sigma")
    msig = _broadcast(spec.cov_monthly_sigma, p, "cov_monthly_sigma")
    beta = np.asarray(spec.beta, dtype=float)
    k = np.arange(tau)

    season = mean[:, None] + amp[:, None] * np.cos(2 * np.pi * (k[None, :] - phase[:, None]) / tau)
    anomaly = np.zeros((ny, p))
    innov_scale = sig * math.sqrt(1.0 - spec.cov_rho ** 2)
    anomaly[0] = sig * rng.standard_normal(p)
    for y in range(1, ny):
        anomaly[y] = spec.cov_rho * anomaly[y - 1] + innov_scale * rng.standard_normal(p)
    X = season[None, :, :] + anomaly[:, :, None] + msig[None, :, None] * rng.standard_normal((ny, p, tau))

    profile = 1.0 + spec.season_strength * np.cos(2 * np.pi * (k - spec.season_peak) / tau)
    linear = np.einsum("j,yjk->yk", beta, X)
    expected_linear = beta @ season
    g = _SHAPES[spec.m_shape]
    level_scale = max(math.sqrt(float(np.sum((beta * sig) ** 2))), 1e-12)
    centre = 0.5 * spec.m_amplitude * profile.mean()

    def m_of(curve):
        z = (np.mean(curve - expected_linear - spec.baseline * profile) - centre) / level_scale
        return profile * (spec.baseline + spec.m_amplitude * g(z))

    names = [f"region_{r + 1}" for r in range(spec.n_regions)]
    regions, m_truth, raw_truth = {}, {}, {}
    for name in names:
        Y = np.zeros((ny, tau))
        M = np.zeros((ny - 1, tau))
        Y[0] = linear[0] + spec.baseline * profile + spec.noise_sigma * rng.standard_normal(tau)
        if spec.counts:
            Y[0] = np.maximum(np.round(Y[0]), 0.0)
        for y in range(1, ny):
            M[y - 1] = m_of(Y[y - 1])
            Y[y] = linear[y] + M[y - 1] + spec.noise_sigma * rng.standard_normal(tau)
            if spec.counts:
                Y[y] = np.maximum(np.round(Y[y]), 0.0)
        regions[name] = TimeSeries(Y.reshape(-1), spec.start)
        m_truth[name] = M
        raw_truth[name] = Y
    covariates = {
        cname: TimeSeries(X[:, j, :].reshape(-1), spec.start)
        for j, cname in enumerate(spec.covariate_names)
    }
    truth = {"beta": beta.copy(), "m": m_truth, "profile": profile, "covariate_season": season}
    return SyntheticData(regions, covariates, {n: spec.population for n in names}, truth)


# --------------------------------------------------------------- comparison

def _covariate_block(covariates: Mapping[str, TimeSeries], first: Month, last: Month) -> np.ndarray:
    cols = [s.window(first, last).values for s in covariates.values()]
    block = np.column_stack(cols) if cols else np.zeros((last - first + 1, 0))
    if not np.isfinite(block).all():
        raise DataError(f"covariates missing between {first} and {last}")
    return block


def forecast_method(method: str, series: TimeSeries, covariates: Mapping[str, TimeSeries],
                    split: SplitSpec, config: ComparisonConfig = ComparisonConfig(),
                    selection: _arima.OrderSelection | None = None) -> tuple[np.ndarray, dict]:
    """Fit one method on ``series`` up to ``split.train_end`` and forecast the horizon.

    ARIMAX uses the order chosen for the univariate model; pass ``selection``
    to reuse an order search already run on the same training window.
    """
    train = series.window(series.start, split.train_end)
    h = split.horizon
    if method in ("ARIMA", "ARIMAX"):
        sel = selection if selection is not None else select_for(train, config.arima)
        info = {"order": list(sel.spec.order), "stationary": sel.stationary}
        if method == "ARIMA":
            model = _arima.fit_arima(train, sel.spec)
            return _arima.forecast(model, h), info
        names = tuple(covariates)
        X = _covariate_block(covariates, train.start, train.end)
        Xf = _covariate_block(covariates, train.end + 1, train.end + h)
        lags = config.arimax.covariate_lags
        model = _arima.fit_arimax(train, _sfplr.CovariateMatrix(X, names), sel.spec, lags)
        info["beta_x"] = [float(b) for b in model.beta_x]
        return _arima.forecast_arimax(model, Xf, h), info
    if method == "SFPLR":
        sc = config.sfplr
        if h > sc.tau:
            raise DataError("SFPLR horizon cannot exceed one curve length")
        curves = segment(train, sc.tau)
        if curves.n < 3:
            raise DataError("SFPLR needs at least 3 training curves")
        preds, hs, fallbacks = [], [], 0
        for k in range(h):
            target = _sfplr.TargetSpec("month_value", k)
            ds = _sfplr.build_dataset(curves, covariates, target, sc.covariate_mode)
            model = _sfplr.fit_sfplr(ds.X, ds.Z, ds.curves, sc.kernel, sc.metric, h_grid=sc.h_grid,
                                     target=target, nonnegative=config.clamp_nonnegative)
            x_new, last = _sfplr.query_row(curves, covariates, target, sc.covariate_mode)
            res = _sfplr.predict_detail(model, x_new, last)
            preds.append(res.raw)
            hs.append(model.h)
            fallbacks += res.nearest_fallback
        return np.array(preds), {"bandwidths": hs, "nearest_fallbacks": fallbacks}
    raise ValueError(f"unknown method {method!r}")


def select_for(train: TimeSeries, ac: ArimaConfig) -> _arima.OrderSelection:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return _arima.select_order_details(train, ac.p_max, ac.q_max, ac.d_max, ac.alpha, ac.use_boxcox)


def _flag_best(rows: list[ReportRow]):
    ok = [r for r in rows if not r.failed]
    if not ok:
        return
    best_n = max(r.nse for r in ok)
    best_r = min(r.rmse for r in ok)
    for r in ok:
        r.best_nse = abs(r.nse - best_n) <= 1e-12 * max(1.0, abs(best_n))
        r.best_rmse = abs(r.rmse - best_r) <= 1e-12 * max(1.0, best_r)


def run_comparison(dataset: Dataset, split: SplitSpec,
                   config: ComparisonConfig = ComparisonConfig()) -> EvaluationReport:
    """Fit every method on each region's training window and score the horizon.

    A method that fails for a region yields a row with ``error`` set and NaN
    metrics; other cells are unaffected.  Rows come out in (region, method)
    order.
    """
    rows = []
    for region, series in dataset.regions.items():
        if series.has_missing:
            raise DataError(f"region {region} has missing values")
        last = split.train_end + split.horizon
        if series.index_of(split.train_end) + 1 < 3 * config.sfplr.tau:
            raise DataError(f"region {region}: training window shorter than {3 * config.sfplr.tau} months")
        obs = series.window(split.train_end + 1, last).values
        months = tuple(split.train_end + (i + 1) for i in range(split.horizon))
        ref = None
        if config.nse_reference == "train":
            ref = float(series.window(series.start, split.train_end).values.mean())
        region_rows = []
        selection = None
        for method in config.methods:
            try:
                if method != "SFPLR" and selection is None:
                    selection = select_for(series.window(series.start, split.train_end), config.arima)
                pred, info = forecast_method(method, series, dataset.covariates, split, config, selection)
                if config.clamp_nonnegative:
                    info["raw_predictions"] = [float(v) for v in pred]
                    pred = np.maximum(pred, 0.0)
                row = ReportRow(region, method, nse(pred, obs, ref), rmse(pred, obs),
                                np.asarray(pred, dtype=float), np.array(obs), months, info=info)
            except (DataError, _arima.FitError, _sfplr.DegenerateWeightsError,
                    np.linalg.LinAlgError, ValueError) as exc:
                row = ReportRow(region, method, math.nan, math.nan, np.full(split.horizon, math.nan),
                                np.array(obs), months, error=f"{type(exc).__name__}: {exc}")
            region_rows.append(row)
        _flag_best(region_rows)
        rows.extend(region_rows)
    return EvaluationReport(rows, split)
