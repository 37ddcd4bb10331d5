"""Monthly series container, curve segmentation and stationarity tools.

Everything here is a pure function of its inputs.  Missing observations are
carried as ``NaN`` inside :class:`TimeSeries` and must be resolved (see
:func:`apply_missing_policy`) before segmentation or model fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "Month",
    "TimeSeries",
    "FunctionalSample",
    "StationarityReport",
    "BoxCoxTransform",
    "apply_missing_policy",
    "segment",
    "difference",
    "integrate",
    "box_cox",
    "inv_box_cox",
    "box_cox_mle",
    "acf",
    "pacf",
    "adf_test",
    "adf_default_lags",
]


class DataError(ValueError):
    """Input data violates a precondition (missing values, bad lengths...)."""


@dataclass(frozen=True, order=True)
class Month:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        """Parse ``YYYY-MM``."""
        parts = text.strip().split("-")
        if len(parts) != 2 or len(parts[0]) != 4 or len(parts[1]) != 2:
            raise ValueError(f"expected YYYY-MM, got {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    @classmethod
    def from_ordinal(cls, k: int) -> "Month":
        return cls(k // 12, k % 12 + 1)

    @property
    def ordinal(self) -> int:
        return self.year * 12 + self.month - 1

    def __add__(self, months: int) -> "Month":
        return Month.from_ordinal(self.ordinal + int(months))

    def __sub__(self, other):
        if isinstance(other, Month):
            return self.ordinal - other.ordinal
        return self + (-int(other))

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class TimeSeries:
    """Gapless monthly series; ``values[k]`` belongs to ``start + k`` months.

    Missing values are NaN.  Infinite values are rejected.
    """

    values: np.ndarray
    start: Month
    freq: int = 12

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise DataError("TimeSeries needs a 1-d array with at least one value")
        if np.isinf(v).any():
            raise DataError("TimeSeries values must be finite or NaN")
        if self.freq != 12:
            raise DataError("only monthly series (freq=12) are supported")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def end(self) -> Month:
        return self.start + (len(self) - 1)

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.values).any())

    def months(self) -> list[Month]:
        return [self.start + k for k in range(len(self))]

    def index_of(self, month: Month) -> int:
        k = month - self.start
        if not 0 <= k < len(self):
            raise DataError(f"{month} outside series range {self.start}..{self.end}")
        return k

    def value_at(self, month: Month) -> float:
        return float(self.values[self.index_of(month)])

    def window(self, first: Month, last: Month) -> "TimeSeries":
        """Inclusive calendar slice."""
        i, j = self.index_of(first), self.index_of(last)
        if j < i:
            raise DataError(f"empty window {first}..{last}")
        return TimeSeries(self.values[i : j + 1], first)


@dataclass(frozen=True)
class FunctionalSample:
    """``n`` curves of ``tau`` samples cut from one long series."""

    curves: np.ndarray
    origin: Month
    dropped: int = 0

    def __post_init__(self):
        c = np.array(self.curves, dtype=float)
        if c.ndim != 2:
            raise DataError("curves must be a 2-d array (n, tau)")
        if c.shape[0] < 2:
            raise DataError("a functional sample needs at least 2 curves")
        if not np.isfinite(c).all():
            raise DataError("curves must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "curves", c)

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    @property
    def tau(self) -> int:
        return self.curves.shape[1]

    def month_of(self, i: int, k: int) -> Month:
        """Calendar month of sample ``k`` in curve ``i``."""
        return self.origin + (i * self.tau + k)

    def flatten(self) -> np.ndarray:
        return self.curves.reshape(-1)


@dataclass(frozen=True)
class StationarityReport:
    statistic: float
    lags: int
    reject_unit_root: bool
    alpha: float
    critical_value: float
    nobs: int


@dataclass(frozen=True)
class BoxCoxTransform:
    lam: float
    shift: float = 0.0

    def forward(self, y) -> np.ndarray:
        return box_cox(np.asarray(y, dtype=float) + self.shift, self.lam)

    def inverse(self, z) -> np.ndarray:
        return inv_box_cox(z, self.lam) - self.shift


def apply_missing_policy(series: TimeSeries, policy: str = "error") -> tuple[TimeSeries, int]:
    """Resolve NaNs. Returns the new series and the number of values filled.

    ``error`` raises on any missing value, ``fill_zero`` treats a missing
    month as zero (no notified cases), ``interpolate_linear`` interpolates
    between observed neighbours and refuses leading/trailing gaps.
    """
    v = np.array(series.values)
    miss = np.isnan(v)
    n_miss = int(miss.sum())
    if n_miss == 0:
        return series, 0
    if policy == "error":
        first = series.start + int(np.flatnonzero(miss)[0])
        raise DataError(f"{n_miss} missing value(s), first at {first}")
    if policy == "fill_zero":
        v[miss] = 0.0
    elif policy == "interpolate_linear":
        if miss[0] or miss[-1]:
            where = series.start if miss[0] else series.end
            raise DataError(f"cannot interpolate boundary gap at {where}")
        idx = np.arange(v.size)
        v[miss] = np.interp(idx[miss], idx[~miss], v[~miss])
    else:
        raise ValueError(f"unknown missing policy {policy!r}")
    return TimeSeries(v, series.start), n_miss


def segment(series: TimeSeries, tau: int = 12) -> FunctionalSample:
    """Cut a series into ``floor(N / tau)`` consecutive curves.

    When ``N`` is not a multiple of ``tau`` the oldest ``N mod tau`` values
    are dropped so the last curve ends on the last observation; the count is
    kept in ``FunctionalSample.dropped``.
    """
    if tau < 1:
        raise ValueError("tau must be positive")
    if series.has_missing:
        raise DataError("resolve missing values before segmentation")
    n_obs = len(series)
    if n_obs < 2 * tau:
        raise DataError(f"need at least {2 * tau} values to cut curves of length {tau}, got {n_obs}")
    drop = n_obs % tau
    curves = series.values[drop:].reshape(-1, tau)
    return FunctionalSample(curves, series.start + drop, dropped=drop)


def difference(y: Sequence[float], d: int) -> np.ndarray:
    """Apply ``(1 - B)^d``; the result is ``d`` values shorter."""
    y = np.asarray(y, dtype=float)
    if d < 0:
        raise ValueError("d must be nonnegative")
    if d >= y.size:
        raise DataError(f"cannot difference {y.size} values {d} times")
    return np.diff(y, n=d) if d else y.copy()


def difference_heads(y: Sequence[float], d: int) -> np.ndarray:
    """First value of each differencing level ``0..d-1``."""
    y = np.asarray(y, dtype=float)
    heads = []
    for _ in range(d):
        heads.append(y[0])
        y = np.diff(y)
    return np.array(heads)


def difference_tails(y: Sequence[float], d: int) -> np.ndarray:
    """Last value of each differencing level ``0..d-1``."""
    y = np.asarray(y, dtype=float)
    tails = []
    for _ in range(d):
        tails.append(y[-1])
        y = np.diff(y)
    return np.array(tails)


def integrate(diffed: Sequence[float], d: int, heads: Sequence[float]) -> np.ndarray:
    """Inverse of :func:`difference` given the leading value of every level."""
    w = np.asarray(diffed, dtype=float)
    heads = np.asarray(heads, dtype=float).reshape(-1)
    if heads.size != d:
        raise DataError(f"integrating {d} times needs {d} head values, got {heads.size}")
    for level in range(d - 1, -1, -1):
        w = np.concatenate(([heads[level]], heads[level] + np.cumsum(w)))
    return w


def extend_integrated(future_diffs: Sequence[float], tails: Sequence[float]) -> np.ndarray:
    """Integrate a continuation of a differenced series from stored tails."""
    w = np.asarray(future_diffs, dtype=float)
    tails = np.asarray(tails, dtype=float).reshape(-1)
    for level in range(tails.size - 1, -1, -1):
        w = tails[level] + np.cumsum(w)
    return w


def box_cox(y, lam: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if (y <= 0).any():
        raise DataError("Box-Cox requires strictly positive inputs")
    if lam == 0:
        return np.log(y)
    return np.expm1(lam * np.log(y)) / lam


def inv_box_cox(z, lam: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if lam == 0:
        return np.exp(z)
    # forecasts may leave the transform's range; clip at the boundary
    u = np.maximum(lam * z, -1.0)
    with np.errstate(divide="ignore"):
        return np.exp(np.log1p(u) / lam)


def box_cox_shift(y) -> float:
    """Shift making every value strictly positive (``1 - min`` when needed)."""
    m = float(np.min(y))
    return 0.0 if m > 0 else 1.0 - m


def box_cox_mle(y, grid: Sequence[float] | None = None) -> BoxCoxTransform:
    """Profile the Gaussian log-likelihood of lambda over a grid.

    The default grid is -2..2 in steps of 0.05.  Nonpositive series are
    shifted first.
    """
    y = np.asarray(y, dtype=float)
    shift = box_cox_shift(y)
    ys = y + shift
    if grid is None:
        grid = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.05), 10)
    n = ys.size
    sum_log = np.log(ys).sum()
    best_lam, best_ll = None, -np.inf
    for lam in grid:
        z = box_cox(ys, float(lam))
        var = z.var()
        if var <= 0:
            continue
        ll = -0.5 * n * np.log(var) + (lam - 1.0) * sum_log
        if ll > best_ll:
            best_lam, best_ll = float(lam), ll
    if best_lam is None:
        raise DataError("Box-Cox profile undefined for a constant series")
    return BoxCoxTransform(best_lam, shift)


def acf(y, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag`` (1/N autocovariance)."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if not 1 <= max_lag < n:
        raise DataError(f"max_lag must be in 1..{n - 1}")
    x = y - y.mean()
    c0 = x @ x / n
    if c0 <= 0 or not np.isfinite(c0):
        raise DataError("autocorrelation undefined for a constant series")
    gamma = np.array([x[k:] @ x[: n - k] for k in range(max_lag + 1)]) / n
    return gamma / c0


def pacf(y, max_lag: int) -> np.ndarray:
    """Partial autocorrelations at lags ``0..max_lag`` via Durbin-Levinson.

    Index 0 is set to 1 so indices line up with :func:`acf`.
    """
    r = acf(y, max_lag)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        a = (r[k] - phi @ r[k - 1 : 0 : -1]) / v
        phi = np.concatenate((phi - a * phi[::-1], [a]))
        v *= 1.0 - a * a
        out[k] = a
    return out


# MacKinnon/Fuller finite-sample critical values for the constant-only case.
_ADF_T = np.array([25.0, 50.0, 100.0, 250.0, 500.0, np.inf])
_ADF_CV = {
    0.01: np.array([-3.75, -3.58, -3.51, -3.46, -3.44, -3.43]),
    0.05: np.array([-3.00, -2.93, -2.89, -2.88, -2.87, -2.86]),
    0.10: np.array([-2.63, -2.60, -2.58, -2.57, -2.57, -2.57]),
}


def adf_critical_value(nobs: int, alpha: float) -> float:
    """Constant-only Dickey-Fuller critical value, linear in ``1/T``."""
    key = next((a for a in _ADF_CV if math.isclose(a, alpha)), None)
    if key is None:
        raise ValueError(f"alpha must be one of {sorted(_ADF_CV)}")
    inv = 1.0 / _ADF_T  # decreasing: 0.04 ... 0
    x = 1.0 / max(nobs, 1)
    # np.interp needs increasing abscissae; values beyond 1/25 are clamped
    return float(np.interp(x, inv[::-1], _ADF_CV[key][::-1]))


def adf_default_lags(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(y, lags: int | None = None, alpha: float = 0.05) -> StationarityReport:
    """Augmented Dickey-Fuller test with a constant and no trend.

    Regresses ``dy_t`` on ``1, y_{t-1}, dy_{t-1}, ..., dy_{t-lags}`` and
    reports the t-ratio of the ``y_{t-1}`` coefficient.  An exact fit (a
    deterministic series) gives statistic 0 unless the fitted coefficient is
    strictly negative.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if lags is None:
        lags = adf_default_lags(n)
    if lags < 0:
        raise ValueError("lags must be nonnegative")
    if n < 20 + lags:
        raise DataError(f"ADF with {lags} lags needs at least {20 + lags} values, got {n}")
    dy = np.diff(y)
    rows = dy.size - lags
    cols = [np.ones(rows), y[lags:-1]]
    for j in range(1, lags + 1):
        cols.append(dy[lags - j : dy.size - j])
    X = np.column_stack(cols)
    target = dy[lags:]
    coef, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        raise DataError("singular ADF regression")
    resid = target - X @ coef
    dof = rows - X.shape[1]
    ssr = float(resid @ resid)
    scale = max(1.0, float(target @ target))
    gamma = float(coef[1])
    if ssr <= 1e-24 * scale:
        stat = -np.inf if gamma < -1e-10 else 0.0
    else:
        xtx_inv = np.linalg.inv(X.T @ X)
        se = math.sqrt(ssr / dof * xtx_inv[1, 1])
        stat = gamma / se
    cv = adf_critical_value(rows, alpha)
    return StationarityReport(
        statistic=float(stat),
        lags=int(lags),
        reject_unit_root=bool(stat < cv),
        alpha=float(alpha),
        critical_value=cv,
        nobs=int(rows),
    )
