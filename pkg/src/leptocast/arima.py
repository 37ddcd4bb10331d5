"""ARIMA and regression-with-ARIMA-errors (ARIMAX) by conditional least squares.

Conventions
-----------
Orders are written ``(p, d, q)``.  The AR polynomial is
``phi(B) = 1 - phi_1 B - ... - phi_p B^p`` and the MA polynomial is
``theta(B) = 1 + theta_1 B + ... + theta_q B^q``, so for the differenced
series ``w_t``::

    w_t - mu - x_t'beta = sum_i phi_i (w_{t-i} - ...) + a_t + sum_j theta_j a_{t-j}

A mean is estimated only when ``d == 0``.  Estimation minimises the
conditional sum of squares (CSS) of one-step residuals with presample
residuals at zero and presample observations at the sample mean.  The mean
and regression weights enter the residuals linearly, so they are solved
exactly by least squares for each candidate ``(phi, theta)``; only the ARMA
coefficients are searched by the simplex.  Coefficients are searched through
partial-autocorrelation coordinates, which keeps every candidate stationary
and invertible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .series import (
    BoxCoxTransform,
    DataError,
    TimeSeries,
    adf_test,
    box_cox_mle,
    difference,
    difference_heads,
    difference_tails,
    extend_integrated,
)

__all__ = [
    "FitError",
    "ArimaSpec",
    "ArmaFit",
    "ArimaModel",
    "ArimaxModel",
    "OrderSelection",
    "fit_arma",
    "select_differencing",
    "select_order",
    "select_order_details",
    "fit_arima",
    "forecast",
    "fit_arimax",
    "forecast_arimax",
    "polynomial_root_moduli",
]

# keeps |partial autocorrelation| away from 1 so roots stay off the unit circle
_RMAX = 1.0 - 1e-6
MAX_ITER = 2000
REL_FTOL = 1e-8
COND_LIMIT = 1e10
# grid candidates with a root modulus below this are discarded
ROOT_MARGIN = 1.01


class FitError(RuntimeError):
    """Estimation failed (non-convergence, degenerate design)."""


@dataclass(frozen=True)
class ArimaSpec:
    p: int = 0
    d: int = 0
    q: int = 0
    use_boxcox: bool = False

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("orders must be nonnegative")
        if self.d > 2:
            raise ValueError("d must be at most 2")

    @property
    def order(self) -> tuple[int, int, int]:
        return (self.p, self.d, self.q)


@dataclass(frozen=True)
class ArmaFit:
    """Result of :func:`fit_arma` on an already differenced series."""

    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    sigma2: float
    loglik: float
    aicc: float
    css: float
    nobs: int
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    deviations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_iter: int = 0


@dataclass(frozen=True)
class ArimaModel:
    spec: ArimaSpec
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    sigma2: float
    loglik: float
    aicc: float
    css: float
    boxcox: BoxCoxTransform | None
    heads: np.ndarray
    tails: np.ndarray
    deviations: np.ndarray
    residuals: np.ndarray
    nobs: int

    @property
    def order(self):
        return self.spec.order


@dataclass(frozen=True)
class ArimaxModel:
    base: ArimaModel
    beta_x: np.ndarray
    covariate_lags: tuple[tuple[int, int], ...]
    names: tuple[str, ...]
    x_tail: np.ndarray

    @property
    def spec(self) -> ArimaSpec:
        return self.base.spec


@dataclass(frozen=True)
class OrderSelection:
    spec: ArimaSpec
    stationary: bool
    adf_statistic: float
    table: dict


def _pacf_to_coef(r) -> np.ndarray:
    phi: list[float] = []
    for a in r:
        a = float(a)
        phi = [c - a * phi[-1 - i] for i, c in enumerate(phi)] + [a]
    return np.array(phi)


def _coef_to_pacf(phi: np.ndarray) -> np.ndarray:
    phi = np.array(phi, dtype=float)
    r = np.zeros(phi.size)
    for k in range(phi.size - 1, -1, -1):
        a = phi[k]
        r[k] = a
        if k:
            phi = (phi[:k] + a * phi[:k][::-1]) / (1.0 - a * a)
    return r


def _unpack(u: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    phi = _pacf_to_coef(_RMAX * np.tanh(u[:p]))
    theta = -_pacf_to_coef(_RMAX * np.tanh(u[p : p + q]))
    return phi, theta


def _pack(phi, theta) -> np.ndarray:
    def inv(c):
        r = np.clip(_coef_to_pacf(np.asarray(c, dtype=float)), -0.99, 0.99)
        return np.arctanh(r / _RMAX)

    return np.concatenate((inv(phi), inv(-np.asarray(theta, dtype=float))))


def _hannan_rissanen(w: np.ndarray, p: int, q: int) -> np.ndarray:
    """Starting point from a long-AR residual regression, in search coordinates."""
    n = w.size
    x = w - w.mean()
    try:
        e = np.zeros(n)
        if q:
            m = min(max(p + q, int(round(10 * math.log10(n)))), n // 4)
            A = np.column_stack([x[m - i : n - i] for i in range(1, m + 1)])
            c = np.linalg.lstsq(A, x[m:], rcond=None)[0]
            e[m:] = x[m:] - A @ c
        r = max(p, q) + (m if q else 0)
        cols = [x[r - i : n - i] for i in range(1, p + 1)]
        cols += [e[r - j : n - j] for j in range(1, q + 1)]
        coef = np.linalg.lstsq(np.column_stack(cols), x[r:], rcond=None)[0]
        return _pack(coef[:p], coef[p:])
    except (np.linalg.LinAlgError, ValueError):
        return np.zeros(p + q)


def polynomial_root_moduli(coefs: Sequence[float], sign: float = -1.0) -> np.ndarray:
    """Moduli of the roots of ``1 + sign * sum_k c_k z^k``.

    ``sign=-1`` gives the AR polynomial, ``sign=+1`` the MA polynomial.
    """
    c = np.asarray(coefs, dtype=float)
    if c.size == 0:
        return np.zeros(0)
    poly = np.concatenate(([1.0], sign * c))
    return np.abs(np.roots(poly[::-1]))


def _filter(phi, theta, V: np.ndarray, means=None) -> np.ndarray:
    """Apply the CSS residual recursion to every column of ``V``."""
    p, q = phi.size, theta.size
    if p == 0 and q == 0:
        return V.copy()
    b = np.concatenate(([1.0], -phi))
    a = np.concatenate(([1.0], theta))
    # filter state for presample inputs all equal to 1 and zero presample outputs
    unit = np.zeros(max(p, q))
    if p:
        unit[:p] = np.cumsum(b[:0:-1])[::-1]
    zi = np.outer(unit, V.mean(axis=0) if means is None else means)
    out, _ = lfilter(b, a, V, axis=0, zi=zi)
    return out


class _CssProblem:
    """CSS objective with mean/regression weights profiled out."""

    def __init__(self, w: np.ndarray, G: np.ndarray, p: int, q: int):
        self.w = w
        self.G = G
        self.p, self.q = p, q
        self.V = np.column_stack((w, G)) if G.shape[1] else w[:, None]
        self.means = self.V.mean(axis=0)

    def solve(self, u):
        phi, theta = _unpack(np.asarray(u, dtype=float), self.p, self.q)
        F = _filter(phi, theta, self.V, self.means)
        fw = F[:, 0]
        if self.G.shape[1]:
            FG = F[:, 1:]
            try:
                gamma = np.linalg.solve(FG.T @ FG, FG.T @ fw)
            except np.linalg.LinAlgError:
                gamma = np.linalg.lstsq(FG, fw, rcond=None)[0]
            e = fw - FG @ gamma
        else:
            gamma = np.zeros(0)
            e = fw
        return phi, theta, gamma, e

    def __call__(self, u) -> float:
        e = self.solve(u)[3]
        return float(e @ e)


def _simplex(fun, x0: np.ndarray, step: float = 0.3):
    dim = x0.size
    f0 = fun(x0)
    fatol = REL_FTOL * max(abs(f0), 1e-300)
    opts = dict(maxiter=MAX_ITER, maxfev=4 * MAX_ITER, xatol=np.inf, fatol=fatol)
    simplex = np.vstack([x0] + [x0 + step * np.eye(dim)[i] for i in range(dim)])
    res = minimize(fun, x0, method="Nelder-Mead", options=dict(opts, initial_simplex=simplex))
    n_iter = res.nit
    if not res.success:
        # one restart from a deterministic perturbation of the best point
        x1 = res.x + 0.1 * step * (1 + np.arange(dim)) / dim
        simplex = np.vstack([x1] + [x1 + step * np.eye(dim)[i] for i in range(dim)])
        res = minimize(fun, x1, method="Nelder-Mead", options=dict(opts, initial_simplex=simplex))
        n_iter += res.nit
        if not res.success:
            raise FitError(f"simplex did not converge after {n_iter} iterations: {res.message}")
    return res.x, n_iter


def _css_fit(w: np.ndarray, G: np.ndarray, p: int, q: int, n_params: int) -> ArmaFit:
    n = w.size
    problem = _CssProblem(w, G, p, q)
    if p + q:
        u, n_iter = _simplex(problem, _hannan_rissanen(w, p, q))
    else:
        u, n_iter = np.zeros(0), 0
    phi, theta, gamma, e = problem.solve(u)
    css = float(e @ e)
    if not css > 0:
        raise FitError("zero residual variance")
    sigma2 = css / n
    loglik = -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)
    k = n_params
    aicc = -2.0 * loglik + 2.0 * k * n / (n - k - 1) if n - k - 1 > 0 else math.inf
    return ArmaFit(
        phi=phi,
        theta=theta,
        intercept=0.0,
        sigma2=sigma2,
        loglik=loglik,
        aicc=aicc,
        css=css,
        nobs=n,
        beta=gamma,
        deviations=w - (G @ gamma if gamma.size else 0.0),
        residuals=e,
        n_iter=n_iter,
    )


def _check_length(n: int, p: int, q: int):
    need = 10 * (p + q + 1)
    if n < need:
        raise DataError(f"ARMA({p},{q}) needs at least {need} observations, got {n}")


def fit_arma(w, p: int, q: int, include_mean: bool = True) -> ArmaFit:
    """Fit ARMA(p, q) to a stationary series by CSS.

    Returns the AR/MA coefficients, the mean (``intercept``), the innovation
    variance ``css / n``, the Gaussian CSS log-likelihood and AICc with
    ``k = p + q + 1``.
    """
    w = np.asarray(w, dtype=float)
    if not np.isfinite(w).all():
        raise DataError("series must be finite")
    _check_length(w.size, p, q)
    G = np.ones((w.size, 1)) if include_mean else np.zeros((w.size, 0))
    fit = _css_fit(w, G, p, q, n_params=p + q + 1)
    mu = float(fit.beta[0]) if include_mean else 0.0
    return ArmaFit(**{**fit.__dict__, "intercept": mu, "beta": np.zeros(0)})


def _transform(y: np.ndarray, use_boxcox: bool):
    if not use_boxcox:
        return y, None
    bc = box_cox_mle(y)
    return bc.forward(y), bc


def _values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        if series.has_missing:
            raise DataError("resolve missing values before fitting")
        return np.array(series.values)
    y = np.asarray(series, dtype=float)
    if not np.isfinite(y).all():
        raise DataError("series must be finite")
    return y


def _near_unit_root(phi, theta, margin: float = ROOT_MARGIN) -> bool:
    roots = np.concatenate((polynomial_root_moduli(phi, -1.0), polynomial_root_moduli(theta, 1.0)))
    return bool(roots.size and roots.min() < margin)


def select_differencing(y, d_max: int = 2, alpha: float = 0.05) -> tuple[int, bool, float]:
    """Smallest ``d`` whose differenced series rejects a unit root.

    Returns ``(d, found, adf_statistic)``; when no ``d <= d_max`` works,
    ``d_max`` is returned with ``found=False``.
    """
    y = _values(y)
    stat = math.nan
    for d in range(d_max + 1):
        rep = adf_test(difference(y, d), alpha=alpha)
        stat = rep.statistic
        if rep.reject_unit_root:
            return d, True, stat
    return d_max, False, stat


def select_order_details(
    series,
    p_max: int = 5,
    q_max: int = 5,
    d_max: int = 2,
    alpha: float = 0.05,
    use_boxcox: bool = False,
) -> OrderSelection:
    y = _values(series)
    if y.size < 30:
        raise DataError(f"order selection needs at least 30 values, got {y.size}")
    z, _ = _transform(y, use_boxcox)
    d, found, stat = select_differencing(z, d_max, alpha)
    if not found:
        warnings.warn(f"no d <= {d_max} passed the ADF test; using d={d_max}", RuntimeWarning)
    w = difference(z, d)
    table = {}
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            try:
                fit = fit_arma(w, p, q, include_mean=(d == 0))
            except (FitError, DataError, np.linalg.LinAlgError):
                continue
            if _near_unit_root(fit.phi, fit.theta):
                continue
            table[(p, q)] = fit.aicc
    finite = {k: v for k, v in table.items() if math.isfinite(v)}
    if not finite:
        raise FitError("every candidate (p, q) failed to fit")
    p, q = min(finite, key=lambda k: (finite[k], k[0] + k[1], k[0]))
    return OrderSelection(ArimaSpec(p, d, q, use_boxcox), found, stat, table)


def select_order(series, p_max=5, q_max=5, d_max=2, alpha=0.05, use_boxcox=False) -> ArimaSpec:
    """ADF-driven ``d`` followed by an AICc grid over ``(p, q)``.

    Ties in AICc go to the smaller ``p + q``, then the smaller ``p``.
    """
    return select_order_details(series, p_max, q_max, d_max, alpha, use_boxcox).spec


def _model_from_fit(spec, fit: ArmaFit, mu: float, bc, z: np.ndarray) -> ArimaModel:
    return ArimaModel(
        spec=spec,
        phi=fit.phi,
        theta=fit.theta,
        intercept=mu,
        sigma2=fit.sigma2,
        loglik=fit.loglik,
        aicc=fit.aicc,
        css=fit.css,
        boxcox=bc,
        heads=difference_heads(z, spec.d),
        tails=difference_tails(z, spec.d),
        deviations=fit.deviations,
        residuals=fit.residuals,
        nobs=fit.nobs,
    )


def fit_arima(series, spec: ArimaSpec) -> ArimaModel:
    """Box-Cox (optional), difference ``d`` times, fit ARMA(p, q) by CSS."""
    y = _values(series)
    z, bc = _transform(y, spec.use_boxcox)
    w = difference(z, spec.d)
    _check_length(w.size, spec.p, spec.q)
    mean = spec.d == 0
    G = np.ones((w.size, 1)) if mean else np.zeros((w.size, 0))
    fit = _css_fit(w, G, spec.p, spec.q, n_params=spec.p + spec.q + 1)
    mu = float(fit.beta[0]) if mean else 0.0
    return _model_from_fit(spec, fit, mu, bc, z)


def _arma_extend(phi, theta, deviations, residuals, h: int) -> np.ndarray:
    p, q = phi.size, theta.size
    x = list(deviations[-p:]) if p else []
    if len(x) < p:
        x = [float(np.mean(deviations))] * (p - len(x)) + x
    e = list(residuals[-q:]) if q else []
    if len(e) < q:
        e = [0.0] * (q - len(e)) + e
    out = np.empty(h)
    for k in range(h):
        val = 0.0
        for i in range(p):
            val += phi[i] * x[-1 - i]
        for j in range(q):
            val += theta[j] * e[-1 - j]
        out[k] = val
        x.append(val)
        e.append(0.0)
    return out


def _finish(model: ArimaModel, w_future: np.ndarray) -> np.ndarray:
    z = extend_integrated(w_future, model.tails) if model.spec.d else w_future
    if model.boxcox is not None:
        z = model.boxcox.inverse(z)
    return np.asarray(z, dtype=float)


def forecast(model: ArimaModel, h: int) -> np.ndarray:
    """Point forecasts for steps ``1..h`` on the original scale."""
    if h < 1:
        raise ValueError("horizon must be at least 1")
    dev = _arma_extend(model.phi, model.theta, model.deviations, model.residuals, h)
    return _finish(model, model.intercept + dev)


def _as_matrix(covariates) -> tuple[np.ndarray, tuple[str, ...]]:
    names = getattr(covariates, "names", None)
    rows = getattr(covariates, "rows", covariates)
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return X, tuple(names)


def _lagged_design(Xd: np.ndarray, lags, n_rows: int) -> np.ndarray:
    """Rows aligned to the last ``n_rows`` entries of ``Xd``."""
    m = Xd.shape[0]
    cols = [Xd[m - n_rows - lag : m - lag, j] for j, lag in lags]
    return np.column_stack(cols) if cols else np.zeros((n_rows, 0))


def _resolve_lags(covariate_lags, names) -> tuple[tuple[int, int], ...]:
    if covariate_lags is None:
        return tuple((j, 0) for j in range(len(names)))
    out = []
    for cov, lag in covariate_lags:
        j = names.index(cov) if isinstance(cov, str) else int(cov)
        if not 0 <= j < len(names):
            raise ValueError(f"unknown covariate {cov!r}")
        if lag < 0:
            raise ValueError("covariate lags must be nonnegative")
        out.append((j, int(lag)))
    return tuple(out)


def fit_arimax(series, covariates, spec: ArimaSpec, covariate_lags=None) -> ArimaxModel:
    """Regression on (lagged) covariates with ARIMA(p, d, q) errors.

    ``covariates`` is an ``(N, k)`` array (or anything with ``rows`` and
    ``names``) aligned month by month with ``series``.  Covariates are
    differenced ``d`` times together with the response.  ``covariate_lags``
    lists ``(covariate, lag)`` pairs; the default is every covariate at lag 0.
    The first ``max(lag)`` differenced observations only feed the lags.
    """
    y = _values(series)
    X, names = _as_matrix(covariates)
    if X.shape[0] != y.size:
        raise DataError(f"covariates have {X.shape[0]} rows, series has {y.size}")
    if not np.isfinite(X).all():
        raise DataError("covariates must be fully observed")
    lags = _resolve_lags(covariate_lags, names)
    max_lag = max((lag for _, lag in lags), default=0)
    z, bc = _transform(y, spec.use_boxcox)
    w_all = difference(z, spec.d)
    Xd = np.diff(X, n=spec.d, axis=0) if spec.d else X
    n_rows = w_all.size - max_lag
    _check_length(n_rows, spec.p, spec.q)
    w = w_all[max_lag:]
    R = _lagged_design(Xd, lags, n_rows)
    mean = spec.d == 0
    G = np.column_stack((np.ones(n_rows), R)) if mean else R
    if G.shape[1]:
        if np.any(np.all(R == 0, axis=0)):
            raise DataError("degenerate covariate: all-zero column after differencing")
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise DataError(f"collinear covariates (condition number {cond:.3g})")
    fit = _css_fit(w, G, spec.p, spec.q, n_params=spec.p + spec.q + 1 + R.shape[1])
    mu = float(fit.beta[0]) if mean else 0.0
    beta = fit.beta[1:] if mean else fit.beta
    base = _model_from_fit(spec, fit, mu, bc, z)
    tail_len = spec.d + max_lag
    x_tail = X[X.shape[0] - tail_len :] if tail_len else X[:0]
    return ArimaxModel(base, np.array(beta), lags, names, np.array(x_tail))


def forecast_arimax(model: ArimaxModel, future_covariates, h: int | None = None) -> np.ndarray:
    """Forecast ``h`` steps given covariate values for each forecast month."""
    F, _ = _as_matrix(future_covariates)
    if h is None:
        h = F.shape[0]
    if h < 1:
        raise ValueError("horizon must be at least 1")
    if F.shape[0] < h or not np.isfinite(F[:h]).all():
        raise DataError(f"future covariates must cover all {h} forecast months")
    F = F[:h]
    if F.shape[1] != model.x_tail.shape[1]:
        raise DataError(f"expected {model.x_tail.shape[1]} covariates, got {F.shape[1]}")
    d = model.spec.d
    full = np.vstack((model.x_tail, F))
    Fd = np.diff(full, n=d, axis=0) if d else full
    R = _lagged_design(Fd, model.covariate_lags, h)
    base = model.base
    dev = _arma_extend(base.phi, base.theta, base.deviations, base.residuals, h)
    reg = R @ model.beta_x if model.beta_x.size else 0.0
    return _finish(base, base.intercept + reg + dev)
