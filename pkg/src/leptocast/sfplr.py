"""Semi-functional partial linear regression (SFPLR).

A scalar response observed in period ``i + 1`` is modelled as a linear
function of scalar covariates plus an unknown smooth function of the whole
curve observed in period ``i``::

    Z_i = X_i' beta + m(Y_i) + eps_i

``beta`` is estimated after removing the kernel-smoothed part of both sides
(``(I - W_h) X`` and ``(I - W_h) Z``), and ``m`` by Nadaraya-Watson smoothing
of the partial residuals ``Z_i - X_i' beta``.  Weights are built from a
semi-metric between curves and an asymmetric kernel on ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .series import DataError, FunctionalSample, Month, TimeSeries

__all__ = [
    "DegenerateWeightsError",
    "CovariateMatrix",
    "SemiMetricSpec",
    "TargetSpec",
    "SfplrDataset",
    "SfplrModel",
    "SfplrPrediction",
    "KERNELS",
    "fit_pca_basis",
    "semi_metric",
    "distance_matrix",
    "nw_weights",
    "smoother_matrix",
    "build_dataset",
    "query_row",
    "fit_beta",
    "fit_sfplr",
    "estimate_m",
    "default_h_grid",
    "cv_bandwidth",
    "predict",
    "predict_detail",
]

COND_LIMIT = 1e10


class DegenerateWeightsError(ValueError):
    """Every kernel value is zero: the bandwidth is too small for this query."""


def _quadratic(u):
    return np.where((u >= 0) & (u <= 1), 1.5 * (1.0 - u * u), 0.0)


def _triangle(u):
    return np.where((u >= 0) & (u <= 1), 2.0 * (1.0 - u), 0.0)


def _uniform(u):
    return np.where((u >= 0) & (u <= 1), 1.0, 0.0)


def _gaussian(u):
    return np.where(u >= 0, np.sqrt(2.0 / np.pi) * np.exp(-0.5 * u * u), 0.0)


# Asymmetric kernels: distances are nonnegative, so only [0, inf) matters.
KERNELS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "quadratic": _quadratic,
    "triangle": _triangle,
    "uniform": _uniform,
    "gaussian": _gaussian,
}


def _kernel(name: str):
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


@dataclass(frozen=True)
class CovariateMatrix:
    rows: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        r = np.array(self.rows, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.ndim != 2 or r.shape[1] != len(self.names):
            raise DataError("covariate rows must be (n, p) with one name per column")
        if not np.isfinite(r).all():
            raise DataError("covariates must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class SemiMetricSpec:
    """``euclid_grid``, ``deriv_grid`` (first differences) or ``pca_q``."""

    kind: str = "euclid_grid"
    q: int | None = None
    deriv_order: int = 1

    def __post_init__(self):
        if self.kind not in ("euclid_grid", "deriv_grid", "pca_q"):
            raise ValueError(f"unknown semi-metric {self.kind!r}")
        if self.kind == "pca_q" and (self.q is None or self.q < 1):
            raise ValueError("pca_q needs q >= 1")
        if self.kind == "deriv_grid" and self.deriv_order != 1:
            raise ValueError("only first-order derivative semi-metric is supported")


@dataclass(frozen=True)
class TargetSpec:
    """The scalar characteristic ``G`` of a period's curve."""

    kind: str = "month_value"
    month_index: int = 0

    def __post_init__(self):
        if self.kind not in ("month_value", "period_sum", "period_max"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.month_index < 0:
            raise ValueError("month_index must be nonnegative")

    def __call__(self, curve) -> float:
        curve = np.asarray(curve, dtype=float)
        if self.kind == "month_value":
            if self.month_index >= curve.size:
                raise ValueError(f"month_index {self.month_index} outside curve of length {curve.size}")
            return float(curve[self.month_index])
        if self.kind == "period_sum":
            return float(curve.sum())
        return float(curve.max())


def fit_pca_basis(curves, q: int) -> np.ndarray:
    """Top-``q`` principal directions of the (centred) curves, shape ``(tau, q)``."""
    C = np.asarray(curves, dtype=float)
    if not 1 <= q <= C.shape[1]:
        raise ValueError(f"q must be in 1..{C.shape[1]}")
    _, _, vt = np.linalg.svd(C - C.mean(axis=0), full_matrices=False)
    basis = vt[:q].T
    # fix signs so the basis is a deterministic function of the data
    signs = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(q)])
    return basis * np.where(signs == 0, 1.0, signs)


def _features(C: np.ndarray, spec: SemiMetricSpec, basis) -> np.ndarray:
    if spec.kind == "euclid_grid":
        return C
    if spec.kind == "deriv_grid":
        return np.diff(C, axis=-1)
    if basis is None:
        raise ValueError("pca_q semi-metric needs a fitted basis (see fit_pca_basis)")
    return C @ basis


def semi_metric(a, b, spec: SemiMetricSpec = SemiMetricSpec(), basis=None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"curve lengths differ: {a.shape} vs {b.shape}")
    fa, fb = _features(a, spec, basis), _features(b, spec, basis)
    return float(np.sqrt(np.sum((fa - fb) ** 2)))


def distance_matrix(A, B, spec: SemiMetricSpec = SemiMetricSpec(), basis=None) -> np.ndarray:
    """All semi-metric distances between rows of ``A`` and rows of ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DataError("curve lengths differ")
    FA, FB = _features(A, spec, basis), _features(B, spec, basis)
    diff = FA[:, None, :] - FB[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _normalise_rows(K: np.ndarray) -> np.ndarray:
    s = K.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise DegenerateWeightsError("zero kernel mass; enlarge the bandwidth")
    return K / s


def _curves(sample) -> np.ndarray:
    return sample.curves if isinstance(sample, FunctionalSample) else np.atleast_2d(np.asarray(sample, dtype=float))


def nw_weights(target, sample, h: float, kernel: str = "quadratic",
               metric: SemiMetricSpec = SemiMetricSpec(), basis=None) -> np.ndarray:
    """Nadaraya-Watson weights of ``target`` against every curve of ``sample``."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    d = distance_matrix(np.asarray(target, dtype=float)[None, :], _curves(sample), metric, basis)
    return _normalise_rows(_kernel(kernel)(d / h))[0]


def smoother_matrix(curves, h: float, kernel: str = "quadratic",
                    metric: SemiMetricSpec = SemiMetricSpec(), basis=None) -> np.ndarray:
    """Row-normalised ``W_h`` over the training curves, self-weight included."""
    C = _curves(curves)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    return _normalise_rows(_kernel(kernel)(distance_matrix(C, C, metric, basis) / h))


@dataclass(frozen=True)
class SfplrDataset:
    curves: np.ndarray
    X: CovariateMatrix
    Z: np.ndarray
    response_months: tuple[Month, ...]


def _covariate_value(series: TimeSeries, months: Sequence[Month]) -> float:
    vals = []
    for m in months:
        try:
            v = series.value_at(m)
        except DataError as exc:
            raise DataError(f"covariate does not cover {m}") from exc
        if np.isnan(v):
            raise DataError(f"covariate missing at {m}")
        vals.append(v)
    return float(np.mean(vals))


def _covariate_months(sample: FunctionalSample, period: int, target: TargetSpec) -> list[Month]:
    if target.kind == "month_value":
        return [sample.month_of(period, target.month_index)]
    return [sample.month_of(period, k) for k in range(sample.tau)]


def _covariate_row(sample, covariates: Mapping[str, TimeSeries], period: int, target) -> list[float]:
    months = _covariate_months(sample, period, target)
    return [_covariate_value(s, months) for s in covariates.values()]


def _period(i: int, covariate_mode: str) -> int:
    if covariate_mode == "contemporaneous":
        return i + 1
    if covariate_mode == "same_month_prior_year":
        return i
    raise ValueError(f"unknown covariate_mode {covariate_mode!r}")


def build_dataset(curves: FunctionalSample, covariates: Mapping[str, TimeSeries],
                  target: TargetSpec = TargetSpec(),
                  covariate_mode: str = "contemporaneous") -> SfplrDataset:
    """Training triples ``(Y_i, X_i, G(Y_{i+1}))`` for ``i = 0..n-2``.

    ``contemporaneous`` takes covariates at the target month of period
    ``i + 1``; ``same_month_prior_year`` takes them at the target month of
    period ``i``.  Period targets average covariates over the period.
    """
    if curves.n < 3:
        raise DataError("need at least 3 curves to build a training set")
    if target.kind == "month_value" and target.month_index >= curves.tau:
        raise ValueError("month_index outside the curve")
    rows, Z, months = [], [], []
    for i in range(curves.n - 1):
        rows.append(_covariate_row(curves, covariates, _period(i, covariate_mode), target))
        Z.append(target(curves.curves[i + 1]))
        months.append(curves.month_of(i + 1, target.month_index if target.kind == "month_value" else 0))
    X = CovariateMatrix(np.array(rows).reshape(len(rows), len(covariates)), tuple(covariates))
    return SfplrDataset(np.array(curves.curves[:-1]), X, np.array(Z), tuple(months))


def query_row(curves: FunctionalSample, covariates: Mapping[str, TimeSeries],
              target: TargetSpec = TargetSpec(),
              covariate_mode: str = "contemporaneous") -> tuple[np.ndarray, np.ndarray]:
    """``(x_new, last_curve)`` for predicting the period after the last curve."""
    i = curves.n - 1
    x = _covariate_row(curves, covariates, _period(i, covariate_mode), target)
    return np.array(x), np.array(curves.curves[-1])


def _xz(X, Z):
    X = np.asarray(getattr(X, "rows", X), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Z = np.asarray(Z, dtype=float)
    if X.shape[0] != Z.size:
        raise DataError(f"{X.shape[0]} covariate rows but {Z.size} responses")
    return X, Z


def _solve_beta(W: np.ndarray, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    n, p = X.shape
    if n <= p:
        raise DataError(f"need more observations ({n}) than covariates ({p})")
    if p == 0:
        return np.zeros(0)
    Xt = X - W @ X
    Zt = Z - W @ Z
    Q, R = np.linalg.qr(Xt)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DataError(f"smoothed covariate matrix is ill-conditioned (condition number {cond:.3g})")
    return solve_triangular(R, Q.T @ Zt)


def fit_beta(X, Z, curves, h: float | None = None, kernel: str = "quadratic",
             metric: SemiMetricSpec = SemiMetricSpec(), basis=None, W=None) -> np.ndarray:
    """``beta_h = (X~'X~)^-1 X~'Z~`` with ``X~ = (I - W_h) X``, ``Z~ = (I - W_h) Z``.

    ``W`` overrides the kernel smoother (useful for checking reductions such
    as ``W = 0`` giving ordinary least squares).
    """
    X, Z = _xz(X, Z)
    if W is None:
        if h is None:
            raise ValueError("either h or W is required")
        W = smoother_matrix(curves, h, kernel, metric, basis)
    W = np.asarray(W, dtype=float)
    if W.shape != (Z.size, Z.size):
        raise DataError("smoother matrix must be n x n")
    return _solve_beta(W, X, Z)


@dataclass(frozen=True)
class SfplrModel:
    beta: np.ndarray
    h: float
    kernel: str
    metric: SemiMetricSpec
    train_curves: np.ndarray
    train_X: np.ndarray
    train_Z: np.ndarray
    target: TargetSpec = TargetSpec()
    basis: np.ndarray | None = None
    names: tuple[str, ...] = ()
    nonnegative: bool = False
    cv_scores: dict = field(default_factory=dict)

    @property
    def partial_residuals(self) -> np.ndarray:
        return self.train_Z - self.train_X @ self.beta if self.beta.size else self.train_Z.copy()


@dataclass(frozen=True)
class SfplrPrediction:
    value: float
    raw: float
    linear_part: float
    m_hat: float
    nearest_fallback: bool


def _m_hat(model: SfplrModel, curve, fallback: bool) -> tuple[float, bool]:
    curve = np.asarray(curve, dtype=float)
    if curve.size != model.train_curves.shape[1]:
        raise DataError(f"query curve has length {curve.size}, expected {model.train_curves.shape[1]}")
    resid = model.partial_residuals
    try:
        w = nw_weights(curve, model.train_curves, model.h, model.kernel, model.metric, model.basis)
        return float(w @ resid), False
    except DegenerateWeightsError:
        if not fallback:
            raise
    d = distance_matrix(curve[None, :], model.train_curves, model.metric, model.basis)[0]
    return float(resid[int(np.argmin(d))]), True


def estimate_m(model: SfplrModel, curve, fallback: bool = False) -> float:
    """``m_hat(curve) = sum_i w(curve, Y_i) (Z_i - X_i' beta)``.

    With ``fallback=True`` an empty kernel neighbourhood uses the nearest
    training curve instead of raising.
    """
    return _m_hat(model, curve, fallback)[0]


def default_h_grid(curves, metric: SemiMetricSpec = SemiMetricSpec(), basis=None, size: int = 20) -> np.ndarray:
    """Log-spaced grid between the 5th and 95th percentile of pairwise distances."""
    C = _curves(curves)
    D = distance_matrix(C, C, metric, basis)
    d = D[np.triu_indices(C.shape[0], k=1)]
    d = d[d > 0]
    if d.size == 0:
        raise DataError("all training curves coincide under this semi-metric")
    lo, hi = np.percentile(d, [5, 95])
    if hi <= lo:
        return np.array([lo])
    return np.geomspace(lo, hi, size)


def _loo_scores(X, Z, D, kernel, h_grid) -> dict[float, float]:
    kern = _kernel(kernel)
    n = Z.size
    scores = {}
    for h in h_grid:
        K = kern(D / h)
        err = 0.0
        ok = True
        for i in range(n):
            keep = np.arange(n) != i
            try:
                W = _normalise_rows(K[np.ix_(keep, keep)])
                beta = _solve_beta(W, X[keep], Z[keep])
                k_i = K[i, keep]
                mass = k_i.sum()
                if mass <= 0:
                    raise DegenerateWeightsError
                resid = Z[keep] - (X[keep] @ beta if beta.size else 0.0)
                pred = (X[i] @ beta if beta.size else 0.0) + (k_i / mass) @ resid
            except (DegenerateWeightsError, DataError, np.linalg.LinAlgError):
                ok = False
                break
            err += (Z[i] - pred) ** 2
        if ok:
            scores[float(h)] = err / n
    return scores


def cv_bandwidth(X, Z, curves, kernel: str = "quadratic", metric: SemiMetricSpec = SemiMetricSpec(),
                 h_grid=None, basis=None, return_scores: bool = False):
    """Leave-one-out bandwidth choice.

    For every ``h`` and every ``i``, ``beta`` and ``m`` are refitted without
    observation ``i`` and ``Z_i`` is predicted.  Bandwidths that leave some
    held-out point without kernel mass (or make the fit singular) are skipped.
    Ties go to the smallest ``h``.
    """
    X, Z = _xz(X, Z)
    C = _curves(curves)
    if h_grid is None:
        h_grid = default_h_grid(C, metric, basis)
    grid = np.unique(np.asarray(h_grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("h_grid must hold positive bandwidths")
    if grid.size == 1:
        h = float(grid[0])
        return (h, {}) if return_scores else h
    D = distance_matrix(C, C, metric, basis)
    scores = _loo_scores(X, Z, D, kernel, grid)
    if not scores:
        raise DegenerateWeightsError("every bandwidth in the grid is degenerate for some held-out curve")
    best = min(scores, key=lambda h: (scores[h], h))
    return (best, scores) if return_scores else best


def fit_sfplr(X, Z, curves, kernel: str = "quadratic", metric: SemiMetricSpec = SemiMetricSpec(),
              h: float | None = None, h_grid=None, target: TargetSpec = TargetSpec(),
              nonnegative: bool = False, names: Sequence[str] | None = None) -> SfplrModel:
    """Fit ``beta`` and keep what ``m_hat`` needs; ``h`` by LOO CV unless given."""
    if names is None:
        names = getattr(X, "names", None)
    X, Z = _xz(X, Z)
    C = _curves(curves)
    if C.shape[0] != Z.size:
        raise DataError(f"{C.shape[0]} curves but {Z.size} responses")
    basis = fit_pca_basis(C, metric.q) if metric.kind == "pca_q" else None
    scores = {}
    if h is None:
        h, scores = cv_bandwidth(X, Z, C, kernel, metric, h_grid, basis, return_scores=True)
    beta = fit_beta(X, Z, C, h, kernel, metric, basis)
    return SfplrModel(
        beta=beta,
        h=float(h),
        kernel=kernel,
        metric=metric,
        train_curves=C.copy(),
        train_X=X.copy(),
        train_Z=Z.copy(),
        target=target,
        basis=basis,
        names=tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1])),
        nonnegative=nonnegative,
        cv_scores=scores,
    )


def predict_detail(model: SfplrModel, x_new, last_curve, fallback: bool = True) -> SfplrPrediction:
    x_new = np.asarray(x_new, dtype=float).reshape(-1)
    if x_new.size != model.beta.size:
        raise DataError(f"expected {model.beta.size} covariates, got {x_new.size}")
    lin = float(x_new @ model.beta) if model.beta.size else 0.0
    m, fell_back = _m_hat(model, last_curve, fallback)
    raw = lin + m
    value = max(raw, 0.0) if model.nonnegative else raw
    return SfplrPrediction(value, raw, lin, m, fell_back)


def predict(model: SfplrModel, x_new, last_curve, fallback: bool = True) -> float:
    """``x_new' beta + m_hat(last_curve)``, clamped at zero for nonnegative targets."""
    return predict_detail(model, x_new, last_curve, fallback).value
