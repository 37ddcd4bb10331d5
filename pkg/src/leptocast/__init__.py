"""Monthly incidence forecasting with ARIMA, ARIMAX and semi-functional partial linear regression."""

from .arima import (
    ArimaModel,
    ArimaSpec,
    ArimaxModel,
    FitError,
    fit_arima,
    fit_arimax,
    fit_arma,
    forecast,
    forecast_arimax,
    select_order,
)
from .evalbench import (
    ComparisonConfig,
    EvaluationReport,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    nse,
    rmse,
    run_comparison,
)
from .ingest import DatasetManifest, RunConfig, ingest, parse_series_csv
from .series import DataError, FunctionalSample, Month, TimeSeries, adf_test, segment
from .sfplr import (
    CovariateMatrix,
    SemiMetricSpec,
    SfplrModel,
    TargetSpec,
    fit_beta,
    fit_sfplr,
    nw_weights,
    predict,
)

__version__ = "0.1.0"
