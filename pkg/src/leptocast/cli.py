"""Command-line interface.

Exit codes: 0 success, 1 data error, 2 every fit failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import arima as _arima
from . import sfplr as _sfplr
from .evalbench import (
    EvaluationReport,
    ReportRow,
    SplitSpec,
    SyntheticSpec,
    _flag_best,
    forecast_method,
    generate_synthetic,
    nse,
    rmse,
    select_for,
    run_comparison,
)
from .ingest import (
    AlignedDataset,
    DatasetManifest,
    RegionEntry,
    CovariateEntry,
    RunConfig,
    ingest,
    load_config,
    load_manifest,
    oni_from_anomalies,
    read_series_csv,
    write_series_csv,
)
from .plot import render_svg
from .series import DataError, Month, TimeSeries, segment

EXIT_OK, EXIT_DATA, EXIT_FIT = 0, 1, 2


class AllFitsFailed(RuntimeError):
    pass


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _spec_from_json(path: str | None, seed: int | None) -> SyntheticSpec:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load spec {path}: {exc}") from exc
    known = {f.name for f in dataclasses.fields(SyntheticSpec)}
    unknown = set(doc) - known
    if unknown:
        raise DataError(f"unknown synthetic spec fields: {sorted(unknown)}")
    if "start" in doc:
        doc["start"] = Month.parse(doc["start"])
    for key, value in doc.items():
        if isinstance(value, list):
            doc[key] = tuple(value)
    if seed is not None:
        doc["seed"] = seed
    try:
        return SyntheticSpec(**doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid synthetic spec: {exc}") from exc


def cmd_synth(args) -> int:
    spec = _spec_from_json(args.spec, args.seed)
    data = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    regions, covs = [], []
    for name, s in data.regions.items():
        fname = f"incidence_{name}.csv"
        write_series_csv(out / fname, s, integer=spec.counts)
        regions.append(RegionEntry(name, fname, data.populations[name]))
    for name, s in data.covariates.items():
        fname = f"covariate_{name}.csv"
        write_series_csv(out / fname, s)
        covs.append(CovariateEntry(name, fname, "interpolate_linear"))
    first = spec.start
    last = first + (spec.n_years * spec.tau - 1)
    manifest = DatasetManifest(tuple(regions), tuple(covs), first, last)
    _dump(out / "manifest.json", manifest.to_dict())
    config = RunConfig(SplitSpec(last - 12, 12), output_dir="results", seed=spec.seed)
    _dump(out / "config.json", config.to_dict())
    truth = {
        "beta": [float(b) for b in data.truth["beta"]],
        "profile": [float(v) for v in data.truth["profile"]],
        "m": {k: v.tolist() for k, v in data.truth["m"].items()},
        "spec": {k: (str(v) if isinstance(v, Month) else v) for k, v in dataclasses.asdict(spec).items()},
    }
    _dump(out / "truth.json", truth)
    print(f"wrote {len(regions)} regions, {len(covs)} covariates, {first}..{last} to {out}")
    return EXIT_OK


def _load(args) -> tuple[AlignedDataset, RunConfig, Path]:
    data = ingest(load_manifest(args.manifest))
    config = load_config(args.config)
    out = Path(args.out) if getattr(args, "out", None) else Path(args.config).parent / config.output_dir
    for line in data.actions:
        print(f"ingest: {line}", file=sys.stderr)
    return data, config, out


def _prediction_path(out: Path, region: str, method: str) -> Path:
    return out / f"predictions_{region}_{method}.csv"


def _months_series(values, split) -> TimeSeries:
    return TimeSeries(np.asarray(values, dtype=float), split.train_end + 1)


def _write_report(out: Path, report: EvaluationReport) -> None:
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")


def _write_plots(out: Path, data: AlignedDataset, config: RunConfig, preds: dict) -> list[Path]:
    split = config.split
    paths = []
    for region, series in data.regions.items():
        last = min(series.end, split.train_end + split.horizon)
        observed = series.window(series.start, last)
        region_preds = {m: s for (r, m), s in preds.items() if r == region and not s.has_missing}
        svg = render_svg(f"{region}: observed vs forecast", observed, split.train_end, region_preds)
        path = out / f"plot_{region}.svg"
        path.write_text(svg, encoding="utf-8")
        paths.append(path)
    return paths


def cmd_compare(args) -> int:
    data, config, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    report = run_comparison(data.dataset(), config.split, config.comparison)
    _write_report(out, report)
    preds = {}
    for row in report.rows:
        s = _months_series(row.predictions, config.split)
        write_series_csv(_prediction_path(out, row.region, row.method), s)
        preds[(row.region, row.method)] = s
        if row.failed:
            print(f"{row.region}/{row.method}: {row.error}", file=sys.stderr)
    if args.emit_plots or config.emit_plots:
        _write_plots(out, data, config, preds)
    print(report.to_text())
    if all(r.failed for r in report.rows):
        raise AllFitsFailed("every method failed in every region")
    return EXIT_OK


def cmd_forecast(args) -> int:
    data, config, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    failures = total = 0
    for region, series in data.regions.items():
        selection = None
        for method in config.comparison.methods:
            total += 1
            try:
                if method != "SFPLR" and selection is None:
                    selection = select_for(series.window(series.start, config.split.train_end),
                                           config.comparison.arima)
                pred, _ = forecast_method(method, series, data.covariates, config.split,
                                          config.comparison, selection)
                if config.comparison.clamp_nonnegative:
                    pred = np.maximum(pred, 0.0)
            except (DataError, _arima.FitError, _sfplr.DegenerateWeightsError, ValueError,
                    np.linalg.LinAlgError) as exc:
                print(f"{region}/{method}: {type(exc).__name__}: {exc}", file=sys.stderr)
                failures += 1
                pred = np.full(config.split.horizon, np.nan)
            path = _prediction_path(out, region, method)
            write_series_csv(path, _months_series(pred, config.split))
            print(path)
    if total and failures == total:
        raise AllFitsFailed("every method failed in every region")
    return EXIT_OK


def _read_predictions(pred_dir: Path, data: AlignedDataset, config: RunConfig) -> dict:
    preds = {}
    for region in data.regions:
        for method in config.comparison.methods:
            path = _prediction_path(pred_dir, region, method)
            if path.exists():
                preds[(region, method)] = read_series_csv(path)
    if not preds:
        raise DataError(f"no prediction files found in {pred_dir}")
    return preds


def cmd_evaluate(args) -> int:
    data, config, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    split = config.split
    preds = _read_predictions(Path(args.predictions or out), data, config)
    rows = []
    for region, series in data.regions.items():
        obs = series.window(split.train_end + 1, split.train_end + split.horizon).values
        months = tuple(split.train_end + (i + 1) for i in range(split.horizon))
        ref = None
        if config.comparison.nse_reference == "train":
            ref = float(series.window(series.start, split.train_end).values.mean())
        region_rows = []
        for method in config.comparison.methods:
            s = preds.get((region, method))
            if s is None:
                continue
            p = s.window(months[0], months[-1]).values
            if np.isnan(p).any():
                row = ReportRow(region, method, math.nan, math.nan, p, obs, months, error="missing predictions")
            else:
                row = ReportRow(region, method, nse(p, obs, ref), rmse(p, obs), p, obs, months)
            region_rows.append(row)
        _flag_best(region_rows)
        rows.extend(region_rows)
    report = EvaluationReport(rows, split)
    _write_report(out, report)
    print(report.to_text())
    return EXIT_OK


def cmd_plot(args) -> int:
    data, config, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    preds = _read_predictions(Path(args.predictions or out), data, config)
    for path in _write_plots(out, data, config, preds):
        print(path)
    return EXIT_OK


def cmd_fit(args) -> int:
    data, config, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    cc = config.comparison
    summary, failures, total = {}, 0, 0
    for region, series in data.regions.items():
        train = series.window(series.start, config.split.train_end)
        entry = summary[region] = {}
        selection = None
        for method in cc.methods:
            total += 1
            try:
                if method != "SFPLR" and selection is None:
                    selection = select_for(train, cc.arima)
                if method == "ARIMA":
                    m = _arima.fit_arima(train, selection.spec)
                    entry[method] = {"order": list(m.order), "phi": m.phi.tolist(), "theta": m.theta.tolist(),
                                     "intercept": m.intercept, "sigma2": m.sigma2, "aicc": m.aicc}
                elif method == "ARIMAX":
                    names = tuple(data.covariates)
                    X = np.column_stack([data.covariates[n].window(train.start, train.end).values for n in names])
                    m = _arima.fit_arimax(train, _sfplr.CovariateMatrix(X, names), selection.spec,
                                          cc.arimax.covariate_lags)
                    entry[method] = {"order": list(m.spec.order), "beta_x": m.beta_x.tolist(),
                                     "covariates": list(m.names), "sigma2": m.base.sigma2}
                else:
                    curves = segment(train, cc.sfplr.tau)
                    months = []
                    for k in range(config.split.horizon):
                        target = _sfplr.TargetSpec("month_value", k)
                        ds = _sfplr.build_dataset(curves, data.covariates, target, cc.sfplr.covariate_mode)
                        m = _sfplr.fit_sfplr(ds.X, ds.Z, ds.curves, cc.sfplr.kernel, cc.sfplr.metric,
                                             h_grid=cc.sfplr.h_grid, target=target)
                        months.append({"month_index": k, "beta": m.beta.tolist(), "h": m.h})
                    entry[method] = {"covariates": list(data.covariates), "per_month": months}
            except (DataError, _arima.FitError, _sfplr.DegenerateWeightsError, ValueError,
                    np.linalg.LinAlgError) as exc:
                failures += 1
                entry[method] = {"error": f"{type(exc).__name__}: {exc}"}
    _dump(out / "fit.json", summary)
    print(out / "fit.json")
    if total and failures == total:
        raise AllFitsFailed("every method failed in every region")
    return EXIT_OK


def cmd_oni(args) -> int:
    series = read_series_csv(args.input)
    write_series_csv(args.output, oni_from_anomalies(series))
    print(args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leptocast", description="Monthly incidence forecasting: "
                                     "ARIMA, ARIMAX and semi-functional partial linear regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset, manifest, config and ground truth")
    p.add_argument("--spec", help="JSON file overriding synthetic generator fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def data_cmd(name, func, helptext, predictions=False):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--out", help="output directory (default: config output.dir next to the config)")
        if predictions:
            p.add_argument("--predictions", help="directory holding predictions_<region>_<method>.csv")
        p.set_defaults(func=func)
        return p

    data_cmd("fit", cmd_fit, "fit every method on the training window and write fit.json")
    data_cmd("forecast", cmd_forecast, "write horizon forecasts per region and method")
    data_cmd("evaluate", cmd_evaluate, "score existing prediction files", predictions=True)
    cp = data_cmd("compare", cmd_compare, "fit, forecast and score every method")
    cp.add_argument("--emit-plots", action="store_true")
    data_cmd("plot", cmd_plot, "draw observed vs predicted SVG charts", predictions=True)

    p = sub.add_parser("oni-from-sst", help="centred 3-month running mean of monthly SST anomalies")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_oni)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AllFitsFailed as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
