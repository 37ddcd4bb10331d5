"""CSV/JSON ingestion: monthly series files, dataset manifests and run configs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evalbench import (
    ArimaConfig,
    ArimaxConfig,
    ComparisonConfig,
    Dataset,
    SfplrConfig,
    SplitSpec,
    METHODS,
)
from .series import DataError, Month, TimeSeries, apply_missing_policy
from .sfplr import SemiMetricSpec

__all__ = [
    "parse_series_csv",
    "read_series_csv",
    "format_series_csv",
    "write_series_csv",
    "RegionEntry",
    "CovariateEntry",
    "DatasetManifest",
    "load_manifest",
    "AlignedDataset",
    "ingest",
    "emit_aligned",
    "RunConfig",
    "load_config",
    "oni_from_anomalies",
]

PER = 100_000


def parse_series_csv(text: str, source: str = "<string>") -> TimeSeries:
    """Parse a ``date,value`` CSV (``YYYY-MM``; empty value = missing).

    Rows may come in any order; absent months become missing values.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header] != ["date", "value"]:
        raise DataError(f"{source}:1: expected header 'date,value', got {header!r}")
    points: dict[Month, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DataError(f"{source}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            month = Month.parse(row[0])
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: unparseable date {row[0]!r}") from exc
        if month in points:
            raise DataError(f"{source}:{lineno}: duplicate month {month}")
        raw = row[1].strip()
        if raw == "":
            value = math.nan
        else:
            try:
                value = float(raw)
            except ValueError as exc:
                raise DataError(f"{source}:{lineno}: non-numeric value {raw!r}") from exc
            if not math.isfinite(value):
                raise DataError(f"{source}:{lineno}: non-finite value {raw!r}")
        points[month] = value
    if not points:
        raise DataError(f"{source}: no data rows")
    first, last = min(points), max(points)
    values = np.full(last - first + 1, np.nan)
    for m, v in points.items():
        values[m - first] = v
    return TimeSeries(values, first)


def read_series_csv(path) -> TimeSeries:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_series_csv(text, str(path))


def _cell(v: float, integer: bool) -> str:
    if np.isnan(v):
        return ""
    if integer and float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def format_series_csv(series: TimeSeries, integer: bool = False) -> str:
    """CSV text that :func:`parse_series_csv` reads back exactly.

    With ``integer=True`` whole numbers are written without a decimal point
    (case counts).
    """
    lines = ["date,value"]
    for m, v in zip(series.months(), series.values):
        lines.append(f"{m},{_cell(v, integer)}")
    return "\n".join(lines) + "\n"


def write_series_csv(path, series: TimeSeries, integer: bool = False) -> None:
    Path(path).write_text(format_series_csv(series, integer), encoding="utf-8")


@dataclass(frozen=True)
class RegionEntry:
    name: str
    incidence_file: str
    population: int


@dataclass(frozen=True)
class CovariateEntry:
    name: str
    file: str
    missing_policy: str = "interpolate_linear"
    evacuation_level: float | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Parsed manifest; file paths are resolved against ``base_dir``."""

    regions: tuple[RegionEntry, ...]
    covariates: tuple[CovariateEntry, ...]
    start: Month | None = None
    end: Month | None = None
    incidence_missing_policy: str = "fill_zero"
    incidence_scale: str = "per_100k"
    base_dir: Path = Path(".")

    def __post_init__(self):
        if not self.regions:
            raise DataError("manifest lists no regions")
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise DataError("region names must be unique")
        for r in self.regions:
            if r.population <= 0:
                raise DataError(f"region {r.name}: population must be positive")
        if self.incidence_scale not in ("per_100k", "raw"):
            raise DataError("incidence_scale must be 'per_100k' or 'raw'")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "DatasetManifest":
        try:
            regions = tuple(
                RegionEntry(r["name"], r["incidence_file"], int(r.get("population", PER)))
                for r in doc["regions"]
            )
            covs = tuple(
                CovariateEntry(c["name"], c["file"], c.get("missing_policy", "interpolate_linear"),
                               c.get("evacuation_level"))
                for c in doc.get("covariates", [])
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: missing {exc}") from exc
        cal = doc.get("calendar", {}) or {}
        return cls(
            regions=regions,
            covariates=covs,
            start=Month.parse(cal["start"]) if cal.get("start") else None,
            end=Month.parse(cal["end"]) if cal.get("end") else None,
            incidence_missing_policy=doc.get("incidence_missing_policy", "fill_zero"),
            incidence_scale=doc.get("incidence_scale", "per_100k"),
            base_dir=Path(base_dir),
        )

    def to_dict(self) -> dict:
        doc = {
            "regions": [
                {"name": r.name, "incidence_file": r.incidence_file, "population": r.population}
                for r in self.regions
            ],
            "covariates": [],
            "calendar": {"start": str(self.start) if self.start else None,
                         "end": str(self.end) if self.end else None},
            "incidence_missing_policy": self.incidence_missing_policy,
            "incidence_scale": self.incidence_scale,
        }
        for c in self.covariates:
            entry = {"name": c.name, "file": c.file, "missing_policy": c.missing_policy}
            if c.evacuation_level is not None:
                entry["evacuation_level"] = c.evacuation_level
            doc["covariates"].append(entry)
        return doc

    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load manifest {path}: {exc}") from exc
    return DatasetManifest.from_dict(doc, path.parent)


@dataclass(frozen=True)
class AlignedDataset:
    regions: dict[str, TimeSeries]
    covariates: dict[str, TimeSeries]
    start: Month
    end: Month
    actions: tuple[str, ...] = ()
    populations: dict[str, int] = field(default_factory=dict)

    def dataset(self) -> Dataset:
        return Dataset(self.regions, self.covariates)


def ingest(manifest: DatasetManifest) -> AlignedDataset:
    """Load, align to the common window, resolve missing values, scale incidence.

    Incidence counts become cases per 100,000 people unless the manifest says
    ``incidence_scale: raw``.  A covariate with ``evacuation_level`` also yields
    a 0/1 covariate ``<name>_above_evac``.
    """
    raw_regions = {r.name: read_series_csv(manifest.resolve(r.incidence_file)) for r in manifest.regions}
    raw_covs = {c.name: read_series_csv(manifest.resolve(c.file)) for c in manifest.covariates}
    every = list(raw_regions.values()) + list(raw_covs.values())
    start = max(s.start for s in every)
    end = min(s.end for s in every)
    if manifest.start is not None:
        start = max(start, manifest.start)
    if manifest.end is not None:
        end = min(end, manifest.end)
    if end < start:
        raise DataError("series share no common months")
    actions = [f"window {start}..{end} ({end - start + 1} months)"]

    regions = {}
    for entry in manifest.regions:
        s = raw_regions[entry.name].window(start, end)
        s, filled = apply_missing_policy(s, manifest.incidence_missing_policy)
        if filled:
            actions.append(f"{entry.name}: {manifest.incidence_missing_policy} filled {filled} month(s)")
        if np.any(s.values < 0):
            raise DataError(f"{entry.name}: negative case counts")
        if manifest.incidence_scale == "per_100k":
            s = TimeSeries(s.values / entry.population * PER, s.start)
        regions[entry.name] = s

    covariates = {}
    for entry in manifest.covariates:
        s = raw_covs[entry.name].window(start, end)
        try:
            s, filled = apply_missing_policy(s, entry.missing_policy)
        except DataError as exc:
            raise DataError(f"covariate {entry.name}: {exc}") from exc
        if filled:
            actions.append(f"{entry.name}: {entry.missing_policy} filled {filled} month(s)")
        covariates[entry.name] = s
        if entry.evacuation_level is not None:
            flag = (s.values >= entry.evacuation_level).astype(float)
            covariates[f"{entry.name}_above_evac"] = TimeSeries(flag, s.start)
    return AlignedDataset(regions, covariates, start, end, tuple(actions),
                          {r.name: r.population for r in manifest.regions})


def emit_aligned(data: AlignedDataset, out_dir) -> Path:
    """Write the aligned dataset plus a manifest that re-ingests it unchanged."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    regions, covs = [], []
    for name, s in data.regions.items():
        fname = f"aligned_incidence_{name}.csv"
        write_series_csv(out / fname, s)
        regions.append({"name": name, "incidence_file": fname, "population": data.populations.get(name, PER)})
    for name, s in data.covariates.items():
        fname = f"aligned_covariate_{name}.csv"
        write_series_csv(out / fname, s)
        covs.append({"name": name, "file": fname, "missing_policy": "error"})
    doc = {
        "regions": regions,
        "covariates": covs,
        "calendar": {"start": str(data.start), "end": str(data.end)},
        "incidence_missing_policy": "error",
        "incidence_scale": "raw",
    }
    path = out / "aligned_manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class RunConfig:
    split: SplitSpec
    comparison: ComparisonConfig = ComparisonConfig()
    output_dir: str = "out"
    emit_plots: bool = False
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            sp = doc["split"]
            split = SplitSpec(Month.parse(sp["train_end"]), int(sp.get("horizon", 12)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"config: invalid split section ({exc})") from exc
        a = doc.get("arima", {}) or {}
        arima = ArimaConfig(
            p_max=int(a.get("p_max", 5)),
            q_max=int(a.get("q_max", 5)),
            d_max=int(a.get("d_max", 2)),
            use_boxcox=bool(a.get("use_boxcox", False)),
            alpha=float(a.get("alpha", 0.05)),
        )
        if min(arima.p_max, arima.q_max, arima.d_max) < 0:
            raise DataError("config: ARIMA order bounds must be nonnegative")
        ax = doc.get("arimax", {}) or {}
        lags = ax.get("covariate_lags")
        arimax = ArimaxConfig(tuple((c, int(lag)) for c, lag in lags) if lags else None)
        s = doc.get("sfplr", {}) or {}
        m = s.get("metric", {}) or {}
        if isinstance(m, str):
            m = {"kind": m}
        grid = s.get("h_grid")
        sfplr = SfplrConfig(
            metric=SemiMetricSpec(m.get("kind", "euclid_grid"), m.get("q")),
            kernel=s.get("kernel", "quadratic"),
            covariate_mode=s.get("covariate_mode", "contemporaneous"),
            h_grid=tuple(float(h) for h in grid) if grid else None,
            tau=int(s.get("tau", 12)),
        )
        if s.get("target", "month_value") != "month_value":
            raise DataError("config: the monthly comparison protocol uses target 'month_value'")
        comparison = ComparisonConfig(
            arima=arima,
            arimax=arimax,
            sfplr=sfplr,
            methods=tuple(doc.get("methods", METHODS)),
            clamp_nonnegative=bool(doc.get("clamp_nonnegative", True)),
            nse_reference=doc.get("nse_reference", "test"),
        )
        out = doc.get("output", {}) or {}
        if split.horizon > sfplr.tau:
            raise DataError("config: horizon must not exceed tau")
        return cls(split, comparison, str(out.get("dir", "out")), bool(out.get("emit_plots", False)),
                   int(doc.get("seed", 0)))

    def to_dict(self) -> dict:
        c = self.comparison
        return {
            "split": {"train_end": str(self.split.train_end), "horizon": self.split.horizon},
            "arima": {"p_max": c.arima.p_max, "q_max": c.arima.q_max, "d_max": c.arima.d_max,
                      "use_boxcox": c.arima.use_boxcox, "alpha": c.arima.alpha},
            "arimax": {"covariate_lags": [list(x) for x in c.arimax.covariate_lags]
                       if c.arimax.covariate_lags else None},
            "sfplr": {"metric": {"kind": c.sfplr.metric.kind, "q": c.sfplr.metric.q},
                      "kernel": c.sfplr.kernel, "target": "month_value",
                      "covariate_mode": c.sfplr.covariate_mode,
                      "h_grid": list(c.sfplr.h_grid) if c.sfplr.h_grid else None,
                      "tau": c.sfplr.tau},
            "methods": list(c.methods),
            "clamp_nonnegative": c.clamp_nonnegative,
            "nse_reference": c.nse_reference,
            "output": {"dir": self.output_dir, "emit_plots": self.emit_plots},
            "seed": self.seed,
        }


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load config {path}: {exc}") from exc
    try:
        return RunConfig.from_dict(doc)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def oni_from_anomalies(anomalies: TimeSeries) -> TimeSeries:
    """Centred 3-month running mean (the ONI construction); ends are missing."""
    v = np.asarray(anomalies.values, dtype=float)
    out = np.full(v.size, np.nan)
    if v.size >= 3:
        out[1:-1] = (v[:-2] + v[1:-1] + v[2:]) / 3.0
    return TimeSeries(out, anomalies.start)
