"""CSV ingestion, standardisation, sliding windows and synthetic series."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

MISSING = {"", "NA", "N/A", "NaN", "nan", "null", "NULL"}
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class CsvSchema:
    """Which columns to read and how.

    ``columns`` lists the columns to load, in order (``None``: every column
    of the file except ``drop``).  ``inputs`` selects the model input
    variables among them (``None``: all loaded columns, target included).
    """

    target: str
    columns: tuple[str, ...] | None = None
    inputs: tuple[str, ...] | None = None
    categorical: tuple[str, ...] = ()
    drop: tuple[str, ...] = ()
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        d = dict(d)
        for key in ("columns", "inputs", "categorical", "drop"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"schema: {exc}") from None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class RawSeries:
    """Time-ordered numeric table; categorical columns already integer coded."""

    columns: list[str]
    values: np.ndarray  # (rows, len(columns))
    target: str
    categories: dict[str, dict[str, int]] = field(default_factory=dict)
    source: str | None = None

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def rows(self, start: int, stop: int) -> "RawSeries":
        return RawSeries(self.columns, self.values[start:stop], self.target, self.categories, self.source)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_csv(path, schema: CsvSchema) -> RawSeries:
    """Read a headed CSV into a :class:`RawSeries`.

    Categorical cells are coded 0, 1, ... in order of first appearance.
    Leading rows whose target is missing are dropped; any later gap is
    forward-filled from the previous row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = [row for row in reader if row and any(c.strip() for c in row)]
    if not body:
        raise DataError(f"{path}: no data rows")

    wanted = list(schema.columns) if schema.columns else [h for h in header if h not in schema.drop]
    unknown = [c for c in [*wanted, schema.target, *schema.categorical] if c not in header]
    if unknown:
        raise DataError(f"{path}: unknown column(s) {sorted(set(unknown))}; header is {header}")
    if schema.target not in wanted:
        raise DataError(f"{path}: target {schema.target!r} is not among the loaded columns")
    idx = [header.index(c) for c in wanted]
    categorical = set(schema.categorical)
    categories: dict[str, dict[str, int]] = {c: {} for c in wanted if c in categorical}

    values = np.empty((len(body), len(wanted)))
    for r, row in enumerate(body):
        line = r + 2  # 1-based, after the header
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, header has {len(header)}")
        for k, (name, j) in enumerate(zip(wanted, idx)):
            cell = row[j].strip()
            if cell in MISSING:
                values[r, k] = math.nan
            elif name in categorical:
                codes = categories[name]
                values[r, k] = codes.setdefault(cell, len(codes))
            else:
                try:
                    values[r, k] = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {line}, column {name!r}: cannot parse {cell!r}") from None

    t = wanted.index(schema.target)
    present = np.flatnonzero(~np.isnan(values[:, t]))
    if present.size == 0:
        raise DataError(f"{path}: target column {schema.target!r} has no values")
    values = values[present[0]:]
    for k, name in enumerate(wanted):
        col = values[:, k]
        if math.isnan(col[0]):
            raise DataError(f"{path}: column {name!r} is missing on the first retained row; cannot forward-fill")
        # forward fill: index of the last valid entry at or before each row
        valid = ~np.isnan(col)
        last = np.maximum.accumulate(np.where(valid, np.arange(col.size), 0))
        values[:, k] = col[last]
    return RawSeries(wanted, values, schema.target, categories, str(path))


def save_csv(series: RawSeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.columns)
        for row in series.values:
            w.writerow([repr(float(v)) for v in row])


def split_bounds(rows: int, fractions: Sequence[float] = (0.6, 0.2, 0.2)) -> tuple[int, int, int, int]:
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three positive numbers summing to 1, got {list(fractions)}")
    n_train = math.floor(rows * fractions[0])
    n_val = math.floor(rows * fractions[1])
    return 0, n_train, n_train + n_val, rows


def split_chronological(
    series: RawSeries,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    min_rows: int = 1,
) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Contiguous train/val/test segments; floor rounding, remainder to test.

    ``min_rows`` is the length one window needs (Tx + Ty); shorter segments
    are rejected.
    """
    b = split_bounds(len(series), fractions)
    parts = tuple(series.rows(b[k], b[k + 1]) for k in range(3))
    for name, part in zip(("train", "val", "test"), parts):
        if len(part) < min_rows:
            raise DataError(f"{name} segment has {len(part)} rows, fewer than the {min_rows} one window needs")
    return parts


@dataclass
class StandardScaler:
    columns: list[str]
    mean: np.ndarray
    std: np.ndarray

    def transform(self, series: RawSeries) -> RawSeries:
        self._check(series)
        return RawSeries(
            series.columns, (series.values - self.mean) / self.std, series.target,
            series.categories, series.source,
        )

    def inverse_transform(self, series: RawSeries) -> RawSeries:
        self._check(series)
        return RawSeries(
            series.columns, series.values * self.std + self.mean, series.target,
            series.categories, series.source,
        )

    def inverse_column(self, name: str, values: np.ndarray) -> np.ndarray:
        k = self.columns.index(name)
        return np.asarray(values) * self.std[k] + self.mean[k]

    def _check(self, series: RawSeries) -> None:
        if series.columns != self.columns:
            raise DataError(f"scaler fitted on {self.columns}, got columns {series.columns}")

    def to_dict(self) -> dict:
        return {"columns": self.columns, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardScaler":
        return cls(list(d["columns"]), np.asarray(d["mean"], float), np.asarray(d["std"], float))


def fit_standardize(train: RawSeries) -> StandardScaler:
    """Per-column mean and (population) standard deviation of the training rows."""
    if len(train) == 0:
        raise DataError("cannot fit a scaler on an empty training segment")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    for name, s in zip(train.columns, std):
        if not s > 0:
            raise DataError(f"column {name!r} is constant on the training rows; it cannot be standardised")
    return StandardScaler(list(train.columns), mean, std)


def apply(scaler: StandardScaler, series: RawSeries) -> RawSeries:
    return scaler.transform(series)


@dataclass
class WindowedDataset:
    """Input blocks ``X`` (windows, N, Tx) and targets ``y`` (windows, Ty)."""

    X: np.ndarray
    y: np.ndarray
    input_names: list[str]
    target: str
    scaler: StandardScaler | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, k):
        return self.X[k], self.y[k]

    @property
    def n_vars(self) -> int:
        return self.X.shape[1]

    def targets_original_units(self, y: np.ndarray | None = None) -> np.ndarray:
        y = self.y if y is None else y
        return y if self.scaler is None else self.scaler.inverse_column(self.target, y)


def window_count(rows: int, input_len: int, output_len: int, stride: int = 1) -> int:
    return (rows - input_len - output_len) // stride + 1


def make_windows(
    series: RawSeries,
    input_len: int,
    output_len: int,
    stride: int = 1,
    inputs: Sequence[str] | None = None,
    scaler: StandardScaler | None = None,
    provenance: dict | None = None,
) -> WindowedDataset:
    """Sliding windows: window k covers input rows ``k*stride .. +Tx-1`` and
    target rows ``k*stride+Tx .. +Tx+Ty-1``."""
    if input_len < 1 or output_len < 1 or stride < 1:
        raise ConfigError(f"Tx, Ty and stride must be >= 1 (got {input_len}, {output_len}, {stride})")
    rows = len(series)
    if rows < input_len + output_len:
        raise DataError(f"series has {rows} rows; a window needs Tx + Ty = {input_len + output_len}")
    names = list(inputs) if inputs is not None else list(series.columns)
    missing = [n for n in names if n not in series.columns]
    if missing:
        raise DataError(f"unknown input column(s) {missing}")
    cols = [series.columns.index(n) for n in names]
    count = window_count(rows, input_len, output_len, stride)
    starts = np.arange(count) * stride
    block = series.values[:, cols]  # (rows, N)
    t_idx = starts[:, None] + np.arange(input_len)[None, :]
    X = np.ascontiguousarray(block[t_idx].transpose(0, 2, 1))  # (W, N, Tx)
    target = series.column(series.target)
    y = target[starts[:, None] + input_len + np.arange(output_len)[None, :]]
    prov = {"input_len": input_len, "output_len": output_len, "stride": stride, "source": series.source}
    prov.update(provenance or {})
    return WindowedDataset(X, np.ascontiguousarray(y), names, series.target, scaler, prov)


# ---------------------------------------------------------------------------
# synthetic data with planted relevance


@dataclass(frozen=True)
class SynthSpec:
    """Planted-relevance generator settings.

    Every driver ``x<i>`` is a unit-variance AR(1) process with coefficient
    ``ar_coef``.  The target is
    ``y_t = sum_{i in relevant} w_i * x<i>_{t-lag} + noise``; ``weights``
    defaults to 1.0 for each relevant variable.
    """

    n_vars: int = 8
    length: int = 10_000
    relevant: tuple[int, ...] = (0, 1)
    lag: int = 1
    noise_std: float = 0.1
    seed: int = 0
    ar_coef: float = 0.8
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        problems = []
        if self.n_vars < 1:
            problems.append("synth.n_vars must be >= 1")
        if self.length < 2:
            problems.append("synth.length must be >= 2")
        if not self.relevant:
            problems.append("synth.relevant must be non-empty")
        if any(not 0 <= i < self.n_vars for i in self.relevant):
            problems.append(f"synth.relevant indices must lie in [0, {self.n_vars})")
        if self.lag < 1:
            problems.append("synth.lag must be >= 1")
        if self.noise_std < 0:
            problems.append("synth.noise_std must be >= 0")
        if not -1 < self.ar_coef < 1:
            problems.append("synth.ar_coef must lie in (-1, 1)")
        if self.weights is not None and len(self.weights) != len(self.relevant):
            problems.append("synth.weights must have one entry per relevant variable")
        if problems:
            raise ConfigError(problems)

    @property
    def planted_weights(self) -> tuple[float, ...]:
        return self.weights if self.weights is not None else (1.0,) * len(self.relevant)

    @property
    def driver_names(self) -> list[str]:
        return [f"x{i}" for i in range(self.n_vars)]

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("relevant", "weights"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"synth: {exc}") from None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def synth_generate(spec: SynthSpec) -> RawSeries:
    """Columns ``x0 .. x<n-1>`` then target ``y``; ``length`` rows."""
    rng = np.random.default_rng(spec.seed)
    total = spec.length + spec.lag
    phi = spec.ar_coef
    innov = rng.standard_normal((total, spec.n_vars)) * math.sqrt(1.0 - phi * phi)
    x = np.empty((total, spec.n_vars))
    x[0] = rng.standard_normal(spec.n_vars)
    for t in range(1, total):
        x[t] = phi * x[t - 1] + innov[t]
    noise = rng.standard_normal(total) * spec.noise_std
    y = np.zeros(total)
    for i, w in zip(spec.relevant, spec.planted_weights):
        y[spec.lag:] += w * x[:-spec.lag, i]
    y += noise
    values = np.column_stack([x, y])[spec.lag:]
    return RawSeries([*spec.driver_names, "y"], values, "y", {}, f"synth(seed={spec.seed})")


def synth_schema(spec: SynthSpec) -> CsvSchema:
    """Schema that reads a synthetic CSV back with the drivers as inputs."""
    return CsvSchema(target="y", inputs=tuple(spec.driver_names))


# ---------------------------------------------------------------------------
# end-to-end preparation and manifests


@dataclass
class PreparedData:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    manifest: dict

    def split(self, name: str) -> WindowedDataset:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)


def prepare(
    csv_path,
    schema: CsvSchema,
    input_len: int,
    output_len: int,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    stride: int = 1,
) -> PreparedData:
    """load -> split -> fit scaler on train -> standardise -> window."""
    series = load_csv(csv_path, schema)
    return _prepare_series(series, schema, input_len, output_len, fractions, stride, file_sha256(csv_path))


def _prepare_series(series, schema, input_len, output_len, fractions, stride, sha=None) -> PreparedData:
    bounds = split_bounds(len(series), fractions)
    parts = split_chronological(series, fractions, min_rows=input_len + output_len)
    scaler = fit_standardize(parts[0])
    inputs = list(schema.inputs) if schema.inputs else list(series.columns)
    sets = [
        make_windows(scaler.transform(p), input_len, output_len, stride, inputs, scaler, {"split": name})
        for name, p in zip(("train", "val", "test"), parts)
    ]
    manifest = {
        "version": MANIFEST_VERSION,
        "source": {"path": str(Path(series.source).resolve()) if series.source else None, "sha256": sha},
        "schema": schema.to_dict(),
        "columns": list(series.columns),
        "inputs": inputs,
        "target": series.target,
        "categories": series.categories,
        "rows": len(series),
        "split": {"fractions": list(fractions), "bounds": list(bounds)},
        "scaler": scaler.to_dict(),
        "input_len": input_len,
        "output_len": output_len,
        "stride": stride,
        "windows": {name: len(s) for name, s in zip(("train", "val", "test"), sets)},
    }
    return PreparedData(*sets, manifest)


def save_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset manifest {path}: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    return manifest


def from_manifest(manifest: dict, check_hash: bool = True) -> PreparedData:
    """Rebuild the exact datasets a manifest describes (stored scaler reused)."""
    src = manifest["source"]["path"]
    if src is None or not Path(src).exists():
        raise DataError(f"manifest source file {src!r} not found")
    if check_hash and manifest["source"].get("sha256") and file_sha256(src) != manifest["source"]["sha256"]:
        raise DataError(f"{src} has changed since the manifest was written (sha256 mismatch)")
    schema = CsvSchema.from_dict(manifest["schema"])
    series = load_csv(src, schema)
    b = manifest["split"]["bounds"]
    if len(series) != manifest["rows"]:
        raise DataError(f"{src}: {len(series)} rows, manifest expects {manifest['rows']}")
    scaler = StandardScaler.from_dict(manifest["scaler"])
    Tx, Ty, stride = manifest["input_len"], manifest["output_len"], manifest["stride"]
    sets = [
        make_windows(
            scaler.transform(series.rows(b[k], b[k + 1])), Tx, Ty, stride,
            manifest["inputs"], scaler, {"split": name},
        )
        for k, name in enumerate(("train", "val", "test"))
    ]
    return PreparedData(*sets, manifest)
