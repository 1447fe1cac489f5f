"""Batch command line: ``stam {train,eval,explain,bench,synth}``.

Every command is driven by one JSON experiment file plus ``--set`` overrides.
Progress goes to stderr; results go to files under ``--out`` (default taken
from ``$STAM_OUT_DIR``, else ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as D
from . import interpret
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DivergedError,
    ShapeError,
    WeightFileError,
)
from .models import (
    ATTENTION_ARCHS,
    ModelConfig,
    build_model,
    flop_estimate,
    load_weights,
    param_count,
    read_header,
    save_weights,
)
from .training import TrainConfig, compute_metrics, evaluate, fit, predict_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5
EXIT_WEIGHTS = 6
EXIT_IO = 7

OUT_ENV = "STAM_OUT_DIR"
SYNTH_CSV = "synth.csv"
SYNTH_TRUTH = "synth_truth.json"

log = logging.getLogger("stam")


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    """A validated experiment: data source, model, training and run plan.

    Exactly one of ``csv`` (with ``schema``) or ``synth`` names the data.
    Relative CSV paths are resolved against ``base_dir`` (the directory of
    the config file).
    """

    input_len: int
    output_len: int
    csv: str | None = None
    schema: D.CsvSchema | None = None
    synth: D.SynthSpec | None = None
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    stride: int = 1
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0,)
    out: str | None = None
    split: str = "test"
    bench: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def csv_path(self) -> Path:
        p = Path(self.csv)
        return p if p.is_absolute() else self.base_dir / p

    def model_config(self, n_vars: int, seed: int) -> ModelConfig:
        return ModelConfig(
            n_vars=n_vars, input_len=self.input_len, output_len=self.output_len,
            **{**self.model, "seed": seed},
        )


_TOP_KEYS = {"data", "model", "train", "seeds", "repeat", "out", "split", "bench"}
_DATA_KEYS = {"csv", "schema", "synth", "input_len", "output_len", "fractions", "stride"}


def parse_experiment(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate everything up front; a :class:`ConfigError` lists every problem."""
    problems: list[str] = []

    def collect(fn, *args):
        try:
            return fn(*args)
        except ConfigError as exc:
            problems.extend(exc.problems)
            return None

    if not isinstance(doc, dict):
        raise ConfigError("experiment config must be a JSON object")
    problems += [f"{k} is not a known section" for k in sorted(set(doc) - _TOP_KEYS)]
    data = doc.get("data")
    if not isinstance(data, dict):
        problems.append("data section is required")
        data = {}
    problems += [f"data.{k} is not a known field" for k in sorted(set(data) - _DATA_KEYS)]

    Tx, Ty = data.get("input_len"), data.get("output_len")
    for name, v in (("input_len", Tx), ("output_len", Ty)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"data.{name} must be an integer >= 1 (got {v!r})")
    stride = data.get("stride", 1)
    if not isinstance(stride, int) or stride < 1:
        problems.append(f"data.stride must be an integer >= 1 (got {stride!r})")
    fractions = data.get("fractions", [0.6, 0.2, 0.2])
    if (
        not isinstance(fractions, (list, tuple)) or len(fractions) != 3
        or any(not isinstance(f, (int, float)) or f <= 0 for f in fractions)
        or abs(sum(fractions) - 1.0) > 1e-9
    ):
        problems.append(f"data.fractions must be three positive numbers summing to 1 (got {fractions!r})")

    csv_path, schema, synth = data.get("csv"), None, None
    if (csv_path is None) == ("synth" not in data):
        problems.append("data needs exactly one of csv or synth")
    if csv_path is not None:
        if "schema" not in data:
            problems.append("data.schema is required with data.csv")
        else:
            schema = collect(D.CsvSchema.from_dict, data["schema"])
    if "synth" in data:
        synth = collect(D.SynthSpec.from_dict, data["synth"])

    model = doc.get("model", {})
    if not isinstance(model, dict):
        problems.append("model section must be an object")
        model = {}
    for k in ("n_vars", "input_len", "output_len"):
        if k in model:
            problems.append(f"model.{k} is derived from the data and must not be set")
    if not problems:
        # validate the remaining model fields with placeholder data dims
        collect(lambda: ModelConfig(n_vars=1, input_len=Tx, output_len=Ty, **model))

    train = collect(TrainConfig.from_dict, doc.get("train", {}))

    seeds = doc.get("seeds")
    repeat = doc.get("repeat")
    if seeds is None:
        if repeat is None:
            repeat = 1
        if not isinstance(repeat, int) or repeat < 1:
            problems.append(f"repeat must be an integer >= 1 (got {repeat!r})")
        else:
            seeds = list(range(repeat))
    elif not isinstance(seeds, list) or not seeds or any(not isinstance(s, int) for s in seeds):
        problems.append(f"seeds must be a nonempty list of integers (got {seeds!r})")
    elif repeat is not None and repeat != len(seeds):
        problems.append(f"repeat ({repeat}) disagrees with the {len(seeds)} listed seeds")
    elif len(set(seeds)) != len(seeds):
        problems.append(f"seeds must be distinct (got {seeds!r})")

    split = doc.get("split", "test")
    if split not in ("train", "val", "test"):
        problems.append(f"split must be train, val or test (got {split!r})")
    bench = doc.get("bench", {})
    if not isinstance(bench, dict):
        problems.append("bench section must be an object")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        input_len=Tx, output_len=Ty, csv=csv_path, schema=schema, synth=synth,
        fractions=tuple(fractions), stride=stride, model=dict(model), train=train,
        seeds=tuple(seeds), out=doc.get("out"), split=split, bench=dict(bench),
        base_dir=base_dir or Path.cwd(),
    )


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, assignments: Sequence[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are JSON, else plain strings."""
    doc = json.loads(json.dumps(doc))
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value (got {item!r})")
        *parents, leaf = key.split(".")
        node = doc
        for p in parents:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {key}: {p!r} is not a section")
            node = nxt
        node[leaf] = _parse_value(raw)
    return doc


def load_experiment(path: str | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    doc, base = {}, Path.cwd()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        base = Path(path).resolve().parent
    return parse_experiment(apply_overrides(doc, overrides), base)


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args, exp: ExperimentConfig | None = None) -> Path:
    out = args.out or (exp.out if exp else None) or os.environ.get(OUT_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_synth(spec: D.SynthSpec, out: Path) -> tuple[Path, Path]:
    """Generate the series and its ground-truth manifest into ``out``."""
    series = D.synth_generate(spec)
    csv_path = out / SYNTH_CSV
    D.save_csv(series, csv_path)
    truth = {
        "spec": spec.to_dict(),
        "relevant": list(spec.relevant),
        "relevant_names": [spec.driver_names[i] for i in spec.relevant],
        "lag": spec.lag,
        "weights": list(spec.planted_weights),
        "target": "y",
        "inputs": spec.driver_names,
    }
    truth_path = out / SYNTH_TRUTH
    _write_json(truth_path, truth)
    return csv_path, truth_path


def prepare_experiment(exp: ExperimentConfig, out: Path) -> D.PreparedData:
    if exp.synth is not None:
        csv_path, _ = write_synth(exp.synth, out)
        schema = D.synth_schema(exp.synth)
    else:
        csv_path, schema = exp.csv_path(), exp.schema
        if not csv_path.exists():
            raise DataError(f"data file {csv_path} not found")
    return D.prepare(csv_path, schema, exp.input_len, exp.output_len, exp.fractions, exp.stride)


def _check_compatible(model, ds: D.WindowedDataset, where: str) -> None:
    c = model.config
    have = (ds.n_vars, ds.X.shape[2], ds.y.shape[1])
    want = (c.n_vars, c.input_len, c.output_len)
    if have != want:
        raise DataError(
            f"{where}: data has (N, Tx, Ty) = {have} but the model expects {want}"
        )


def _summary_stats(values: list[float]) -> dict:
    return {
        "mean": statistics.fmean(values),
        "std": statistics.stdev(values) if len(values) > 1 else 0.0,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    exp = load_experiment(args.config, args.set)
    out = _out_dir(args, exp)
    prepared = prepare_experiment(exp, out)
    D.save_manifest(prepared.manifest, out / "dataset.json")
    log.info("data: %s windows (train/val/test)", prepared.manifest["windows"])

    runs = []
    for seed in exp.seeds:
        cfg = exp.model_config(prepared.train.n_vars, seed)
        train_cfg = TrainConfig.from_dict({**exp.train.to_dict(), "seed": seed})
        model = build_model(cfg)
        run_dir = out / f"run_{seed}"
        run_dir.mkdir(exist_ok=True)

        def progress(rec, seed=seed):
            log.info("seed %d epoch %d loss %.5f val_rmse %.4f", seed, rec["epoch"], rec["train_loss"], rec["val_rmse"])

        started = time.perf_counter()
        history = fit(model, prepared.train, prepared.val, train_cfg, on_epoch=progress)
        train_seconds = time.perf_counter() - started
        save_weights(model, run_dir / "weights.stam")
        (run_dir / "log.jsonl").write_text(history.to_jsonl(with_seconds=False), encoding="utf-8")
        (run_dir / "timing.jsonl").write_text(
            "".join(json.dumps({"epoch": r["epoch"], "seconds": r["seconds"]}) + "\n" for r in history.records),
            encoding="utf-8",
        )
        t0 = time.perf_counter()
        test = evaluate(model, prepared.test)
        test_seconds = time.perf_counter() - t0
        val = evaluate(model, prepared.val)
        metrics = {"seed": seed, "val": val.to_dict(), "test": test.to_dict()}
        _write_json(run_dir / "metrics.json", metrics)
        runs.append({**metrics, "train_seconds": train_seconds, "test_seconds": test_seconds})
        log.info("seed %d test rmse %.4f mae %.4f r2 %.4f", seed, test.rmse, test.mae, test.r2)

    summary = {
        "arch": exp.model_config(prepared.train.n_vars, 0).arch,
        "seeds": list(exp.seeds),
        "runs": [{k: r[k] for k in ("seed", "val", "test")} for r in runs],
        "test": {
            k: _summary_stats([r["test"][k] for r in runs]) for k in ("rmse", "mae", "r2")
        },
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timing.json", [
        {"seed": r["seed"], "train_seconds": r["train_seconds"], "test_seconds": r["test_seconds"]} for r in runs
    ])
    return EXIT_OK


def _load_data(path: str | None) -> tuple[D.PreparedData, dict]:
    if path is None:
        raise ConfigError("--data <dataset.json> is required")
    manifest = D.load_manifest(path)
    return D.from_manifest(manifest), manifest


def cmd_eval(args) -> int:
    if not args.weights:
        raise ConfigError("--weights <file> is required")
    prepared, _ = _load_data(args.data)
    ds = prepared.split(args.split)
    out = _out_dir(args)
    results = []
    for wpath in args.weights:
        model = load_weights(wpath)
        _check_compatible(model, ds, wpath)
        t0 = time.perf_counter()
        pred = predict_dataset(model, ds)
        seconds = time.perf_counter() - t0
        m = compute_metrics(pred, ds.targets_original_units())
        results.append({"weights": str(wpath), "split": args.split, **m.to_dict(), "test_seconds": seconds})
        log.info("%s: rmse %.4f mae %.4f r2 %.4f (%.3fs)", wpath, m.rmse, m.mae, m.r2, seconds)
    _write_json(out / "eval.json", results if len(results) > 1 else results[0])
    return EXIT_OK


def cmd_explain(args) -> int:
    if not args.weights:
        raise ConfigError("--weights <file> is required")
    prepared, manifest = _load_data(args.data)
    ds = prepared.split(args.split)
    out = _out_dir(args)
    spatial_runs, temporal_runs = [], []
    for wpath in args.weights:
        arch = read_header(wpath).get("arch")
        if arch not in ATTENTION_ARCHS:
            raise ConfigError(f"{wpath}: arch {arch!r} has no attention to explain")
        model = load_weights(wpath)
        _check_compatible(model, ds, wpath)
        records = [model.forward(ds.X[lo:lo + 1024])[1] for lo in range(0, len(ds), 1024)]
        temporal_runs.append(interpret.aggregate_temporal(records))
        if records[0].spatial is not None:
            spatial_runs.append(interpret.aggregate_spatial(records, manifest["inputs"]))

    spatial = _pool(spatial_runs) if spatial_runs else None
    temporal = _pool(temporal_runs)
    name = "attention." + args.format
    written = interpret.export_report(spatial, temporal, out / name, args.format)
    for path in written:
        log.info("wrote %s", path)
    if spatial is not None:
        log.info("top variables: %s", ", ".join(spatial.top(min(4, len(spatial.names)))))
    return EXIT_OK


def _pool(reports):
    """Window-weighted mean over runs; each run's percentages kept in ``per_run``."""
    if len(reports) == 1:
        r = reports[0]
        r.per_run = [r.percent.tolist()]
        return r
    w = np.array([r.window_count for r in reports], dtype=float)
    w /= w.sum()
    first = reports[0]
    pooled = type(first)(
        *([first.names] if isinstance(first, interpret.SpatialReport) else []),
        percent=sum(wi * r.percent for wi, r in zip(w, reports)),
        std=np.sqrt(sum(wi * (r.std ** 2) for wi, r in zip(w, reports))),
        window_count=sum(r.window_count for r in reports),
        per_step=sum(wi * r.per_step for wi, r in zip(w, reports)),
        per_run=[r.percent.tolist() for r in reports],
    )
    return pooled


def bench_rows(exp: ExperimentConfig, prepared: D.PreparedData, archs=None, enc_dims=None,
               repeats: int = 3, max_windows: int | None = None) -> list[dict]:
    """Cost table: parameters, FLOPs and median measured seconds per config.

    Train seconds cover one epoch over at most ``max_windows`` training
    windows; test seconds cover one eval pass over the test split (same cap).
    """
    archs = archs or [exp.model.get("arch", "stam")]
    enc_dims = enc_dims or [exp.model.get("enc_dim", 32)]
    train = prepared.train
    test = prepared.test
    if max_windows is not None:
        train = D.WindowedDataset(train.X[:max_windows], train.y[:max_windows], train.input_names,
                                  train.target, train.scaler, train.provenance)
        test = D.WindowedDataset(test.X[:max_windows], test.y[:max_windows], test.input_names,
                                 test.target, test.scaler, test.provenance)
    one_epoch = TrainConfig.from_dict({**exp.train.to_dict(), "epochs": 1})
    rows = []
    for arch in archs:
        for m in enc_dims:
            overrides = {"arch": arch, "enc_dim": m}
            if "dec_dim" not in exp.model:
                overrides["dec_dim"] = m
            if exp.model.get("context_dim", 4) > m:
                overrides["context_dim"] = m
            cfg = ModelConfig(n_vars=train.n_vars, input_len=exp.input_len, output_len=exp.output_len,
                              **{**exp.model, **overrides})
            train_times, test_times = [], []
            for _ in range(repeats):
                model = build_model(cfg)
                t0 = time.perf_counter()
                fit(model, train, None, one_epoch)
                train_times.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
                model.predict(test.X)
                test_times.append(time.perf_counter() - t0)
            rows.append({
                "arch": arch,
                "enc_dim": cfg.enc_dim,
                "dec_dim": cfg.dec_dim,
                "context_dim": cfg.context_dim,
                "param_count": param_count(cfg),
                "flop_estimate": flop_estimate(cfg) if arch in ("stam", "stam_lite") else None,
                "train_seconds_per_epoch": statistics.median(train_times),
                "test_seconds": statistics.median(test_times),
            })
            log.info("bench %s m=%d: %s", arch, m, rows[-1])
    return rows


def cmd_bench(args) -> int:
    configs = args.config or [None]
    out = _out_dir(args)
    rows = []
    for path in configs:
        exp = load_experiment(path, args.set)
        prepared = prepare_experiment(exp, out)
        b = exp.bench
        for row in bench_rows(exp, prepared, b.get("archs"), b.get("enc_dims"),
                              b.get("repeats", 3), b.get("max_windows")):
            rows.append({"config": path, **row})
    if args.format == "json":
        _write_json(out / "bench.json", rows)
    else:
        import csv

        with (out / "bench.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_synth(args) -> int:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    doc = apply_overrides(doc, args.set)
    # accept either a bare generator spec or a full experiment config
    spec_doc = doc.get("data", {}).get("synth", {}) if "data" in doc else doc
    spec = D.SynthSpec.from_dict(spec_doc)
    out = _out_dir(args)
    for path in write_synth(spec, out):
        log.info("wrote %s", path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stam", description="Spatiotemporal attention forecasting.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only report errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_multi=False):
        if config_multi:
            p.add_argument("--config", action="append", help="experiment JSON (repeatable)")
        else:
            p.add_argument("--config", help="experiment JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=2")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")

    p = sub.add_parser("train", help="train one model per seed")
    common(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "metrics for saved weights"),
                              ("explain", cmd_explain, "attention reports for saved weights")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--weights", action="append", default=[], help="weight file (repeatable)")
        p.add_argument("--data", help="dataset manifest written by train")
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        if name == "explain":
            p.add_argument("--format", default="json", choices=("json", "csv"))
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="parameter, FLOP and timing table")
    common(p, config_multi=True)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a planted-relevance CSV")
    common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.ERROR if args.quiet else logging.INFO)
    log.propagate = False
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            log.error("config error: %s", problem)
        return EXIT_CONFIG
    except (DataError, ShapeError, ContractError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except DivergedError as exc:
        log.error("diverged: %s", exc)
        return EXIT_DIVERGED
    except WeightFileError as exc:
        log.error("weights error: %s", exc)
        return EXIT_WEIGHTS
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
