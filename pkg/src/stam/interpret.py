"""Dataset-level attention summaries and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .models import AttentionRecord


@dataclass
class SpatialReport:
    """Mean spatial attention per variable, in percent.

    ``per_step`` holds the same mean for each attention step separately
    (decoder output steps, or encoder steps for DA-RNN); ``std`` is the
    spread across windows of each window's step-averaged weight.
    """

    names: list[str]
    percent: np.ndarray
    std: np.ndarray
    window_count: int
    per_step: np.ndarray
    per_run: list[list[float]] = field(default_factory=list)

    @property
    def rank(self) -> list[int]:
        order = np.argsort(-self.percent, kind="stable")
        ranks = np.empty(len(order), dtype=int)
        ranks[order] = np.arange(1, len(order) + 1)
        return ranks.tolist()

    def top(self, k: int) -> list[str]:
        order = np.argsort(-self.percent, kind="stable")[:k]
        return [self.names[i] for i in order]

    def to_dict(self) -> dict:
        return {
            "variables": [
                {"name": n, "index": i, "rank": r, "weight_pct": float(p), "std_pct": float(s)}
                for i, (n, r, p, s) in enumerate(zip(self.names, self.rank, self.percent, self.std))
            ],
            "window_count": self.window_count,
            "per_step": self.per_step.tolist(),
            "per_run": self.per_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpatialReport":
        rows = d["variables"]
        return cls(
            [r["name"] for r in rows],
            np.array([r["weight_pct"] for r in rows]),
            np.array([r["std_pct"] for r in rows]),
            d["window_count"],
            np.array(d["per_step"]),
            d.get("per_run", []),
        )


@dataclass
class TemporalReport:
    """Mean temporal attention per input step (1..Tx), in percent."""

    percent: np.ndarray
    std: np.ndarray
    window_count: int
    per_step: np.ndarray
    per_run: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": [
                {"step": t + 1, "weight_pct": float(p), "std_pct": float(s)}
                for t, (p, s) in enumerate(zip(self.percent, self.std))
            ],
            "window_count": self.window_count,
            "per_step": self.per_step.tolist(),
            "per_run": self.per_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalReport":
        rows = d["steps"]
        return cls(
            np.array([r["weight_pct"] for r in rows]),
            np.array([r["std_pct"] for r in rows]),
            d["window_count"],
            np.array(d["per_step"]),
            d.get("per_run", []),
        )


def _stack(records: Sequence[AttentionRecord], attr: str) -> np.ndarray:
    if not records:
        raise ContractError("no attention records to aggregate")
    blocks = []
    for rec in records:
        a = getattr(rec, attr)
        if a is None:
            raise ContractError(f"record from {rec.arch!r} has no {attr} attention")
        blocks.append(a if a.ndim == 3 else a[None])
    widths = {b.shape[1:] for b in blocks}
    if len(widths) != 1:
        raise ShapeError(f"{attr} records have mixed shapes {sorted(widths)}")
    return np.concatenate(blocks, axis=0)  # (windows, steps, K)


def _summarise(weights: np.ndarray):
    per_window = weights.mean(axis=1)  # (windows, K)
    return (
        100.0 * per_window.mean(axis=0),
        100.0 * per_window.std(axis=0),
        weights.shape[0],
        100.0 * weights.mean(axis=0),
    )


def aggregate_spatial(records: Sequence[AttentionRecord], names: Sequence[str]) -> SpatialReport:
    """Mean spatial weight over all windows and all attention steps, x100."""
    weights = _stack(records, "spatial")
    if weights.shape[-1] != len(names):
        raise ShapeError(f"{weights.shape[-1]} variables in records, {len(names)} names")
    percent, std, count, per_step = _summarise(weights)
    return SpatialReport(list(names), percent, std, count, per_step)


def aggregate_temporal(records: Sequence[AttentionRecord]) -> TemporalReport:
    """Mean temporal weight over all windows and output steps, x100."""
    percent, std, count, per_step = _summarise(_stack(records, "temporal"))
    return TemporalReport(percent, std, count, per_step)


def export_report(
    spatial: SpatialReport | None,
    temporal: TemporalReport | None,
    path,
    fmt: str = "json",
) -> list[Path]:
    """Write the reports; returns the files written.

    ``json`` writes one file holding both reports.  ``csv`` writes the
    spatial table to ``path`` (one row per variable, dataset order) and the
    temporal table next to it as ``<stem>_temporal.csv``.
    """
    path = Path(path)
    if fmt == "json":
        doc = {
            "spatial": None if spatial is None else spatial.to_dict(),
            "temporal": None if temporal is None else temporal.to_dict(),
        }
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return [path]
    if fmt != "csv":
        raise ContractError(f"unknown report format {fmt!r}")
    written = []
    if spatial is not None:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "index", "rank", "weight_pct", "std_pct"])
            for row in spatial.to_dict()["variables"]:
                w.writerow([row["name"], row["index"], row["rank"], repr(row["weight_pct"]), repr(row["std_pct"])])
        written.append(path)
    if temporal is not None:
        tpath = path if spatial is None else path.with_name(f"{path.stem}_temporal{path.suffix or '.csv'}")
        with tpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "weight_pct", "std_pct"])
            for row in temporal.to_dict()["steps"]:
                w.writerow([row["step"], repr(row["weight_pct"]), repr(row["std_pct"])])
        written.append(tpath)
    return written


def load_report(path) -> tuple[SpatialReport | None, TemporalReport | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    spatial = None if doc.get("spatial") is None else SpatialReport.from_dict(doc["spatial"])
    temporal = None if doc.get("temporal") is None else TemporalReport.from_dict(doc["temporal"])
    return spatial, temporal
