"""GNSS-outage evaluation: per-sequence error metrics and reports.

Two positioning methods are scored per outage sequence.  The physical model
accumulates the raw per-second displacement error x_whr - x_gnss; the
corrected method subtracts the learned error estimate first.  CRSE sums the
root-squared (absolute) per-second errors over a sequence, CTE sums them
with sign, and summaries take max/min/mean and the population standard
deviation across sequences.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import (
    OUTAGE_LENGTHS,
    OutageSequence,
    TrainingWindow,
    split_outage_sequences,
)
from .errors import InvalidInputError
from .geodesy import advance_fix
from .model import NetworkModel, predict_sequence

Predictor = Callable[[Sequence[TrainingWindow]], np.ndarray]


def crse(errors: Sequence[float]) -> float:
    """Cumulative root-square error: sum of sqrt(e^2), i.e. sum of |e|."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise InvalidInputError("crse of an empty sequence is undefined")
    return float(np.sum(np.sqrt(np.square(e))))


def cte(errors: Sequence[float]) -> float:
    """Cumulative true error: signed sum, exposing over/under-estimation."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise InvalidInputError("cte of an empty sequence is undefined")
    return float(np.sum(e))


@dataclass(frozen=True)
class SequenceResult:
    """Per-second errors and summary metrics for one sequence and method."""

    method: str
    index: int
    errors: np.ndarray
    crse: float
    cte: float
    distance_m: float


@dataclass(frozen=True)
class Stats:
    max: float
    min: float
    mean: float
    std: float


@dataclass(frozen=True)
class MetricsSummary:
    crse: Stats
    cte: Stats
    n_sequences: int
    total_distance_m: float


def _stats(values: np.ndarray) -> Stats:
    mean = float(np.mean(values))
    return Stats(
        max=float(np.max(values)),
        min=float(np.min(values)),
        mean=mean,
        std=float(math.sqrt(np.mean((values - mean) ** 2))),
    )


def aggregate(results: Sequence[SequenceResult]) -> MetricsSummary:
    """Summarise per-sequence metrics (population standard deviation)."""
    if not results:
        raise InvalidInputError("cannot aggregate zero sequences")
    return MetricsSummary(
        crse=_stats(np.array([r.crse for r in results])),
        cte=_stats(np.array([r.cte for r in results])),
        n_sequences=len(results),
        total_distance_m=float(sum(r.distance_m for r in results)),
    )


def null_predictor(windows: Sequence[TrainingWindow]) -> np.ndarray:
    """Predicts zero correction; corrected output equals the physical model."""
    return np.zeros(len(windows))


def oracle_predictor(windows: Sequence[TrainingWindow]) -> np.ndarray:
    """Predicts the true labels; corrected errors collapse to zero."""
    return np.array([w.y for w in windows])


def model_predictor(model: NetworkModel) -> Predictor:
    return lambda windows: predict_sequence(model, windows)


@dataclass(frozen=True)
class OutageReport:
    """Everything one outage experiment produced."""

    outage_len_s: int
    physical: MetricsSummary
    corrected: MetricsSummary
    physical_detail: tuple[SequenceResult, ...]
    corrected_detail: tuple[SequenceResult, ...]
    sequences: tuple[OutageSequence, ...]
    predictions: tuple[np.ndarray, ...]


def run_outage_experiment(
    model: NetworkModel | Predictor | None,
    windows_by_segment: Sequence[Sequence[TrainingWindow]],
    outage_len_s: int,
    ) -> OutageReport:
    """Score simulated outages of one length over labelled test segments.

    Predictions are computed segment by segment in window order (so a
    stateful model sees each segment exactly as it would during deployment),
    then sliced into maximal non-overlapping sequences.  ``model`` may be a
    trained :class:`NetworkModel`, any predictor callable, or None for the
    null correction.
    """
    if outage_len_s not in OUTAGE_LENGTHS:
        raise InvalidInputError(
            f"outage length must be one of {OUTAGE_LENGTHS}, got {outage_len_s}"
        )
    if model is None:
        predictor: Predictor = null_predictor
    elif isinstance(model, NetworkModel):
        predictor = model_predictor(model)
    else:
        predictor = model

    eps_by_window: dict[int, float] = {}
    for segment in windows_by_segment:
        if not segment:
            continue
        eps = predictor(segment)
        if len(eps) != len(segment):
            raise InvalidInputError("predictor returned wrong number of estimates")
        for window, value in zip(segment, eps):
            eps_by_window[id(window)] = float(value)

    sequences = split_outage_sequences(windows_by_segment, outage_len_s)
    if not sequences:
        raise InvalidInputError(
            f"no complete {outage_len_s} s sequences in the supplied data"
        )

    physical_detail = []
    corrected_detail = []
    predictions = []
    for idx, seq in enumerate(sequences):
        raw = np.array([w.x_whr - w.x_gnss for w in seq.windows])
        eps = np.array([eps_by_window[id(w)] for w in seq.windows])
        corrected = raw - eps
        physical_detail.append(
            SequenceResult("physical", idx, raw, crse(raw), cte(raw), seq.distance_m)
        )
        corrected_detail.append(
            SequenceResult(
                "corrected", idx, corrected, crse(corrected), cte(corrected), seq.distance_m
            )
        )
        predictions.append(eps)
    return OutageReport(
        outage_len_s=outage_len_s,
        physical=aggregate(physical_detail),
        corrected=aggregate(corrected_detail),
        physical_detail=tuple(physical_detail),
        corrected_detail=tuple(corrected_detail),
        sequences=tuple(sequences),
        predictions=tuple(predictions),
    )


def error_reduction(
    physical: MetricsSummary, corrected: MetricsSummary
) -> dict[str, float | None]:
    """Percentage reduction per statistic: 100 * (1 - corrected / physical).

    None marks statistics whose physical value is zero (undefined ratio);
    negative percentages are preserved so regressions stay visible.
    """
    out: dict[str, float | None] = {}
    for metric in ("crse", "cte"):
        p_stats: Stats = getattr(physical, metric)
        c_stats: Stats = getattr(corrected, metric)
        for stat in ("max", "min", "mean", "std"):
            p = getattr(p_stats, stat)
            c = getattr(c_stats, stat)
            out[f"{metric}_{stat}"] = None if p == 0.0 else 100.0 * (1.0 - c / p)
    return out


# ---------------------------------------------------------------------------
# rendering

_CSV_COLUMNS = (
    "scenario",
    "method",
    "metric",
    "max",
    "min",
    "mean",
    "std",
    "total_distance_m",
    "n_sequences",
)


def _summary_rows(report: OutageReport) -> list[dict]:
    rows = []
    scenario = f"outage_{report.outage_len_s}s"
    for method, summary in (("physical", report.physical), ("corrected", report.corrected)):
        for metric in ("crse", "cte"):
            stats: Stats = getattr(summary, metric)
            rows.append(
                {
                    "scenario": scenario,
                    "method": method,
                    "metric": metric,
                    "max": stats.max,
                    "min": stats.min,
                    "mean": stats.mean,
                    "std": stats.std,
                    "total_distance_m": summary.total_distance_m,
                    "n_sequences": summary.n_sequences,
                }
            )
    return rows


def render_table(report: OutageReport | None = None) -> str:
    """Aligned text table of the summary; header only when given nothing."""
    rows = [] if report is None else _summary_rows(report)
    formatted = [
        {k: (f"{v:.3f}" if isinstance(v, float) else str(v)) for k, v in row.items()}
        for row in rows
    ]
    widths = {
        col: max(len(col), *(len(row[col]) for row in formatted))
        if formatted
        else len(col)
        for col in _CSV_COLUMNS
    }
    lines = ["  ".join(col.ljust(widths[col]) for col in _CSV_COLUMNS)]
    for row in formatted:
        lines.append("  ".join(row[col].ljust(widths[col]) for col in _CSV_COLUMNS))
    if report is not None:
        reduction = error_reduction(report.physical, report.corrected)
        mean_red = reduction["crse_mean"]
        if mean_red is not None:
            lines.append("")
            lines.append(f"mean CRSE reduction: {mean_red:.1f}%")
    return "\n".join(lines) + "\n"


def write_report_csv(path: str | Path, report: OutageReport) -> None:
    """Summary CSV; float cells use repr so parsing them back is exact."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for row in _summary_rows(report):
            writer.writerow(
                {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
            )


def trajectory_features(report: OutageReport) -> list[dict]:
    """GeoJSON features for truth, physical and corrected tracks per sequence.

    The physical and corrected tracks integrate per-second displacements
    along the recorded yaw heading purely for visualisation; they are marked
    non-metric because scoring happens on displacement magnitudes.
    """
    features = []
    for idx, (seq, eps) in enumerate(zip(report.sequences, report.predictions)):
        truth = [seq.windows[0].fix_start] + [w.fix_end for w in seq.windows]
        tracks = {"truth": [(f.lon, f.lat) for f in truth]}
        for kind in ("physical", "corrected"):
            fix = seq.windows[0].fix_start
            coords = [(fix.lon, fix.lat)]
            for w, e in zip(seq.windows, eps):
                step = w.x_whr if kind == "physical" else w.x_whr - e
                fix = advance_fix(fix, w.yaw, step)
                coords.append((fix.lon, fix.lat))
            tracks[kind] = coords
        for kind, coords in tracks.items():
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "LineString",
                        "coordinates": [[lon, lat] for lon, lat in coords],
                    },
                    "properties": {
                        "kind": kind,
                        "sequence": idx,
                        "outage_len_s": report.outage_len_s,
                        "non_metric": kind != "truth",
                    },
                }
            )
    return features


def write_geojson(path: str | Path, report: OutageReport) -> None:
    doc = {"type": "FeatureCollection", "features": trajectory_features(report)}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")
