"""Dataset pipeline: CSV ingestion, window building, normalisation,
synthetic fault-injected corpora and outage-sequence slicing.

A training window pairs the forty wheel-speed features of one second
(ten sub-samples per wheel, ordered fl, fr, rl, rr) with the signed
displacement-error label of that second.  The first second of every segment
is consumed to establish the prior GNSS fix, so a segment of N records yields
floor((N - 10) / 10) windows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .deadreckon import (
    SAMPLE_DT,
    V_MAX_DEFAULT,
    WINDOW_SAMPLES,
    Calibration,
    WheelSpeeds,
    integrate_displacement,
)
from .errors import DataIntegrityError, DisplacementBoundError, InvalidInputError
from .geodesy import GnssFix, advance_fix, gnss_displacement, label_error

GAP_BREAK_S = 0.12     # record spacing beyond this starts a new segment
GRID_JITTER_S = 0.02   # accepted deviation from the 0.1 s grid
FEATURE_DIM = 40
SIM_DT = 0.01          # synthetic ground-truth integration step (100 Hz)
DECIMATE = 10          # 100 Hz -> 10 Hz

SCHEMA_FIELDS = (
    "timestamp",
    "wheel_fl",
    "wheel_fr",
    "wheel_rl",
    "wheel_rr",
    "lat",
    "lon",
    "yaw",
)
WHEEL_UNITS = ("rad_s", "kmh")
YAW_UNITS = ("rad", "deg")


@dataclass(frozen=True)
class WheelRecord:
    """One 10 Hz sample: timestamp, four wheel speeds, GNSS fix and yaw."""

    t: float
    wheels: WheelSpeeds
    fix: GnssFix
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and math.isfinite(self.yaw)):
            raise InvalidInputError("timestamp and yaw must be finite")


@dataclass(frozen=True)
class TrainingWindow:
    """Feature vector and label for one second of driving.

    x holds the 40 features [fl0..fl9, fr0..fr9, rl0..rl9, rr0..rr9];
    y = x_whr - x_gnss (positive = odometry overestimates).  The window also
    carries both displacements, its end time, the final yaw sample and the
    bracketing fixes so outage evaluation and trajectory dumps need no
    second pass over the records.
    """

    x: np.ndarray
    y: float
    x_whr: float
    x_gnss: float
    t_end: float
    yaw: float
    fix_start: GnssFix
    fix_end: GnssFix


@dataclass(frozen=True)
class NormalizerParams:
    """Per-feature training minima and maxima for [0, 1] scaling."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidInputError("normalizer bounds must be 1-D and equal length")
        if np.any(hi < lo):
            raise InvalidInputError("normalizer max must be >= min per feature")


# ---------------------------------------------------------------------------
# schema config + CSV ingestion


@dataclass(frozen=True)
class SchemaConfig:
    """Column mapping and units for one CSV layout.

    ``wheel_radius_m`` is required when wheel columns are km/h, because the
    linear speed must be divided back to an angular rate.
    """

    columns: dict[str, str]
    wheel_units: str = "rad_s"
    yaw_units: str = "rad"
    wheel_radius_m: float | None = None

    def __post_init__(self):
        missing = [f for f in SCHEMA_FIELDS if f not in self.columns]
        if missing:
            raise DataIntegrityError(f"schema missing column mappings: {missing}")
        if self.wheel_units not in WHEEL_UNITS:
            raise DataIntegrityError(
                f"wheel_units must be one of {WHEEL_UNITS}, got {self.wheel_units!r}"
            )
        if self.yaw_units not in YAW_UNITS:
            raise DataIntegrityError(
                f"yaw_units must be one of {YAW_UNITS}, got {self.yaw_units!r}"
            )
        if self.wheel_units == "kmh" and not self.wheel_radius_m:
            raise DataIntegrityError("km/h wheel columns need wheel_radius_m")


def canonical_schema() -> SchemaConfig:
    """Schema used for all CSVs this library writes itself."""
    return SchemaConfig(columns={f: f for f in SCHEMA_FIELDS})


def parse_schema(text: str) -> SchemaConfig:
    """Parse a ``key = value`` schema config ('#' starts a comment)."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataIntegrityError(f"schema line {lineno} is not 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise DataIntegrityError(f"duplicate schema key {key!r}")
        entries[key] = value
    columns = {f: entries.pop(f) for f in SCHEMA_FIELDS if f in entries}
    wheel_units = entries.pop("wheel_units", "rad_s")
    yaw_units = entries.pop("yaw_units", "rad")
    radius = entries.pop("wheel_radius_m", None)
    if entries:
        raise DataIntegrityError(f"unknown schema keys: {sorted(entries)}")
    return SchemaConfig(
        columns=columns,
        wheel_units=wheel_units,
        yaw_units=yaw_units,
        wheel_radius_m=float(radius) if radius is not None else None,
    )


def load_schema(path: str | Path) -> SchemaConfig:
    return parse_schema(Path(path).read_text())


def schema_text(schema: SchemaConfig) -> str:
    lines = [f"{f} = {schema.columns[f]}" for f in SCHEMA_FIELDS]
    lines.append(f"wheel_units = {schema.wheel_units}")
    lines.append(f"yaw_units = {schema.yaw_units}")
    if schema.wheel_radius_m is not None:
        lines.append(f"wheel_radius_m = {schema.wheel_radius_m!r}")
    return "\n".join(lines) + "\n"


def _wheel_to_rad_s(value: float, schema: SchemaConfig) -> float:
    if schema.wheel_units == "rad_s":
        return value
    return value / 3.6 / schema.wheel_radius_m  # km/h -> m/s -> rad/s


def _wheel_from_rad_s(omega: float, schema: SchemaConfig) -> float:
    if schema.wheel_units == "rad_s":
        return omega
    return omega * schema.wheel_radius_m * 3.6


def ingest_csv(path: str | Path, schema: SchemaConfig) -> list[list[WheelRecord]]:
    """Read one CSV into validated, unit-converted record segments.

    Records are sorted by timestamp; duplicate timestamps are rejected.
    Spacing must sit on the 10 Hz grid within jitter tolerance; gaps larger
    than :data:`GAP_BREAK_S` split the stream into separate segments.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataIntegrityError(f"{path}: missing header row")
        missing = [
            col for col in schema.columns.values() if col not in reader.fieldnames
        ]
        if missing:
            raise DataIntegrityError(f"{path}: missing columns {missing}")
        rows = list(reader)

    records = []
    for idx, row in enumerate(rows):
        try:
            get = lambda f: float(row[schema.columns[f]])
            t = get("timestamp")
            wheels = WheelSpeeds(
                omega_fl=_wheel_to_rad_s(get("wheel_fl"), schema),
                omega_fr=_wheel_to_rad_s(get("wheel_fr"), schema),
                omega_rl=_wheel_to_rad_s(get("wheel_rl"), schema),
                omega_rr=_wheel_to_rad_s(get("wheel_rr"), schema),
            )
            yaw = get("yaw")
            if schema.yaw_units == "deg":
                yaw = math.radians(yaw)
            rec = WheelRecord(
                t=t, wheels=wheels, fix=GnssFix(get("lat"), get("lon")), yaw=yaw
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DataIntegrityError):
                raise
            raise DataIntegrityError(f"{path}: bad row {idx + 2}: {exc}") from exc
        records.append(rec)

    records.sort(key=lambda rec: rec.t)
    segments: list[list[WheelRecord]] = []
    current: list[WheelRecord] = []
    for rec in records:
        if current:
            dt = rec.t - current[-1].t
            if dt <= 0.0:
                raise DataIntegrityError(
                    f"{path}: non-monotone timestamps around t={rec.t}"
                )
            if dt > GAP_BREAK_S:
                segments.append(current)
                current = []
            elif abs(dt - SAMPLE_DT) > GRID_JITTER_S:
                raise DataIntegrityError(
                    f"{path}: spacing {dt:.3f} s at t={rec.t} is off the 10 Hz grid"
                )
        current.append(rec)
    if current:
        segments.append(current)
    return segments


def export_csv(
    segments: Iterable[Sequence[WheelRecord]],
    path: str | Path,
    schema: SchemaConfig | None = None,
) -> None:
    """Write record segments back out in the schema's own units."""
    schema = schema or canonical_schema()
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.columns[f] for f in SCHEMA_FIELDS])
        for segment in segments:
            for rec in segment:
                yaw = rec.yaw if schema.yaw_units == "rad" else math.degrees(rec.yaw)
                writer.writerow(
                    [
                        repr(rec.t),
                        repr(_wheel_from_rad_s(rec.wheels.omega_fl, schema)),
                        repr(_wheel_from_rad_s(rec.wheels.omega_fr, schema)),
                        repr(_wheel_from_rad_s(rec.wheels.omega_rl, schema)),
                        repr(_wheel_from_rad_s(rec.wheels.omega_rr, schema)),
                        repr(rec.fix.lat),
                        repr(rec.fix.lon),
                        repr(yaw),
                    ]
                )


# ---------------------------------------------------------------------------
# window building and normalisation


def build_windows(
    segment: Sequence[WheelRecord],
    cal: Calibration,
    v_max: float = V_MAX_DEFAULT,
    stride: int = WINDOW_SAMPLES,
) -> list[TrainingWindow]:
    """Label the seconds of one contiguous segment.

    A window starting at record i (i >= 10) covers records i..i+9; its label
    compares the integrated wheel displacement against the geodesic distance
    between the fixes at records i-1 and i+9.  The default stride of 10 gives
    non-overlapping windows; smaller strides are an opt-in for overlap
    experiments.  Windows tripping the v_max sanity bound are skipped.
    """
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    windows: list[TrainingWindow] = []
    if len(segment) < 2 * WINDOW_SAMPLES:
        return windows
    for i in range(WINDOW_SAMPLES, len(segment) - WINDOW_SAMPLES + 1, stride):
        rows = segment[i : i + WINDOW_SAMPLES]
        try:
            x_whr = integrate_displacement([rec.wheels for rec in rows], cal, v_max)
        except DisplacementBoundError:
            continue
        fix_start = segment[i - 1].fix
        fix_end = rows[-1].fix
        x_gnss = gnss_displacement(fix_start, fix_end)
        feats = np.concatenate(
            [
                [rec.wheels.omega_fl for rec in rows],
                [rec.wheels.omega_fr for rec in rows],
                [rec.wheels.omega_rl for rec in rows],
                [rec.wheels.omega_rr for rec in rows],
            ]
        )
        windows.append(
            TrainingWindow(
                x=feats,
                y=label_error(x_whr, x_gnss),
                x_whr=x_whr,
                x_gnss=x_gnss,
                t_end=rows[-1].t,
                yaw=rows[-1].yaw,
                fix_start=fix_start,
                fix_end=fix_end,
            )
        )
    return windows


def fit_normalizer(windows: Sequence[TrainingWindow]) -> NormalizerParams:
    """Per-feature min/max over a training window set (training data only)."""
    if not windows:
        raise InvalidInputError("cannot fit a normalizer on zero windows")
    stack = np.stack([w.x for w in windows])
    return NormalizerParams(lo=stack.min(axis=0), hi=stack.max(axis=0))


def apply_normalizer(params: NormalizerParams, x: np.ndarray) -> np.ndarray:
    """Scale features so the fitted range maps onto [0, 1].

    Out-of-range inputs are deliberately not clipped: distribution shift at
    test time must remain visible to the model.  Degenerate features
    (max == min on the training set) carry no information and map to 0.
    """
    x = np.asarray(x, dtype=float)
    span = params.hi - params.lo
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (x - params.lo) / span
    return np.where(span == 0.0, 0.0, z)


def invert_normalizer(params: NormalizerParams, z: np.ndarray) -> np.ndarray:
    """Inverse of :func:`apply_normalizer` on non-degenerate features."""
    z = np.asarray(z, dtype=float)
    span = params.hi - params.lo
    return np.where(span == 0.0, params.lo, params.lo + z * span)


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class ProfileSegment:
    """One piece of a piecewise-linear profile.

    The value ramps from ``start`` to ``end`` across the duration; omitting
    ``end`` holds the value constant.
    """

    duration_s: float
    start: float
    end: float | None = None

    def __post_init__(self):
        if self.duration_s <= 0.0:
            raise InvalidInputError("profile segment duration must be > 0")


@dataclass(frozen=True)
class SlipEvent:
    """Interval where the driven wheels spin faster than the vehicle moves."""

    start_s: float
    duration_s: float
    ratio: float

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise InvalidInputError("slip ratio must be in [0, 1)")
        if self.duration_s <= 0.0:
            raise InvalidInputError("slip duration must be > 0")


@dataclass(frozen=True)
class SyntheticConfig:
    """Recipe for a deterministic synthetic drive.

    Wheel-speed bias factors model tyre-radius error: measured wheel speed is
    ``bias * true_speed / r``, so a factor of 1.05 makes the odometry
    overestimate displacement by 5%.  Slip events apply to the driven (rear)
    wheels only; the free-rolling front wheels keep tracking true ground
    speed, which is what makes slip observable from the feature vector.
    """

    duration_s: float
    speed: tuple[ProfileSegment, ...]
    yaw_rate: tuple[ProfileSegment, ...] = ()
    initial_yaw: float = 0.0
    start_lat: float = 52.4
    start_lon: float = -1.5
    wheel_radius_m: float = 0.3
    track_width_m: float = 1.6
    bias_fl: float = 1.0
    bias_fr: float = 1.0
    bias_rl: float = 1.0
    bias_rr: float = 1.0
    slip_events: tuple[SlipEvent, ...] = ()
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0.0:
            raise InvalidInputError("duration must be > 0")
        for name in ("bias_fl", "bias_fr", "bias_rl", "bias_rr"):
            if getattr(self, name) <= 0.0:
                raise InvalidInputError(f"{name} must be > 0")
        if self.noise_std < 0.0:
            raise InvalidInputError("noise_std must be >= 0")
        if self.wheel_radius_m <= 0.0:
            raise InvalidInputError("wheel_radius_m must be > 0")

    def to_dict(self) -> dict:
        def seg(p: ProfileSegment) -> dict:
            d = {"duration_s": p.duration_s, "start": p.start}
            if p.end is not None:
                d["end"] = p.end
            return d

        return {
            "duration_s": self.duration_s,
            "speed": [seg(p) for p in self.speed],
            "yaw_rate": [seg(p) for p in self.yaw_rate],
            "initial_yaw": self.initial_yaw,
            "start_lat": self.start_lat,
            "start_lon": self.start_lon,
            "wheel_radius_m": self.wheel_radius_m,
            "track_width_m": self.track_width_m,
            "bias_fl": self.bias_fl,
            "bias_fr": self.bias_fr,
            "bias_rl": self.bias_rl,
            "bias_rr": self.bias_rr,
            "slip_events": [
                {"start_s": e.start_s, "duration_s": e.duration_s, "ratio": e.ratio}
                for e in self.slip_events
            ],
            "noise_std": self.noise_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        data = dict(data)
        data["speed"] = tuple(ProfileSegment(**seg) for seg in data.get("speed", []))
        data["yaw_rate"] = tuple(
            ProfileSegment(**seg) for seg in data.get("yaw_rate", [])
        )
        data["slip_events"] = tuple(
            SlipEvent(**ev) for ev in data.get("slip_events", [])
        )
        return cls(**data)


def _sample_profile(
    segments: Sequence[ProfileSegment], times: np.ndarray, default: float = 0.0
) -> np.ndarray:
    """Piecewise-linear profile values; holds the final value past the end."""
    values = np.full(times.shape, default, dtype=float)
    if not segments:
        return values
    t0 = 0.0
    for seg in segments:
        end = seg.start if seg.end is None else seg.end
        inside = (times >= t0) & (times < t0 + seg.duration_s)
        frac = (times[inside] - t0) / seg.duration_s
        values[inside] = seg.start + (end - seg.start) * frac
        t0 += seg.duration_s
    last_end = segments[-1].start if segments[-1].end is None else segments[-1].end
    values[times >= t0] = last_end
    return values


def generate_synthetic(cfg: SyntheticConfig) -> list[WheelRecord]:
    """Simulate one drive segment at 10 Hz with injected odometry faults.

    The true trajectory is integrated on the ellipsoid at 100 Hz and
    decimated; each record's wheel-speed sample is the interval average over
    the preceding 0.1 s (what an encoder pulse count measures), scaled by the
    per-wheel bias, with seeded Gaussian noise added per record.  Fault-free
    configs therefore label to zero within numerical tolerance on
    straight-line drives.
    """
    n_steps = int(round(cfg.duration_s / SIM_DT))
    n_records = n_steps // DECIMATE + 1
    step_t = np.arange(n_steps) * SIM_DT

    v_cmd = _sample_profile(cfg.speed, step_t)
    rate = _sample_profile(cfg.yaw_rate, step_t)
    yaw = cfg.initial_yaw + np.concatenate([[0.0], np.cumsum(rate[:-1] * SIM_DT)])

    slip = np.zeros(n_steps)
    for ev in cfg.slip_events:
        mask = (step_t >= ev.start_s) & (step_t < ev.start_s + ev.duration_s)
        slip[mask] = ev.ratio

    v_ground = v_cmd * (1.0 - slip)
    half_track = 0.5 * cfg.track_width_m
    v_rl = v_cmd + rate * half_track
    v_rr = v_cmd - rate * half_track
    v_fl = v_ground + rate * half_track
    v_fr = v_ground - rate * half_track

    # cumulative wheel-surface path per wheel; index k = path at time k*SIM_DT
    paths = {
        "fl": np.concatenate([[0.0], np.cumsum(v_fl * SIM_DT)]),
        "fr": np.concatenate([[0.0], np.cumsum(v_fr * SIM_DT)]),
        "rl": np.concatenate([[0.0], np.cumsum(v_rl * SIM_DT)]),
        "rr": np.concatenate([[0.0], np.cumsum(v_rr * SIM_DT)]),
    }

    fixes = [GnssFix(cfg.start_lat, cfg.start_lon)]
    fix = fixes[0]
    for k in range(n_steps):
        fix = advance_fix(fix, yaw[k], v_ground[k] * SIM_DT)
        if (k + 1) % DECIMATE == 0:
            fixes.append(fix)

    yaw_records = np.concatenate([yaw[::DECIMATE], [yaw[-1] + rate[-1] * SIM_DT]])
    bias = {"fl": cfg.bias_fl, "fr": cfg.bias_fr, "rl": cfg.bias_rl, "rr": cfg.bias_rr}
    inst = {"fl": v_fl, "fr": v_fr, "rl": v_rl, "rr": v_rr}

    rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(0.0, 1.0, size=(n_records, 4)) * cfg.noise_std

    r = cfg.wheel_radius_m
    records = []
    for j in range(n_records):
        omega = {}
        for w, path in paths.items():
            if j == 0:
                mean_v = inst[w][0]
            else:
                k = j * DECIMATE
                mean_v = (path[k] - path[k - DECIMATE]) / SAMPLE_DT
            omega[w] = bias[w] * mean_v / r
        records.append(
            WheelRecord(
                t=j * SAMPLE_DT,
                wheels=WheelSpeeds(
                    omega_fl=omega["fl"] + noise[j, 0],
                    omega_fr=omega["fr"] + noise[j, 1],
                    omega_rl=omega["rl"] + noise[j, 2],
                    omega_rr=omega["rr"] + noise[j, 3],
                ),
                fix=fixes[j],
                yaw=float(yaw_records[j]),
            )
        )
    return records


# ---------------------------------------------------------------------------
# outage slicing

OUTAGE_LENGTHS = (10, 30, 60, 120, 180)


@dataclass(frozen=True)
class OutageSequence:
    """A contiguous run of labelled seconds simulating one GNSS outage."""

    windows: tuple[TrainingWindow, ...]
    length_s: int
    distance_m: float = field(init=False)

    def __post_init__(self):
        if len(self.windows) != self.length_s:
            raise InvalidInputError(
                f"sequence holds {len(self.windows)} seconds, declared {self.length_s}"
            )
        object.__setattr__(
            self, "distance_m", float(sum(w.x_gnss for w in self.windows))
        )


def split_outage_sequences(
    windows_by_segment: Sequence[Sequence[TrainingWindow]], length_s: int
) -> list[OutageSequence]:
    """Cut maximal non-overlapping outage sequences out of labelled segments.

    Sequences never span segment breaks or holes left by skipped windows;
    the remainder of each contiguous run is discarded.
    """
    if length_s not in OUTAGE_LENGTHS:
        raise InvalidInputError(
            f"outage length must be one of {OUTAGE_LENGTHS}, got {length_s}"
        )
    sequences = []
    for segment in windows_by_segment:
        run: list[TrainingWindow] = []
        for window in segment:
            if run and abs(window.t_end - run[-1].t_end - 1.0) > 2 * GRID_JITTER_S:
                sequences.extend(_chop(run, length_s))
                run = []
            run.append(window)
        sequences.extend(_chop(run, length_s))
    return sequences


def _chop(run: Sequence[TrainingWindow], length_s: int) -> list[OutageSequence]:
    return [
        OutageSequence(windows=tuple(run[i : i + length_s]), length_s=length_s)
        for i in range(0, len(run) - length_s + 1, length_s)
    ]
