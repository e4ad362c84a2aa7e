"""Physical wheel-odometry model.

Rear-axle wheel speeds are averaged, scaled to body-frame velocity through a
single calibration constant and integrated over one-second windows with a
left-Riemann sum at the native 10 Hz rate.  Body displacements rotate into the
local North-East-Down frame through the yaw angle only; pitch and roll are
neglected, so the Down component stays pinned at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    CalibrationError,
    DataIntegrityError,
    DisplacementBoundError,
    InvalidInputError,
    WindowSizeError,
)

if TYPE_CHECKING:  # pragma: no cover - only for annotations
    from .dataset import WheelRecord

SAMPLE_DT = 0.1        # wheel-speed stream period, s (10 Hz)
WINDOW_SAMPLES = 10    # one labelling interval = 1 s
V_MAX_DEFAULT = 70.0   # m/s sanity bound on per-window displacement
GRID_JITTER = 0.02     # accepted deviation from the 0.1 s grid, s


@dataclass(frozen=True)
class WheelSpeeds:
    """Angular velocities of the four wheels, rad/s (negative = reverse)."""

    omega_fl: float
    omega_fr: float
    omega_rl: float
    omega_rr: float

    def __post_init__(self):
        for name in ("omega_fl", "omega_fr", "omega_rl", "omega_rr"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.omega_fl, self.omega_fr, self.omega_rl, self.omega_rr]
        )


@dataclass(frozen=True)
class NedPosition:
    """North-East-Down position in metres; down is always 0."""

    north: float = 0.0
    east: float = 0.0
    down: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.north) and math.isfinite(self.east)):
            raise InvalidInputError("position components must be finite")
        if self.down != 0.0:
            raise InvalidInputError("down must be 0 (horizontal-plane navigation)")


@dataclass(frozen=True)
class Calibration:
    """Constant r (metres) mapping rear-axle wheel speed to linear velocity."""

    r: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0.0):
            raise CalibrationError(f"calibration constant must be > 0, got {self.r}")


def rotation_nb(yaw: float) -> np.ndarray:
    """Body-to-navigation rotation matrix about the vertical axis."""
    if not math.isfinite(yaw):
        raise InvalidInputError("yaw must be finite")
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rear_axle_speed(ws: WheelSpeeds) -> float:
    """Mean angular velocity of the rear axle, rad/s."""
    return 0.5 * (ws.omega_rr + ws.omega_rl)


def linear_velocity(omega_whr: float, cal: Calibration) -> float:
    """Body-frame forward speed (m/s) for a rear-axle angular velocity."""
    if not math.isfinite(omega_whr):
        raise InvalidInputError("omega_whr must be finite")
    return omega_whr * cal.r


def riemann_displacement(
    samples: Sequence[WheelSpeeds], cal: Calibration, dt: float = SAMPLE_DT
) -> float:
    """Left-Riemann displacement (m) over any run of samples: sum(omega)*r*dt."""
    total = 0.0
    for ws in samples:
        total += rear_axle_speed(ws)
    return total * cal.r * dt


def integrate_displacement(
    samples: Sequence[WheelSpeeds],
    cal: Calibration,
    v_max: float = V_MAX_DEFAULT,
) -> float:
    """Body-frame displacement (m) over one 1 s window of ten 10 Hz samples.

    Displacements whose magnitude exceeds ``v_max * 1 s`` are rejected with
    :class:`DisplacementBoundError` so corrupt windows are never silently used.
    """
    if len(samples) != WINDOW_SAMPLES:
        raise WindowSizeError(
            f"expected {WINDOW_SAMPLES} samples per window, got {len(samples)}"
        )
    x = riemann_displacement(samples, cal)
    bound = v_max * WINDOW_SAMPLES * SAMPLE_DT
    if abs(x) > bound:
        raise DisplacementBoundError(
            f"window displacement {x:.2f} m exceeds the {bound:.1f} m sanity bound"
        )
    return x


def update_position(pos: NedPosition, disp: float, yaw: float) -> NedPosition:
    """Advance a NED position by a body displacement rotated through yaw."""
    if not (math.isfinite(disp) and math.isfinite(yaw)):
        raise InvalidInputError("displacement and yaw must be finite")
    return NedPosition(
        north=pos.north + disp * math.cos(yaw),
        east=pos.east + disp * math.sin(yaw),
        down=0.0,
    )


def _check_grid(times: Sequence[float]) -> None:
    for i in range(1, len(times)):
        dt = times[i] - times[i - 1]
        if dt <= 0.0:
            raise DataIntegrityError(f"timestamps not increasing at index {i}")
        if abs(dt - SAMPLE_DT) > GRID_JITTER:
            raise DataIntegrityError(
                f"timestamp gap {dt:.3f} s at index {i} breaks the 10 Hz grid"
            )


def dead_reckon(
    records: Sequence["WheelRecord"],
    cal: Calibration,
    start: NedPosition = NedPosition(),
    v_max: float = V_MAX_DEFAULT,
) -> list[NedPosition]:
    """Incremental position track from a contiguous 10 Hz record stream.

    Folds one-second displacement integration and yaw rotation over
    consecutive windows, rotating each window by its final yaw sample.
    Returns one position per second, starting with ``start`` itself.
    """
    positions = [start]
    if not records:
        return positions
    if len(records) % WINDOW_SAMPLES != 0:
        raise WindowSizeError(
            f"record count {len(records)} is not a multiple of {WINDOW_SAMPLES}"
        )
    _check_grid([rec.t for rec in records])
    pos = start
    for i in range(0, len(records), WINDOW_SAMPLES):
        window = records[i : i + WINDOW_SAMPLES]
        disp = integrate_displacement([rec.wheels for rec in window], cal, v_max)
        pos = update_position(pos, disp, window[-1].yaw)
        positions.append(pos)
    return positions
