"""Ellipsoidal geodesy on WGS-84.

Ground-truth per-second displacement is the geodesic distance between two
GNSS fixes, computed with Vincenty's inverse iteration.  The signed label
fed to the error predictor is the odometry displacement minus that distance:
positive means the odometry overestimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConvergenceError, InvalidInputError

# WGS-84 ellipsoid (matches GPS receiver output).
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
_E2 = WGS84_F * (2.0 - WGS84_F)  # first eccentricity squared

VINCENTY_TOL = 1e-12
VINCENTY_MAX_ITER = 200

# Documented accuracy limit of the GNSS-derived displacement, metres.
GNSS_ACCURACY_M = 3.0


@dataclass(frozen=True)
class GnssFix:
    """Geodetic fix in degrees: lat in [-90, 90], lon in [-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidInputError("fix coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(f"latitude {self.lat} out of [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInputError(f"longitude {self.lon} out of [-180, 180]")


def vincenty_inverse(
    a: GnssFix,
    b: GnssFix,
    tol: float = VINCENTY_TOL,
    max_iter: int = VINCENTY_MAX_ITER,
) -> float:
    """Geodesic distance between two fixes in metres.

    Classic nested-series iteration on the longitude difference of the
    auxiliary sphere.  The two fixes are put into a canonical order first so
    the result is exactly symmetric under argument swap.  Non-convergence
    (only possible for near-antipodal points, which 1 s vehicle fixes cannot
    be) raises :class:`ConvergenceError` rather than falling back silently.
    """
    if (a.lat, a.lon) == (b.lat, b.lon):
        return 0.0
    if (b.lat, b.lon) < (a.lat, a.lon):
        a, b = b, a

    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    big_l = math.radians(b.lon - a.lon)
    u1 = math.atan((1.0 - WGS84_F) * math.tan(phi1))
    u2 = math.atan((1.0 - WGS84_F) * math.tan(phi2))
    sin_u1, cos_u1 = math.sin(u1), math.cos(u1)
    sin_u2, cos_u2 = math.sin(u2), math.cos(u2)

    lam = big_l
    for _ in range(max_iter):
        sin_lam, cos_lam = math.sin(lam), math.cos(lam)
        sin_sigma = math.sqrt(
            (cos_u2 * sin_lam) ** 2
            + (cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_lam) ** 2
        )
        if sin_sigma == 0.0:
            return 0.0  # coincident points
        cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_lam
        sigma = math.atan2(sin_sigma, cos_sigma)
        sin_alpha = cos_u1 * cos_u2 * sin_lam / sin_sigma
        cos_sq_alpha = 1.0 - sin_alpha * sin_alpha
        if cos_sq_alpha == 0.0:
            cos_2sigma_m = 0.0  # equatorial line
        else:
            cos_2sigma_m = cos_sigma - 2.0 * sin_u1 * sin_u2 / cos_sq_alpha
        c = WGS84_F / 16.0 * cos_sq_alpha * (4.0 + WGS84_F * (4.0 - 3.0 * cos_sq_alpha))
        lam_prev = lam
        lam = big_l + (1.0 - c) * WGS84_F * sin_alpha * (
            sigma
            + c
            * sin_sigma
            * (cos_2sigma_m + c * cos_sigma * (-1.0 + 2.0 * cos_2sigma_m**2))
        )
        if abs(lam - lam_prev) < tol:
            break
    else:
        raise ConvergenceError(
            f"geodesic iteration did not converge within {max_iter} iterations"
        )

    u_sq = cos_sq_alpha * (WGS84_A**2 - WGS84_B**2) / WGS84_B**2
    big_a = 1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)))
    big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)))
    delta_sigma = (
        big_b
        * sin_sigma
        * (
            cos_2sigma_m
            + big_b
            / 4.0
            * (
                cos_sigma * (-1.0 + 2.0 * cos_2sigma_m**2)
                - big_b
                / 6.0
                * cos_2sigma_m
                * (-3.0 + 4.0 * sin_sigma**2)
                * (-3.0 + 4.0 * cos_2sigma_m**2)
            )
        )
    )
    return WGS84_B * big_a * (sigma - delta_sigma)


def gnss_displacement(prev: GnssFix, curr: GnssFix) -> float:
    """True displacement (m) between fixes taken 1 s apart.

    Accuracy is bounded by the receiver itself (about +-3 m,
    :data:`GNSS_ACCURACY_M`); that limit is metadata, not modelled here.
    """
    return vincenty_inverse(prev, curr)


def label_error(x_whr: float, x_gnss: float) -> float:
    """Signed displacement error (m): odometry minus GNSS truth."""
    if not (math.isfinite(x_whr) and math.isfinite(x_gnss)):
        raise InvalidInputError("displacements must be finite")
    return x_whr - x_gnss


def curvature_radii(lat_rad: float) -> tuple[float, float]:
    """Meridian and prime-vertical radii of curvature (m) at a latitude."""
    s2 = math.sin(lat_rad) ** 2
    den = math.sqrt(1.0 - _E2 * s2)
    m = WGS84_A * (1.0 - _E2) / den**3
    n = WGS84_A / den
    return m, n


def advance_fix(fix: GnssFix, bearing: float, distance: float) -> GnssFix:
    """Project a fix a short distance along a bearing (radians from north).

    Single curvilinear step using the local radii of curvature; accurate to
    well under a millimetre for steps up to a few hundred metres, so callers
    integrating a trajectory should chain short steps.
    """
    if not (math.isfinite(bearing) and math.isfinite(distance)):
        raise InvalidInputError("bearing and distance must be finite")
    phi = math.radians(fix.lat)
    m, n = curvature_radii(phi)
    dlat = distance * math.cos(bearing) / m
    dlon = distance * math.sin(bearing) / (n * math.cos(phi))
    return GnssFix(
        lat=fix.lat + math.degrees(dlat),
        lon=fix.lon + math.degrees(dlon),
    )
