"""Solar position from the Astronomical Almanac's low-precision formulae.

Accurate to about 0.01 degrees between 1950 and 2050 (Michalsky 1988).
Positions are geometric: no atmospheric refraction is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .scene_io import GeoRef, parse_timestamp

_J2000 = datetime(2000, 1, 1, 12, 0, 0, tzinfo=timezone.utc)
_VALID_YEARS = (1950, 2050)


class EphemerisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SunState:
    azimuth: float
    elevation: float
    direction: np.ndarray
    psi: np.ndarray
    timestamp: datetime | None = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        psi = np.asarray(self.psi, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise EphemerisError("sun direction must be unit length")
        if np.any(psi < 0):
            raise EphemerisError("sun intensity must be non-negative")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_angles(cls, azimuth, elevation, psi=(1.0, 1.0, 1.0), timestamp=None) -> "SunState":
        az = float(azimuth) % 360.0
        return cls(az, float(elevation), sun_direction_enu(az, elevation), psi, timestamp)

    @property
    def above_horizon(self) -> bool:
        return self.elevation > 0.0


def sun_position(georef: GeoRef, timestamp) -> tuple[float, float]:
    """Return (azimuth, elevation) of the sun's center in degrees.

    Azimuth is clockwise from north in [0, 360).
    """
    ts = parse_timestamp(timestamp)
    if not _VALID_YEARS[0] <= ts.year < _VALID_YEARS[1]:
        raise EphemerisError(f"timestamp {ts.isoformat()} outside the 1950-2050 validity window")
    n = (ts - _J2000).total_seconds() / 86400.0
    hour = ts.hour + ts.minute / 60.0 + (ts.second + ts.microsecond * 1e-6) / 3600.0

    # ecliptic coordinates
    mnlong = (280.460 + 0.9856474 * n) % 360.0
    mnanom = np.deg2rad((357.528 + 0.9856003 * n) % 360.0)
    eclong = np.deg2rad((mnlong + 1.915 * np.sin(mnanom) + 0.020 * np.sin(2 * mnanom)) % 360.0)
    oblqec = np.deg2rad(23.439 - 0.0000004 * n)

    # celestial coordinates
    ra = np.arctan2(np.cos(oblqec) * np.sin(eclong), np.cos(eclong))
    dec = np.arcsin(np.sin(oblqec) * np.sin(eclong))

    # local coordinates
    gmst = (6.697375 + 0.0657098242 * n + hour) % 24.0
    lmst = np.deg2rad(((gmst + georef.longitude / 15.0) % 24.0) * 15.0)
    ha = (lmst - ra + np.pi) % (2 * np.pi) - np.pi

    lat = np.deg2rad(georef.latitude)
    sin_el = np.sin(dec) * np.sin(lat) + np.cos(dec) * np.cos(lat) * np.cos(ha)
    el = np.arcsin(np.clip(sin_el, -1.0, 1.0))
    # azimuth from the east/north components of the sun vector
    east = -np.cos(dec) * np.sin(ha)
    north = np.sin(dec) * np.cos(lat) - np.cos(dec) * np.sin(lat) * np.cos(ha)
    az = np.rad2deg(np.arctan2(east, north)) % 360.0
    return float(az), float(np.rad2deg(el))


def sun_direction_enu(azimuth, elevation) -> np.ndarray:
    """Unit ENU vector pointing toward the sun."""
    azimuth, elevation = float(azimuth), float(elevation)
    if not (0.0 <= azimuth < 360.0):
        raise EphemerisError(f"azimuth out of range: {azimuth}")
    if not (-90.0 <= elevation <= 90.0):
        raise EphemerisError(f"elevation out of range: {elevation}")
    az, el = np.deg2rad(azimuth), np.deg2rad(elevation)
    d = np.array([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)])
    return d / np.linalg.norm(d)


def direction_to_angles(direction) -> tuple[float, float]:
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    el = np.rad2deg(np.arcsin(np.clip(d[2], -1.0, 1.0)))
    az = np.rad2deg(np.arctan2(d[0], d[1])) % 360.0
    return float(az), float(el)


def sun_state(georef: GeoRef, timestamp, psi=(1.0, 1.0, 1.0)) -> SunState:
    az, el = sun_position(georef, timestamp)
    return SunState.from_angles(az, el, psi, parse_timestamp(timestamp))
