import numpy as np
import pytest
from hypothesis import given, strategies as st

from aeroalbedo.ephemeris import (
    EphemerisError, SunState, direction_to_angles, sun_direction_enu, sun_position, sun_state,
)
from aeroalbedo.scene_io import GeoRef

# Frozen output of an independent NREL SPA implementation (geometric, no
# refraction, delta_t = 69 s): (utc, lat, lon, azimuth, elevation).
SPA_CASES = [
    ("2021-06-21T17:00:00Z", 40.0, -83.0, 154.1143, 71.9570),
    ("2021-12-21T15:00:00Z", 40.0, -83.0, 144.0895, 17.5473),
    ("2019-09-15T03:30:00Z", -33.87, 151.21, 322.6934, 46.1733),
    ("2022-01-10T08:45:00Z", 51.48, 0.0, 134.0363, 4.2580),
    ("2000-01-01T12:00:00Z", 0.0, 0.0, 178.0688, 66.9537),
    ("1985-07-04T20:15:00Z", 34.05, -118.25, 200.1101, 78.1343),
    ("2010-11-30T06:00:00Z", 28.61, 77.21, 168.1289, 38.8571),
    ("2035-04-12T14:20:00Z", -22.9, -43.2, 15.5038, 57.2882),
    ("2048-08-01T00:30:00Z", 64.15, -21.94, 344.6417, -7.0399),
    ("1960-02-29T10:00:00Z", 60.17, 24.94, 171.2387, 21.6336),
]
NEAR_ZENITH = ("2020-03-20T12:07:00Z", 0.0, 0.0, 31.4953, 89.8399)


def _angle_diff(a, b):
    return abs((a - b + 180.0) % 360.0 - 180.0)


@pytest.mark.parametrize("ts,lat,lon,az,el", SPA_CASES)
def test_matches_spa_oracle(ts, lat, lon, az, el):
    a, e = sun_position(GeoRef(lat, lon), ts)
    assert _angle_diff(a, az) < 0.1
    assert abs(e - el) < 0.1


def test_equinox_noon_over_equator():
    # azimuth is ill-conditioned this close to the zenith; elevation only
    ts, lat, lon, _, el = NEAR_ZENITH
    e = sun_position(GeoRef(lat, lon), ts)[1]
    assert abs(e - 90.0) < 1.0
    assert abs(e - el) < 0.1


@pytest.mark.parametrize("hour", [0, 6, 12, 18])
def test_polar_night(hour):
    e = sun_position(GeoRef(90.0, 0.0), f"2022-12-21T{hour:02d}:00:00Z")[1]
    assert abs(e + 23.4) < 0.5


def test_elevation_decreases_toward_winter():
    geo = GeoRef(40.0, -83.0)
    els = [sun_position(geo, f"2021-{m:02d}-21T17:00:00Z")[1] for m in (6, 8, 10, 12)]
    assert all(a > b for a, b in zip(els, els[1:]))


def test_outside_validity_window():
    with pytest.raises(EphemerisError):
        sun_position(GeoRef(0.0, 0.0), "2100-01-01T00:00:00Z")


@pytest.mark.parametrize("az,el,expected", [(0, 0, (0, 1, 0)), (90, 0, (1, 0, 0)), (37, 90, (0, 0, 1))])
def test_direction_examples(az, el, expected):
    np.testing.assert_allclose(sun_direction_enu(az, el), expected, atol=1e-15)


def test_direction_domain():
    with pytest.raises(EphemerisError):
        sun_direction_enu(360.0, 0.0)
    with pytest.raises(EphemerisError):
        sun_direction_enu(0.0, 91.0)


@given(st.floats(0.0, 359.999), st.floats(-89.9, 89.9))
def test_direction_angle_roundtrip(az, el):
    d = sun_direction_enu(az, el)
    assert abs(np.linalg.norm(d) - 1.0) < 1e-12
    a2, e2 = direction_to_angles(d)
    np.testing.assert_allclose(sun_direction_enu(a2, e2), d, atol=1e-9)


def test_sun_state():
    s = sun_state(GeoRef(40.0, -83.0), "2021-06-21T17:00:00Z", psi=(2, 2, 2))
    assert s.above_horizon
    np.testing.assert_allclose(s.direction, sun_direction_enu(s.azimuth, s.elevation))
    with pytest.raises(EphemerisError):
        SunState.from_angles(10, 10, psi=(-1, 1, 1))
