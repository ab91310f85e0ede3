"""Solar geometry, clear-sky irradiance and the smart-persistence baseline.

Angles are degrees at the interface and radians internally. Azimuth is
measured clockwise from north.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

SOLAR_CONSTANT = 1367.0  # W/m2
CLEAR_SKY_FLOOR = 10.0  # W/m2
KSTAR_MAX = 1.5


class LowSunError(ValueError):
    """Clear-sky irradiance is below the floor, so the clear-sky index is unreliable."""


@dataclass(frozen=True)
class Site:
    lat_deg: float = 48.713
    lon_deg: float = 2.208
    elevation_m: float = 156.0

    def __post_init__(self):
        if abs(self.lat_deg) > 90:
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        if abs(self.lon_deg) > 180:
            raise ValueError(f"longitude {self.lon_deg} outside [-180, 180]")


PALAISEAU = Site()


@dataclass(frozen=True)
class SolarAngles:
    zenith_deg: float
    azimuth_deg: float

    @property
    def cos_zenith(self) -> float:
        return math.cos(math.radians(self.zenith_deg))

    @property
    def sin_zenith(self) -> float:
        return math.sin(math.radians(self.zenith_deg))

    @property
    def cos_azimuth(self) -> float:
        return math.cos(math.radians(self.azimuth_deg))

    @property
    def sin_azimuth(self) -> float:
        return math.sin(math.radians(self.azimuth_deg))


@dataclass(frozen=True)
class ClearSkyParams:
    """Clear-sky model settings.

    ``linke_turbidity`` is either one value or twelve monthly values.
    """

    site: Site = PALAISEAU
    linke_turbidity: float | tuple[float, ...] = 3.0
    model: str = "esra"

    def __post_init__(self):
        if self.model not in ("esra", "haurwitz"):
            raise ValueError(f"unknown clear-sky model {self.model!r}")
        tl = self.linke_turbidity
        values = list(tl) if isinstance(tl, (list, tuple)) else [tl]
        if isinstance(tl, (list, tuple)):
            if len(values) != 12:
                raise ValueError("monthly Linke turbidity needs 12 entries")
            object.__setattr__(self, "linke_turbidity", tuple(float(v) for v in values))
        for v in values:
            if not 1.0 <= v <= 10.0:
                raise ValueError(f"Linke turbidity {v} outside [1, 10]")

    def turbidity_for_month(self, month: int) -> float:
        tl = self.linke_turbidity
        return tl[month - 1] if isinstance(tl, tuple) else float(tl)


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def solar_position(timestamp_utc: datetime, site: Site = PALAISEAU) -> SolarAngles:
    """Low-precision ephemeris (NOAA fractional-year series).

    Declination and equation of time come from Spencer-type Fourier series;
    the hour angle follows from true solar time. Accuracy is a few tenths of a
    degree, no refraction correction.
    """
    ts = _as_utc(timestamp_utc)
    doy = ts.timetuple().tm_yday
    hours = ts.hour + ts.minute / 60 + ts.second / 3600 + ts.microsecond / 3.6e9
    days_in_year = 366 if _is_leap(ts.year) else 365
    g = 2 * math.pi / days_in_year * (doy - 1 + (hours - 12) / 24)

    eqtime = 229.18 * (
        0.000075
        + 0.001868 * math.cos(g)
        - 0.032077 * math.sin(g)
        - 0.014615 * math.cos(2 * g)
        - 0.040849 * math.sin(2 * g)
    )
    decl = (
        0.006918
        - 0.399912 * math.cos(g)
        + 0.070257 * math.sin(g)
        - 0.006758 * math.cos(2 * g)
        + 0.000907 * math.sin(2 * g)
        - 0.002697 * math.cos(3 * g)
        + 0.00148 * math.sin(3 * g)
    )
    true_solar_min = hours * 60 + eqtime + 4 * site.lon_deg
    hour_angle = math.radians(true_solar_min / 4 - 180)
    lat = math.radians(site.lat_deg)

    cos_z = math.sin(lat) * math.sin(decl) + math.cos(lat) * math.cos(decl) * math.cos(hour_angle)
    cos_z = min(1.0, max(-1.0, cos_z))
    zen = math.acos(cos_z)

    # azimuth clockwise from north via atan2 of east and north components
    east = -math.cos(decl) * math.sin(hour_angle)
    north = math.sin(decl) * math.cos(lat) - math.cos(decl) * math.sin(lat) * math.cos(hour_angle)
    az = math.degrees(math.atan2(east, north)) % 360.0
    return SolarAngles(zenith_deg=math.degrees(zen), azimuth_deg=az)


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def local_solar_hours(timestamp_utc: datetime, site: Site = PALAISEAU) -> float:
    """Local mean solar time in hours, used for daylight windows and split cutoffs."""
    ts = _as_utc(timestamp_utc)
    hours = ts.hour + ts.minute / 60 + ts.second / 3600
    return (hours + site.lon_deg / 15.0) % 24.0


# --------------------------------------------------------------------------
# clear-sky models


def haurwitz_clearsky_ghi(zenith_deg):
    z = np.asarray(zenith_deg, dtype=np.float64)
    cz = np.cos(np.radians(z))
    with np.errstate(divide="ignore", invalid="ignore"):
        ghi = np.where(z < 90.0, 1098.0 * cz * np.exp(-0.057 / cz), 0.0)
    ghi = np.maximum(ghi, 0.0)
    return float(ghi) if ghi.ndim == 0 else ghi


def _rayleigh_optical_thickness(m):
    small = 1.0 / (6.6296 + 1.7513 * m - 0.1202 * m**2 + 0.0065 * m**3 - 0.00013 * m**4)
    large = 1.0 / (10.4 + 0.718 * m)
    return np.where(m <= 20.0, small, large)


def esra_clearsky_ghi(zenith_deg, day_of_year, linke_turbidity: float = 3.0, elevation_m: float = 0.0):
    """ESRA clear-sky global horizontal irradiance (beam + diffuse), W/m2.

    Kasten-Young air mass on the refraction-corrected solar altitude with a
    barometric altitude correction; Rayleigh optical thickness from the
    Kasten fit revised by Louche; diffuse from the TL-dependent transmission
    and angular polynomials. Zero at and below the horizon.
    """
    z = np.asarray(zenith_deg, dtype=np.float64)
    doy = np.asarray(day_of_year, dtype=np.float64)
    tl = float(linke_turbidity)

    eccentricity = 1.0 + 0.03344 * np.cos(2 * np.pi * doy / 365.25 - 0.048869)
    i0 = SOLAR_CONSTANT * eccentricity

    above = z < 90.0
    alt = np.radians(np.where(above, 90.0 - z, 1.0))
    sin_alt = np.sin(alt)

    refraction = 0.061359 * (0.1594 + 1.123 * alt + 0.065656 * alt**2) / (1 + 28.9344 * alt + 277.3971 * alt**2)
    alt_true_deg = np.degrees(alt + refraction)
    pressure_ratio = math.exp(-elevation_m / 8434.5)
    air_mass = pressure_ratio / (np.sin(np.radians(alt_true_deg)) + 0.50572 * (alt_true_deg + 6.07995) ** -1.6364)

    beam = i0 * sin_alt * np.exp(-0.8662 * tl * air_mass * _rayleigh_optical_thickness(air_mass))

    trd = -1.5843e-2 + 3.0543e-2 * tl + 3.797e-4 * tl**2
    a0 = 2.6463e-1 - 6.1581e-2 * tl + 3.1408e-3 * tl**2
    if a0 * trd < 2e-3:
        a0 = 2e-3 / trd
    a1 = 2.0402 + 1.8945e-2 * tl - 1.1161e-2 * tl**2
    a2 = -1.3025 + 3.9231e-2 * tl + 8.5079e-3 * tl**2
    diffuse = i0 * trd * (a0 + a1 * sin_alt + a2 * sin_alt**2)

    ghi = np.where(above, np.maximum(beam + diffuse, 0.0), 0.0)
    return float(ghi) if ghi.ndim == 0 else ghi


def clearsky_ghi(angles_or_zenith, day_of_year, params: ClearSkyParams, month: int | None = None):
    """Dispatch on ``params.model``. Accepts SolarAngles or raw zenith degrees."""
    zen = angles_or_zenith.zenith_deg if isinstance(angles_or_zenith, SolarAngles) else angles_or_zenith
    if params.model == "haurwitz":
        return haurwitz_clearsky_ghi(zen)
    if month is None:
        month = _month_from_doy(int(np.asarray(day_of_year).flat[0]))
    return esra_clearsky_ghi(zen, day_of_year, params.turbidity_for_month(month), params.site.elevation_m)


def _month_from_doy(doy: int) -> int:
    return (datetime(2001, 1, 1) + timedelta(days=doy - 1)).month


# --------------------------------------------------------------------------
# clear-sky index and smart persistence


def clearsky_index(ghi_measured: float, ghi_clear: float, floor: float = CLEAR_SKY_FLOOR) -> float:
    if not ghi_clear >= floor:
        raise LowSunError(f"clear-sky GHI {ghi_clear:.3g} W/m2 below floor {floor} W/m2")
    return min(max(ghi_measured / ghi_clear, 0.0), KSTAR_MAX)


def smart_persistence_forecast(ghi_t: float, ghi_clear_t: float, ghi_clear_t_plus_h: float) -> float:
    """Hold the clear-sky index at t and rescale by the clear-sky value at t+h."""
    return clearsky_index(ghi_t, ghi_clear_t) * ghi_clear_t_plus_h


def smart_persistence_batch(
    ghi_t: Sequence[float], ghi_clear_t: Sequence[float], ghi_clear_t_plus_h: Sequence[float]
) -> np.ndarray:
    ghi_t = np.asarray(ghi_t, dtype=np.float64)
    ct = np.asarray(ghi_clear_t, dtype=np.float64)
    cth = np.asarray(ghi_clear_t_plus_h, dtype=np.float64)
    if np.any(~(ct >= CLEAR_SKY_FLOOR)):
        raise LowSunError("some samples fall below the clear-sky floor")
    k = np.clip(ghi_t / ct, 0.0, KSTAR_MAX)
    return k * cth
