"""Synthetic sky-camera archive with coupled imagery and irradiance.

Each day draws one cloud regime. Clouds are Gaussian blobs of optical depth
living on a periodic plane in fisheye image coordinates (unit disk = horizon)
and drift with a constant per-day wind. The sun is placed on the disk from
its zenith/azimuth; the blobs' transmittance at the sun pixel drives GHI::

    GHI = GHI_clear * (tau + diffuse_floor * (1 - tau))

Output is ingestible by :func:`skycast.dataset.ingest_directory`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .clearsky import ClearSkyParams, Site, clearsky_ghi, solar_position
from .dataset import CSV_HEADER, format_stamp

REGIMES = ("clear", "broken", "overcast")
PERIOD = 4.0  # side of the periodic cloud plane, in disk radii


@dataclass
class GenConfig:
    days: int = 30
    image_size: int = 64
    start_date: str = "2018-03-01"
    end_date: str = "2018-09-30"
    cadence_min: int = 2
    day_start_hours: float = 8.0  # local solar time
    day_end_hours: float = 19.0
    regime_weights: list[float] = field(default_factory=lambda: [0.25, 0.45, 0.30])
    diffuse_floor: float = 0.25
    wind_speed: list[float] = field(default_factory=lambda: [0.02, 0.06])  # disk radii per minute
    lat_deg: float = 48.713
    lon_deg: float = 2.208
    elevation_m: float = 156.0
    linke_turbidity: float = 3.0

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.cadence_min < 1:
            raise ValueError("cadence_min must be >= 1")
        if len(self.regime_weights) != 3 or min(self.regime_weights) < 0 or sum(self.regime_weights) <= 0:
            raise ValueError("regime_weights needs three non-negative weights")

    @property
    def site(self) -> Site:
        return Site(self.lat_deg, self.lon_deg, self.elevation_m)

    @property
    def clearsky(self) -> ClearSkyParams:
        return ClearSkyParams(site=self.site, linke_turbidity=self.linke_turbidity, model="esra")

    def dates(self) -> list[date]:
        d0 = date.fromisoformat(self.start_date)
        d1 = date.fromisoformat(self.end_date)
        span = (d1 - d0).days
        if self.days == 1:
            return [d0]
        offsets = np.round(np.linspace(0, span, self.days)).astype(int)
        if len(set(offsets)) != len(offsets):
            raise ValueError("more days requested than the date range holds")
        return [d0 + timedelta(days=int(o)) for o in offsets]


@dataclass
class CloudField:
    centers: np.ndarray  # (n, 2) at t = 0 min
    sigma: np.ndarray  # (n,)
    depth: np.ndarray  # (n,)
    wind: np.ndarray  # (2,) disk radii per minute

    def optical_depth(self, u: np.ndarray, v: np.ndarray, minutes: float) -> np.ndarray:
        out = np.zeros(np.broadcast(u, v).shape)
        if len(self.depth) == 0:
            return out
        pos = self.centers + self.wind * minutes
        for (cx, cy), s, d in zip(pos, self.sigma, self.depth):
            du = (u - cx + PERIOD / 2) % PERIOD - PERIOD / 2
            dv = (v - cy + PERIOD / 2) % PERIOD - PERIOD / 2
            out += d * np.exp(-(du * du + dv * dv) / (2 * s * s))
        return out


def draw_cloud_field(regime: str, rng: np.random.Generator, wind_range) -> CloudField:
    angle = rng.uniform(0, 2 * math.pi)
    speed = rng.uniform(*wind_range)
    wind = speed * np.array([math.cos(angle), math.sin(angle)])
    if regime == "clear":
        n, sig, dep = 0, (0.1, 0.1), (0.0, 0.0)
    elif regime == "broken":
        n, sig, dep = int(rng.integers(18, 36)), (0.06, 0.16), (1.0, 3.0)
    else:
        n, sig, dep = int(rng.integers(50, 70)), (0.15, 0.30), (1.5, 3.0)
    return CloudField(
        centers=rng.uniform(-PERIOD / 2, PERIOD / 2, size=(n, 2)),
        sigma=rng.uniform(*sig, size=n),
        depth=rng.uniform(*dep, size=n),
        wind=wind,
    )


def sun_disk_position(zenith_deg: float, azimuth_deg: float) -> tuple[float, float]:
    """Equidistant fisheye: radius proportional to zenith, north up, east right."""
    r = zenith_deg / 90.0
    a = math.radians(azimuth_deg)
    return r * math.sin(a), r * math.cos(a)


def render_pair(field: CloudField, minutes: float, sun_uv, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Short- and long-exposure RGB uint8 frames."""
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    u = coords[None, :]
    v = -coords[:, None]
    r = np.sqrt(u * u + v * v)
    inside = r <= 1.0

    depth = field.optical_depth(u, v, minutes)
    alpha = 1.0 - np.exp(-depth)
    su, sv = sun_uv
    tau_sun = float(np.exp(-field.optical_depth(np.array(su), np.array(sv), minutes)))
    d_sun = np.sqrt((u - su) ** 2 + (v - sv) ** 2)

    sky = np.array([0.22, 0.38, 0.78])[:, None, None] * (0.8 + 0.2 * r)
    sky = sky + 0.35 * np.exp(-d_sun / 0.3) * tau_sun
    cloud_lum = 0.92 * (0.55 + 0.45 * np.exp(-depth / 2.0))
    cloud = np.stack([cloud_lum, cloud_lum, cloud_lum * 1.03])
    base = sky * (1 - alpha) + cloud * alpha

    short = 0.8 * base
    disk = d_sun <= 0.05
    short = np.where(disk, short * (1 - tau_sun) + tau_sun, short)

    long = 1.6 * base
    halo = d_sun <= 0.15 * (0.3 + 0.7 * tau_sun)
    long = np.where(halo, long * (1 - tau_sun) + tau_sun * 1.0, long)

    frames = []
    for img in (short, long):
        img = np.clip(img, 0.0, 1.0) * inside
        frames.append(np.round(img.transpose(1, 2, 0) * 255).astype(np.uint8))
    return frames[0], frames[1]


def _day_stamps(day: date, cfg: GenConfig) -> list[datetime]:
    midnight = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
    offset_min = cfg.lon_deg * 4.0  # local solar minus UTC
    first = cfg.day_start_hours * 60 - offset_min
    first = math.ceil(first / cfg.cadence_min) * cfg.cadence_min
    last = cfg.day_end_hours * 60 - offset_min
    stamps = []
    m = first
    while m <= last:
        stamps.append(midnight + timedelta(minutes=m))
        m += cfg.cadence_min
    return stamps


def synth_generate(cfg: GenConfig, seed: int, out_root) -> dict:
    """Write images, measurements.csv and manifest.json under ``out_root``."""
    out_root = Path(out_root)
    img_dir = out_root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    weights = np.asarray(cfg.regime_weights, dtype=np.float64)
    weights = weights / weights.sum()
    clearsky = cfg.clearsky
    rows = []
    days_meta = []
    for k, day in enumerate(cfg.dates()):
        rng = np.random.default_rng([seed, k])
        regime = REGIMES[int(rng.choice(3, p=weights))]
        field = draw_cloud_field(regime, rng, cfg.wind_speed)
        stamps = _day_stamps(day, cfg)
        t0 = stamps[0]
        for ts in stamps:
            minutes = (ts - t0).total_seconds() / 60.0
            ang = solar_position(ts, cfg.site)
            su, sv = sun_disk_position(ang.zenith_deg, ang.azimuth_deg)
            tau = float(np.exp(-field.optical_depth(np.array(su), np.array(sv), minutes)))
            clear = clearsky_ghi(ang.zenith_deg, ts.timetuple().tm_yday, clearsky, month=ts.month)
            ghi = clear * (tau + cfg.diffuse_floor * (1 - tau))
            short, long = render_pair(field, minutes, (su, sv), cfg.image_size)
            name = format_stamp(ts)
            Image.fromarray(short).save(img_dir / f"{name}_short.png")
            Image.fromarray(long).save(img_dir / f"{name}_long.png")
            rows.append((ts, ghi, ang.zenith_deg, ang.azimuth_deg))
        days_meta.append({
            "date": day.isoformat(),
            "regime": regime,
            "n_clouds": int(len(field.depth)),
            "wind": [float(w) for w in field.wind],
            "timestamps": [format_stamp(t) for t in stamps],
        })

    with open(out_root / "measurements.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for ts, ghi, zen, az in rows:
            fh.write(f"{ts.strftime('%Y-%m-%dT%H:%M:%SZ')},{ghi:.4f},{zen:.6f},{az:.6f}\n")

    manifest = {"seed": seed, "config": asdict(cfg), "n_stamps": len(rows), "days": days_meta}
    with open(out_root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest
