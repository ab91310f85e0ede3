"""Sky-image archive ingestion, preprocessing, sample assembly and splits.

Archive layout::

    <root>/images/YYYYMMDDTHHMMSSZ_short.png
    <root>/images/YYYYMMDDTHHMMSSZ_long.png
    <root>/measurements.csv   # timestamp_utc,ghi_wm2,zenith_deg,azimuth_deg
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .clearsky import CLEAR_SKY_FLOOR, ClearSkyParams, clearsky_ghi, local_solar_hours

log = logging.getLogger(__name__)

CSV_HEADER = ["timestamp_utc", "ghi_wm2", "zenith_deg", "azimuth_deg"]
IMAGE_RE = re.compile(r"^(\d{8}T\d{6}Z)_(short|long)\.png$")
STAMP_FMT = "%Y%m%dT%H%M%SZ"
PAIR_TOLERANCE_S = 30
DAYLIGHT_HOURS = (8.0, 19.0)
GHI_SCALE = 1000.0


class IngestError(ValueError):
    pass


class DecodeError(ValueError):
    pass


class SampleSkipped(LookupError):
    """A leg of the sample (t-2 min or t+h) is missing; not fatal."""


class SplitError(ValueError):
    pass


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if re.fullmatch(r"\d{8}T\d{6}Z", text):
        return datetime.strptime(text, STAMP_FMT).replace(tzinfo=timezone.utc)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    return ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None else ts.astimezone(timezone.utc)


def format_stamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(STAMP_FMT)


# --------------------------------------------------------------------------
# index


@dataclass
class SampleIndex:
    """One row per timestamp, sorted and strictly increasing."""

    root: Path
    timestamps: list[datetime]
    short_paths: list[Path | None]
    long_paths: list[Path | None]
    ghi_wm2: np.ndarray
    zenith_deg: np.ndarray
    azimuth_deg: np.ndarray
    complete: np.ndarray

    def __post_init__(self):
        self.seconds = np.array([int(t.timestamp()) for t in self.timestamps], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def day_ids(self) -> np.ndarray:
        return np.array([t.strftime("%Y%m%d") for t in self.timestamps])

    def find(self, ts: datetime, tolerance_s: int = PAIR_TOLERANCE_S) -> int | None:
        """Position of the complete entry nearest to ``ts`` within the tolerance."""
        secs = self.seconds
        target = int(ts.timestamp())
        i = int(np.searchsorted(secs, target))
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(secs) and self.complete[j] and abs(secs[j] - target) <= tolerance_s:
                if best is None or abs(secs[j] - target) < abs(secs[best] - target):
                    best = j
        return best


def ingest_directory(root) -> SampleIndex:
    root = Path(root)
    csv_path = root / "measurements.csv"
    img_dir = root / "images"
    if not csv_path.is_file():
        raise IngestError(f"{csv_path}: missing measurements file")

    rows: dict[datetime, tuple[float, float, float]] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise IngestError(f"{csv_path}:1: expected header {','.join(CSV_HEADER)}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise IngestError(f"{csv_path}:{line}: expected 4 fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
                vals = tuple(float(x) for x in row[1:])
            except ValueError as exc:
                raise IngestError(f"{csv_path}:{line}: {exc}") from None
            if ts in rows:
                raise IngestError(f"{csv_path}:{line}: duplicate timestamp {row[0]}")
            rows[ts] = vals

    shorts: dict[datetime, Path] = {}
    longs: dict[datetime, Path] = {}
    if img_dir.is_dir():
        for name in os.listdir(img_dir):
            m = IMAGE_RE.match(name)
            if not m:
                continue
            ts = parse_timestamp(m.group(1))
            (shorts if m.group(2) == "short" else longs)[ts] = img_dir / name

    stamps = sorted(set(rows) | set(shorts) | set(longs))
    nan3 = (math.nan, math.nan, math.nan)
    meas = np.array([rows.get(t, nan3) for t in stamps], dtype=np.float64).reshape(-1, 3)
    short_paths = [shorts.get(t) for t in stamps]
    long_paths = [longs.get(t) for t in stamps]
    complete = np.array(
        [s is not None and lp is not None and np.isfinite(m[0]) for s, lp, m in zip(short_paths, long_paths, meas)],
        dtype=bool,
    )
    n_bad = int((~complete).sum())
    if n_bad:
        log.info("%d of %d stamps incomplete and excluded", n_bad, len(stamps))
    return SampleIndex(
        root=root,
        timestamps=stamps,
        short_paths=short_paths,
        long_paths=long_paths,
        ghi_wm2=meas[:, 0],
        zenith_deg=meas[:, 1],
        azimuth_deg=meas[:, 2],
        complete=complete,
    )


# --------------------------------------------------------------------------
# preprocessing


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages the input cells overlapping [i, i+1) * n_in / n_out."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(math.floor(lo)), min(int(math.ceil(hi)), n_in)):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / scale


def load_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from None


def preprocess_image(raw, size: int = 150) -> np.ndarray:
    """Luminance, area-averaged resize to ``size`` x ``size``, scaled to [0, 1].

    ``raw`` is an H x W x 3 (or H x W) 8-bit array, or a path to an image file.
    """
    if isinstance(raw, (str, os.PathLike)):
        raw = load_rgb(raw)
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] < 3:
            arr = arr[..., 0]
        else:
            arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    if arr.ndim != 2:
        raise DecodeError(f"expected an H x W (x 3) image, got shape {np.shape(raw)}")
    h, w = arr.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than target {size}x{size}")
    if (h, w) != (size, size):
        arr = _area_matrix(h, size) @ arr @ _area_matrix(w, size).T
    return np.clip(arr / 255.0, 0.0, 1.0).astype(np.float32)


def load_frames(index: SampleIndex, size: int, positions=None) -> dict[int, np.ndarray]:
    """Preprocess (short, long) pairs for the requested complete index positions."""
    if positions is None:
        positions = np.flatnonzero(index.complete)
    frames = {}
    for i in positions:
        i = int(i)
        frames[i] = np.stack(
            [preprocess_image(index.short_paths[i], size), preprocess_image(index.long_paths[i], size)]
        )
    return frames


# --------------------------------------------------------------------------
# samples


@dataclass
class SkySample:
    image_stack: np.ndarray  # (4, S, S): short_t, long_t, short_t-2, long_t-2
    metadata: np.ndarray  # (8,)
    target: float  # GHI(t+h) / 1000
    horizon_min: int
    timestamp: datetime
    ghi_wm2: float
    clear_t: float
    clear_t_plus_h: float


def metadata_vector(ghi_t: float, ghi_tm2: float, zenith_deg: float, azimuth_deg: float) -> np.ndarray:
    z, a = math.radians(zenith_deg), math.radians(azimuth_deg)
    return np.array(
        [ghi_t / GHI_SCALE, ghi_tm2 / GHI_SCALE, z, a, math.cos(z), math.sin(z), math.cos(a), math.sin(a)],
        dtype=np.float64,
    )


def _check_horizon(horizon_min: int) -> None:
    if horizon_min % 2 or not 2 <= horizon_min <= 20:
        raise ValueError(f"horizon must be an even number of minutes in [2, 20], got {horizon_min}")


def _legs(index: SampleIndex, i: int, horizon_min: int, clearsky: ClearSkyParams):
    """Index positions (t, t-2, t+h) plus clear-sky values; raises SampleSkipped."""
    if not index.complete[i]:
        raise SampleSkipped("entry at t is incomplete")
    t = index.timestamps[i]
    hours = local_solar_hours(t, clearsky.site)
    if not DAYLIGHT_HOURS[0] <= hours <= DAYLIGHT_HOURS[1]:
        raise SampleSkipped("outside the daylight window")
    prev = index.find(t - timedelta(minutes=2))
    if prev is None:
        raise SampleSkipped("no entry at t-2 min")
    nxt = index.find(t + timedelta(minutes=horizon_min))
    if nxt is None:
        raise SampleSkipped(f"no entry at t+{horizon_min} min")
    doy_t = t.timetuple().tm_yday
    t_h = index.timestamps[nxt]
    clear_t = clearsky_ghi(index.zenith_deg[i], doy_t, clearsky, month=t.month)
    clear_th = clearsky_ghi(index.zenith_deg[nxt], t_h.timetuple().tm_yday, clearsky, month=t_h.month)
    if clear_t < CLEAR_SKY_FLOOR:
        raise SampleSkipped("clear-sky GHI below floor")
    return i, prev, nxt, clear_t, clear_th


def assemble_sample(
    index: SampleIndex,
    t: datetime,
    horizon_min: int,
    clearsky: ClearSkyParams | None = None,
    size: int = 150,
) -> SkySample:
    _check_horizon(horizon_min)
    clearsky = clearsky or ClearSkyParams()
    i = index.find(t, tolerance_s=0)
    if i is None:
        raise SampleSkipped(f"no complete entry at {t}")
    i, prev, nxt, clear_t, clear_th = _legs(index, i, horizon_min, clearsky)
    fr = load_frames(index, size, [i, prev])
    return SkySample(
        image_stack=np.concatenate([fr[i], fr[prev]]),
        metadata=metadata_vector(index.ghi_wm2[i], index.ghi_wm2[prev], index.zenith_deg[i], index.azimuth_deg[i]),
        target=float(index.ghi_wm2[nxt] / GHI_SCALE),
        horizon_min=horizon_min,
        timestamp=index.timestamps[i],
        ghi_wm2=float(index.ghi_wm2[i]),
        clear_t=float(clear_t),
        clear_t_plus_h=float(clear_th),
    )


class SampleSet:
    """All assemblable samples of an archive for one horizon.

    Frames are preprocessed once per timestamp and shared between the
    samples that reference them, so a batch is gathered by indexing.
    """

    def __init__(self, frames: np.ndarray, legs: np.ndarray, metadata: np.ndarray, target: np.ndarray,
                 timestamps: list[datetime], ghi_wm2: np.ndarray, clear_t: np.ndarray,
                 clear_t_plus_h: np.ndarray, local_hours: np.ndarray, horizon_min: int):
        self.frames = frames  # (n_frames, 2, S, S) float32
        self.legs = legs  # (n, 2) frame rows for t and t-2
        self.metadata = metadata.astype(np.float32)
        self.target = target.astype(np.float32)
        self.timestamps = timestamps
        self.ghi_wm2 = ghi_wm2
        self.clear_t = clear_t
        self.clear_t_plus_h = clear_t_plus_h
        self.local_hours = local_hours
        self.horizon_min = horizon_min
        self.day_ids = np.array([t.strftime("%Y%m%d") for t in timestamps])

    def __len__(self) -> int:
        return len(self.target)

    @property
    def image_size(self) -> int:
        return self.frames.shape[-1]

    def images(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        rows = self.legs[idx]
        return self.frames[rows].reshape(len(idx), 4, self.image_size, self.image_size)

    def batch(self, idx):
        idx = np.asarray(idx)
        return self.images(idx), self.metadata[idx], self.target[idx, None]

    def __getitem__(self, i: int) -> SkySample:
        return SkySample(
            image_stack=self.images([i])[0],
            metadata=self.metadata[i].astype(np.float64),
            target=float(self.target[i]),
            horizon_min=self.horizon_min,
            timestamp=self.timestamps[i],
            ghi_wm2=float(self.ghi_wm2[i]),
            clear_t=float(self.clear_t[i]),
            clear_t_plus_h=float(self.clear_t_plus_h[i]),
        )

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            self.frames, self.legs[idx], self.metadata[idx], self.target[idx],
            [self.timestamps[i] for i in idx], self.ghi_wm2[idx], self.clear_t[idx],
            self.clear_t_plus_h[idx], self.local_hours[idx], self.horizon_min,
        )

    def metadata_mean(self) -> np.ndarray:
        return self.metadata.mean(axis=0)


def build_sample_set(
    index: SampleIndex,
    horizon_min: int,
    clearsky: ClearSkyParams | None = None,
    size: int = 150,
    frames: dict[int, np.ndarray] | None = None,
) -> SampleSet:
    """Assemble every usable sample of the archive. Skipped legs are dropped silently."""
    _check_horizon(horizon_min)
    clearsky = clearsky or ClearSkyParams()
    picked = []
    skipped = 0
    for i in np.flatnonzero(index.complete):
        try:
            picked.append(_legs(index, int(i), horizon_min, clearsky))
        except SampleSkipped:
            skipped += 1
    if not picked:
        raise ValueError("no usable samples in archive")
    log.info("horizon %d min: %d samples, %d skipped", horizon_min, len(picked), skipped)

    needed = sorted({p[0] for p in picked} | {p[1] for p in picked})
    if frames is None:
        frames = load_frames(index, size, needed)
    row_of = {pos: r for r, pos in enumerate(needed)}
    frame_arr = np.stack([frames[p] for p in needed]).astype(np.float32)

    legs = np.array([[row_of[p[0]], row_of[p[1]]] for p in picked], dtype=np.int64)
    meta = np.stack([
        metadata_vector(index.ghi_wm2[i], index.ghi_wm2[prev], index.zenith_deg[i], index.azimuth_deg[i])
        for i, prev, _, _, _ in picked
    ])
    target = np.array([index.ghi_wm2[nxt] / GHI_SCALE for _, _, nxt, _, _ in picked])
    stamps = [index.timestamps[p[0]] for p in picked]
    return SampleSet(
        frames=frame_arr,
        legs=legs,
        metadata=meta,
        target=target,
        timestamps=stamps,
        ghi_wm2=np.array([index.ghi_wm2[p[0]] for p in picked]),
        clear_t=np.array([p[3] for p in picked]),
        clear_t_plus_h=np.array([p[4] for p in picked]),
        local_hours=np.array([local_solar_hours(t, clearsky.site) for t in stamps]),
        horizon_min=horizon_min,
    )


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "distinct_days"
    ratio: float = 0.8
    cutoff_hours: float = 13.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("distinct_days", "afternoon_validation"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"split ratio must lie in (0, 1), got {self.ratio}")


def _validation_days(day_ids: np.ndarray, ratio: float, seed: int) -> set[str]:
    days, counts = np.unique(day_ids, return_counts=True)
    if len(days) < 2:
        raise SplitError("need at least two distinct days to split")
    order = np.random.default_rng(seed).permutation(len(days))
    target = (1.0 - ratio) * len(day_ids)
    val: list[str] = []
    n_val = 0
    for k in order[:-1]:  # leave at least one training day
        if n_val >= target:
            break
        # stop early when adding the day overshoots more than stopping undershoots
        if val and n_val + counts[k] - target > target - n_val:
            break
        val.append(days[k])
        n_val += counts[k]
    return set(val)


def split_distinct_days(samples, ratio: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random day-level partition; returns (train, val) sample positions."""
    day_ids = np.asarray(samples.day_ids)
    val_days = _validation_days(day_ids, ratio, seed)
    is_val = np.isin(day_ids, list(val_days))
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def split_afternoon_validation(
    samples, cutoff_hours: float = 13.0, ratio: float = 0.8, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Validation on afternoons of held-out days; their mornings join training.

    The held-out days are the same as ``split_distinct_days`` with the same
    ratio and seed, so the two settings are directly comparable.
    """
    lo, hi = DAYLIGHT_HOURS
    if not lo <= cutoff_hours <= hi:
        raise SplitError(f"cutoff {cutoff_hours:.2f} h outside the {lo:g}-{hi:g} h daylight window")
    day_ids = np.asarray(samples.day_ids)
    val_days = _validation_days(day_ids, ratio, seed)
    is_val = np.isin(day_ids, list(val_days)) & (np.asarray(samples.local_hours) >= cutoff_hours)
    train, val = np.flatnonzero(~is_val), np.flatnonzero(is_val)
    if len(val) == 0:
        raise SplitError(f"no validation samples at or after {cutoff_hours:.2f} h")
    if len(train) == 0:
        raise SplitError("no training samples")
    return train, val


def make_split(samples, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if spec.kind == "distinct_days":
        return split_distinct_days(samples, spec.ratio, spec.seed)
    return split_afternoon_validation(samples, spec.cutoff_hours, spec.ratio, spec.seed)


def parse_cutoff(text: str) -> float:
    m = re.fullmatch(r"(\d{1,2}):(\d{2})", text.strip())
    if not m or int(m.group(1)) >= 24 or int(m.group(2)) >= 60:
        raise ValueError(f"cutoff must be HH:MM, got {text!r}")
    return int(m.group(1)) + int(m.group(2)) / 60.0
