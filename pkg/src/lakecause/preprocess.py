"""Per-observation band math and per-lake series cleaning.

Turns raw sparse observations (backscatter means, pixel counts, reanalysis
samples) into the dense daily series consumed by discovery and classification.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import N_DAYS, OBSERVED_NAMES, Dataset, DatasetError, LakeRecord

log = logging.getLogger(__name__)

MAD_FLOOR = 1e-6
SPIKE_NEIGHBORS = 3


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    ndwi_threshold_s2: float = 0.18
    ndwi_threshold_l8: float = 0.19
    cloud_swir_threshold: float = 0.1
    cloud_cirrus_threshold: float = 0.1
    median_window_days: int = 12
    zenith_max_deg: float = 70.0
    spike_mad_factor: float = 5.0
    # "interpolate_first" or "median_first"
    order: str = "interpolate_first"

    def __post_init__(self) -> None:
        for name in ("ndwi_threshold_s2", "ndwi_threshold_l8", "cloud_swir_threshold",
                     "cloud_cirrus_threshold", "zenith_max_deg", "spike_mad_factor"):
            if not getattr(self, name) > 0:
                raise PreprocessError(f"{name} must be positive")
        if self.median_window_days < 1:
            raise PreprocessError("median_window_days must be >= 1")
        if self.order not in ("interpolate_first", "median_first"):
            raise PreprocessError(f"unknown order {self.order!r}")


def hv_anomaly(hv_lake: float, hv_out: float) -> float:
    """Backscatter contrast between a lake and its surrounding buffer (dB)."""
    if not (math.isfinite(hv_lake) and math.isfinite(hv_out)):
        raise PreprocessError("backscatter means must be finite")
    return hv_lake - hv_out


def water_fraction(n_water: int, n_total: int) -> float:
    """Percentage of valid pixels classified as water."""
    if n_total == 0:
        raise PreprocessError("no valid pixels")
    if n_water < 0 or n_water > n_total:
        raise PreprocessError(f"n_water={n_water} outside 0..{n_total}")
    return 100.0 * n_water / n_total


SENSORS = ("sentinel2", "landsat8")


@dataclass(frozen=True)
class PixelGrid:
    bands: Mapping[str, np.ndarray]
    sensor: str

    def __post_init__(self) -> None:
        if self.sensor not in SENSORS:
            raise PreprocessError(f"unknown sensor {self.sensor!r}")
        required = {"blue", "red", "swir"} | ({"cirrus"} if self.sensor == "sentinel2" else set())
        missing = required - set(self.bands)
        if missing:
            raise PreprocessError(f"{self.sensor} grid lacks bands {sorted(missing)}")
        if self.sensor == "landsat8" and "cirrus" in self.bands:
            raise PreprocessError("landsat8 grids carry no cirrus band")
        bands = {k: np.asarray(v, dtype=np.float64) for k, v in self.bands.items()}
        shapes = {b.shape for b in bands.values()}
        if len(shapes) != 1:
            raise PreprocessError(f"band grids differ in shape: {sorted(shapes)}")
        object.__setattr__(self, "bands", bands)

    @property
    def shape(self) -> tuple[int, ...]:
        return next(iter(self.bands.values())).shape


def mask_pixels(grid: PixelGrid, cfg: PreprocessConfig = PreprocessConfig()):
    """Return ``(water_mask, cloud_mask, n_water, n_valid)`` for one image.

    A pixel is cloudy when SWIR (or, for Sentinel-2, cirrus) exceeds its
    threshold.  Water pixels are cloud-free pixels with NDWI above the
    sensor-specific threshold, NDWI = (blue - red) / (blue + red).  Pixels
    with blue + red == 0 have no defined NDWI and are excluded from
    ``n_valid``.
    """
    if grid.shape == () or 0 in grid.shape:
        raise PreprocessError("empty pixel grid")
    b = grid.bands
    cloud = b["swir"] > cfg.cloud_swir_threshold
    if grid.sensor == "sentinel2":
        cloud |= b["cirrus"] > cfg.cloud_cirrus_threshold
    denom = b["blue"] + b["red"]
    defined = denom != 0
    ndwi = np.divide(b["blue"] - b["red"], denom, out=np.zeros_like(denom), where=defined)
    threshold = cfg.ndwi_threshold_s2 if grid.sensor == "sentinel2" else cfg.ndwi_threshold_l8
    valid = defined & ~cloud
    water = valid & (ndwi > threshold)
    return water, cloud, int(water.sum()), int(valid.sum())


def interpolate_daily(sparse: Sequence[tuple[int, float]]) -> np.ndarray:
    """Linear interpolation onto days 1..365, flat beyond the observed span."""
    if len(sparse) == 0:
        raise PreprocessError("no observations")
    days = np.array([d for d, _ in sparse], dtype=np.float64)
    values = np.array([v for _, v in sparse], dtype=np.float64)
    if np.any(np.diff(days) <= 0):
        raise PreprocessError("observation days must be strictly increasing")
    if days[0] < 1 or days[-1] > N_DAYS:
        raise PreprocessError(f"observation days must lie in 1..{N_DAYS}")
    if not np.isfinite(values).all():
        raise PreprocessError("observation values must be finite")
    return np.interp(np.arange(1, N_DAYS + 1, dtype=np.float64), days, values)


def rolling_median(series: np.ndarray, window: int) -> np.ndarray:
    """Centered rolling median that shrinks at the series edges.

    Position t covers ``[t - w//2, t + ceil(w/2) - 1]``; NaN entries are
    ignored, so windows holding only NaN yield NaN.
    """
    if window < 1:
        raise PreprocessError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    before, after = window // 2, window - window // 2 - 1
    padded = np.concatenate([np.full(before, np.nan), x, np.full(after, np.nan)])
    windows = sliding_window_view(padded, window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        return np.nanmedian(windows, axis=1)


def filter_outliers(series: Sequence[tuple[int, float, float]], cfg: PreprocessConfig = PreprocessConfig()):
    """Drop poorly illuminated observations and isolated spikes.

    Observations with zenith above ``cfg.zenith_max_deg`` go first (a NaN
    zenith means "not applicable" and passes).  Each survivor is then
    compared with the median of up to three retained neighbours on either
    side and dropped when it departs by more than ``spike_mad_factor`` times
    their MAD (floored at 1e-6).  Fewer than three neighbours: no spike test.
    """
    kept = [(d, v, z) for d, v, z in series if not (z is not None and z > cfg.zenith_max_deg)]
    if len(kept) < SPIKE_NEIGHBORS + 1:
        return kept
    values = np.array([v for _, v, _ in kept], dtype=np.float64)
    out = []
    for i, obs in enumerate(kept):
        lo, hi = max(0, i - SPIKE_NEIGHBORS), min(len(kept), i + SPIKE_NEIGHBORS + 1)
        neighbors = np.concatenate([values[lo:i], values[i + 1:hi]])
        med = np.median(neighbors)
        mad = max(np.median(np.abs(neighbors - med)), MAD_FLOOR)
        if abs(values[i] - med) <= cfg.spike_mad_factor * mad:
            out.append(obs)
    return out


def densify(observations: Sequence[tuple[int, float, float]], cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Filter, interpolate and smooth one variable of one lake."""
    obs = sorted(observations, key=lambda o: o[0])
    obs = filter_outliers(obs, cfg)
    if not obs:
        raise PreprocessError("no observations")
    if cfg.order == "interpolate_first":
        dense = interpolate_daily([(d, v) for d, v, _ in obs])
        return rolling_median(dense, cfg.median_window_days)
    sparse = np.full(N_DAYS, np.nan)
    for d, v, _ in obs:
        sparse[d - 1] = v
    smoothed = rolling_median(sparse, cfg.median_window_days)
    return interpolate_daily([(d, smoothed[d - 1]) for d, _, _ in obs])


def fill_missing(lake: LakeRecord, cfg: PreprocessConfig = PreprocessConfig()) -> LakeRecord:
    """Densify a lake whose matrix carries NaN for unobserved days."""
    columns = []
    for j in range(len(OBSERVED_NAMES)):
        col = lake.series[:, j]
        days = np.flatnonzero(np.isfinite(col)) + 1
        columns.append(densify([(int(d), float(col[d - 1]), None) for d in days], cfg))
    return lake.replace(series=np.column_stack(columns))


RAW_HEADER = ("lake_id", "day", "variable", "value", "zenith_deg")


def read_raw_observations(path) -> dict[str, dict[str, list[tuple[int, float, float | None]]]]:
    """Parse a sparse observation CSV into ``{lake_id: {variable: [(day, value, zenith)]}}``."""
    out: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if tuple(header) != RAW_HEADER:
            raise DatasetError(f"expected header {','.join(RAW_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RAW_HEADER):
                raise DatasetError(f"expected {len(RAW_HEADER)} fields", line=lineno)
            lake_id, day, var, value, zenith = (c.strip() for c in row)
            if var not in OBSERVED_NAMES:
                raise DatasetError(f"unknown variable {var!r}", line=lineno, field="variable")
            try:
                d = int(day)
            except ValueError:
                raise DatasetError(f"not an integer: {day!r}", line=lineno, field="day") from None
            if d == N_DAYS + 1:
                continue
            if not 1 <= d <= N_DAYS:
                raise DatasetError(f"day {d} outside 1..{N_DAYS}", line=lineno, field="day")
            try:
                v = float(value)
                z = float(zenith) if zenith else None
            except ValueError:
                raise DatasetError("not a number", line=lineno, field="value/zenith_deg") from None
            if value == "" or not math.isfinite(v):
                continue
            out[lake_id][var].append((d, v, z))
    return out


def preprocess_lakes(
    raw: Mapping[str, Mapping[str, Sequence[tuple[int, float, float | None]]]],
    meta: Mapping[str, Mapping],
    cfg: PreprocessConfig = PreprocessConfig(),
) -> tuple[Dataset, list[str]]:
    """Build a dense dataset; lakes with an empty variable are dropped.

    Returns the dataset and the ids of dropped lakes.
    """
    lakes, dropped = [], []
    for lake_id in sorted(raw):
        if lake_id not in meta:
            raise DatasetError(f"no metadata for lake {lake_id!r}")
        columns = []
        for name in OBSERVED_NAMES:
            try:
                columns.append(densify(raw[lake_id].get(name, []), cfg))
            except PreprocessError:
                log.warning("dropping lake %s: no usable %s observations", lake_id, name)
                dropped.append(lake_id)
                break
        else:
            m = meta[lake_id]
            lakes.append(
                LakeRecord(
                    lake_id=lake_id,
                    region=m["region"],
                    year=int(m["year"]),
                    label=m["label"],
                    area_m2=float(m["area_m2"]),
                    elevation_m=float(m["elevation_m"]),
                    series=np.column_stack(columns),
                )
            )
    return Dataset(tuple(lakes), provenance="preprocess"), dropped


def read_lake_metadata(path) -> dict[str, dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    required = {"lake_id", "region", "year", "label", "area_m2", "elevation_m"}
    if rows and not required <= set(rows[0]):
        raise DatasetError(f"metadata file needs columns {sorted(required)}", line=1)
    return {r["lake_id"].strip(): r for r in rows}
