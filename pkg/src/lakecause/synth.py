"""Synthetic labeled lake benchmark with a known generating graph.

Every magnitude below is a synthetic stand-in chosen to produce the four
qualitative trajectory shapes; none is a measured Greenland quantity.

=====================  ==========================================  =========
constant               meaning                                     value
=====================  ==========================================  =========
HV_AR                  hv_anom self-coupling at lags 1..4          .45 .20 .10 .10
HV_WATER               hv_anom coupling to same-day s2_water       -0.018 dB/%
HV_WATER_LOSS          hv_anom response to one-day s2_water loss   0.02 dB/%
HV_NOISE               hv_anom innovation sd                       0.108 dB
HV_DRIFT               per-class hv_anom intercept                 see table
S2_NOISE / LS_NOISE    optical water-fraction noise sd             0.8 / 1.5 %
FILL_SCALE             degree-days to fill a lake to 1 - 1/e       5 K day
REFREEZE_TAU           refreeze decay time constant                30..40 d
BURIED_TAU             burial decay time constant                  4..7 d
SLOW_WIDTH             slow-drainage linear decline                21..42 d
RAPID_PROFILE          share of water lost per drainage day        see table
NUISANCE_FREQS         nuisance sinusoid cycles/yr per pattern     4 7 11 16
=====================  ==========================================  =========
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .causal.graph import CausalGraph, ParentLink
from .core import CLASSES, N_DAYS, OBSERVED_VARIABLES, REGIONS, Dataset, LakeRecord, VariableId

HV_AR = (0.45, 0.20, 0.10, 0.10)
HV_WATER = -0.018
HV_NOISE = 0.108
HV_DRIFT = {"refreeze": 0.0, "buried": -0.9, "slow_drainage": -0.09, "rapid_drainage": 0.0}
HV_DRIFT_JITTER = 0.06
HV_WATER_LOSS = 0.02  # a one-day loss of 90 points gives a 1.8 dB hv spike
S2_NOISE = 0.8
LS_NOISE = 1.5
FILL_SCALE = 5.0
FILL_MAX = (85.0, 98.0)
REFREEZE_TAU = (30.0, 40.0)
REFREEZE_DAY = (235, 260)
BURIED_TAU = (4.0, 7.0)
BURIED_DAY = (200, 235)
SLOW_WIDTH = (21, 42)
SLOW_DAY = (195, 225)
RAPID_DAY = (190, 220)
RAPID_PROFILE = {1: (1.0,), 2: (0.7, 0.3), 3: (0.15, 0.75, 0.10)}
RAPID_TRIGGER = 0.95  # rapid drainage waits until the lake is this full
RAPID_RESIDUAL = 0.02

T2M_MEAN = 265.0
T2M_AMPLITUDE = 13.0
T2M_AR = (0.8, 1.0)  # coefficient, innovation sd
REGION_T2M_OFFSET = {"CW": 0.5, "NE": -1.0, "NO": -1.5, "NW": -0.5, "SE": 0.0, "SW": 1.0}
REGION_LATITUDE = {"CW": 69.0, "NE": 78.0, "NO": 80.0, "NW": 76.0, "SE": 65.0, "SW": 64.0}

# (mean, seasonal amplitude, AR coefficient, innovation sd)
BACKGROUND = {
    VariableId.R2: (80.0, 8.0, 0.7, 3.0),
    VariableId.SP: (75000.0, 0.0, 0.9, 300.0),
    VariableId.SST: (272.0, 3.0, 0.95, 0.3),
}
ZENITH_OFFSET = {VariableId.S2_ZENITH: 8.0, VariableId.LS_ZENITH: 12.0}
ZENITH_NOISE = (0.6, 0.5)

NUISANCE_FREQS = (4.0, 7.0, 11.0, 16.0)
NUISANCE_OFFSETS = (-1.5, -0.5, 0.5, 1.5)
DEFAULT_NUISANCE = {
    "CW": VariableId.R2,
    "NE": VariableId.SP,
    "NO": VariableId.SST,
    "NW": VariableId.R2,
    "SE": VariableId.SP,
    "SW": VariableId.SST,
}

TRUE_PARENTS = tuple((VariableId.HV_ANOM, lag) for lag in range(1, len(HV_AR) + 1)) + (
    (VariableId.S2_WATER, 0),
    (VariableId.S2_WATER, 1),
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_lakes_per_class_per_region: int = 25
    regions: tuple[str, ...] = REGIONS
    seed: int = 0
    year: int = 2019
    spurious_strength: float = 2.0
    nuisance: dict = field(default_factory=lambda: dict(DEFAULT_NUISANCE))
    hv_noise: float = HV_NOISE
    s2_noise: float = S2_NOISE
    ls_noise: float = LS_NOISE

    def __post_init__(self) -> None:
        if self.n_lakes_per_class_per_region < 1:
            raise SynthError("n_lakes_per_class_per_region must be >= 1")
        if not self.regions:
            raise SynthError("at least one region is required")
        for r in self.regions:
            if r not in REGIONS:
                raise SynthError(f"unknown region {r!r}")
        if len(set(self.regions)) != len(self.regions):
            raise SynthError("regions must be distinct")
        if self.spurious_strength < 0:
            raise SynthError("spurious_strength must be >= 0")
        for r, v in self.nuisance.items():
            if r not in REGIONS:
                raise SynthError(f"unknown nuisance region {r!r}")
            if VariableId(v) not in BACKGROUND:
                raise SynthError(f"nuisance variable must be one of {[b.value for b in BACKGROUND]}")
        for name in ("hv_noise", "s2_noise", "ls_noise"):
            if getattr(self, name) < 0:
                raise SynthError(f"{name} must be >= 0")


def nuisance_pattern(region: str, label: str) -> int:
    """Index of the spurious pattern a class carries in ``region``.

    The mapping is a cyclic shift by region index, so two regions sharing a
    nuisance variable never assign the same pattern to a class.
    """
    return (CLASSES.index(label) + REGIONS.index(region)) % len(CLASSES)


def _ar1(rng, n, phi, sd):
    out = np.empty(n)
    out[0] = rng.normal(0.0, sd / np.sqrt(1 - phi * phi))
    eps = rng.normal(0.0, sd, n)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + eps[t]
    return out


def _removal(rng, label: str, fill: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Remaining-water multiplier per day and the drainage days (rapid only)."""
    d = np.arange(1, N_DAYS + 1, dtype=np.float64)
    keep = np.ones(N_DAYS)
    event_days: list[int] = []
    if label == "refreeze":
        e = rng.integers(*REFREEZE_DAY, endpoint=True)
        keep = np.where(d < e, 1.0, np.exp(-(d - e) / rng.uniform(*REFREEZE_TAU)))
    elif label == "buried":
        e = rng.integers(*BURIED_DAY, endpoint=True)
        keep = np.where(d < e, 1.0, np.exp(-(d - e) / rng.uniform(*BURIED_TAU)))
    elif label == "slow_drainage":
        e = rng.integers(*SLOW_DAY, endpoint=True)
        width = rng.integers(*SLOW_WIDTH, endpoint=True)
        keep = np.clip(1.0 - (d - e) / width, 0.0, 1.0)
    else:
        e = int(rng.integers(*RAPID_DAY, endpoint=True))
        full = np.flatnonzero(fill >= RAPID_TRIGGER * fill.max())
        e = min(max(e, int(full[0]) + 1), N_DAYS - 10)
        width = int(rng.integers(1, 3, endpoint=True))
        profile = RAPID_PROFILE[width]
        lost = np.cumsum(profile) * (1.0 - RAPID_RESIDUAL)
        for k, frac in enumerate(lost):
            keep[e - 1 + k] = 1.0 - frac
        keep[e - 1 + width:] = RAPID_RESIDUAL
        event_days = [e + int(np.argmax(profile))]
    return keep, event_days


def generate_lake(rng: np.random.Generator, region: str, label: str, cfg: SynthConfig) -> np.ndarray:
    d = np.arange(1, N_DAYS + 1, dtype=np.float64)
    cols: dict[VariableId, np.ndarray] = {}

    phi, sd = T2M_AR
    t2m = T2M_MEAN + REGION_T2M_OFFSET[region] + T2M_AMPLITUDE * np.sin(2 * np.pi * (d - 105) / N_DAYS)
    t2m = t2m + _ar1(rng, N_DAYS, phi, sd)
    cols[VariableId.T2M] = t2m
    melt = np.maximum(t2m - 273.15, 0.0)
    fill = rng.uniform(*FILL_MAX) * (1.0 - np.exp(-np.cumsum(melt) / FILL_SCALE))

    keep, event_days = _removal(rng, label, fill)
    water = fill * keep
    s2 = np.clip(water + rng.normal(0.0, cfg.s2_noise, N_DAYS), 0.0, 100.0)
    cols[VariableId.S2_WATER] = s2
    cols[VariableId.LS_WATER] = np.clip(water + rng.normal(0.0, cfg.ls_noise, N_DAYS), 0.0, 100.0)

    declination = 23.44 * np.sin(2 * np.pi * (d - 81) / N_DAYS)
    for (var, offset), phi_z in zip(ZENITH_OFFSET.items(), ZENITH_NOISE):
        cols[var] = REGION_LATITUDE[region] - declination + offset + _ar1(rng, N_DAYS, phi_z, 0.3)

    nuisance_var = VariableId(cfg.nuisance[region]) if region in cfg.nuisance else None
    for var, (mean, amp, phi_b, sd_b) in BACKGROUND.items():
        x = mean + amp * np.sin(2 * np.pi * (d - 105) / N_DAYS) + _ar1(rng, N_DAYS, phi_b, sd_b)
        if var == nuisance_var and cfg.spurious_strength > 0:
            k = nuisance_pattern(region, label)
            scale = cfg.spurious_strength * sd_b / np.sqrt(1 - phi_b * phi_b)
            phase = rng.uniform(0.0, 2 * np.pi)
            x = x + scale * (NUISANCE_OFFSETS[k] + np.sin(2 * np.pi * NUISANCE_FREQS[k] * d / N_DAYS + phase))
        cols[var] = x

    drift = HV_DRIFT[label] + rng.normal(0.0, HV_DRIFT_JITTER)
    shocks = rng.normal(0.0, cfg.hv_noise, N_DAYS)
    p = len(HV_AR)
    hv = np.empty(N_DAYS)
    hv[:p] = (drift + HV_WATER * s2[:p]) / (1.0 - sum(HV_AR)) + shocks[:p]
    for t in range(p, N_DAYS):
        loss = s2[t - 1] - s2[t]
        hv[t] = sum(a * hv[t - k - 1] for k, a in enumerate(HV_AR)) + HV_WATER * s2[t] + HV_WATER_LOSS * loss + drift + shocks[t]
    cols[VariableId.HV_ANOM] = hv

    return np.column_stack([cols[v] for v in OBSERVED_VARIABLES])


def truth_graph(alpha: float = 0.01, tau_max: int = 7) -> CausalGraph:
    links = [ParentLink(VariableId.HV_ANOM, lag, 0.0, a) for lag, a in enumerate(HV_AR, start=1)]
    # the water-loss term expands to s2(t) * (HV_WATER - HV_WATER_LOSS) + s2(t-1) * HV_WATER_LOSS
    links.append(ParentLink(VariableId.S2_WATER, 0, 0.0, HV_WATER - HV_WATER_LOSS))
    links.append(ParentLink(VariableId.S2_WATER, 1, 0.0, HV_WATER_LOSS))
    links.append(ParentLink(VariableId.S_DUMMY, 0, 0.0, 0.0))  # per-lake drift
    return CausalGraph(tau_max, alpha, {VariableId.HV_ANOM: tuple(links)}, meta={"source": "synthetic truth"})


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[Dataset, CausalGraph]:
    lakes = []
    index = 0
    for region in cfg.regions:
        for label in CLASSES:
            for k in range(cfg.n_lakes_per_class_per_region):
                rng = np.random.default_rng([cfg.seed, index])
                index += 1
                series = generate_lake(rng, region, label, cfg)
                lakes.append(
                    LakeRecord(
                        lake_id=f"{region}-{label}-{k:03d}",
                        region=region,
                        year=cfg.year,
                        label=label,
                        area_m2=float(np.round(rng.uniform(1e5, 5e6), 1)),
                        elevation_m=float(np.round(rng.uniform(800.0, 1800.0), 1)),
                        series=series,
                    )
                )
    return Dataset(tuple(lakes), provenance=f"synthetic seed={cfg.seed}"), truth_graph()
