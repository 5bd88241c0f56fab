"""Domain data model and dataset file I/O.

A dataset is an ordered collection of lakes, each carrying metadata and a dense
365 x 9 matrix of daily observations in canonical variable order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_DAYS = 365


class VariableId(str, Enum):
    HV_ANOM = "hv_anom"
    S2_WATER = "s2_water"
    LS_WATER = "ls_water"
    S2_ZENITH = "s2_zenith"
    LS_ZENITH = "ls_zenith"
    T2M = "t2m"
    R2 = "r2"
    SP = "sp"
    SST = "sst"
    S_DUMMY = "s_dummy"
    R_DUMMY = "r_dummy"
    T_DUMMY = "t_dummy"

    @property
    def kind(self) -> str:
        return "context" if self in CONTEXT_VARIABLES else "observed"

    @property
    def index(self) -> int:
        """Position in the canonical ordering (observed first, then context)."""
        return _ORDER[self]

    def __str__(self) -> str:
        return self.value


OBSERVED_VARIABLES: tuple[VariableId, ...] = (
    VariableId.HV_ANOM,
    VariableId.S2_WATER,
    VariableId.LS_WATER,
    VariableId.S2_ZENITH,
    VariableId.LS_ZENITH,
    VariableId.T2M,
    VariableId.R2,
    VariableId.SP,
    VariableId.SST,
)
CONTEXT_VARIABLES: tuple[VariableId, ...] = (
    VariableId.S_DUMMY,
    VariableId.R_DUMMY,
    VariableId.T_DUMMY,
)
_ORDER = {v: i for i, v in enumerate(OBSERVED_VARIABLES + CONTEXT_VARIABLES)}
OBSERVED_NAMES = tuple(v.value for v in OBSERVED_VARIABLES)

REGIONS = ("CW", "NE", "NO", "NW", "SE", "SW")
# canonical class order doubles as the prediction tie-break order
CLASSES = ("refreeze", "buried", "slow_drainage", "rapid_drainage")

META_FIELDS = ("lake_id", "region", "year", "label", "area_m2", "elevation_m")
CSV_HEADER = META_FIELDS + ("day",) + OBSERVED_NAMES


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid records."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def variable(name: str | VariableId) -> VariableId:
    try:
        return VariableId(name)
    except ValueError:
        raise DatasetError(f"unknown variable {name!r}") from None


@dataclass(frozen=True, eq=False)
class LakeRecord:
    lake_id: str
    region: str
    year: int
    label: str
    area_m2: float
    elevation_m: float
    series: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.region not in REGIONS:
            raise DatasetError(f"unknown region {self.region!r}", field="region")
        if self.label not in CLASSES:
            raise DatasetError(f"unknown label {self.label!r}", field="label")
        if not (self.area_m2 >= 0):
            raise DatasetError("area_m2 must be nonnegative", field="area_m2")
        series = np.asarray(self.series, dtype=np.float64)
        if series.shape != (N_DAYS, len(OBSERVED_VARIABLES)):
            raise DatasetError(
                f"series must have shape ({N_DAYS}, {len(OBSERVED_VARIABLES)}), got {series.shape}"
            )
        series.setflags(write=False)
        object.__setattr__(self, "series", series)

    @property
    def key(self) -> tuple[str, int]:
        return (self.lake_id, self.year)

    @property
    def is_dense(self) -> bool:
        return bool(np.isfinite(self.series).all())

    def column(self, var: VariableId | str) -> np.ndarray:
        return self.series[:, variable(var).index]

    def meta(self) -> dict:
        return {name: getattr(self, name) for name in META_FIELDS}

    def replace(self, **changes) -> "LakeRecord":
        fields = self.meta() | {"series": self.series}
        fields.update(changes)
        return LakeRecord(**fields)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LakeRecord):
            return NotImplemented
        return self.meta() == other.meta() and np.array_equal(
            self.series, other.series, equal_nan=True
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Dataset:
    lakes: tuple[LakeRecord, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        lakes = tuple(self.lakes)
        object.__setattr__(self, "lakes", lakes)
        seen = set()
        for lake in lakes:
            if lake.key in seen:
                raise DatasetError(f"duplicate lake {lake.lake_id!r} in year {lake.year}")
            seen.add(lake.key)

    def __len__(self) -> int:
        return len(self.lakes)

    def __iter__(self):
        return iter(self.lakes)

    def __getitem__(self, i):
        return self.lakes[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    @property
    def keys(self) -> list[tuple[str, int]]:
        return [lake.key for lake in self.lakes]

    @property
    def labels(self) -> np.ndarray:
        return np.array([lake.label for lake in self.lakes])

    @property
    def regions(self) -> list[str]:
        return [r for r in REGIONS if any(lake.region == r for lake in self.lakes)]

    def subset(self, predicate=None, *, indices: Iterable[int] | None = None, provenance: str | None = None) -> "Dataset":
        if indices is not None:
            lakes = tuple(self.lakes[i] for i in indices)
        else:
            lakes = tuple(lake for lake in self.lakes if predicate(lake))
        return Dataset(lakes, self.provenance if provenance is None else provenance)

    def by_region(self, region: str) -> "Dataset":
        return self.subset(lambda lake: lake.region == region)

    def class_counts(self) -> dict[str, int]:
        return {c: sum(lake.label == c for lake in self.lakes) for c in CLASSES}


def _format_number(x: float) -> str:
    # repr round-trips float64 exactly
    return "" if math.isnan(x) else repr(float(x))


def _parse_float(text: str, *, line: int, name: str, allow_missing: bool) -> float:
    text = text.strip()
    if text == "":
        if allow_missing:
            return math.nan
        raise DatasetError("missing value", line=line, field=name)
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"not a number: {text!r}", line=line, field=name) from None


def _parse_int(text: str, *, line: int, name: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DatasetError(f"not an integer: {text!r}", line=line, field=name) from None


def _load_csv(path: Path) -> list[LakeRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty file", line=1) from None
        header = [h.strip() for h in header]
        for name in header:
            if name not in CSV_HEADER:
                raise DatasetError(f"unknown column {name!r}", line=1, field=name)
        missing = [name for name in CSV_HEADER if name not in header]
        if missing:
            raise DatasetError(f"missing columns {missing}", line=1)
        col = {name: header.index(name) for name in CSV_HEADER}

        lakes: dict[tuple[str, int], dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            lake_id = row[col["lake_id"]].strip()
            if not lake_id:
                raise DatasetError("empty lake_id", line=lineno, field="lake_id")
            year = _parse_int(row[col["year"]], line=lineno, name="year")
            day = _parse_int(row[col["day"]], line=lineno, name="day")
            if day == N_DAYS + 1:
                continue  # leap day dropped
            if not 1 <= day <= N_DAYS:
                raise DatasetError(f"day {day} outside 1..{N_DAYS}", line=lineno, field="day")
            meta = (
                row[col["region"]].strip(),
                row[col["label"]].strip(),
                _parse_float(row[col["area_m2"]], line=lineno, name="area_m2", allow_missing=False),
                _parse_float(row[col["elevation_m"]], line=lineno, name="elevation_m", allow_missing=False),
            )
            entry = lakes.setdefault(
                (lake_id, year),
                {"meta": meta, "line": lineno, "series": np.full((N_DAYS, len(OBSERVED_NAMES)), np.nan), "days": set()},
            )
            if entry["meta"] != meta:
                raise DatasetError(f"metadata of lake {lake_id!r} changes between rows", line=lineno)
            if day in entry["days"]:
                raise DatasetError(f"duplicate day {day} for lake {lake_id!r}", line=lineno, field="day")
            entry["days"].add(day)
            for j, name in enumerate(OBSERVED_NAMES):
                entry["series"][day - 1, j] = _parse_float(row[col[name]], line=lineno, name=name, allow_missing=True)

    records = []
    for (lake_id, year), entry in lakes.items():
        if len(entry["days"]) != N_DAYS:
            absent = sorted(set(range(1, N_DAYS + 1)) - entry["days"])
            raise DatasetError(
                f"missing day(s) {absent[:5]}{'...' if len(absent) > 5 else ''} for lake {lake_id!r}",
                line=entry["line"],
                field="day",
            )
        region, label, area, elevation = entry["meta"]
        try:
            records.append(LakeRecord(lake_id, region, year, label, area, elevation, entry["series"]))
        except DatasetError as exc:
            raise DatasetError(str(exc), line=entry["line"], field=exc.field) from None
    return records


def _load_json(path: Path) -> list[LakeRecord]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(payload, list):
        raise DatasetError("top level must be an array of lake objects")
    records = []
    for i, obj in enumerate(payload):
        where = f"lake[{i}]"
        if not isinstance(obj, dict) or "meta" not in obj or "series" not in obj:
            raise DatasetError(f"{where}: expected object with 'meta' and 'series'")
        meta, series = obj["meta"], obj["series"]
        unknown = set(series) - set(OBSERVED_NAMES)
        if unknown:
            raise DatasetError(f"{where}: unknown variable {sorted(unknown)[0]!r}", field=sorted(unknown)[0])
        matrix = np.full((N_DAYS, len(OBSERVED_NAMES)), np.nan)
        for j, name in enumerate(OBSERVED_NAMES):
            if name not in series:
                raise DatasetError(f"{where}: missing variable", field=name)
            values = series[name]
            if not isinstance(values, list) or len(values) != N_DAYS:
                raise DatasetError(f"{where}: expected {N_DAYS} values", field=name)
            matrix[:, j] = [np.nan if v is None else float(v) for v in values]
        try:
            records.append(
                LakeRecord(
                    lake_id=str(meta["lake_id"]),
                    region=meta["region"],
                    year=int(meta["year"]),
                    label=meta["label"],
                    area_m2=float(meta["area_m2"]),
                    elevation_m=float(meta["elevation_m"]),
                    series=matrix,
                )
            )
        except KeyError as exc:
            raise DatasetError(f"{where}: missing meta field", field=exc.args[0]) from None
        except DatasetError as exc:
            raise DatasetError(f"{where}: {exc}", field=exc.field) from None
    return records


def _infer_format(path: Path, fmt: str | None) -> str:
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "json"):
        raise DatasetError(f"unsupported format {fmt!r} (expected csv or json)")
    return fmt


def load_dataset(path, format: str | None = None) -> Dataset:
    path = Path(path)
    fmt = _infer_format(path, format)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    records = _load_csv(path) if fmt == "csv" else _load_json(path)
    return Dataset(tuple(records), provenance=str(path))


def save_dataset(ds: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                for lake in ds:
                    meta = [lake.lake_id, lake.region, str(lake.year), lake.label,
                            _format_number(lake.area_m2), _format_number(lake.elevation_m)]
                    for d in range(N_DAYS):
                        writer.writerow(meta + [str(d + 1)] + [_format_number(x) for x in lake.series[d]])
        else:
            payload = [
                {
                    "meta": lake.meta(),
                    "series": {
                        name: [None if math.isnan(x) else float(x) for x in lake.series[:, j]]
                        for j, name in enumerate(OBSERVED_NAMES)
                    },
                }
                for lake in ds
            ]
            path.write_text(json.dumps(payload), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc.strerror or exc}") from exc


def stack_series(lakes: Sequence[LakeRecord]) -> np.ndarray:
    """Stack lake matrices into an array of shape (n_lakes, 365, 9)."""
    return np.stack([lake.series for lake in lakes]) if lakes else np.empty((0, N_DAYS, len(OBSERVED_NAMES)))
