"""Evaluation protocols (pooled, within-region, region held out) and metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classify import PipelineConfig, check_disjoint, class_order, run_pipeline
from .core import REGIONS, Dataset

PROTOCOLS = ("global", "region_id", "region_ood")


class EvalError(ValueError):
    pass


# -- splitting and metrics ----------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(ds: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Per class, ``round(ratio * n_c)`` lakes go to train and the rest to test.

    Both sides keep the dataset's original order.  A class always leaves at
    least one lake on each side.
    """
    if not 0.0 < ratio < 1.0:
        raise EvalError(f"split ratio must lie strictly between 0 and 1, got {ratio}")
    labels = ds.labels
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    for c in class_order(labels.tolist()):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise EvalError(f"class {c!r} has {len(idx)} lake(s); a split needs at least 2")
        n_train = min(max(_round_half_up(ratio * len(idx)), 1), len(idx) - 1)
        train_idx += rng.permutation(idx)[:n_train].tolist()
    chosen = set(train_idx)
    train = ds.subset(indices=sorted(chosen))
    test = ds.subset(indices=[i for i in range(len(ds)) if i not in chosen])
    return train, test


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": dict(self.support),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(float(d["accuracy"]), float(d["precision"]), float(d["recall"]), float(d["f1"]), dict(d.get("support", {})))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics(preds: Sequence, labels: Sequence) -> Metrics:
    """Accuracy plus macro precision/recall/F1 over every class seen in either input."""
    preds = np.asarray(preds, dtype=object)
    labels = np.asarray(labels, dtype=object)
    if len(preds) != len(labels):
        raise EvalError(f"{len(preds)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        raise EvalError("cannot score an empty prediction set")
    classes = class_order(labels.tolist() + preds.tolist())
    P, R, F = [], [], []
    for c in classes:
        tp = int(np.sum((preds == c) & (labels == c)))
        p = _ratio(tp, int(np.sum(preds == c)))
        r = _ratio(tp, int(np.sum(labels == c)))
        P.append(p)
        R.append(r)
        F.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    support = {c: int(np.sum(labels == c)) for c in classes}
    return Metrics(float(np.mean(preds == labels)), float(np.mean(P)), float(np.mean(R)), float(np.mean(F)), support)


def accuracy_gain(causal: float, baseline: float) -> float:
    """Causal minus baseline accuracy, in percentage points."""
    return 100.0 * (causal - baseline)


# -- protocol runs ------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    seed: int
    causal: Metrics
    baseline: Metrics
    n_train: int
    n_test: int
    train_regions: tuple[str, ...]
    test_regions: tuple[str, ...]
    graph: str = ""

    @property
    def gain(self) -> float:
        return accuracy_gain(self.causal.accuracy, self.baseline.accuracy)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "train_regions": list(self.train_regions),
            "test_regions": list(self.test_regions),
            "graph": self.graph,
            "causal": self.causal.to_dict(),
            "baseline": self.baseline.to_dict(),
            "gain": self.gain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(
            int(d["seed"]),
            Metrics.from_dict(d["causal"]),
            Metrics.from_dict(d["baseline"]),
            int(d["n_train"]),
            int(d["n_test"]),
            tuple(d["train_regions"]),
            tuple(d["test_regions"]),
            d.get("graph", ""),
        )


def _summary(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}


@dataclass(frozen=True)
class ReportRow:
    name: str  # region code, or "ALL" for the pooled protocol
    runs: tuple[RunResult, ...]

    def summary(self, variant: str, metric: str = "accuracy") -> dict:
        return _summary([getattr(getattr(r, variant), metric) for r in self.runs])

    @property
    def gain(self) -> dict:
        return _summary([r.gain for r in self.runs])

    def to_dict(self) -> dict:
        out = {"region": self.name}
        for variant in ("causal", "baseline"):
            out[variant] = {m: self.summary(variant, m) for m in ("accuracy", "precision", "recall", "f1")}
        out["gain"] = self.gain
        out["runs"] = [r.to_dict() for r in self.runs]
        return out


@dataclass(frozen=True)
class EvalReport:
    protocol: str
    rows: tuple[ReportRow, ...]
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise EvalError(f"unknown protocol {self.protocol!r}")
        order = {name: i for i, name in enumerate(("ALL",) + REGIONS)}
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: order.get(r.name, len(order)))))

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "config": self.config, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        try:
            rows = tuple(ReportRow(r["region"], tuple(RunResult.from_dict(x) for x in r["runs"])) for r in d["rows"])
            return cls(d["protocol"], rows, dict(d.get("config", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise EvalError(f"malformed report: {exc!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def table(self) -> str:
        return render_table(self)


def load_report(path) -> EvalReport:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EvalError(f"{path}: invalid JSON at line {exc.lineno}") from None
    return EvalReport.from_dict(payload)


def _pct(s: dict, repeats: int) -> str:
    if repeats > 1:
        return f"{100 * s['mean']:.2f} ± {100 * s['std']:.2f}%"
    return f"{100 * s['mean']:.2f}%"


def _points(s: dict, repeats: int) -> str:
    text = f"{s['mean']:+.2f}"
    return f"{text} ± {s['std']:.2f}" if repeats > 1 else text


def render_table(report: EvalReport) -> str:
    """Aligned plain-text table, one row per region in canonical order."""
    metric_cols = ("accuracy", "precision", "recall", "f1") if report.protocol == "global" else ("accuracy",)
    header = ["Region"]
    for variant in ("Causal", "Baseline"):
        header += [f"{variant} {m}" if len(metric_cols) > 1 else f"{variant} Model" for m in metric_cols]
    header.append("Accuracy Gain")
    lines = [header]
    for row in report.rows:
        n = len(row.runs)
        cells = [row.name]
        for variant in ("causal", "baseline"):
            cells += [_pct(row.summary(variant, m), n) for m in metric_cols]
        cells.append(_points(row.gain, n))
        lines.append(cells)
    widths = [max(len(line[j]) for line in lines) for j in range(len(header))]
    out = []
    for k, line in enumerate(lines):
        out.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(line, widths))).rstrip())
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)


@dataclass(frozen=True)
class EvalConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    ratio: float = 0.8
    repeats: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio < 1.0:
            raise EvalError(f"split ratio must lie strictly between 0 and 1, got {self.ratio}")
        if self.repeats < 1:
            raise EvalError("repeats must be >= 1")


def compare_variants(train: Dataset, test: Dataset, pipeline: PipelineConfig, jobs: int = 1) -> RunResult:
    check_disjoint(train, test)
    results = {}
    graph = ""
    for variant in ("causal", "baseline"):
        preds, artifacts = run_pipeline(train, test, replace(pipeline, variant=variant), jobs)
        results[variant] = metrics(preds, test.labels)
        if variant == "causal":
            graph = " | ".join(f"{k}: {g.describe()}" for k, g in artifacts.graphs.items())
    return RunResult(
        pipeline.seed,
        results["causal"],
        results["baseline"],
        len(train),
        len(test),
        tuple(train.regions),
        tuple(test.regions),
        graph,
    )


def _seeds(cfg: EvalConfig) -> list[int]:
    return [cfg.pipeline.seed + r for r in range(cfg.repeats)]


def _config_dict(cfg: EvalConfig, **extra) -> dict:
    p = cfg.pipeline
    return {
        "ratio": cfg.ratio,
        "repeats": cfg.repeats,
        "seed": p.seed,
        "graph_source": p.graph_source,
        "discovery_lakes": p.discovery_lakes,
        "tau_max": p.discovery.tau_max,
        "alpha": p.discovery.alpha,
        "budget": p.budget,
        "include_dummies": p.include_dummies,
        **extra,
    }


def global_eval(ds: Dataset, cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> EvalReport:
    runs = []
    for seed in _seeds(cfg):
        train, test = stratified_split(ds, cfg.ratio, seed)
        runs.append(compare_variants(train, test, replace(cfg.pipeline, seed=seed), jobs))
    return EvalReport("global", (ReportRow("ALL", tuple(runs)),), _config_dict(cfg))


def _region_id_row(ds: Dataset, region: str, cfg: EvalConfig, jobs: int) -> ReportRow:
    part = ds.by_region(region)
    if not len(part):
        raise EvalError(f"region {region!r} has no lakes")
    runs = []
    for seed in _seeds(cfg):
        train, test = stratified_split(part, cfg.ratio, seed)
        runs.append(compare_variants(train, test, replace(cfg.pipeline, seed=seed), jobs))
    return ReportRow(region, tuple(runs))


def region_id_eval(ds: Dataset, region: str | None = None, cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> EvalReport:
    """Within-region 80/20 evaluation; ``region=None`` runs every region present."""
    regions = [region] if region else ds.regions
    for r in regions:
        if r not in REGIONS:
            raise EvalError(f"unknown region {r!r}")
    rows = tuple(_region_id_row(ds, r, cfg, jobs) for r in regions)
    return EvalReport("region_id", rows, _config_dict(cfg))


def ood_split(ds: Dataset, train_region: str) -> tuple[Dataset, Dataset]:
    if train_region not in REGIONS:
        raise EvalError(f"unknown region {train_region!r}")
    train = ds.by_region(train_region)
    test = ds.subset(lambda lake: lake.region != train_region)
    if not len(train):
        raise EvalError(f"region {train_region!r} has no lakes")
    if not len(test):
        raise EvalError(f"no lakes outside {train_region!r} to test on")
    if train_region in test.regions:
        raise EvalError("held-out pool contains the training region")
    return train, test


def _region_ood_row(ds: Dataset, train_region: str, cfg: EvalConfig, jobs: int) -> ReportRow:
    train, test = ood_split(ds, train_region)
    runs = [compare_variants(train, test, replace(cfg.pipeline, seed=seed), jobs) for seed in _seeds(cfg)]
    return ReportRow(train_region, tuple(runs))


def region_ood_eval(ds: Dataset, train_region: str | None = None, cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> EvalReport:
    """Train on one region, test on the pooled rest; ``None`` holds out each region in turn."""
    regions = [train_region] if train_region else ds.regions
    rows = tuple(_region_ood_row(ds, r, cfg, jobs) for r in regions)
    return EvalReport("region_ood", rows, _config_dict(cfg))


def evaluate(ds: Dataset, protocol: str, cfg: EvalConfig = EvalConfig(), region: str | None = None, jobs: int = 1) -> EvalReport:
    protocol = protocol.replace("-", "_")
    if protocol == "global":
        return global_eval(ds, cfg, jobs)
    if protocol == "region_id":
        return region_id_eval(ds, region, cfg, jobs)
    if protocol == "region_ood":
        return region_ood_eval(ds, region, cfg, jobs)
    raise EvalError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
