"""Ridge classification with closed-form leave-one-out alpha selection, and the
end-to-end pipeline that turns a training set into a fitted predictor."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .causal import CausalGraph, DiscoveryConfig, discover_parents, pool_lakes
from .core import CLASSES, REGIONS, Dataset
from .features import (
    DEFAULT_BUDGET,
    Channel,
    TransformParams,
    baseline_spec,
    build_channels_from_spec,
    channel_spec_from_graph,
    fit_transform_params,
    transform_many,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(float(a) for a in np.logspace(-3, 3, 10))


class ClassifyError(ValueError):
    pass


class LeakageError(ClassifyError):
    pass


def class_order(labels) -> tuple[str, ...]:
    """Classes present in ``labels``: canonical ones first, any others sorted."""
    present = set(labels)
    return tuple(c for c in CLASSES if c in present) + tuple(sorted(present - set(CLASSES)))


@dataclass(frozen=True, eq=False)
class RidgeModel:
    weights: np.ndarray  # (n_features, n_classes), in standardized units
    intercepts: np.ndarray  # (n_classes,)
    alpha: float
    mean: np.ndarray
    scale: np.ndarray
    classes: tuple[str, ...]
    loo_errors: tuple[float, ...] = ()
    alphas: tuple[float, ...] = ()

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ClassifyError(f"schema mismatch: model has {self.n_features} features, input has {X.shape[1]}")
        return ((X - self.mean) / self.scale) @ self.weights + self.intercepts

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "chosen_alpha": self.alpha,
            "alphas": list(self.alphas),
            "loo_errors": list(self.loo_errors),
            "intercepts": self.intercepts.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RidgeModel":
        try:
            return cls(
                weights=np.asarray(payload["weights"], dtype=np.float64).reshape(len(payload["mean"]), -1),
                intercepts=np.asarray(payload["intercepts"], dtype=np.float64),
                alpha=float(payload["chosen_alpha"]),
                mean=np.asarray(payload["mean"], dtype=np.float64),
                scale=np.asarray(payload["scale"], dtype=np.float64),
                classes=tuple(payload["classes"]),
                loo_errors=tuple(float(e) for e in payload.get("loo_errors", ())),
                alphas=tuple(float(a) for a in payload.get("alphas", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ClassifyError(f"malformed model: {exc!r}") from None

    def same(self, other: "RidgeModel") -> bool:
        arrays = ("weights", "intercepts", "mean", "scale")
        return (
            self.classes == other.classes
            and self.alpha == other.alpha
            and all(getattr(self, a).tobytes() == getattr(other, a).tobytes() for a in arrays)
        )


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ClassifyError("features must be a 2-D matrix")
    if not np.isfinite(X).all():
        raise ClassifyError("features contain non-finite values")
    return X


def one_vs_rest(labels, classes: Sequence[str]) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels[:, None] == np.asarray(classes)[None, :], 1.0, -1.0)


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - mean) / scale, mean, scale


def _sum_zero_basis(n: int) -> np.ndarray:
    """Orthonormal columns spanning the vectors whose entries sum to zero.

    The Householder reflection that maps e_1 onto the normalized ones vector
    sends e_2..e_n onto the orthogonal complement.
    """
    v = np.full(n, 1.0 / np.sqrt(n))
    v[0] -= 1.0
    return (np.eye(n) - 2.0 * np.outer(v, v) / (v @ v))[:, 1:]


class _Spectrum:
    """Spectral factors of the centred design, shared by every alpha.

    Tall designs use the SVD of ``Xs``.  Wide ones (the usual case, far more
    features than lakes) decompose the n x n Gram matrix restricted to
    sum-zero vectors: centred columns make the ones vector an exact null
    direction, and handling it analytically keeps the hat diagonal accurate
    when the fit nearly interpolates.  Weights are then
    ``Xs^T (Xs Xs^T + alpha I)^-1 Y``.
    """

    def __init__(self, Xs: np.ndarray):
        self.Xs = Xs
        n, p = Xs.shape
        if n > p:
            U, s, Vt = np.linalg.svd(Xs, full_matrices=False)
            self.U, self.s2, self.Vt = U, s * s, Vt
        else:
            Q = _sum_zero_basis(n)
            XQ = Q.T @ Xs
            s2, V = np.linalg.eigh(XQ @ XQ.T)
            self.U, self.s2, self.Vt = Q @ V, np.clip(s2, 0.0, None), None

    def loo_error(self, Y: np.ndarray, alpha: float) -> float:
        n = self.U.shape[0]
        Yc = Y - Y.mean(axis=0)
        shrink = self.s2 / (self.s2 + alpha)
        if self.Vt is None:
            # U spans every sum-zero vector, so 1 - h and Y - fit reduce to
            # sums over alpha / (s2 + alpha) with no cancellation
            damp = alpha / (self.s2 + alpha)
            raw = self.U @ (damp[:, None] * (self.U.T @ Yc))
            slack = (self.U * self.U) @ damp
        else:
            raw = Yc - self.U @ (shrink[:, None] * (self.U.T @ Yc))
            slack = 1.0 - 1.0 / n - (self.U * self.U) @ shrink
        if np.any(slack <= 1e-12):
            return float("inf")  # a point fully determines its own fit
        resid = raw / slack[:, None]
        return float(np.sum(resid * resid))

    def coef(self, Y: np.ndarray, alpha: float) -> np.ndarray:
        UtY = self.U.T @ (Y - Y.mean(axis=0))
        if self.Vt is not None:
            return self.Vt.T @ ((np.sqrt(self.s2) / (self.s2 + alpha))[:, None] * UtY)
        return self.Xs.T @ (self.U @ (UtY / (self.s2 + alpha)[:, None]))


def loo_errors(Xs: np.ndarray, Y: np.ndarray, alphas: Sequence[float]) -> np.ndarray:
    """Summed squared leave-one-out residuals for each alpha.

    ``Xs`` must be column-centred; the intercept is unpenalized, so the hat
    diagonal is ``1/n + sum_k U_ik^2 s_k^2 / (s_k^2 + alpha)`` over the
    centred spectrum.
    """
    spectrum = _Spectrum(Xs)
    return np.array([spectrum.loo_error(Y, a) for a in alphas])


def ridge_solve(Xs: np.ndarray, Y: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Ridge weights and unpenalized intercepts for centred-column ``Xs``."""
    coef = _Spectrum(Xs).coef(Y, alpha)
    return coef, Y.mean(axis=0) - Xs.mean(axis=0) @ coef


def ridge_fit(X, y, alphas: Sequence[float] = DEFAULT_ALPHAS) -> RidgeModel:
    X = _as_matrix(X)
    y = np.asarray(y)
    if len(y) != X.shape[0]:
        raise ClassifyError(f"{X.shape[0]} feature rows but {len(y)} labels")
    if X.shape[0] < 2:
        raise ClassifyError("at least two training rows are required")
    alphas = tuple(float(a) for a in alphas)
    if not alphas or min(alphas) <= 0 or not np.isfinite(alphas).all():
        raise ClassifyError("alpha grid must be nonempty, finite and positive")
    classes = class_order(y.tolist())
    if len(classes) < 2:
        raise ClassifyError(f"training labels contain a single class ({classes[0]})")

    Xs, mean, scale = standardize(X)
    Y = one_vs_rest(y, classes)
    spectrum = _Spectrum(Xs)
    errors = np.array([spectrum.loo_error(Y, a) for a in alphas])
    best = int(np.argmin(errors))
    coef = spectrum.coef(Y, alphas[best])
    intercepts = Y.mean(axis=0)  # standardized columns have zero mean
    return RidgeModel(coef, intercepts, alphas[best], mean, scale, classes, tuple(errors.tolist()), alphas)


def ridge_predict(X, model: RidgeModel) -> np.ndarray:
    scores = model.decision_function(X)
    # argmax keeps the first maximum, and classes are stored in canonical order
    return np.asarray(model.classes, dtype=object)[np.argmax(scores, axis=1)]


def save_model(model: RidgeModel, path, extra: dict | None = None) -> None:
    payload = model.to_dict()
    if extra:
        payload = {**extra, **payload}
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_model(path) -> RidgeModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ClassifyError(f"{path}: invalid JSON at line {exc.lineno}") from None
    return RidgeModel.from_dict(payload)


# -- pipeline ---------------------------------------------------------------

VARIANTS = ("causal", "baseline")
GRAPH_SOURCES = ("global", "per_region")


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = "causal"
    graph_source: str = "global"
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    # lakes per region drawn (seeded) from the training set for discovery; 0 = all
    discovery_lakes: int = 10
    budget: int = DEFAULT_BUDGET
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    include_dummies: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ClassifyError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.graph_source not in GRAPH_SOURCES:
            raise ClassifyError(f"graph source must be one of {GRAPH_SOURCES}, got {self.graph_source!r}")
        if self.discovery_lakes < 0:
            raise ClassifyError("discovery_lakes must be >= 0")
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or min(alphas) <= 0:
            raise ClassifyError("alpha grid must be nonempty and positive")
        object.__setattr__(self, "alphas", alphas)


@dataclass(frozen=True, eq=False)
class PipelineArtifacts:
    variant: str
    graphs: dict[str, CausalGraph]  # "all" or region code -> graph; empty for the baseline
    channel_spec: tuple[Channel, ...]
    params: TransformParams
    model: RidgeModel

    def same(self, other: "PipelineArtifacts") -> bool:
        return (
            self.variant == other.variant
            and self.channel_spec == other.channel_spec
            and {k: g.to_dict() for k, g in self.graphs.items()} == {k: g.to_dict() for k, g in other.graphs.items()}
            and self.params.same(other.params)
            and self.model.same(other.model)
        )


def check_disjoint(train: Dataset, test: Dataset) -> None:
    shared = set(train.keys) & set(test.keys)
    if shared:
        example = sorted(shared)[0]
        raise LeakageError(f"{len(shared)} lake-year unit(s) appear in both train and test, e.g. {example}")


def discovery_sample(ds: Dataset, per_region: int, seed: int) -> Dataset:
    """Seeded draw of up to ``per_region`` lakes from every region (0 keeps all)."""
    if per_region == 0:
        return ds
    rng = np.random.default_rng(seed)
    picked: list[int] = []
    for region in REGIONS:
        idx = [i for i, lake in enumerate(ds.lakes) if lake.region == region]
        if len(idx) > per_region:
            idx = sorted(rng.choice(idx, per_region, replace=False).tolist())
        picked += idx
    return ds.subset(indices=sorted(picked))


def discover_graphs(train: Dataset, cfg: PipelineConfig, jobs: int = 1) -> dict[str, CausalGraph]:
    sample = discovery_sample(train, cfg.discovery_lakes, cfg.seed)
    if cfg.graph_source == "global":
        return {"all": discover_parents(pool_lakes(sample, cfg.discovery), cfg.discovery, jobs=jobs)}
    graphs = {}
    for region in REGIONS:
        part = sample.by_region(region)
        if len(part):
            graphs[region] = discover_parents(pool_lakes(part, cfg.discovery), cfg.discovery, jobs=jobs)
    return graphs


def union_spec(graphs: dict[str, CausalGraph], include_dummies: bool) -> tuple[Channel, ...]:
    links = set()
    for g in graphs.values():
        links.update(channel_spec_from_graph(g, include_dummies=include_dummies))
    return tuple(sorted(links, key=lambda vl: (vl[0].index, vl[1])))


def fit_pipeline(train: Dataset, cfg: PipelineConfig, jobs: int = 1) -> PipelineArtifacts:
    if cfg.variant == "causal":
        graphs = discover_graphs(train, cfg, jobs)
        spec = union_spec(graphs, cfg.include_dummies)
        if not spec:
            raise ClassifyError("discovery found no usable parents; nothing to build channels from")
    else:
        graphs = {}
        spec = baseline_spec()
    cms = [build_channels_from_spec(lake, spec) for lake in train.lakes]
    params = fit_transform_params(cms, seed=cfg.seed, budget=cfg.budget)
    X = transform_many(cms, params, jobs)
    model = ridge_fit(X, train.labels, cfg.alphas)
    log.info("%s pipeline: %d channels, %d features, alpha=%g", cfg.variant, len(spec), X.shape[1], model.alpha)
    return PipelineArtifacts(cfg.variant, graphs, spec, params, model)


def predict(artifacts: PipelineArtifacts, ds: Dataset, jobs: int = 1) -> np.ndarray:
    cms = [build_channels_from_spec(lake, artifacts.channel_spec) for lake in ds.lakes]
    return ridge_predict(transform_many(cms, artifacts.params, jobs), artifacts.model)


def run_pipeline(train: Dataset, test: Dataset, cfg: PipelineConfig, jobs: int = 1) -> tuple[np.ndarray, PipelineArtifacts]:
    check_disjoint(train, test)
    artifacts = fit_pipeline(train, cfg, jobs)
    return predict(artifacts, test, jobs), artifacts


def with_variant(cfg: PipelineConfig, variant: str) -> PipelineConfig:
    return replace(cfg, variant=variant)
