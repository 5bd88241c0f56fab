"""Lag-shifted channel construction and a deterministic MiniROCKET transform.

Each channel is transformed on its own with the 84 fixed length-9 kernels
(six taps weighted -1, three weighted 2) at a set of dilations derived from
the series length.  Every (kernel, dilation) pair owns a small sorted set of
biases, fitted as quantiles of training convolutions, and each bias yields one
PPV feature: the share of output positions strictly above the bias.

Channels are centred on their lower median before convolving.  Zero "same"
padding then behaves like median padding, which keeps every output position
(edges included) invariant to a constant offset of the input.  The lower
median is an element of the series, so whenever ``x + c`` is exactly
representable the centred values, and hence the features, match bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .causal.graph import CausalGraph
from .core import N_DAYS, OBSERVED_VARIABLES, REGIONS, LakeRecord, VariableId, variable

KERNEL_LENGTH = 9
KERNEL_INDICES = np.array(list(combinations(range(KERNEL_LENGTH), 3)), dtype=np.int64)
N_KERNELS = len(KERNEL_INDICES)  # 84
DEFAULT_BUDGET = 9_996
MAX_DILATIONS = 32


class FeatureError(ValueError):
    pass


def kernel_weights(k: int) -> np.ndarray:
    w = np.full(KERNEL_LENGTH, -1.0)
    w[KERNEL_INDICES[k]] = 2.0
    return w


# -- channels --------------------------------------------------------------

Channel = tuple[VariableId, int]


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    channels: np.ndarray  # (C, L)
    channel_spec: tuple[Channel, ...]
    key: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.channels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(self.channel_spec):
            raise FeatureError(f"channels shape {arr.shape} does not match {len(self.channel_spec)} channel specs")
        object.__setattr__(self, "channels", arr)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def length(self) -> int:
        return self.channels.shape[1]


def channel_spec_from_graph(
    graph: CausalGraph, target: VariableId | str = VariableId.HV_ANOM, include_dummies: bool = False
) -> tuple[Channel, ...]:
    spec = []
    for var, lag in graph.parents(target):
        if var.kind == "context" and (not include_dummies or var is VariableId.S_DUMMY):
            continue
        spec.append((var, lag))
    return tuple(spec)


def baseline_spec() -> tuple[Channel, ...]:
    return tuple((v, 0) for v in OBSERVED_VARIABLES)


def lagged(series: np.ndarray, lag: int) -> np.ndarray:
    """``out[t] = series[t - lag]``, with the first ``lag`` days backfilled."""
    series = np.asarray(series, dtype=np.float64)
    if lag == 0:
        return series.copy()
    if lag >= len(series):
        raise FeatureError(f"lag {lag} is not shorter than the series")
    return np.concatenate([np.full(lag, series[0]), series[:-lag]])


def build_channels_from_spec(lake: LakeRecord, spec: Sequence[Channel]) -> ChannelMatrix:
    rows = []
    day = np.arange(1, N_DAYS + 1)
    for var, lag in spec:
        var = variable(var)
        if var is VariableId.S_DUMMY:
            raise FeatureError("s_dummy cannot become a feature channel")
        if var is VariableId.R_DUMMY:
            rows.append(np.full(N_DAYS, float(REGIONS.index(lake.region))))
        elif var is VariableId.T_DUMMY:
            rows.append(np.sin(2 * np.pi * day / N_DAYS))
        else:
            rows.append(lagged(lake.column(var), lag))
    if not rows:
        return ChannelMatrix(np.empty((0, N_DAYS)), tuple(spec), lake.key)
    return ChannelMatrix(np.vstack(rows), tuple((variable(v), int(l)) for v, l in spec), lake.key)


def build_channels(lake: LakeRecord, graph: CausalGraph, include_dummies: bool = False) -> ChannelMatrix:
    try:
        spec = channel_spec_from_graph(graph, include_dummies=include_dummies)
    except ValueError as exc:
        raise FeatureError(f"graph references an unknown variable: {exc}") from None
    return build_channels_from_spec(lake, spec)


# -- transform parameters --------------------------------------------------


def fit_dilations(length: int, budget: int = DEFAULT_BUDGET) -> tuple[np.ndarray, np.ndarray]:
    """Dilations and the number of biases attached to each of them.

    ``budget // 84`` features per kernel are spread over up to 32 log-spaced
    dilations; repeated dilations after flooring merge and carry their
    multiplicity as extra biases.
    """
    per_kernel = budget // N_KERNELS
    if per_kernel < 1:
        raise FeatureError(f"feature budget {budget} is below one feature per kernel")
    if length < KERNEL_LENGTH:
        raise FeatureError(f"series length {length} is shorter than the kernel")
    n_dil = min(per_kernel, MAX_DILATIONS)
    max_exponent = math.log2((length - 1) / (KERNEL_LENGTH - 1))
    raw = np.floor(np.logspace(0, max_exponent, n_dil, base=2)).astype(np.int64)
    dilations, counts = np.unique(raw, return_counts=True)
    n_biases = (counts * (per_kernel / n_dil)).astype(np.int64)
    remainder = per_kernel - int(n_biases.sum())
    i = 0
    while remainder > 0:
        n_biases[i] += 1
        remainder -= 1
        i = (i + 1) % len(n_biases)
    return dilations, n_biases


def quantile_positions(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


@dataclass(frozen=True, eq=False)
class TransformParams:
    length: int
    dilations: np.ndarray  # (D,)
    n_biases: np.ndarray  # (D,) biases per (kernel, dilation) at each dilation
    biases: np.ndarray  # (C, 84, sum(n_biases)), grouped by dilation
    channel_spec: tuple[Channel, ...]
    seed: int
    budget: int = DEFAULT_BUDGET

    @property
    def n_channels(self) -> int:
        return self.biases.shape[0]

    @property
    def features_per_channel(self) -> int:
        return N_KERNELS * int(self.n_biases.sum())

    @property
    def n_features(self) -> int:
        return self.n_channels * self.features_per_channel

    def bias_block(self, channel: int, kernel: int, dilation_index: int) -> np.ndarray:
        start = int(self.n_biases[:dilation_index].sum())
        return self.biases[channel, kernel, start : start + int(self.n_biases[dilation_index])]

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "seed": self.seed,
            "budget": self.budget,
            "features_per_channel": self.features_per_channel,
            "channel_spec": [[v.value, lag] for v, lag in self.channel_spec],
            "dilations": [int(d) for d in self.dilations],
            "n_biases": [int(b) for b in self.n_biases],
            # kernels are implicit: index k is the k-th lexicographic 3-subset of 0..8
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TransformParams":
        try:
            spec = tuple((variable(v), int(lag)) for v, lag in payload["channel_spec"])
            biases = np.asarray(payload["biases"], dtype=np.float64).reshape(len(spec), N_KERNELS, -1)
            params = cls(
                length=int(payload["length"]),
                dilations=np.asarray(payload["dilations"], dtype=np.int64),
                n_biases=np.asarray(payload["n_biases"], dtype=np.int64),
                biases=biases,
                channel_spec=spec,
                seed=int(payload["seed"]),
                budget=int(payload.get("budget", DEFAULT_BUDGET)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FeatureError(f"malformed transform parameters: {exc!r}") from None
        if params.biases.shape[2] != int(params.n_biases.sum()) or len(params.dilations) != len(params.n_biases):
            raise FeatureError("bias table does not match the dilation layout")
        return params

    def same(self, other: "TransformParams") -> bool:
        return (
            self.length == other.length
            and self.channel_spec == other.channel_spec
            and np.array_equal(self.dilations, other.dilations)
            and np.array_equal(self.n_biases, other.n_biases)
            and self.biases.tobytes() == other.biases.tobytes()
        )


# -- numeric kernels -------------------------------------------------------


@njit(cache=True, nogil=True)
def _centre(x):
    return x - np.sort(x)[(x.shape[0] - 1) // 2]


@njit(cache=True, nogil=True)
def _taps(xc, dilation):
    """Zero-padded shifted copies: taps[k, t] = xc[t + (k - 4) * dilation]."""
    L = xc.shape[0]
    taps = np.zeros((9, L))
    for k in range(9):
        shift = (k - 4) * dilation
        for t in range(L):
            s = t + shift
            if 0 <= s < L:
                taps[k, t] = xc[s]
    return taps


@njit(cache=True, nogil=True)
def _convolve_taps(taps, total, idx, out):
    # weights -1 everywhere plus 3 on the chosen taps
    a, b, c = idx[0], idx[1], idx[2]
    for t in range(out.shape[0]):
        out[t] = -total[t] + 3.0 * (taps[a, t] + taps[b, t] + taps[c, t])


@njit(cache=True, nogil=True)
def _convolve(x, kernel, dilation, kernel_indices):
    xc = _centre(x)
    taps = _taps(xc, dilation)
    total = taps.sum(axis=0)
    out = np.empty(x.shape[0])
    _convolve_taps(taps, total, kernel_indices[kernel], out)
    return out


@njit(cache=True, nogil=True)
def _quantiles_sorted(values, positions, out):
    # linear interpolation between order statistics (numpy's default rule)
    n = values.shape[0]
    for i in range(positions.shape[0]):
        pos = positions[i] * (n - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, n - 1)
        frac = pos - lo
        out[i] = values[lo] + (values[hi] - values[lo]) * frac


@njit(cache=True, nogil=True)
def _fit_channel(X, picks, dilations, n_biases, kernel_indices, out):
    """Biases for one channel; ``picks[d, k]`` is the training row to sample."""
    L = X.shape[1]
    conv = np.empty(L)
    offset = 0
    for di in range(dilations.shape[0]):
        nb = n_biases[di]
        positions = np.arange(1, nb + 1) / (nb + 1.0)
        for k in range(kernel_indices.shape[0]):
            xc = _centre(X[picks[di, k]])
            taps = _taps(xc, dilations[di])
            total = taps.sum(axis=0)
            _convolve_taps(taps, total, kernel_indices[k], conv)
            _quantiles_sorted(np.sort(conv), positions, out[k, offset : offset + nb])
        offset += nb


@njit(cache=True, nogil=True)
def _transform_rows(X, dilations, n_biases, biases, kernel_indices, out):
    """X: (n, C, L); biases: (C, 84, B); out: (n, C * 84 * B)."""
    n, C, L = X.shape
    B = biases.shape[2]
    n_kernels = kernel_indices.shape[0]
    per_channel = n_kernels * B
    conv = np.empty(L)
    for i in range(n):
        for c in range(C):
            xc = _centre(X[i, c])
            offset = 0
            for di in range(dilations.shape[0]):
                nb = n_biases[di]
                taps = _taps(xc, dilations[di])
                total = taps.sum(axis=0)
                for k in range(n_kernels):
                    _convolve_taps(taps, total, kernel_indices[k], conv)
                    base = c * per_channel + k * B + offset
                    for j in range(nb):
                        bias = biases[c, k, offset + j]
                        count = 0
                        for t in range(L):
                            if conv[t] > bias:
                                count += 1
                        out[i, base + j] = count / L
                offset += nb


def convolve(x: np.ndarray, kernel: int, dilation: int) -> np.ndarray:
    """Convolution output of one kernel on a median-centred, zero-padded series."""
    return _convolve(np.ascontiguousarray(x, dtype=np.float64), int(kernel), int(dilation), KERNEL_INDICES)


# -- public operations -----------------------------------------------------


def _stack(cms: Sequence[ChannelMatrix]) -> np.ndarray:
    if not cms:
        raise FeatureError("empty training set")
    spec = cms[0].channel_spec
    shape = cms[0].channels.shape
    for cm in cms:
        if cm.channel_spec != spec or cm.channels.shape != shape:
            raise FeatureError("channel matrices do not share one schema")
    if shape[0] == 0:
        raise FeatureError("channel matrices have no channels")
    X = np.stack([cm.channels for cm in cms])
    if not np.isfinite(X).all():
        raise FeatureError("channels contain non-finite values")
    return np.ascontiguousarray(X)


def fit_transform_params(
    training: Sequence[ChannelMatrix], seed: int = 0, budget: int = DEFAULT_BUDGET
) -> TransformParams:
    X = _stack(training)
    n, C, L = X.shape
    dilations, n_biases = fit_dilations(L, budget)
    rng = np.random.default_rng(seed)
    biases = np.empty((C, N_KERNELS, int(n_biases.sum())))
    for c in range(C):
        picks = rng.integers(0, n, size=(len(dilations), N_KERNELS))
        _fit_channel(np.ascontiguousarray(X[:, c, :]), picks, dilations, n_biases, KERNEL_INDICES, biases[c])
    return TransformParams(L, dilations, n_biases, biases, training[0].channel_spec, int(seed), int(budget))


def _check_schema(X: np.ndarray, spec, params: TransformParams) -> None:
    if spec != params.channel_spec or X.shape[1] != params.n_channels or X.shape[2] != params.length:
        raise FeatureError(
            f"schema mismatch: got {X.shape[1]} channels of length {X.shape[2]}, "
            f"transform expects {params.n_channels} of length {params.length}"
        )


def transform_many(cms: Sequence[ChannelMatrix], params: TransformParams, jobs: int = 1) -> np.ndarray:
    """Feature rows for several lakes; identical output for any ``jobs``."""
    X = _stack(cms)
    _check_schema(X, cms[0].channel_spec, params)
    out = np.empty((X.shape[0], params.n_features))
    args = (params.dilations, params.n_biases, params.biases, KERNEL_INDICES)
    jobs = max(1, min(int(jobs), X.shape[0]))
    if jobs == 1:
        _transform_rows(X, *args, out)
        return out
    # rows are independent, so any partition gives the same bytes
    bounds = np.linspace(0, X.shape[0], jobs + 1).astype(int)
    with ThreadPoolExecutor(jobs) as pool:
        list(pool.map(lambda ab: _transform_rows(X[ab[0] : ab[1]], *args, out[ab[0] : ab[1]]), zip(bounds[:-1], bounds[1:])))
    return out


def transform(cm: ChannelMatrix, params: TransformParams) -> np.ndarray:
    return transform_many([cm], params)[0]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    keys: tuple[tuple[str, int], ...]
    values: np.ndarray

    def save_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lake_id"] + [f"f{j}" for j in range(self.values.shape[1])])
            for (lake_id, _), row in zip(self.keys, self.values):
                w.writerow([lake_id] + [repr(float(v)) for v in row])


def save_params(params: TransformParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict()) + "\n", encoding="utf-8")


def load_params(path) -> TransformParams:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FeatureError(f"{path}: invalid JSON at line {exc.lineno}") from None
    return TransformParams.from_dict(payload)
