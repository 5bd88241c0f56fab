"""Partial-correlation conditional independence test.

x and y are each regressed on the conditioning set by least squares (with an
intercept, or with per-lake intercepts when lake identity is conditioned on);
the Pearson correlation of the residuals is tested with a Student-t statistic
on ``n - |Z| - 2`` degrees of freedom.  A multi-column x (a context block)
falls back to the partial F-test, which coincides with the t-test for one
column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg, stats

from ..core import VariableId
from .panel import DiscoveryError, Node, PooledPanel

RANK_TOL = 1e-9
DEGENERATE = 1e-20


class InsufficientSamplesError(DiscoveryError):
    pass


@dataclass(frozen=True)
class CIResult:
    statistic: float
    p_value: float
    strength: float
    dof: int
    n: int
    cond_rank: int
    dropped: tuple[str, ...] = ()


class Residualizer:
    """Projects vectors onto the orthogonal complement of a conditioning design.

    ``groups`` (contiguous, equal-sized) replaces the single intercept by one
    intercept per group, which is how a one-hot identity block is absorbed.
    """

    def __init__(self, columns: Sequence[np.ndarray], names: Sequence[str] = (), groups: int = 1, n: int | None = None):
        if n is None:
            if not columns:
                raise ValueError("n is required when no columns are given")
            n = len(columns[0])
        if n % groups:
            raise ValueError("groups must split the samples evenly")
        self.n = n
        self.groups = groups
        self.dropped: tuple[str, ...] = ()
        self.basis = None
        rank = 0
        if columns:
            names = list(names) or [f"z{j}" for j in range(len(columns))]
            A = self._center(np.column_stack(columns).astype(np.float64))
            norms = np.sqrt(np.einsum("ij,ij->j", A, A))
            live = norms > RANK_TOL * np.sqrt(n)
            dropped = [names[j] for j in np.flatnonzero(~live)]
            if live.any():
                A = A[:, live] / norms[live]
                live_names = [names[j] for j in np.flatnonzero(live)]
                Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
                diag = np.abs(np.diag(R))
                rank = int(np.sum(diag > RANK_TOL * max(1.0, diag[0])))
                self.basis = Q[:, :rank]
                dropped += [live_names[j] for j in piv[rank:]]
            self.dropped = tuple(dropped)
        # parameters absorbed beyond the overall intercept
        self.rank = rank + groups - 1

    def _center(self, v: np.ndarray) -> np.ndarray:
        if self.groups == 1:
            return v - v.mean(axis=0)
        shaped = v.reshape((self.groups, -1) + v.shape[1:])
        return (shaped - shaped.mean(axis=1, keepdims=True)).reshape(v.shape)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        r = self._center(np.asarray(v, dtype=np.float64))
        if self.basis is not None:
            r = r - self.basis @ (self.basis.T @ r)
        return r


def partial_correlation_test(x: np.ndarray, y: np.ndarray, Z: Residualizer | Sequence[np.ndarray] | None = None) -> CIResult:
    """Test x independent of y given Z on plain arrays.

    ``x`` may be 2-D (several columns tested jointly); ``y`` must be 1-D.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("y must be one-dimensional")
    n = len(y)
    if not isinstance(Z, Residualizer):
        Z = Residualizer(list(Z or []), n=n)
    k = Z.rank
    xr, yr = Z(x), Z(y)
    # residual energy below this fraction of the raw spread counts as zero
    yc = y - y.mean()
    y_floor = DEGENERATE * float(yc @ yc)
    if x.ndim == 1 or x.shape[1] == 1:
        xc = x.reshape(-1) - x.mean()
        return _t_test(xr.reshape(-1), yr, n, k, Z.dropped, DEGENERATE * float(xc @ xc), y_floor)
    return _f_test(xr, yr, n, k, Z.dropped, y_floor)


def _t_test(xr, yr, n, k, dropped, x_floor=0.0, y_floor=0.0) -> CIResult:
    dof = n - k - 2
    if dof < 2:
        raise InsufficientSamplesError(f"insufficient samples: n={n}, |Z|={k}")
    sxx, syy = float(xr @ xr), float(yr @ yr)
    if sxx <= x_floor or syy <= y_floor:
        return CIResult(0.0, 1.0, 0.0, dof, n, k, dropped)
    scale = np.sqrt(sxx) * np.sqrt(syy)
    r = float(np.clip(float(xr @ yr) / scale, -1.0, 1.0))
    if abs(r) >= 1.0:
        return CIResult(float(np.copysign(np.inf, r)), 0.0, r, dof, n, k, dropped)
    t = r * np.sqrt(dof / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), dof))
    return CIResult(float(t), min(p, 1.0), r, dof, n, k, dropped)


def _f_test(Xr, yr, n, k, dropped, y_floor=0.0) -> CIResult:
    norms = np.sqrt(np.einsum("ij,ij->j", Xr, Xr))
    live = norms > RANK_TOL * np.sqrt(n)
    syy = float(yr @ yr)
    if not live.any() or syy <= y_floor:
        return CIResult(0.0, 1.0, 0.0, max(n - k - 2, 0), n, k, dropped)
    Q, R, _ = linalg.qr(Xr[:, live] / norms[live], mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    q = int(np.sum(diag > RANK_TOL * max(1.0, diag[0])))
    dof = n - k - 1 - q
    if dof < 1:
        raise InsufficientSamplesError(f"insufficient samples: n={n}, |Z|={k}, block rank={q}")
    proj = Q[:, :q].T @ yr
    explained = float(proj @ proj)
    rss = max(syy - explained, 0.0)
    r2 = min(explained / syy, 1.0)
    if rss <= 0.0:
        return CIResult(np.inf, 0.0, 1.0, dof, n, k, dropped)
    F = (explained / q) / (rss / dof)
    p = float(stats.f.sf(F, q, dof))
    return CIResult(float(np.sqrt(F)), p, float(np.sqrt(r2)), dof, n, k, dropped)


def conditioning_design(Z: Iterable[Node], panel: PooledPanel) -> Residualizer:
    nodes = sorted(set(Z), key=Node.sort_key)
    absorb = any(node.var is VariableId.S_DUMMY for node in nodes)
    cols, names = [], []
    for node in nodes:
        if node.var is VariableId.S_DUMMY:
            continue
        v = panel.values(node)
        if v.ndim == 1:
            cols.append(v)
            names.append(str(node))
        else:
            for j in range(v.shape[1]):
                cols.append(v[:, j])
                names.append(f"{node}[{j}]")
    return Residualizer(cols, names, groups=panel.n_lakes if absorb else 1, n=panel.n_samples)


def ci_test(x: Node, y: Node, Z: Iterable[Node], panel: PooledPanel) -> CIResult:
    """Test ``x`` independent of ``y`` given ``Z`` on lagged panel samples."""
    Z = [z for z in Z if z != x and z != y]
    for node in (x, y, *Z):
        if node.lag > panel.tau_max:
            raise DiscoveryError(f"{node} exceeds tau_max={panel.tau_max}")
    xv, yv = panel.values(x), panel.values(y)
    if yv.ndim == 2:
        if xv.ndim == 2:
            raise DiscoveryError("at most one side of a CI test may be a context block")
        xv, yv = yv, xv
    design = conditioning_design(Z, panel)
    if panel.n_samples <= design.rank + 3:
        raise InsufficientSamplesError(f"insufficient samples: n={panel.n_samples}, |Z|={design.rank}")
    return partial_correlation_test(xv, yv, design)
