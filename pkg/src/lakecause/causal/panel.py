from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..core import (
    CONTEXT_VARIABLES,
    N_DAYS,
    OBSERVED_VARIABLES,
    REGIONS,
    Dataset,
    VariableId,
    variable,
)


class DiscoveryError(ValueError):
    pass


class Node(NamedTuple):
    """A variable observed ``lag`` days before the reference day."""

    var: VariableId
    lag: int

    def sort_key(self) -> tuple[int, int]:
        return (self.var.index, self.lag)

    def __str__(self) -> str:
        return f"{self.var.value}(-{self.lag})" if self.lag else f"{self.var.value}(0)"


@dataclass(frozen=True)
class DiscoveryConfig:
    tau_max: int = 7
    alpha: float = 0.01
    targets: tuple[VariableId, ...] = (VariableId.HV_ANOM,)
    use_s_dummy: bool = True
    use_r_dummy: bool = True
    use_t_dummy: bool = True
    max_conds: int = 10

    def __post_init__(self) -> None:
        if not isinstance(self.tau_max, int) or self.tau_max < 1:
            raise DiscoveryError("tau_max must be an integer >= 1")
        if not 0 < self.alpha < 1:
            raise DiscoveryError("alpha must lie strictly between 0 and 1")
        if self.max_conds < 0:
            raise DiscoveryError("max_conds must be >= 0")
        targets = tuple(variable(t) for t in self.targets)
        if not targets:
            raise DiscoveryError("at least one target is required")
        for t in targets:
            if t.kind != "observed":
                raise DiscoveryError(f"context variable {t.value} cannot be a target")
        object.__setattr__(self, "targets", targets)

    @property
    def context(self) -> tuple[VariableId, ...]:
        flags = (self.use_s_dummy, self.use_r_dummy, self.use_t_dummy)
        return tuple(v for v, on in zip(CONTEXT_VARIABLES, flags) if on)


@dataclass(frozen=True, eq=False)
class PooledPanel:
    """Lakes stacked row-wise, with context columns and per-lake row ranges.

    ``rows`` holds the raw observed values (n_lakes * 365, 9).  Analysis
    samples are the days ``tau_max+1 .. 365`` of each lake; a lagged value for
    such a sample is always read from the same lake.
    """

    rows: np.ndarray
    context: dict[VariableId, np.ndarray]
    lake_ranges: tuple[tuple[int, int], ...]
    lake_keys: tuple[tuple[str, int], ...]
    lake_regions: tuple[str, ...]
    tau_max: int
    sample_rows: np.ndarray = field(repr=False)
    sample_lake: np.ndarray = field(repr=False)

    @property
    def n_lakes(self) -> int:
        return len(self.lake_ranges)

    @property
    def n_samples(self) -> int:
        return len(self.sample_rows)

    @property
    def columns(self) -> list[str]:
        names = [v.value for v in OBSERVED_VARIABLES]
        for var, block in self.context.items():
            names += [f"{var.value}[{j}]" for j in range(block.shape[1])]
        return names

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def has(self, var: VariableId) -> bool:
        return var.kind == "observed" or var in self.context

    def values(self, node: Node) -> np.ndarray:
        """Sample-aligned values of ``node``: 1-D for observed, 2-D for context."""
        if node.lag < 0 or node.lag > self.tau_max:
            raise DiscoveryError(f"lag {node.lag} of {node.var.value} outside 0..{self.tau_max}")
        if node.var.kind == "context":
            if node.lag != 0:
                raise DiscoveryError("context variables enter at lag 0 only")
            if node.var not in self.context:
                raise DiscoveryError(f"{node.var.value} is not part of this panel")
            return self.context[node.var][self.sample_rows]
        return self.rows[self.sample_rows - node.lag, node.var.index]

    def samples_per_lake(self) -> np.ndarray:
        return np.bincount(self.sample_lake, minlength=self.n_lakes)


def pool_lakes(ds: Dataset, cfg: DiscoveryConfig = DiscoveryConfig()) -> PooledPanel:
    """Stack a dataset into a panel for pooled discovery.

    Lakes are ordered by (region, lake_id, year) so the panel, and anything
    computed from it, does not depend on the order of ``ds``.
    """
    if len(ds) == 0:
        raise DiscoveryError("cannot pool an empty dataset")
    lakes = sorted(ds.lakes, key=lambda l: (REGIONS.index(l.region), l.lake_id, l.year))
    for lake in lakes:
        if not lake.is_dense:
            raise DiscoveryError(f"lake {lake.lake_id!r} has missing values; preprocess first")
    if cfg.tau_max >= N_DAYS:
        raise DiscoveryError("tau_max must be shorter than the series")

    n = len(lakes)
    rows = np.concatenate([lake.series for lake in lakes])
    ranges = tuple((i * N_DAYS, (i + 1) * N_DAYS) for i in range(n))

    context: dict[VariableId, np.ndarray] = {}
    if cfg.use_s_dummy:
        context[VariableId.S_DUMMY] = np.repeat(np.eye(n), N_DAYS, axis=0)
    if cfg.use_r_dummy:
        present = [r for r in REGIONS if any(l.region == r for l in lakes)]
        onehot = np.array([[float(l.region == r) for r in present] for l in lakes])
        context[VariableId.R_DUMMY] = np.repeat(onehot, N_DAYS, axis=0)
    if cfg.use_t_dummy:
        phase = 2 * np.pi * np.arange(1, N_DAYS + 1) / N_DAYS
        seasonal = np.column_stack([np.sin(phase), np.cos(phase)])
        context[VariableId.T_DUMMY] = np.tile(seasonal, (n, 1))

    sample_rows = np.concatenate([np.arange(a + cfg.tau_max, b) for a, b in ranges])
    sample_lake = np.repeat(np.arange(n), N_DAYS - cfg.tau_max)
    return PooledPanel(
        rows=rows,
        context=context,
        lake_ranges=ranges,
        lake_keys=tuple(l.key for l in lakes),
        lake_regions=tuple(l.region for l in lakes),
        tau_max=cfg.tau_max,
        sample_rows=sample_rows,
        sample_lake=sample_lake,
    )
