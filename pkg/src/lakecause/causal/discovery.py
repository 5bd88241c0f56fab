"""Two-phase lagged parent discovery.

Phase one selects a superset of parents for a variable with PC-stable
iterations: every candidate is tested against the variable given the
currently strongest other candidates, conditioning sets grow by one per
iteration, and removals only take effect between iterations.  Enabled
context dummies are exogenous and sit in every conditioning set, so lake,
region and season heterogeneity is absorbed before any lagged test.  Phase two
(momentary conditional independence) retests each surviving candidate of a
target given the target's other parents and the candidate's own lagged
parents, shifted to the candidate's lag.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..core import OBSERVED_VARIABLES, VariableId
from .ci import CIResult, ci_test
from .graph import CausalGraph, ParentLink
from .panel import DiscoveryConfig, DiscoveryError, Node, PooledPanel

log = logging.getLogger(__name__)


@dataclass
class _Candidate:
    node: Node
    score: float = math.inf  # smallest |statistic| seen so far
    p_value: float = 0.0

    def rank_key(self):
        return (-self.score, self.node.var.index, self.node.lag)


def candidate_nodes(var: VariableId, panel: PooledPanel, cfg: DiscoveryConfig, *, contemporaneous: bool) -> list[Node]:
    nodes = []
    for x in OBSERVED_VARIABLES:
        first = 1 if (x == var or not contemporaneous) else 0
        nodes += [Node(x, lag) for lag in range(first, cfg.tau_max + 1)]
    nodes += [Node(c, 0) for c in cfg.context if c in panel.context]
    return nodes


class ParentSelector:
    """Runs (and caches) the condition-selection phase per variable."""

    def __init__(self, panel: PooledPanel, cfg: DiscoveryConfig, jobs: int = 1):
        self.panel = panel
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.n_tests = 0
        self._lagged: dict[VariableId, list[Node]] = {}

    def _run(self, tasks: list[tuple[Node, Node, list[Node]]]) -> list[CIResult]:
        self.n_tests += len(tasks)
        if self.jobs == 1 or len(tasks) < 2:
            return [ci_test(x, y, Z, self.panel) for x, y, Z in tasks]
        with ThreadPoolExecutor(self.jobs) as pool:
            return list(pool.map(lambda t: ci_test(t[0], t[1], t[2], self.panel), tasks))

    @property
    def context_nodes(self) -> list[Node]:
        return [Node(c, 0) for c in self.cfg.context if c in self.panel.context]

    def select(self, var: VariableId, nodes: list[Node]) -> list[_Candidate]:
        target = Node(var, 0)
        alive = [_Candidate(n) for n in nodes]
        fixed = self.context_nodes
        size = 0
        while True:
            ranked = [c.node for c in sorted(alive, key=_Candidate.rank_key) if c.node.var.kind == "observed"]
            tasks = []
            for cand in alive:
                others = [n for n in ranked if n != cand.node][:size]
                tasks.append((cand.node, target, others + [c for c in fixed if c != cand.node]))
            results = self._run(tasks)
            survivors = []
            for cand, res in zip(alive, results):
                if res.p_value > self.cfg.alpha:
                    continue
                cand.score = min(cand.score, abs(res.statistic))
                cand.p_value = res.p_value
                survivors.append(cand)
            removed = len(alive) - len(survivors)
            alive = survivors
            log.debug("%s: conditioning size %d removed %d, %d left", var.value, size, removed, len(alive))
            size += 1
            if size > self.cfg.max_conds or size > len(alive) - 1:
                break
        return sorted(alive, key=_Candidate.rank_key)

    def lagged_parents(self, var: VariableId) -> list[Node]:
        if var not in self._lagged:
            nodes = candidate_nodes(var, self.panel, self.cfg, contemporaneous=False)
            self._lagged[var] = [c.node for c in self.select(var, nodes)]
        return self._lagged[var]


def mci_conditions(cand: Node, target: Node, parents: list[Node], selector: ParentSelector, tau_max: int) -> list[Node]:
    cond = [p for p in parents if p != cand]
    cond += [c for c in selector.context_nodes if c != cand and c not in cond]
    if cand.var.kind == "observed":
        seen = set(cond) | {cand, target}
        for p in selector.lagged_parents(cand.var):
            if p.var.kind == "context":
                continue
            shifted = Node(p.var, p.lag + cand.lag)
            if shifted.lag <= tau_max and shifted not in seen:
                cond.append(shifted)
                seen.add(shifted)
    return cond


def discover_parents(panel: PooledPanel, cfg: DiscoveryConfig = DiscoveryConfig(), *, jobs: int = 1) -> CausalGraph:
    if panel.tau_max != cfg.tau_max:
        raise DiscoveryError(f"panel was pooled with tau_max={panel.tau_max}, config asks {cfg.tau_max}")
    selector = ParentSelector(panel, cfg, jobs)
    targets = {}
    for var in cfg.targets:
        target = Node(var, 0)
        selected = [c.node for c in selector.select(var, candidate_nodes(var, panel, cfg, contemporaneous=True))]
        tasks = [(cand, target, mci_conditions(cand, target, selected, selector, cfg.tau_max)) for cand in selected]
        results = selector._run(tasks)
        links = [
            ParentLink(cand.var, cand.lag, res.p_value, float(res.strength))
            for cand, res in zip(selected, results)
            if res.p_value <= cfg.alpha
        ]
        targets[var] = tuple(links)
    log.info("discovery ran %d CI tests on %d lakes", selector.n_tests, panel.n_lakes)
    return CausalGraph(
        cfg.tau_max,
        cfg.alpha,
        targets,
        meta={"n_lakes": panel.n_lakes, "n_samples": panel.n_samples, "n_tests": selector.n_tests},
    )
