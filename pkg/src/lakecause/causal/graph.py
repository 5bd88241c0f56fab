from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..core import VariableId, variable
from .panel import DiscoveryError


class GraphFormatError(DiscoveryError):
    pass


@dataclass(frozen=True)
class ParentLink:
    var: VariableId
    lag: int
    p_value: float
    strength: float

    def sort_key(self) -> tuple[int, int]:
        return (self.var.index, self.lag)


@dataclass(frozen=True)
class CausalGraph:
    """Parent sets per target, links ordered by (canonical variable, lag)."""

    tau_max: int
    alpha: float
    targets: dict[VariableId, tuple[ParentLink, ...]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        ordered = {}
        for target, links in self.targets.items():
            target = variable(target)
            if target.kind != "observed":
                raise GraphFormatError(f"context variable {target.value} cannot be a target")
            for link in links:
                if not 0 <= link.lag <= self.tau_max:
                    raise GraphFormatError(f"lag {link.lag} of {link.var.value} outside 0..{self.tau_max}")
                if link.var.kind == "context" and link.lag != 0:
                    raise GraphFormatError(f"context parent {link.var.value} must have lag 0")
                if link.var == target and link.lag == 0:
                    raise GraphFormatError(f"{target.value} cannot be its own lag-0 parent")
                if not 0.0 <= link.p_value <= self.alpha:
                    raise GraphFormatError(f"p-value {link.p_value} of {link.var.value} exceeds alpha={self.alpha}")
                if not -1.0 <= link.strength <= 1.0:
                    raise GraphFormatError(f"strength {link.strength} outside [-1, 1]")
            ordered[target] = tuple(sorted(links, key=ParentLink.sort_key))
        object.__setattr__(self, "targets", ordered)

    def parents(self, target: VariableId | str = VariableId.HV_ANOM, *, include_context: bool = True) -> list[tuple[VariableId, int]]:
        links = self.targets.get(variable(target), ())
        return [(l.var, l.lag) for l in links if include_context or l.var.kind == "observed"]

    def to_dict(self) -> dict:
        out = {
            "config": {"tau_max": self.tau_max, "alpha": self.alpha},
            "targets": {
                t.value: [{"var": l.var.value, "lag": l.lag, "p": l.p_value, "strength": l.strength} for l in links]
                for t, links in sorted(self.targets.items(), key=lambda kv: kv[0].index)
            },
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "CausalGraph":
        try:
            config = payload["config"]
            targets = {
                variable(t): tuple(
                    ParentLink(variable(l["var"]), int(l["lag"]), float(l["p"]), float(l["strength"]))
                    for l in links
                )
                for t, links in payload["targets"].items()
            }
            return cls(int(config["tau_max"]), float(config["alpha"]), targets, dict(payload.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(f"malformed graph: {exc!r}") from None

    def describe(self, target: VariableId | str = VariableId.HV_ANOM) -> str:
        """One-line parent listing, e.g. ``hv_anom(-1,-2); s2_water(0)``."""
        groups: dict[VariableId, list[int]] = {}
        for var, lag in self.parents(target):
            groups.setdefault(var, []).append(lag)
        return "; ".join(f"{v.value}({','.join(str(-l) if l else '0' for l in lags)})" for v, lags in groups.items())


def save_graph(g: CausalGraph, path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(g.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write graph to {path}: {exc.strerror or exc}") from exc


def load_graph(path) -> CausalGraph:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON at line {exc.lineno}") from None
    if not isinstance(payload, dict):
        raise GraphFormatError(f"{path}: expected a JSON object")
    return CausalGraph.from_dict(payload)
