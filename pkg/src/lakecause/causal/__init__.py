"""Lag-aware parent discovery over pooled lake panels with context dummies."""

from .ci import CIResult, InsufficientSamplesError, Residualizer, ci_test, partial_correlation_test
from .discovery import discover_parents
from .graph import CausalGraph, GraphFormatError, ParentLink, load_graph, save_graph
from .panel import DiscoveryConfig, DiscoveryError, Node, PooledPanel, pool_lakes

__all__ = [
    "CIResult",
    "CausalGraph",
    "DiscoveryConfig",
    "DiscoveryError",
    "GraphFormatError",
    "InsufficientSamplesError",
    "Node",
    "ParentLink",
    "PooledPanel",
    "Residualizer",
    "ci_test",
    "discover_parents",
    "load_graph",
    "partial_correlation_test",
    "pool_lakes",
    "save_graph",
]
