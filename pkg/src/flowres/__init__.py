"""Commodity flow knowledge graph and supply chain resilience metrics."""

from flowres.graph_store import (
    CommodityCode,
    CommodityFlow,
    Direction,
    GraphStore,
    NetworkView,
    RegionLevel,
    RegionNode,
)
from flowres.metrics import ResilienceParams

__version__ = "1.0.0"

__all__ = [
    "CommodityCode",
    "CommodityFlow",
    "Direction",
    "GraphStore",
    "NetworkView",
    "RegionLevel",
    "RegionNode",
    "ResilienceParams",
]
