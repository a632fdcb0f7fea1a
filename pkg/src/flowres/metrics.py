#!/usr/bin/env python3
"""
Resilience Metrics
Node-level and network-level resilience of a multi-commodity flow network.

Bottom-up chain for a focal node i:
  1. adjusted flow value   V' = V * alpha(ATM) * beta(GA)
  2. partner dependence    D(i,c) = 2^-H over partner shares of V'
  3. commodity dependence  D(i,A) over leaf codes in an aggregate, D_i over aggregates
  4. node resilience       R_i = 1 - D_i * sum_A V'(i,A) / V'_i
Network level: influence I_i = R_i V'_i / sum(R V'), R_net = 1 - max I_i.

All accumulation goes through math.fsum so results do not depend on the
order (or thread) in which nodes and flows are visited.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import entropy

from flowres import config
from flowres.errors import AllZero, BadParams, DegenerateNetwork, NoFlows
from flowres.geo_adjacency import AdjacencyIndex
from flowres.graph_store import Direction, NetworkView

logger = logging.getLogger(__name__)

EMPTY_ADJACENCY = AdjacencyIndex()


class AtmMode(str, Enum):
    SQRT = 'sqrt'
    UNITY = 'unity'

    @classmethod
    def parse(cls, token: str) -> 'AtmMode':
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise BadParams(f"unknown atm mode {token!r} (expected sqrt or unity)")


class SelfFlowBeta(str, Enum):
    ADJACENT = 'adjacent'
    NONADJACENT = 'nonadjacent'


@dataclass(frozen=True)
class ResilienceParams:
    atm_mode: AtmMode = AtmMode(config.DEFAULT_ATM_MODE)
    ga_factor: float = config.DEFAULT_GA_FACTOR
    self_flow_beta: SelfFlowBeta = SelfFlowBeta(config.DEFAULT_SELF_FLOW_BETA)
    direction: Direction = Direction.EXPORT
    include_self_flows: bool = config.DEFAULT_INCLUDE_SELF_FLOWS

    def __post_init__(self):
        if not 0 < self.ga_factor <= 1:
            raise BadParams(f"ga_factor must be in (0, 1], got {self.ga_factor!r}")


# ----------------------------------------------------------------------
# Breakdown types
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class PartnerShare:
    partner: str
    adjusted_value: float
    share: float


@dataclass(frozen=True)
class CodeDependence:
    code: str
    aggregate: str
    entropy: float
    dependence: float
    flow_total: float
    adjusted_value: float
    share: float
    partners: Tuple[PartnerShare, ...] = ()


@dataclass(frozen=True)
class AggregateDependence:
    aggregate: str
    dependence: float
    adjusted_value: float
    share: float


@dataclass(frozen=True)
class DependenceBreakdown:
    node: str
    codes: Tuple[CodeDependence, ...]
    aggregates: Tuple[AggregateDependence, ...]
    dependence: float
    adjusted_total: float


@dataclass(frozen=True)
class NodeResilienceReport:
    node: str
    resilience: float
    adjusted_total: float
    breakdown: DependenceBreakdown
    influence: Optional[float] = None


@dataclass(frozen=True)
class DirectionResilience:
    direction: Direction
    resilience: float
    argmax: str
    max_influence: float
    reports: Tuple[NodeResilienceReport, ...] = ()


@dataclass(frozen=True)
class NetworkResilienceReport:
    directions: Mapping[Direction, DirectionResilience] = field(default_factory=dict)

    @property
    def r_in(self) -> float:
        return self.directions[Direction.IMPORT].resilience

    @property
    def r_out(self) -> float:
        return self.directions[Direction.EXPORT].resilience

    @property
    def overall(self) -> float:
        return (self.r_in + self.r_out) / 2


# ----------------------------------------------------------------------
# Formula building blocks
# ----------------------------------------------------------------------


def adjusted_value(value: float, atm: float, adjacent: bool, params: ResilienceParams) -> float:
    """Flow value weighted by transport mileage (alpha) and adjacency (beta)."""
    if params.atm_mode is AtmMode.UNITY or atm < config.SHORT_HAUL_MILES:
        alpha = 1.0
    else:
        alpha = math.sqrt(atm)
    beta = params.ga_factor if adjacent else 1.0
    return value * alpha * beta


def partner_dependence(adjusted_values: Sequence[float]) -> Tuple[float, float]:
    """Shannon entropy (bits) of the value shares and D = 2^-H."""
    weights = np.asarray(adjusted_values, dtype=float)
    total = math.fsum(weights)
    if not total > 0:
        raise AllZero("dependence is undefined when every value is zero")
    bits = float(entropy(weights / total, base=2))
    return bits, float(2.0 ** -bits)


def aggregate_dependence(leaf_entries: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """(D(i,c), sum_j V'(i->j,c)) per leaf -> (D(i,A), V'(i,A))."""
    if not leaf_entries:
        raise AllZero("aggregate without leaf codes")
    leaf_values = [d * total for d, total in leaf_entries]
    _, dependence = partner_dependence(leaf_values)
    return dependence, dependence * math.fsum(leaf_values)


def _shares(values: Sequence[float]) -> List[float]:
    total = math.fsum(values)
    return [v / total for v in values]


# ----------------------------------------------------------------------
# Node level
# ----------------------------------------------------------------------


def node_resilience(
    view: NetworkView,
    node: str,
    adjacency: Optional[AdjacencyIndex],
    params: ResilienceParams,
) -> NodeResilienceReport:
    adjacency = adjacency if adjacency is not None else EMPTY_ADJACENCY
    by_code = view.groups.get(node)
    if not by_code:
        raise NoFlows(f"node {node!r} has no {view.direction.value.lower()} flows in {view.year}")

    self_adjacent = params.self_flow_beta is SelfFlowBeta.ADJACENT
    flow_values: List[float] = []
    leaves: Dict[str, List[Tuple[str, float, float, float, Tuple[PartnerShare, ...]]]] = {}

    for code in sorted(by_code):
        partners = []
        for f in by_code[code]:
            if f.is_self_flow and not params.include_self_flows:
                continue
            partner = view.partner(f)
            adjacent = self_adjacent if f.is_self_flow else adjacency.is_adjacent(node, partner)
            partners.append((partner, adjusted_value(f.value, f.avg_mileage, adjacent, params)))

        values = [v for _, v in partners]
        flow_values.extend(values)
        flow_total = math.fsum(values)
        if not flow_total > 0:
            continue
        bits, dependence = partner_dependence(values)
        shares = tuple(
            PartnerShare(partner=p, adjusted_value=v, share=s)
            for (p, v), s in zip(partners, _shares(values))
        )
        leaves.setdefault(view.aggregates[code], []).append(
            (code, bits, dependence, flow_total, shares)
        )

    adjusted_total = math.fsum(flow_values)
    if not adjusted_total > 0 or not leaves:
        raise NoFlows(f"node {node!r} has no positive-value flows in {view.year}")

    code_rows: List[CodeDependence] = []
    aggregate_values: List[Tuple[str, float, float]] = []
    for aggregate in sorted(leaves):
        entries = leaves[aggregate]
        leaf_values = [dependence * total for _, _, dependence, total, _ in entries]
        for (code, bits, dependence, total, shares), value, share in zip(
            entries, leaf_values, _shares(leaf_values)
        ):
            code_rows.append(
                CodeDependence(
                    code=code,
                    aggregate=aggregate,
                    entropy=bits,
                    dependence=dependence,
                    flow_total=total,
                    adjusted_value=value,
                    share=share,
                    partners=shares,
                )
            )
        agg_dependence, agg_value = aggregate_dependence(
            [(dependence, total) for _, _, dependence, total, _ in entries]
        )
        aggregate_values.append((aggregate, agg_dependence, agg_value))

    values = [v for _, _, v in aggregate_values]
    _, node_dependence = partner_dependence(values)
    aggregate_rows = tuple(
        AggregateDependence(aggregate=a, dependence=d, adjusted_value=v, share=s)
        for (a, d, v), s in zip(aggregate_values, _shares(values))
    )
    resilience = 1.0 - node_dependence * math.fsum(values) / adjusted_total

    breakdown = DependenceBreakdown(
        node=node,
        codes=tuple(code_rows),
        aggregates=aggregate_rows,
        dependence=node_dependence,
        adjusted_total=adjusted_total,
    )
    return NodeResilienceReport(
        node=node, resilience=resilience, adjusted_total=adjusted_total, breakdown=breakdown
    )


def node_influence(reports: Iterable[NodeResilienceReport]) -> Dict[str, float]:
    """Share of resilience-weighted adjusted value carried by each node."""
    ordered = sorted(reports, key=lambda r: r.node)
    if not ordered:
        raise DegenerateNetwork("no nodes to rank")
    if len(ordered) == 1:
        return {ordered[0].node: 1.0}
    weights = [r.resilience * r.adjusted_total for r in ordered]
    total = math.fsum(weights)
    if not total > 0:
        raise DegenerateNetwork("every node has zero resilience; influence is undefined")
    return {r.node: w / total for r, w in zip(ordered, weights)}


def view_resilience(
    view: NetworkView,
    adjacency: Optional[AdjacencyIndex],
    params: ResilienceParams,
    workers: int = 1,
) -> Tuple[NodeResilienceReport, ...]:
    """Reports for every node with positive adjusted value, influence filled in."""

    def compute(node: str) -> Optional[NodeResilienceReport]:
        try:
            return node_resilience(view, node, adjacency, params)
        except NoFlows:
            logger.debug("skipping %s: no positive-value flows", node)
            return None

    nodes = view.nodes()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            computed = list(pool.map(compute, nodes))
    else:
        computed = [compute(n) for n in nodes]

    reports = [r for r in computed if r is not None]
    if not reports:
        raise NoFlows(f"no node has positive-value flows in {view.year} {view.level.value}")
    influence = node_influence(reports)
    return tuple(replace(r, influence=influence[r.node]) for r in reports)


# ----------------------------------------------------------------------
# Network level
# ----------------------------------------------------------------------


def direction_resilience(
    view: NetworkView,
    adjacency: Optional[AdjacencyIndex],
    params: ResilienceParams,
    workers: int = 1,
) -> DirectionResilience:
    reports = view_resilience(view, adjacency, params, workers)
    top = min(reports, key=lambda r: (-r.influence, r.node))
    return DirectionResilience(
        direction=view.direction,
        resilience=1.0 - top.influence,
        argmax=top.node,
        max_influence=top.influence,
        reports=reports,
    )


def network_resilience(
    import_view: NetworkView,
    export_view: NetworkView,
    adjacency: Optional[AdjacencyIndex],
    params: ResilienceParams,
    workers: int = 1,
) -> NetworkResilienceReport:
    if (import_view.direction, export_view.direction) != (Direction.IMPORT, Direction.EXPORT):
        raise BadParams("network_resilience expects an IMPORT view and an EXPORT view")
    directions = {
        Direction.IMPORT: direction_resilience(import_view, adjacency, params, workers),
        Direction.EXPORT: direction_resilience(export_view, adjacency, params, workers),
    }
    report = NetworkResilienceReport(directions=directions)
    logger.info(
        "network %s %s: R_in=%.6f R_out=%.6f overall=%.6f",
        export_view.year,
        export_view.level.value,
        report.r_in,
        report.r_out,
        report.overall,
    )
    return report
