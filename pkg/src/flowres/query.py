#!/usr/bin/env python3
"""
Query Functions
Named, parameterized queries evaluated on demand against a store snapshot.

The functions mirror the knowledge graph's query-function vocabulary
(``node_export_resilience(node, year, atm, ga)`` and friends). Nothing is
cached: every call snapshots the store and recomputes, so changed
parameters are always reflected.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import polars as pl

from flowres import config
from flowres.errors import BadParams, EmptySelection
from flowres.geo_adjacency import AdjacencyIndex
from flowres.graph_store import Direction, GraphStore, RegionLevel
from flowres.metrics import (
    AtmMode,
    NetworkResilienceReport,
    NodeResilienceReport,
    ResilienceParams,
    direction_resilience,
    network_resilience,
)

logger = logging.getLogger(__name__)


class QueryFunction(str, Enum):
    NODE_EXPORT_RESILIENCE = 'node_export_resilience'
    NODE_IMPORT_RESILIENCE = 'node_import_resilience'
    NETWORK_RESILIENCE = 'network_resilience'
    INFLUENCE = 'influence'
    RANK_DELTA = 'rank_delta'


@dataclass(frozen=True)
class QueryRequest:
    function: QueryFunction
    years: Tuple[int, ...]
    level: RegionLevel = RegionLevel.STATE
    atm: str = config.DEFAULT_ATM_MODE
    ga: float = config.DEFAULT_GA_FACTOR
    top_k: Optional[int] = None
    node: Optional[str] = None
    direction: Optional[Direction] = None
    include_self_flows: bool = config.DEFAULT_INCLUDE_SELF_FLOWS

    def __post_init__(self):
        if not self.years:
            raise BadParams("at least one year is required")
        if self.top_k is not None and self.top_k < 1:
            raise BadParams(f"top-k must be >= 1, got {self.top_k}")
        if self.function is QueryFunction.RANK_DELTA and len(self.years) != 2:
            raise BadParams("rank_delta needs exactly two years")
        AtmMode.parse(self.atm)

    @property
    def year(self) -> int:
        return self.years[0]

    @property
    def effective_direction(self) -> Direction:
        if self.function is QueryFunction.NODE_EXPORT_RESILIENCE:
            return Direction.EXPORT
        if self.function is QueryFunction.NODE_IMPORT_RESILIENCE:
            return Direction.IMPORT
        return self.direction or Direction.EXPORT

    def params(self) -> ResilienceParams:
        return ResilienceParams(
            atm_mode=AtmMode.parse(self.atm),
            ga_factor=self.ga,
            direction=self.effective_direction,
            include_self_flows=self.include_self_flows,
        )


@dataclass(frozen=True)
class RankedEntry:
    rank: int
    node_id: str
    name: str
    level: RegionLevel
    year: int
    direction: Direction
    resilience: float
    adjusted_total: float
    influence: float


@dataclass(frozen=True)
class RankDelta:
    node_id: str
    rank_a: Optional[int]
    rank_b: Optional[int]
    influence_a: Optional[float] = None
    influence_b: Optional[float] = None

    @property
    def delta(self) -> Optional[int]:
        if self.rank_a is None or self.rank_b is None:
            return None
        return self.rank_a - self.rank_b

    @property
    def influence_change_pct(self) -> Optional[float]:
        if self.influence_a is None or self.influence_b is None:
            return None
        return percent_change(self.influence_a, self.influence_b)


@dataclass(frozen=True)
class NetworkRow:
    year: int
    level: RegionLevel
    report: NetworkResilienceReport


def percent_change(a: float, b: float) -> Optional[float]:
    """(b - a) / a in percent, rounded to one decimal."""
    if a == 0:
        return None
    return round((b - a) / a * 100, config.CHANGE_PCT_DECIMALS)


def rank_entries(
    reports: Sequence[NodeResilienceReport], key: Callable
) -> List[NodeResilienceReport]:
    """Descending by ``key``; ties go to the lexicographically smaller id."""
    return sorted(reports, key=lambda r: (-key(r), r.node))


class ResilienceQueries:
    """Query functions over one store. Holds no results between calls."""

    def __init__(self, store: GraphStore, adjacency: AdjacencyIndex = None, workers: int = 1):
        self.store = store
        self.adjacency = adjacency if adjacency is not None else store.adjacency
        self.workers = workers
        self.functions: Dict[QueryFunction, Callable] = {
            QueryFunction.NODE_EXPORT_RESILIENCE: self.node_resilience_query,
            QueryFunction.NODE_IMPORT_RESILIENCE: self.node_resilience_query,
            QueryFunction.INFLUENCE: self.influence_query,
            QueryFunction.NETWORK_RESILIENCE: self.network_resilience_query,
            QueryFunction.RANK_DELTA: self.rank_delta,
        }

    def run(self, req: QueryRequest):
        return self.functions[req.function](req)

    def _reports(self, req: QueryRequest, year: int) -> Tuple[NodeResilienceReport, ...]:
        params = req.params()
        view = self.store.snapshot_view(
            year, req.level, params.direction, include_self_flows=params.include_self_flows
        )
        return direction_resilience(view, self.adjacency, params, self.workers).reports

    def _ranked(self, req: QueryRequest, year: int, key: Callable) -> List[RankedEntry]:
        ordered = rank_entries(self._reports(req, year), key)
        direction = req.effective_direction
        entries = [
            RankedEntry(
                rank=rank,
                node_id=r.node,
                name=self.store.regions[r.node].name,
                level=req.level,
                year=year,
                direction=direction,
                resilience=r.resilience,
                adjusted_total=r.adjusted_total,
                influence=r.influence,
            )
            for rank, r in enumerate(ordered, start=1)
        ]
        if req.node is not None:
            self.store.region(req.node)
            entries = [e for e in entries if e.node_id == req.node]
            if not entries:
                raise EmptySelection(
                    f"node {req.node!r} has no {direction.value.lower()} flows in {year}"
                )
        if req.top_k is not None:
            entries = entries[: req.top_k]
        return entries

    def node_resilience_query(self, req: QueryRequest) -> List[RankedEntry]:
        """Nodes ranked by R, highest first."""
        return self._ranked(req, req.year, key=lambda r: r.resilience)

    def influence_query(self, req: QueryRequest) -> List[RankedEntry]:
        """Nodes ranked by I, highest first."""
        return self._ranked(req, req.year, key=lambda r: r.influence)

    def network_resilience_query(self, req: QueryRequest) -> List[NetworkRow]:
        params = req.params()
        rows = []
        for year in req.years:
            views = [
                self.store.snapshot_view(
                    year, req.level, d, include_self_flows=params.include_self_flows
                )
                for d in (Direction.IMPORT, Direction.EXPORT)
            ]
            report = network_resilience(*views, self.adjacency, params, self.workers)
            rows.append(NetworkRow(year=year, level=req.level, report=report))
        return rows

    def rank_delta(self, req: QueryRequest) -> List[RankDelta]:
        """Influence rank of every node in both years, joined on node id."""
        year_a, year_b = req.years
        full = QueryRequest(
            function=QueryFunction.INFLUENCE,
            years=(year_a,),
            level=req.level,
            atm=req.atm,
            ga=req.ga,
            direction=req.effective_direction,
            include_self_flows=req.include_self_flows,
        )
        ranked_a = {e.node_id: e for e in self.influence_query(full)}
        ranked_b = {e.node_id: e for e in self.influence_query(_with_year(full, year_b))}

        rows = []
        for node in sorted(set(ranked_a) | set(ranked_b)):
            a, b = ranked_a.get(node), ranked_b.get(node)
            rows.append(
                RankDelta(
                    node_id=node,
                    rank_a=a.rank if a else None,
                    rank_b=b.rank if b else None,
                    influence_a=a.influence if a else None,
                    influence_b=b.influence if b else None,
                )
            )

        def order(row: RankDelta):
            if row.rank_a is not None and row.rank_b is not None:
                return (0, row.rank_b, row.node_id)
            if row.rank_b is not None:
                return (1, row.rank_b, row.node_id)
            return (2, row.rank_a, row.node_id)

        return sorted(rows, key=order)


def _with_year(req: QueryRequest, year: int) -> QueryRequest:
    return QueryRequest(
        function=req.function,
        years=(year,),
        level=req.level,
        atm=req.atm,
        ga=req.ga,
        top_k=req.top_k,
        node=req.node,
        direction=req.direction,
        include_self_flows=req.include_self_flows,
    )


# ----------------------------------------------------------------------
# Tabular shapes
# ----------------------------------------------------------------------

RESILIENCE_COLUMNS = ('node_id', 'name', 'R', 'V_prime', 'I')
METRIC_COLUMNS = ('node_id', 'name', 'level', 'year', 'direction', 'R', 'V_prime', 'I')
RANK_DELTA_COLUMNS = ('node_id', 'rank_a', 'rank_b', 'delta')

_ENTRY_SCHEMA = {
    'node_id': pl.Utf8,
    'name': pl.Utf8,
    'level': pl.Utf8,
    'year': pl.Int64,
    'direction': pl.Utf8,
    'rank': pl.Int64,
    'R': pl.Float64,
    'V_prime': pl.Float64,
    'I': pl.Float64,
}


def entries_frame(
    entries: Sequence[RankedEntry], columns: Sequence[str] = RESILIENCE_COLUMNS
) -> pl.DataFrame:
    rows = [
        {
            'node_id': e.node_id,
            'name': e.name,
            'level': e.level.value.lower(),
            'year': e.year,
            'direction': e.direction.value.lower(),
            'rank': e.rank,
            'R': e.resilience,
            'V_prime': e.adjusted_total,
            'I': e.influence,
        }
        for e in entries
    ]
    return pl.DataFrame(rows, schema=_ENTRY_SCHEMA).select(list(columns))


def rank_delta_frame(rows: Sequence[RankDelta]) -> pl.DataFrame:
    return pl.DataFrame(
        [
            {'node_id': r.node_id, 'rank_a': r.rank_a, 'rank_b': r.rank_b, 'delta': r.delta}
            for r in rows
        ],
        schema={'node_id': pl.Utf8, 'rank_a': pl.Int64, 'rank_b': pl.Int64, 'delta': pl.Int64},
    )


def network_frame(rows: Sequence[NetworkRow]) -> pl.DataFrame:
    """One row per level, one R_net column per year, plus a change column for 2+ years."""
    years = sorted({r.year for r in rows})
    levels = []
    for r in rows:
        if r.level not in levels:
            levels.append(r.level)
    by_key = {(r.level, r.year): r.report.overall for r in rows}

    records = []
    for level in levels:
        record = {'level': level.value.lower()}
        for year in years:
            record[f"R_{year}"] = by_key.get((level, year))
        if len(years) > 1:
            first, last = by_key.get((level, years[0])), by_key.get((level, years[-1]))
            change = percent_change(first, last) if first is not None and last is not None else None
            record['change'] = format_change(change)
        records.append(record)

    schema = {'level': pl.Utf8, **{f"R_{y}": pl.Float64 for y in years}}
    if len(years) > 1:
        schema['change'] = pl.Utf8
    return pl.DataFrame(records, schema=schema)


def format_change(change: Optional[float]) -> Optional[str]:
    if change is None:
        return None
    return f"{change:+.{config.CHANGE_PCT_DECIMALS}f}%"
