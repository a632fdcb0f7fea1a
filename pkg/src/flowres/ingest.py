#!/usr/bin/env python3
"""
Ingestion
Loads regions, commodity codes and flows from flat CSV files into the graph
store, and rolls finer-scale flows up to coarser geographic levels.

All CSV columns are read as strings and validated row by row, so errors can
name the file and line they come from.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import polars as pl
from tqdm import tqdm

from flowres import config
from flowres.errors import (
    BadParams,
    CycleDetected,
    DuplicateFlow,
    FlowresError,
    MissingParent,
    ParseError,
    UnknownCode,
    UnknownRegion,
)
from flowres.graph_store import CommodityCode, CommodityFlow, GraphStore, RegionLevel, RegionNode

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class SuppressedPolicy(str, Enum):
    DROP = 'drop'
    ZERO = 'zero'


class MileageCombine(str, Enum):
    VALUE_WEIGHTED_MEAN = 'value_weighted_mean'


class SelfFlowHandling(str, Enum):
    KEEP = 'keep'
    DROP = 'drop'


@dataclass(frozen=True)
class FlowRecord:
    """One parsed flows.csv row. ``value_musd`` is None for suppressed cells."""

    line: int
    year: int
    origin_id: str
    dest_id: str
    sctg_code: str
    value_musd: Optional[float]
    avg_miles: float
    weight: Optional[float] = None

    @property
    def suppressed(self) -> bool:
        return self.value_musd is None


@dataclass(frozen=True)
class RollupPolicy:
    target_level: RegionLevel
    mileage_combine: MileageCombine = MileageCombine.VALUE_WEIGHTED_MEAN
    self_flow_handling: SelfFlowHandling = SelfFlowHandling.KEEP


# ----------------------------------------------------------------------
# Field helpers
# ----------------------------------------------------------------------


def normalize_code(code: str) -> str:
    """Zero-pad numeric SCTG chapters to two characters ('1' -> '01')."""
    code = (code or '').strip()
    if code.isdigit() and len(code) < 2:
        return code.zfill(2)
    return code


def _text(value: Optional[str]) -> str:
    return (value or '').strip()


def _optional(value: Optional[str]) -> Optional[str]:
    value = _text(value)
    return value or None


def _number(value: Optional[str], column: str) -> float:
    try:
        number = float(_text(value))
    except ValueError:
        raise ParseError(f"column {column!r}: {value!r} is not a number")
    if math.isnan(number) or math.isinf(number):
        raise ParseError(f"column {column!r}: {value!r} is not a finite number")
    return number


def _flag(value: Optional[str], column: str) -> bool:
    token = _text(value).lower()
    if token in config.TRUE_TOKENS:
        return True
    if token in config.FALSE_TOKENS:
        return False
    raise ParseError(f"column {column!r}: {value!r} is not a boolean")


def read_table(path: PathLike, header: Sequence[str]) -> pl.DataFrame:
    """Read a CSV with every column as a string and check the header."""
    try:
        df = pl.read_csv(path, infer_schema_length=0)
    except pl.exceptions.NoDataError:
        raise ParseError("file is empty (a header row is required)").at(str(path), 1)
    except FileNotFoundError:
        raise ParseError("file not found").at(str(path))
    except pl.exceptions.ComputeError as e:
        raise ParseError(f"malformed CSV: {e}").at(str(path))
    missing = [c for c in header if c not in df.columns]
    if missing:
        raise ParseError(f"missing columns {missing}").at(str(path), 1)
    return df


def numbered_rows(df: pl.DataFrame, desc: str):
    """(line number, row dict) pairs; line 1 is the header."""
    rows = df.iter_rows(named=True)
    for idx, row in enumerate(tqdm(rows, total=len(df), desc=desc, disable=None, leave=False)):
        yield idx + 2, row


# ----------------------------------------------------------------------
# Loaders
# ----------------------------------------------------------------------


def load_regions(store: GraphStore, path: PathLike) -> int:
    """Upsert regions parents-first; returns the number of rows loaded."""
    df = read_table(path, config.REGIONS_HEADER)
    parsed: List[Tuple[int, RegionNode]] = []
    for line, row in numbered_rows(df, "Reading regions"):
        try:
            level = RegionLevel.parse(_text(row['level']))
        except ValueError as e:
            raise ParseError(str(e)).at(str(path), line)
        region_id = _text(row['id'])
        if not region_id:
            raise ParseError("empty region id").at(str(path), line)
        parsed.append(
            (
                line,
                RegionNode(
                    id=region_id,
                    name=_text(row['name']) or region_id,
                    level=level,
                    parent_id=_optional(row['parent_id']),
                    feature_code=_text(row['feature_code']),
                ),
            )
        )

    for line, node in sorted(parsed, key=lambda item: (-item[1].level.rank, item[0])):
        try:
            store.upsert_region(node)
        except FlowresError as e:
            raise e.at(str(path), line)

    logger.info("loaded %d regions from %s", len(parsed), path)
    return len(parsed)


def load_codes(store: GraphStore, path: PathLike) -> int:
    """Build the commodity code forest; every leaf needs one aggregate ancestor."""
    df = read_table(path, config.CODES_HEADER)
    has_external = 'external_class' in df.columns
    parsed: Dict[str, Tuple[int, CommodityCode]] = {}
    for line, row in numbered_rows(df, "Reading codes"):
        code = normalize_code(row['code'])
        if not code:
            raise ParseError("empty commodity code").at(str(path), line)
        parent = _optional(row['parent'])
        parent = normalize_code(parent) if parent else None
        if parent == code:
            raise CycleDetected(f"code {code!r} is its own parent").at(str(path), line)
        try:
            is_aggregate = _flag(row['is_aggregate'], 'is_aggregate')
        except ParseError as e:
            raise e.at(str(path), line)
        parsed[code] = (
            line,
            CommodityCode(
                code=code,
                description=_text(row['description']),
                parent=parent,
                is_aggregate=is_aggregate,
                external_class_iri=_optional(row['external_class']) if has_external else None,
            ),
        )

    forest = nx.DiGraph()
    forest.add_nodes_from(sorted(parsed))
    forest.add_edges_from(
        (c.parent, c.code) for _, c in parsed.values() if c.parent is not None and c.parent in parsed
    )
    if not nx.is_directed_acyclic_graph(forest):
        cycle = [edge[0] for edge in nx.find_cycle(forest)]
        line = parsed[cycle[0]][0]
        raise CycleDetected(f"commodity codes form a cycle: {' -> '.join(cycle)}").at(
            str(path), line
        )

    for code in nx.lexicographical_topological_sort(forest):
        line, entry = parsed[code]
        try:
            store.add_code(entry)
        except FlowresError as e:
            raise e.at(str(path), line)

    for code in sorted(parsed):
        line, entry = parsed[code]
        if entry.is_aggregate:
            continue
        ancestors = store.aggregate_ancestors(code)
        if len(ancestors) != 1:
            raise ParseError(
                f"leaf code {code!r} needs exactly one aggregate ancestor, found {len(ancestors)}"
            ).at(str(path), line)

    logger.info("loaded %d commodity codes from %s", len(parsed), path)
    return len(parsed)


def read_flow_records(path: PathLike) -> List[FlowRecord]:
    """Parse every data row of a flows CSV, keeping suppressed cells as None."""
    df = read_table(path, config.FLOWS_HEADER)
    has_weight = 'weight' in df.columns
    records = []
    for line, row in numbered_rows(df, "Reading flows"):
        try:
            year = int(_text(row['year']))
        except ValueError:
            raise ParseError(f"column 'year': {row['year']!r} is not an integer").at(str(path), line)
        try:
            raw_value = _text(row['value_musd'])
            value = None if raw_value == config.SUPPRESSED_SENTINEL else _number(raw_value, 'value_musd')
            miles = _number(row['avg_miles'], 'avg_miles')
            raw_weight = _text(row['weight']) if has_weight else ''
            weight = (
                None
                if raw_weight in ('', config.SUPPRESSED_SENTINEL)
                else _number(raw_weight, 'weight')
            )
        except ParseError as e:
            raise e.at(str(path), line)
        records.append(
            FlowRecord(
                line=line,
                year=year,
                origin_id=_text(row['origin_id']),
                dest_id=_text(row['dest_id']),
                sctg_code=normalize_code(row['sctg_code']),
                value_musd=value,
                avg_miles=miles,
                weight=weight,
            )
        )
    return records


def load_flows(
    store: GraphStore,
    path: PathLike,
    suppressed_policy: SuppressedPolicy = SuppressedPolicy.DROP,
) -> int:
    """Add flows to the store; returns the number of rows stored."""
    records = read_flow_records(path)
    stored = 0
    dropped = 0
    for record in records:
        where = (str(path), record.line)
        for region_id in (record.origin_id, record.dest_id):
            if region_id not in store.regions:
                raise UnknownRegion(f"unknown region {region_id!r}").at(*where)
        if record.sctg_code not in store.codes:
            raise UnknownCode(f"unknown commodity code {record.sctg_code!r}").at(*where)
        if record.suppressed and suppressed_policy is SuppressedPolicy.DROP:
            dropped += 1
            continue
        flow = CommodityFlow(
            origin=record.origin_id,
            dest=record.dest_id,
            code=record.sctg_code,
            year=record.year,
            value=0.0 if record.suppressed else record.value_musd,
            avg_mileage=record.avg_miles,
            weight=record.weight,
        )
        try:
            store.add_flow(flow)
        except FlowresError as e:
            raise e.at(*where)
        stored += 1

    logger.info(
        "loaded %d flows from %s (%d suppressed rows dropped)", stored, path, dropped
    )
    return stored


# ----------------------------------------------------------------------
# Rollup
# ----------------------------------------------------------------------


def combine_mileage(members: Sequence[CommodityFlow]) -> float:
    """Value-weighted mean ATM; simple mean when every member is zero-valued."""
    total = math.fsum(f.value for f in members)
    if total > 0:
        return math.fsum(f.value * f.avg_mileage for f in members) / total
    return math.fsum(f.avg_mileage for f in members) / len(members)


def rollup(store: GraphStore, source_level: RegionLevel, policy: RollupPolicy, year: int) -> int:
    """Synthesize ``policy.target_level`` flows from ``source_level`` flows of one year."""
    target = policy.target_level
    if target.rank <= source_level.rank:
        raise BadParams(
            f"rollup target {target.value} must be coarser than source {source_level.value}"
        )

    grouped: Dict[Tuple[str, str, str], List[CommodityFlow]] = {}
    for f in store.flows_at(year, source_level):
        ends = []
        for region_id in (f.origin, f.dest):
            unit = store.ancestor_at(region_id, target)
            if unit is None:
                raise MissingParent(f"region {region_id!r} has no {target.value} ancestor")
            ends.append(unit)
        origin, dest = ends
        if origin == dest and policy.self_flow_handling is SelfFlowHandling.DROP:
            continue
        grouped.setdefault((origin, dest, f.code), []).append(f)

    synthesized = 0
    for (origin, dest, code), members in sorted(grouped.items()):
        weights = [m.weight for m in members]
        flow = CommodityFlow(
            origin=origin,
            dest=dest,
            code=code,
            year=year,
            value=math.fsum(m.value for m in members),
            avg_mileage=combine_mileage(members),
            weight=math.fsum(weights) if all(w is not None for w in weights) else None,
        )
        existing = store.flows.get(flow.key)
        if existing is not None:
            if existing == flow:
                continue
            raise DuplicateFlow(f"rollup conflicts with stored flow {flow.key}")
        store.add_flow(flow)
        synthesized += 1

    logger.info(
        "rolled %s flows of %s up to %s: %d synthesized",
        source_level.value,
        year,
        target.value,
        synthesized,
    )
    return synthesized
