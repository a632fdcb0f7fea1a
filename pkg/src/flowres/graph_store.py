#!/usr/bin/env python3
"""
Graph Store
Typed in-memory knowledge graph for commodity flows over hierarchical regions.

Holds regions (state / division / region), the commodity code forest, flows,
optional geometries and the adjacency index. Views are immutable snapshots
grouped by focal node and leaf code. The whole store can be dumped as
sorted, byte-deterministic Turtle and read back.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import IO, TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Tuple, Union
from urllib.parse import quote

import networkx as nx
from rdflib import Graph, Literal, Namespace, URIRef
from rdflib.namespace import RDF, XSD

from flowres import config
from flowres.errors import (
    CycleDetected,
    DanglingParent,
    DuplicateFlow,
    EmptySelection,
    InvalidRegion,
    LevelCycle,
    LevelMismatch,
    NegativeValue,
    SinkWrite,
    UnknownCode,
    UnknownRegion,
)

if TYPE_CHECKING:
    from flowres.geo_adjacency import AdjacencyIndex, Geometry

logger = logging.getLogger(__name__)

CFS = Namespace(config.NAMESPACES['cfs'])
KWG = Namespace(config.NAMESPACES['kwg-ont'])
GN = Namespace(config.NAMESPACES['gn'])
GEO = Namespace(config.NAMESPACES['geo'])
TIME = Namespace(config.NAMESPACES['time'])


class RegionLevel(str, Enum):
    STATE = 'STATE'
    DIVISION = 'DIVISION'
    REGION = 'REGION'

    @property
    def rank(self) -> int:
        """0 for the finest level, 2 for the coarsest."""
        return _LEVEL_RANK[self]

    @property
    def parent_level(self) -> Optional['RegionLevel']:
        return _PARENT_LEVEL[self]

    @classmethod
    def parse(cls, token: str) -> 'RegionLevel':
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown level {token!r} (expected state, division or region)")


_LEVEL_RANK = {RegionLevel.STATE: 0, RegionLevel.DIVISION: 1, RegionLevel.REGION: 2}
_PARENT_LEVEL = {
    RegionLevel.STATE: RegionLevel.DIVISION,
    RegionLevel.DIVISION: RegionLevel.REGION,
    RegionLevel.REGION: None,
}


class Direction(str, Enum):
    IMPORT = 'IMPORT'
    EXPORT = 'EXPORT'

    @classmethod
    def parse(cls, token: str) -> 'Direction':
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown direction {token!r} (expected import or export)")


@dataclass(frozen=True)
class RegionNode:
    id: str
    name: str
    level: RegionLevel
    parent_id: Optional[str] = None
    feature_code: str = ''
    geometry_ref: Optional[str] = None


@dataclass(frozen=True)
class CommodityCode:
    code: str
    description: str = ''
    parent: Optional[str] = None
    is_aggregate: bool = False
    external_class_iri: Optional[str] = None


@dataclass(frozen=True)
class CommodityFlow:
    origin: str
    dest: str
    code: str
    year: int
    value: float
    avg_mileage: float
    weight: Optional[float] = None

    @property
    def key(self) -> Tuple[str, str, str, int]:
        return (self.origin, self.dest, self.code, self.year)

    @property
    def is_self_flow(self) -> bool:
        return self.origin == self.dest


@dataclass(frozen=True)
class NetworkView:
    """Immutable snapshot of one (year, level, direction) slice of the store.

    ``groups`` maps focal node -> leaf code -> flows sorted by partner id.
    ``aggregates`` maps every leaf code in the view to its aggregate code.
    """

    year: int
    level: RegionLevel
    direction: Direction
    groups: Mapping[str, Mapping[str, Tuple[CommodityFlow, ...]]]
    aggregates: Mapping[str, str]
    include_self_flows: bool = True

    def nodes(self) -> List[str]:
        return sorted(self.groups)

    def partner(self, flow: CommodityFlow) -> str:
        return flow.dest if self.direction is Direction.EXPORT else flow.origin

    @property
    def flows(self) -> Tuple[CommodityFlow, ...]:
        return tuple(
            f
            for node in sorted(self.groups)
            for code in sorted(self.groups[node])
            for f in self.groups[node][code]
        )

    @property
    def flow_count(self) -> int:
        return sum(len(fs) for by_code in self.groups.values() for fs in by_code.values())

    def total_value(self) -> float:
        return math.fsum(f.value for f in self.flows)


class GraphStore:
    """Single-writer store. Snapshots taken from it never change afterwards."""

    def __init__(self):
        self.regions: Dict[str, RegionNode] = {}
        self.codes: Dict[str, CommodityCode] = {}
        self.flows: Dict[Tuple[str, str, str, int], CommodityFlow] = {}
        self.geometries: Dict[str, 'Geometry'] = {}
        self.adjacency: Optional['AdjacencyIndex'] = None
        self._children: Dict[str, set] = {}
        self._code_forest = nx.DiGraph()

    # ------------------------------------------------------------------
    # Regions
    # ------------------------------------------------------------------

    def upsert_region(self, node: RegionNode) -> None:
        """Insert or replace a region. Parents must be inserted first."""
        if node.parent_id is not None:
            parent = self.regions.get(node.parent_id)
            if parent is None:
                raise DanglingParent(
                    f"region {node.id!r} references unknown parent {node.parent_id!r}"
                )
            if node.level.parent_level is not parent.level:
                raise LevelCycle(
                    f"{node.level.value} {node.id!r} cannot sit under "
                    f"{parent.level.value} {parent.id!r}"
                )
        if node.level is RegionLevel.REGION and node.parent_id is not None:
            raise LevelCycle(f"REGION {node.id!r} cannot have a parent")
        if node.feature_code == config.STATE_FEATURE_CODE and node.level is not RegionLevel.STATE:
            raise InvalidRegion(
                f"feature code {config.STATE_FEATURE_CODE} is reserved for states ({node.id!r})"
            )

        existing = self.regions.get(node.id)
        if existing is not None:
            if existing.level is not node.level and self._children.get(node.id):
                raise LevelCycle(f"cannot change level of {node.id!r}: it has members")
            if existing.parent_id is not None:
                self._children[existing.parent_id].discard(node.id)

        self.regions[node.id] = node
        if node.parent_id is not None:
            self._children.setdefault(node.parent_id, set()).add(node.id)

    def region(self, region_id: str) -> RegionNode:
        try:
            return self.regions[region_id]
        except KeyError:
            raise UnknownRegion(f"unknown region {region_id!r}")

    def children(self, region_id: str) -> List[str]:
        return sorted(self._children.get(region_id, ()))

    def regions_at(self, level: RegionLevel) -> List[RegionNode]:
        return sorted((r for r in self.regions.values() if r.level is level), key=lambda r: r.id)

    def ancestor_at(self, region_id: str, level: RegionLevel) -> Optional[str]:
        """Walk up the hierarchy until ``level``; None if the chain breaks."""
        node = self.region(region_id)
        while node.level.rank < level.rank:
            if node.parent_id is None:
                return None
            node = self.regions[node.parent_id]
        return node.id if node.level is level else None

    def members_at(self, region_id: str, level: RegionLevel) -> List[str]:
        """All descendants of ``region_id`` at ``level`` (itself if same level)."""
        node = self.region(region_id)
        if node.level is level:
            return [node.id]
        found = []
        for child in self.children(region_id):
            found.extend(self.members_at(child, level))
        return sorted(found)

    # ------------------------------------------------------------------
    # Commodity codes
    # ------------------------------------------------------------------

    def add_code(self, code: CommodityCode) -> None:
        """Insert or replace a code. Parents must be inserted first."""
        if code.parent is not None:
            if code.parent == code.code:
                raise CycleDetected(f"code {code.code!r} is its own parent")
            if code.parent not in self.codes:
                raise UnknownCode(f"code {code.code!r} references unknown parent {code.parent!r}")
            if self._code_forest.has_node(code.code) and nx.has_path(
                self._code_forest, code.code, code.parent
            ):
                raise CycleDetected(f"parent {code.parent!r} of {code.code!r} closes a cycle")

        if self._code_forest.has_node(code.code):
            self._code_forest.remove_edges_from(list(self._code_forest.in_edges(code.code)))
        self._code_forest.add_node(code.code)
        if code.parent is not None:
            self._code_forest.add_edge(code.parent, code.code)
        self.codes[code.code] = code

    def code(self, code: str) -> CommodityCode:
        try:
            return self.codes[code]
        except KeyError:
            raise UnknownCode(f"unknown commodity code {code!r}")

    def aggregate_ancestors(self, code: str) -> List[str]:
        self.code(code)
        return sorted(a for a in nx.ancestors(self._code_forest, code) if self.codes[a].is_aggregate)

    def aggregate_of(self, code: str) -> str:
        """The single aggregate ancestor of a leaf code."""
        found = self.aggregate_ancestors(code)
        if len(found) != 1:
            raise UnknownCode(
                f"code {code!r} has {len(found)} aggregate ancestors (expected exactly one)"
            )
        return found[0]

    def leaf_codes(self) -> List[str]:
        return sorted(c.code for c in self.codes.values() if not c.is_aggregate)

    # ------------------------------------------------------------------
    # Flows
    # ------------------------------------------------------------------

    def add_flow(self, flow: CommodityFlow) -> None:
        origin = self.region(flow.origin)
        dest = self.region(flow.dest)
        code = self.code(flow.code)
        if code.is_aggregate:
            raise UnknownCode(f"flows must use leaf codes, got aggregate {flow.code!r}")
        for label, number in (('value', flow.value), ('avg_mileage', flow.avg_mileage)):
            if not number >= 0:
                raise NegativeValue(f"{label} must be nonnegative, got {number!r}")
        if flow.weight is not None and not flow.weight >= 0:
            raise NegativeValue(f"weight must be nonnegative, got {flow.weight!r}")
        if origin.level is not dest.level:
            raise LevelMismatch(
                f"flow {flow.origin}->{flow.dest} connects {origin.level.value} "
                f"to {dest.level.value}"
            )
        if flow.key in self.flows:
            raise DuplicateFlow(f"duplicate flow {flow.key}")
        self.flows[flow.key] = flow

    def flows_at(self, year: int, level: RegionLevel) -> List[CommodityFlow]:
        selected = [
            f
            for key, f in self.flows.items()
            if key[3] == year and self.regions[key[0]].level is level
        ]
        return sorted(selected, key=lambda f: f.key)

    def years(self, level: Optional[RegionLevel] = None) -> List[int]:
        return sorted(
            {
                f.year
                for f in self.flows.values()
                if level is None or self.regions[f.origin].level is level
            }
        )

    def snapshot_view(
        self,
        year: int,
        level: RegionLevel,
        direction: Direction,
        include_self_flows: bool = True,
    ) -> NetworkView:
        matching = self.flows_at(year, level)
        if not include_self_flows:
            matching = [f for f in matching if not f.is_self_flow]
        if not matching:
            raise EmptySelection(f"no flows for year={year} level={level.value}")

        grouped: Dict[str, Dict[str, List[CommodityFlow]]] = {}
        for f in matching:
            focal = f.origin if direction is Direction.EXPORT else f.dest
            grouped.setdefault(focal, {}).setdefault(f.code, []).append(f)

        def partner_key(f: CommodityFlow):
            return (f.dest if direction is Direction.EXPORT else f.origin, f.key)

        groups = MappingProxyType(
            {
                node: MappingProxyType(
                    {code: tuple(sorted(fs, key=partner_key)) for code, fs in sorted(by_code.items())}
                )
                for node, by_code in sorted(grouped.items())
            }
        )
        codes = sorted({f.code for f in matching})
        aggregates = MappingProxyType({c: self.aggregate_of(c) for c in codes})
        logger.debug(
            "snapshot year=%s level=%s direction=%s flows=%d",
            year,
            level.value,
            direction.value,
            len(matching),
        )
        return NetworkView(
            year=year,
            level=level,
            direction=direction,
            groups=groups,
            aggregates=aggregates,
            include_self_flows=include_self_flows,
        )

    # ------------------------------------------------------------------
    # Geometry and adjacency
    # ------------------------------------------------------------------

    def attach_geometry(self, region_id: str, geometry: 'Geometry') -> None:
        node = self.region(region_id)
        self.geometries[region_id] = geometry
        if node.geometry_ref != region_id:
            self.regions[region_id] = RegionNode(
                id=node.id,
                name=node.name,
                level=node.level,
                parent_id=node.parent_id,
                feature_code=node.feature_code,
                geometry_ref=region_id,
            )

    def set_adjacency(self, index: 'AdjacencyIndex') -> None:
        for a, b in index.pairs():
            self.region(a)
            self.region(b)
        self.adjacency = index

    # ------------------------------------------------------------------
    # Turtle
    # ------------------------------------------------------------------

    def to_rdf(self) -> Graph:
        """Build the rdflib graph for the current store state."""
        g = Graph(bind_namespaces='none')
        for prefix, iri in config.NAMESPACES.items():
            g.bind(prefix, Namespace(iri))

        for r in self.regions.values():
            subject = region_iri(r.id)
            g.add((subject, RDF.type, KWG.Region))
            g.add((subject, CFS.regionId, Literal(r.id)))
            g.add((subject, GN.name, Literal(r.name)))
            g.add((subject, CFS.geoLevel, Literal(r.level.value)))
            if r.parent_id is not None:
                g.add((subject, KWG.within, region_iri(r.parent_id)))
            if r.feature_code:
                feature = CFS[f"Feature.{_local(r.id)}"]
                g.add((subject, CFS.hasGnFeature, feature))
                g.add((feature, RDF.type, GN.Feature))
                g.add((feature, GN.featureCode, Literal(r.feature_code)))
            geometry = self.geometries.get(r.id)
            if geometry is not None:
                geom = CFS[f"Geometry.{_local(r.id)}"]
                g.add((subject, GEO.hasGeometry, geom))
                kind = GEO.GeometryCollection if geometry.members else GEO.Geometry
                g.add((geom, RDF.type, kind))
                g.add((geom, GEO.asWKT, Literal(geometry.to_wkt(), datatype=GEO.wktLiteral)))

        for c in self.codes.values():
            subject = code_iri(c.code)
            g.add((subject, RDF.type, CFS.CFCode))
            g.add((subject, CFS.codeValue, Literal(c.code)))
            g.add((subject, CFS.description, Literal(c.description)))
            g.add((subject, CFS.isAggregate, Literal(c.is_aggregate)))
            if c.parent is not None:
                g.add((subject, CFS.aggregatedTo, code_iri(c.parent)))
            if c.external_class_iri:
                g.add((subject, CFS.externalClass, URIRef(c.external_class_iri)))

        for f in self.flows.values():
            subject = flow_iri(f)
            g.add((subject, RDF.type, CFS.CFObject))
            g.add((subject, CFS.originRegion, region_iri(f.origin)))
            g.add((subject, CFS.destinationRegion, region_iri(f.dest)))
            g.add((subject, CFS.CFCode, code_iri(f.code)))
            g.add((subject, TIME.year, Literal(f.year)))
            g.add((subject, CFS.CFValue, _double(f.value)))
            g.add((subject, CFS.AvgMileage, _double(f.avg_mileage)))
            if f.weight is not None:
                g.add((subject, CFS.CFWeight, _double(f.weight)))

        if self.adjacency is not None:
            for a, b in self.adjacency.pairs():
                g.add((region_iri(a), GEO.ehMeet, region_iri(b)))
                g.add((region_iri(b), GEO.ehMeet, region_iri(a)))
        return g

    def export_turtle(self, sink: IO[bytes]) -> None:
        """Write the store as Turtle: prefix header, then one sorted triple per line."""
        g = self.to_rdf()
        nm = g.namespace_manager
        lines = [f"@prefix {p}: <{iri}> ." for p, iri in config.NAMESPACES.items()]
        lines.append('')
        rendered = sorted(
            (s.n3(nm), p.n3(nm), o.n3(nm)) for s, p, o in g
        )
        lines.extend(f"{s} {p} {o} ." for s, p, o in rendered)
        payload = ('\n'.join(lines) + '\n').encode('utf-8')
        try:
            sink.write(payload)
        except OSError as e:
            raise SinkWrite(f"could not write Turtle output: {e}")
        logger.info("exported %d triples", len(rendered))


def _local(identifier: str) -> str:
    return quote(str(identifier), safe='')


def region_iri(region_id: str) -> URIRef:
    return CFS[f"Region.{_local(region_id)}"]


def code_iri(code: str) -> URIRef:
    return CFS[f"Code.{_local(code)}"]


def flow_iri(flow: CommodityFlow) -> URIRef:
    parts = (str(flow.year), flow.origin, flow.dest, flow.code)
    return CFS['Flow.' + '.'.join(_local(p) for p in parts)]


def _double(value: float) -> Literal:
    return Literal(repr(float(value)), datatype=XSD.double)


def read_turtle(source: Union[str, bytes, IO[bytes]]) -> GraphStore:
    """Rebuild a store from an ``export_turtle`` dump (path, bytes or stream)."""
    from flowres.geo_adjacency import AdjacencyIndex, Geometry

    g = Graph()
    if isinstance(source, bytes):
        g.parse(data=source.decode('utf-8'), format='turtle')
    elif isinstance(source, str):
        g.parse(source, format='turtle')
    else:
        g.parse(data=source.read().decode('utf-8'), format='turtle')

    def one(subject, predicate):
        return g.value(subject, predicate)

    regions = []
    for subject in g.subjects(RDF.type, KWG.Region):
        parent = one(subject, KWG.within)
        feature = one(subject, CFS.hasGnFeature)
        regions.append(
            RegionNode(
                id=str(one(subject, CFS.regionId)),
                name=str(one(subject, GN.name)),
                level=RegionLevel(str(one(subject, CFS.geoLevel))),
                parent_id=str(one(parent, CFS.regionId)) if parent is not None else None,
                feature_code=str(one(feature, GN.featureCode)) if feature is not None else '',
            )
        )

    store = GraphStore()
    for r in sorted(regions, key=lambda r: (-r.level.rank, r.id)):
        store.upsert_region(r)

    codes = {}
    for subject in g.subjects(RDF.type, CFS.CFCode):
        parent = one(subject, CFS.aggregatedTo)
        external = one(subject, CFS.externalClass)
        codes[str(one(subject, CFS.codeValue))] = CommodityCode(
            code=str(one(subject, CFS.codeValue)),
            description=str(one(subject, CFS.description)),
            parent=str(one(parent, CFS.codeValue)) if parent is not None else None,
            is_aggregate=bool(one(subject, CFS.isAggregate).toPython()),
            external_class_iri=str(external) if external is not None else None,
        )
    for code in _parents_first(codes):
        store.add_code(codes[code])

    region_ids = {region_iri(r.id): r.id for r in regions}
    code_ids = {code_iri(c): c for c in codes}
    for subject in g.subjects(RDF.type, CFS.CFObject):
        weight = one(subject, CFS.CFWeight)
        store.add_flow(
            CommodityFlow(
                origin=region_ids[one(subject, CFS.originRegion)],
                dest=region_ids[one(subject, CFS.destinationRegion)],
                code=code_ids[one(subject, CFS.CFCode)],
                year=int(one(subject, TIME.year).toPython()),
                value=float(one(subject, CFS.CFValue).toPython()),
                avg_mileage=float(one(subject, CFS.AvgMileage).toPython()),
                weight=float(weight.toPython()) if weight is not None else None,
            )
        )

    for iri, region_id in region_ids.items():
        geom = one(iri, GEO.hasGeometry)
        if geom is not None:
            store.attach_geometry(region_id, Geometry.from_wkt(str(one(geom, GEO.asWKT))))

    pairs = [
        (region_ids[s], region_ids[o])
        for s, o in g.subject_objects(GEO.ehMeet)
        if s in region_ids and o in region_ids
    ]
    if pairs:
        store.set_adjacency(AdjacencyIndex.from_pairs(pairs))
    logger.info(
        "read %d regions, %d codes, %d flows from Turtle",
        len(store.regions),
        len(store.codes),
        len(store.flows),
    )
    return store


def _parents_first(codes: Mapping[str, CommodityCode]) -> Iterable[str]:
    forest = nx.DiGraph()
    forest.add_nodes_from(sorted(codes))
    forest.add_edges_from((c.parent, c.code) for c in codes.values() if c.parent is not None)
    return nx.lexicographical_topological_sort(forest)


__all__ = [
    'CommodityCode',
    'CommodityFlow',
    'Direction',
    'GraphStore',
    'NetworkView',
    'RegionLevel',
    'RegionNode',
    'read_turtle',
]
