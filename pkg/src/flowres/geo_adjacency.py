#!/usr/bin/env python3
"""
Geographic Adjacency
Decides which regions meet (boundaries touch, interiors disjoint).

Adjacency either comes from a precomputed id_a,id_b list or is derived from
polygon geometries with shapely. Divisions and regions are geometry
collections of their member states; two collections meet when any member
pair meets.
"""

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple, Union

import shapely
from shapely import wkt
from shapely.geometry import GeometryCollection, MultiPolygon, Polygon, mapping
from shapely.strtree import STRtree

from flowres import config
from flowres.errors import InvalidRing, MissingGeometry, ParseError, SelfPair, UnknownRegion
from flowres.graph_store import GraphStore, RegionLevel
from flowres.ingest import numbered_rows, read_table

logger = logging.getLogger(__name__)

Ring = Tuple[Tuple[float, float], ...]
PolygonRings = Tuple[Ring, ...]

# Interiors intersect (first cell of the DE-9IM matrix)
INTERIOR_OVERLAP = 'T********'


def validate_ring(ring: Sequence[Sequence[float]]) -> Ring:
    """Closed ring of at least four (lon, lat) vertices."""
    points = tuple((float(p[0]), float(p[1])) for p in ring)
    if len(points) < 4:
        raise InvalidRing(f"ring has {len(points)} vertices (need at least 4)")
    if points[0] != points[-1]:
        raise InvalidRing(f"ring is not closed: {points[0]} != {points[-1]}")
    return points


@dataclass(frozen=True)
class Geometry:
    """One or more polygons, or a collection of member geometries."""

    polygons: Tuple[PolygonRings, ...] = ()
    members: Tuple['Geometry', ...] = ()

    def __post_init__(self):
        for rings in self.polygons:
            if not rings:
                raise InvalidRing("polygon without an exterior ring")
            for ring in rings:
                validate_ring(ring)

    @classmethod
    def from_coordinates(
        cls, polygons: Iterable[Iterable[Sequence[Sequence[float]]]]
    ) -> 'Geometry':
        return cls(polygons=tuple(tuple(validate_ring(r) for r in rings) for rings in polygons))

    @classmethod
    def from_geojson(cls, geometry: Mapping) -> 'Geometry':
        kind = geometry.get('type')
        if kind == 'Polygon':
            return cls.from_coordinates([geometry['coordinates']])
        if kind == 'MultiPolygon':
            return cls.from_coordinates(geometry['coordinates'])
        if kind == 'GeometryCollection':
            return cls.collection(cls.from_geojson(g) for g in geometry['geometries'])
        raise InvalidRing(f"unsupported geometry type {kind!r}")

    @classmethod
    def from_shapely(cls, geom) -> 'Geometry':
        if isinstance(geom, GeometryCollection):
            return cls.collection(cls.from_shapely(g) for g in geom.geoms)
        polygons = list(geom.geoms) if isinstance(geom, MultiPolygon) else [geom]
        return cls.from_coordinates(
            [[p.exterior.coords, *[i.coords for i in p.interiors]] for p in polygons]
        )

    @classmethod
    def from_wkt(cls, text: str) -> 'Geometry':
        return cls.from_shapely(wkt.loads(text))

    @classmethod
    def collection(cls, members: Iterable['Geometry']) -> 'Geometry':
        return cls(members=tuple(members))

    def parts(self) -> List[MultiPolygon]:
        """One shapely geometry per member (a plain geometry is its own member)."""
        if self.members:
            return [p for m in self.members for p in m.parts()]
        polygons = [Polygon(rings[0], rings[1:]) for rings in self.polygons]
        return [MultiPolygon(polygons)]

    def to_shapely(self):
        if self.members:
            return GeometryCollection(self.parts())
        return self.parts()[0]

    def to_wkt(self) -> str:
        return shapely.to_wkt(self.to_shapely(), rounding_precision=-1)

    def to_geojson(self) -> dict:
        return mapping(self.to_shapely())


@dataclass(frozen=True)
class AdjacencyIndex:
    """Symmetric, irreflexive set of adjacent region pairs."""

    edges: FrozenSet[FrozenSet[str]] = frozenset()

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[str, str]]) -> 'AdjacencyIndex':
        edges = set()
        for a, b in pairs:
            if a == b:
                raise SelfPair(f"region {a!r} cannot be adjacent to itself")
            edges.add(frozenset((a, b)))
        return cls(frozenset(edges))

    def is_adjacent(self, a: str, b: str) -> bool:
        if a == b:
            return False
        return frozenset((a, b)) in self.edges

    def pairs(self) -> List[Tuple[str, str]]:
        """Sorted (a, b) pairs with a < b."""
        return sorted(tuple(sorted(e)) for e in self.edges)

    def __len__(self) -> int:
        return len(self.edges)


def is_adjacent(index: AdjacencyIndex, a: str, b: str) -> bool:
    return index.is_adjacent(a, b)


def load_adjacency(path: Union[str, Path], store: GraphStore = None) -> AdjacencyIndex:
    """Read an id_a,id_b CSV. Ids are checked against ``store`` when given."""
    df = read_table(path, config.ADJACENCY_HEADER)

    pairs = []
    for line, row in numbered_rows(df, "Reading adjacency"):
        a = (row['id_a'] or '').strip()
        b = (row['id_b'] or '').strip()
        if store is not None:
            for region_id in (a, b):
                if region_id not in store.regions:
                    raise UnknownRegion(f"unknown region {region_id!r}").at(str(path), line)
        if a == b:
            raise SelfPair(f"region {a!r} cannot be adjacent to itself").at(str(path), line)
        pairs.append((a, b))

    index = AdjacencyIndex.from_pairs(pairs)
    logger.info("loaded %d adjacent pairs from %s", len(index), path)
    return index


def read_geometries(path: Union[str, Path]) -> Dict[str, Geometry]:
    """Read a GeoJSON FeatureCollection whose features carry an ``id`` property."""
    try:
        with open(path, encoding='utf-8') as f:
            collection = json.load(f)
    except FileNotFoundError:
        raise ParseError("file not found").at(str(path))
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed GeoJSON: {e}").at(str(path), e.lineno)
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot read GeoJSON: {e}").at(str(path))
    if not isinstance(collection, dict) or not isinstance(collection.get('features', []), list):
        raise ParseError("expected a FeatureCollection").at(str(path))

    geometries = {}
    for idx, feature in enumerate(collection.get('features', [])):
        if not isinstance(feature, dict):
            raise ParseError(f"feature {idx} is not an object").at(str(path))
        region_id = (feature.get('properties') or {}).get('id')
        if region_id is None:
            raise ParseError(f"feature {idx} has no 'id' property").at(str(path))
        geometry = feature.get('geometry')
        if not isinstance(geometry, dict):
            raise ParseError(f"feature {region_id!r} has no geometry").at(str(path))
        try:
            geometries[str(region_id)] = Geometry.from_geojson(geometry)
        except InvalidRing as e:
            raise InvalidRing(f"feature {region_id!r}: {e.message}").at(str(path))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"feature {region_id!r}: malformed geometry ({e!r})").at(str(path))
    return geometries


def shares_edge(a, b) -> bool:
    """Contact of positive length, judged at the pair's own separation.

    Independent of the caller's tolerance, so a larger tolerance never drops a pair.
    """
    gap = a.distance(b)
    if gap == 0:
        return a.boundary.intersection(b.boundary).length > 0
    # a corner across the gap keeps at most ~4*gap of boundary within 2*gap
    return a.boundary.intersection(b.buffer(2 * gap)).length > 8 * gap


def meets(a, b, tolerance_deg: float, require_shared_edge: bool = False) -> bool:
    """Boundary contact within tolerance, interiors disjoint."""
    if a.relate_pattern(b, INTERIOR_OVERLAP):
        return False
    if a.distance(b) > tolerance_deg:
        return False
    return not require_shared_edge or shares_edge(a, b)


def derive_adjacency(
    geometries: Mapping[str, Geometry],
    tolerance_deg: float = config.DEFAULT_TOLERANCE_DEG,
    require_shared_edge: bool = False,
    region_ids: Iterable[str] = None,
) -> AdjacencyIndex:
    """Meet-based adjacency over every pair of regions in ``region_ids``."""
    if tolerance_deg < 0:
        raise ValueError("tolerance_deg must be >= 0")
    ids = sorted(region_ids) if region_ids is not None else sorted(geometries)
    for region_id in ids:
        if region_id not in geometries:
            raise MissingGeometry(f"no geometry for region {region_id!r}")

    part_owner: List[str] = []
    parts = []
    for region_id in ids:
        for part in geometries[region_id].parts():
            part_owner.append(region_id)
            parts.append(part)

    tree = STRtree(parts)
    edges = set()
    for i, part in enumerate(parts):
        for j in tree.query(part, predicate='dwithin', distance=tolerance_deg):
            j = int(j)
            a, b = part_owner[i], part_owner[j]
            if j <= i or a == b:
                continue
            if meets(part, parts[j], tolerance_deg, require_shared_edge):
                edges.add(frozenset((a, b)))

    index = AdjacencyIndex(frozenset(edges))
    logger.info("derived %d adjacent pairs from %d geometries", len(index), len(ids))
    return index


def collect_geometries(
    store: GraphStore, geometries: Mapping[str, Geometry], level: RegionLevel
) -> Dict[str, Geometry]:
    """Geometry collection of member states for every unit at ``level``."""
    if level is RegionLevel.STATE:
        return {r.id: geometries[r.id] for r in store.regions_at(level) if r.id in geometries}
    collected = {}
    for unit in store.regions_at(level):
        if unit.id in geometries:
            collected[unit.id] = geometries[unit.id]
            continue
        members = store.members_at(unit.id, RegionLevel.STATE)
        missing = [m for m in members if m not in geometries]
        if missing:
            raise MissingGeometry(f"no geometry for {missing[0]!r} (member of {unit.id!r})")
        if members:
            collected[unit.id] = Geometry.collection(geometries[m] for m in members)
    return collected


def lift_adjacency(index: AdjacencyIndex, store: GraphStore, level: RegionLevel) -> AdjacencyIndex:
    """Coarse units are adjacent when any pair of their members is adjacent."""
    pairs = set()
    for a, b in index.pairs():
        if store.region(a).level is not RegionLevel.STATE:
            continue
        ua, ub = store.ancestor_at(a, level), store.ancestor_at(b, level)
        if ua is not None and ub is not None and ua != ub:
            pairs.add(tuple(sorted((ua, ub))))
    return AdjacencyIndex.from_pairs(sorted(pairs))


def merge(*indexes: AdjacencyIndex) -> AdjacencyIndex:
    return AdjacencyIndex(frozenset(itertools.chain.from_iterable(i.edges for i in indexes)))
