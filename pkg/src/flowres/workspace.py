#!/usr/bin/env python3
"""
Workspace Bundle
Persists a populated store between CLI invocations.

A bundle directory holds:
  graph.ttl            deterministic Turtle dump (the interoperability half)
  *.parquet            regions / codes / flows / adjacency sidecars (fast reload)
  geometries.geojson   attached region geometries, when any
  manifest.json        entity counts and sha256 of every file
"""

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, Union

import polars as pl

from flowres import __version__, config
from flowres.errors import ParseError, SinkWrite
from flowres.geo_adjacency import AdjacencyIndex, Geometry
from flowres.graph_store import CommodityCode, CommodityFlow, GraphStore, RegionLevel, RegionNode

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REGION_SCHEMA = {
    'id': pl.Utf8,
    'name': pl.Utf8,
    'level': pl.Utf8,
    'parent_id': pl.Utf8,
    'feature_code': pl.Utf8,
}
CODE_SCHEMA = {
    'code': pl.Utf8,
    'description': pl.Utf8,
    'parent': pl.Utf8,
    'is_aggregate': pl.Boolean,
    'external_class': pl.Utf8,
}
FLOW_SCHEMA = {
    'year': pl.Int64,
    'origin_id': pl.Utf8,
    'dest_id': pl.Utf8,
    'sctg_code': pl.Utf8,
    'value_musd': pl.Float64,
    'avg_miles': pl.Float64,
    'weight': pl.Float64,
}
ADJACENCY_SCHEMA = {'id_a': pl.Utf8, 'id_b': pl.Utf8}


def compute_hash(path: Path) -> str:
    """SHA256 of a file's bytes."""
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _frames(store: GraphStore) -> Dict[str, pl.DataFrame]:
    regions = pl.DataFrame(
        [
            {
                'id': r.id,
                'name': r.name,
                'level': r.level.value,
                'parent_id': r.parent_id,
                'feature_code': r.feature_code,
            }
            for r in sorted(store.regions.values(), key=lambda r: r.id)
        ],
        schema=REGION_SCHEMA,
    )
    codes = pl.DataFrame(
        [
            {
                'code': c.code,
                'description': c.description,
                'parent': c.parent,
                'is_aggregate': c.is_aggregate,
                'external_class': c.external_class_iri,
            }
            for c in sorted(store.codes.values(), key=lambda c: c.code)
        ],
        schema=CODE_SCHEMA,
    )
    flows = pl.DataFrame(
        [
            {
                'year': f.year,
                'origin_id': f.origin,
                'dest_id': f.dest,
                'sctg_code': f.code,
                'value_musd': f.value,
                'avg_miles': f.avg_mileage,
                'weight': f.weight,
            }
            for _, f in sorted(store.flows.items())
        ],
        schema=FLOW_SCHEMA,
    )
    pairs = store.adjacency.pairs() if store.adjacency is not None else []
    adjacency = pl.DataFrame(
        [{'id_a': a, 'id_b': b} for a, b in pairs], schema=ADJACENCY_SCHEMA
    )
    return {'regions': regions, 'codes': codes, 'flows': flows, 'adjacency': adjacency}


def save_bundle(store: GraphStore, directory: PathLike) -> dict:
    """Write the bundle and return its manifest."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / config.BUNDLE_FILES['graph'], 'wb') as f:
            store.export_turtle(f)

        for name, df in _frames(store).items():
            df.write_parquet(out / config.BUNDLE_FILES[name], use_pyarrow=True)

        geometry_path = out / config.BUNDLE_FILES['geometries']
        if store.geometries:
            features = [
                {
                    'type': 'Feature',
                    'properties': {'id': region_id},
                    'geometry': store.geometries[region_id].to_geojson(),
                }
                for region_id in sorted(store.geometries)
            ]
            with open(geometry_path, 'w', encoding='utf-8') as f:
                json.dump({'type': 'FeatureCollection', 'features': features}, f)
        elif geometry_path.exists():
            geometry_path.unlink()
    except OSError as e:
        raise SinkWrite(f"could not write workspace bundle: {e}").at(str(out))

    files = [
        config.BUNDLE_FILES[key]
        for key in ('graph', 'regions', 'codes', 'flows', 'adjacency', 'geometries')
        if (out / config.BUNDLE_FILES[key]).exists()
    ]
    manifest = {
        'version': __version__,
        'created': datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
        'counts': {
            'regions': len(store.regions),
            'codes': len(store.codes),
            'flows': len(store.flows),
            'adjacent_pairs': len(store.adjacency) if store.adjacency is not None else 0,
            'geometries': len(store.geometries),
        },
        'levels': {
            level.value.lower(): len(store.regions_at(level)) for level in RegionLevel
        },
        'years': store.years(),
        'sha256': {name: compute_hash(out / name) for name in files},
    }
    with open(out / config.BUNDLE_FILES['manifest'], 'w') as f:
        json.dump(manifest, f, indent=2)

    logger.info("saved workspace bundle to %s (%d flows)", out, len(store.flows))
    return manifest


def load_manifest(directory: PathLike) -> dict:
    path = Path(directory) / config.BUNDLE_FILES['manifest']
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ParseError("no workspace bundle here (run `flowres ingest` first)").at(str(path))
    except json.JSONDecodeError as e:
        raise ParseError(f"corrupt manifest: {e}").at(str(path))


def load_bundle(directory: PathLike, verify: bool = True) -> GraphStore:
    """Rebuild a store from the Parquet sidecars (and geometries, if present)."""
    root = Path(directory)
    manifest = load_manifest(root)
    if verify:
        for name, digest in manifest.get('sha256', {}).items():
            path = root / name
            if not path.exists() or compute_hash(path) != digest:
                raise ParseError("file does not match the manifest checksum").at(str(path))

    def read(name: str) -> pl.DataFrame:
        path = root / config.BUNDLE_FILES[name]
        try:
            return pl.read_parquet(path, use_pyarrow=True)
        except FileNotFoundError:
            raise ParseError("missing bundle file").at(str(path))

    store = GraphStore()
    regions = [
        RegionNode(
            id=row['id'],
            name=row['name'],
            level=RegionLevel(row['level']),
            parent_id=row['parent_id'],
            feature_code=row['feature_code'] or '',
        )
        for row in read('regions').iter_rows(named=True)
    ]
    for node in sorted(regions, key=lambda r: (-r.level.rank, r.id)):
        store.upsert_region(node)

    codes = {
        row['code']: CommodityCode(
            code=row['code'],
            description=row['description'] or '',
            parent=row['parent'],
            is_aggregate=bool(row['is_aggregate']),
            external_class_iri=row['external_class'],
        )
        for row in read('codes').iter_rows(named=True)
    }
    pending = dict(codes)
    while pending:
        ready = sorted(c for c, e in pending.items() if e.parent is None or e.parent in store.codes)
        if not ready:
            raise ParseError("codes sidecar has unresolved parents").at(str(root))
        for code in ready:
            store.add_code(pending.pop(code))

    for row in read('flows').iter_rows(named=True):
        store.add_flow(
            CommodityFlow(
                origin=row['origin_id'],
                dest=row['dest_id'],
                code=row['sctg_code'],
                year=row['year'],
                value=row['value_musd'],
                avg_mileage=row['avg_miles'],
                weight=row['weight'],
            )
        )

    pairs = [(row['id_a'], row['id_b']) for row in read('adjacency').iter_rows(named=True)]
    if pairs:
        store.set_adjacency(AdjacencyIndex.from_pairs(pairs))

    geometry_path = root / config.BUNDLE_FILES['geometries']
    if geometry_path.exists():
        with open(geometry_path, encoding='utf-8') as f:
            collection = json.load(f)
        for feature in collection['features']:
            store.attach_geometry(
                feature['properties']['id'], Geometry.from_geojson(feature['geometry'])
            )

    logger.info(
        "loaded workspace %s: %d regions, %d flows", root, len(store.regions), len(store.flows)
    )
    return store
