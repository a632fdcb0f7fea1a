#!/usr/bin/env python3
"""
Reports and Output Writers
CSV / JSON tables, GeoJSON metric layers and the markdown network report.

CSV floats use a fixed precision so outputs can be compared byte for byte;
JSON keeps full precision.
"""

import json
import logging
from typing import IO, Dict, List, Mapping, Optional, Sequence

import polars as pl

from flowres import config
from flowres.errors import MissingGeometry, SinkWrite
from flowres.geo_adjacency import Geometry
from flowres.graph_store import Direction
from flowres.query import (
    NetworkRow,
    RankDelta,
    RankedEntry,
    format_change,
    percent_change,
)

logger = logging.getLogger(__name__)


def write_csv(df: pl.DataFrame, sink: IO[str]) -> None:
    try:
        sink.write(df.write_csv(float_precision=config.CSV_FLOAT_PRECISION))
    except OSError as e:
        raise SinkWrite(f"could not write CSV output: {e}")


def write_json(payload: dict, sink: IO[str]) -> None:
    try:
        sink.write(json.dumps(payload, indent=2) + '\n')
    except OSError as e:
        raise SinkWrite(f"could not write JSON output: {e}")


def entry_record(e: RankedEntry) -> dict:
    return {
        'rank': e.rank,
        'node_id': e.node_id,
        'name': e.name,
        'R': e.resilience,
        'V_prime': e.adjusted_total,
        'I': e.influence,
    }


def entries_payload(function: str, entries: Sequence[RankedEntry], params: Mapping) -> dict:
    first = entries[0] if entries else None
    return {
        'function': function,
        'year': first.year if first else None,
        'level': first.level.value.lower() if first else None,
        'direction': first.direction.value.lower() if first else None,
        'params': dict(params),
        'rows': [entry_record(e) for e in entries],
    }


def rank_delta_payload(years: Sequence[int], rows: Sequence[RankDelta], params: Mapping) -> dict:
    return {
        'function': 'rank_delta',
        'years': list(years),
        'params': dict(params),
        'rows': [
            {
                'node_id': r.node_id,
                'rank_a': r.rank_a,
                'rank_b': r.rank_b,
                'delta': r.delta,
                'I_a': r.influence_a,
                'I_b': r.influence_b,
                'I_change_pct': r.influence_change_pct,
            }
            for r in rows
        ],
    }


def network_payload(rows: Sequence[NetworkRow], params: Mapping) -> dict:
    return {
        'function': 'network_resilience',
        'params': dict(params),
        'rows': [
            {
                'year': r.year,
                'level': r.level.value.lower(),
                'R_net': r.report.overall,
                'R_in': r.report.r_in,
                'R_out': r.report.r_out,
                'max_influence': {
                    d.value.lower(): {
                        'node_id': r.report.directions[d].argmax,
                        'I': r.report.directions[d].max_influence,
                    }
                    for d in (Direction.IMPORT, Direction.EXPORT)
                },
            }
            for r in rows
        ],
    }


def metric_layer(
    geometries: Mapping[str, Geometry],
    entries: Sequence[RankedEntry],
    names: Optional[Mapping[str, str]] = None,
) -> dict:
    """FeatureCollection with R, I and rank on every feature, ready for a choropleth."""
    if not geometries:
        raise MissingGeometry("no geometries in the workspace (ingest with --geojson)")
    names = names or {}
    by_node = {e.node_id: e for e in entries}
    features = []
    for region_id in sorted(geometries):
        e = by_node.get(region_id)
        features.append(
            {
                'type': 'Feature',
                'id': region_id,
                'properties': {
                    'id': region_id,
                    'name': e.name if e else names.get(region_id, region_id),
                    'R': e.resilience if e else None,
                    'I': e.influence if e else None,
                    'rank': e.rank if e else None,
                },
                'geometry': geometries[region_id].to_geojson(),
            }
        )
    return {'type': 'FeatureCollection', 'features': features}


def render_network_report(rows: Sequence[NetworkRow], params: Mapping = None) -> str:
    """Markdown report: R_net per scale and year, change, and the most influential nodes."""
    years = sorted({r.year for r in rows})
    levels: List = []
    for r in rows:
        if r.level not in levels:
            levels.append(r.level)
    by_key: Dict = {(r.level, r.year): r for r in rows}
    params = params or {}

    header = ['Scale', *[str(y) for y in years]]
    if len(years) > 1:
        header.append('Change')
    table = ['| ' + ' | '.join(header) + ' |', '|' + '---|' * len(header)]
    for level in levels:
        cells = [level.value.capitalize()]
        for year in years:
            row = by_key.get((level, year))
            cells.append(f"{row.report.overall:.3f}" if row else 'n/a')
        if len(years) > 1:
            first, last = by_key.get((level, years[0])), by_key.get((level, years[-1]))
            change = (
                percent_change(first.report.overall, last.report.overall)
                if first and last
                else None
            )
            cells.append(format_change(change) or 'n/a')
        table.append('| ' + ' | '.join(cells) + ' |')

    details = []
    for r in rows:
        imp = r.report.directions[Direction.IMPORT]
        exp = r.report.directions[Direction.EXPORT]
        details.append(
            f"- **{r.level.value.capitalize()} {r.year}**: "
            f"R_in {imp.resilience:.3f} (top importer {imp.argmax}, I={imp.max_influence:.3f}) / "
            f"R_out {exp.resilience:.3f} (top exporter {exp.argmax}, I={exp.max_influence:.3f})"
        )

    setting = ', '.join(f"{k}={v}" for k, v in params.items()) or 'defaults'
    newline = '\n'
    return f"""# Network-Level Resilience Report

Parameters: {setting}

## Overall Resilience

{newline.join(table)}

## By Direction

{newline.join(details)}

---
*Report generated by flowres*
"""
