#!/usr/bin/env python3
"""
flowres command line
  ingest       load regions / codes / flows (+ adjacency) into a workspace bundle
  resilience   rank nodes by resilience R
  influence    rank nodes by influence I
  network      network-level resilience per (year, level)
  rank-delta   influence rank changes between two years
  export       Turtle dump, GeoJSON metric layer or flat metric CSV

Exit codes: 0 success, 1 data or selection error, 2 usage error.
"""

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence

from flowres import config
from flowres.errors import FlowresError, MissingGeometry, SinkWrite
from flowres.geo_adjacency import (
    collect_geometries,
    derive_adjacency,
    lift_adjacency,
    load_adjacency,
    merge,
    read_geometries,
)
from flowres.graph_store import Direction, GraphStore, RegionLevel
from flowres.ingest import (
    RollupPolicy,
    SelfFlowHandling,
    SuppressedPolicy,
    load_codes,
    load_flows,
    load_regions,
    rollup,
)
from flowres.query import (
    METRIC_COLUMNS,
    RESILIENCE_COLUMNS,
    QueryFunction,
    QueryRequest,
    ResilienceQueries,
    entries_frame,
    network_frame,
    rank_delta_frame,
)
from flowres.report import (
    entries_payload,
    metric_layer,
    network_payload,
    rank_delta_payload,
    render_network_report,
    write_csv,
    write_json,
)
from flowres.workspace import load_bundle, save_bundle

logger = logging.getLogger('flowres')


@dataclass(frozen=True)
class CliConfig:
    """Settings shared by every subcommand, after flags and environment are merged."""

    workspace: Path
    atm: str = config.DEFAULT_ATM_MODE
    ga: float = config.DEFAULT_GA_FACTOR
    include_self_flows: bool = config.DEFAULT_INCLUDE_SELF_FLOWS
    output_format: str = 'csv'
    output: Optional[Path] = None
    workers: int = 1
    verbose: bool = False

    @classmethod
    def from_args(cls, args: argparse.Namespace, environ: Mapping[str, str] = None) -> 'CliConfig':
        environ = os.environ if environ is None else environ
        workspace = environ.get(config.WORKSPACE_ENV) or args.workspace
        return cls(
            workspace=Path(workspace),
            atm=getattr(args, 'atm', config.DEFAULT_ATM_MODE),
            ga=getattr(args, 'ga', config.DEFAULT_GA_FACTOR),
            include_self_flows=not getattr(args, 'exclude_self_flows', False),
            output_format=getattr(args, 'out', 'csv'),
            output=Path(args.output) if getattr(args, 'output', None) else None,
            workers=args.workers,
            verbose=args.verbose,
        )

    def params(self) -> dict:
        return {'atm': self.atm, 'ga': self.ga, 'include_self_flows': self.include_self_flows}


def status(message: str) -> None:
    """Human summary line; stderr keeps stdout clean for tables."""
    print(message, file=sys.stderr)


@contextmanager
def open_output(cfg: CliConfig, binary: bool = False):
    if cfg.output is None:
        yield sys.stdout.buffer if binary else sys.stdout
        return
    try:
        cfg.output.parent.mkdir(parents=True, exist_ok=True)
        handle = open(cfg.output, 'wb' if binary else 'w', encoding=None if binary else 'utf-8')
    except OSError as e:
        raise SinkWrite(f"cannot open output: {e}").at(str(cfg.output))
    with handle:
        yield handle
    status(f"✅ Saved to {cfg.output}")


# ----------------------------------------------------------------------
# Argument types
# ----------------------------------------------------------------------


def level_arg(token: str) -> RegionLevel:
    try:
        return RegionLevel.parse(token)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def levels_arg(token: str) -> List[RegionLevel]:
    return [level_arg(t) for t in token.split(',') if t.strip()]


def direction_arg(token: str) -> Direction:
    try:
        return Direction.parse(token)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def years_arg(token: str) -> List[int]:
    try:
        years = [int(t) for t in token.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"years must be comma-separated integers, got {token!r}")
    if not years:
        raise argparse.ArgumentTypeError("at least one year is required")
    return years


def ga_arg(token: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{token!r} is not a number")
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"ga must be in (0, 1], got {value}")
    return value


def positive_int(token: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{token!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, cfg: CliConfig) -> int:
    store = GraphStore()
    load_regions(store, args.regions)
    load_codes(store, args.codes)
    stored = load_flows(store, args.flows, SuppressedPolicy(args.suppressed))
    status(f"📊 Loaded {len(store.regions)} regions, {len(store.codes)} codes, {stored} flows")

    if args.rollup:
        handling = SelfFlowHandling(args.self_flows)
        for year in store.years(RegionLevel.STATE):
            for target in (RegionLevel.DIVISION, RegionLevel.REGION):
                policy = RollupPolicy(target, self_flow_handling=handling)
                added = rollup(store, RegionLevel.STATE, policy, year)
                status(f"   Rolled {year} up to {target.value.lower()}: {added} flows")

    if args.adjacency:
        states = load_adjacency(args.adjacency, store)
        index = merge(
            states,
            lift_adjacency(states, store, RegionLevel.DIVISION),
            lift_adjacency(states, store, RegionLevel.REGION),
        )
        store.set_adjacency(index)
    elif args.geojson:
        geometries = read_geometries(args.geojson)
        for region_id in sorted(geometries):
            if region_id in store.regions:
                store.attach_geometry(region_id, geometries[region_id])
            else:
                logger.warning("geometry for unknown region %r ignored", region_id)
        per_level = []
        for level in RegionLevel:
            collected = collect_geometries(store, store.geometries, level)
            if collected:
                per_level.append(
                    derive_adjacency(
                        collected, args.tolerance, require_shared_edge=args.shared_edge
                    )
                )
        store.set_adjacency(merge(*per_level))
    if store.adjacency is not None:
        status(f"   Adjacent pairs: {len(store.adjacency)}")

    save_bundle(store, cfg.workspace)
    status(f"✅ Workspace saved to {cfg.workspace}")
    print(f"regions={len(store.regions)} flows={len(store.flows)}")
    return 0


def _ranked(args: argparse.Namespace, cfg: CliConfig, function: QueryFunction) -> int:
    store = load_bundle(cfg.workspace)
    if function is not QueryFunction.INFLUENCE:
        function = (
            QueryFunction.NODE_EXPORT_RESILIENCE
            if args.direction is Direction.EXPORT
            else QueryFunction.NODE_IMPORT_RESILIENCE
        )
    req = QueryRequest(
        function=function,
        years=(args.year,),
        level=args.level,
        atm=cfg.atm,
        ga=cfg.ga,
        top_k=args.top,
        node=args.node,
        direction=args.direction,
        include_self_flows=cfg.include_self_flows,
    )
    entries = ResilienceQueries(store, workers=cfg.workers).run(req)
    with open_output(cfg) as sink:
        if cfg.output_format == 'json':
            write_json(entries_payload(function.value, entries, cfg.params()), sink)
        else:
            write_csv(entries_frame(entries, RESILIENCE_COLUMNS), sink)
    if entries:
        head = entries[0]
        status(
            f"📊 {len(entries)} nodes ranked; top {head.node_id}: "
            f"R={head.resilience:.3f} I={head.influence:.3f}"
        )
    return 0


def cmd_resilience(args: argparse.Namespace, cfg: CliConfig) -> int:
    return _ranked(args, cfg, QueryFunction.NODE_EXPORT_RESILIENCE)


def cmd_influence(args: argparse.Namespace, cfg: CliConfig) -> int:
    return _ranked(args, cfg, QueryFunction.INFLUENCE)


def cmd_network(args: argparse.Namespace, cfg: CliConfig) -> int:
    store = load_bundle(cfg.workspace)
    queries = ResilienceQueries(store, workers=cfg.workers)
    rows = []
    for level in args.levels:
        req = QueryRequest(
            function=QueryFunction.NETWORK_RESILIENCE,
            years=tuple(args.years),
            level=level,
            atm=cfg.atm,
            ga=cfg.ga,
            include_self_flows=cfg.include_self_flows,
        )
        rows.extend(queries.run(req))

    with open_output(cfg) as sink:
        if cfg.output_format == 'json':
            write_json(network_payload(rows, cfg.params()), sink)
        elif cfg.output_format == 'md':
            sink.write(render_network_report(rows, cfg.params()))
        else:
            write_csv(network_frame(rows), sink)

    status("📊 Network Resilience:")
    for r in rows:
        status(f"   {r.level.value.lower():<9} {r.year}: {r.report.overall:.3f}")
    return 0


def cmd_rank_delta(args: argparse.Namespace, cfg: CliConfig) -> int:
    if len(args.years) != 2:
        args.parser.error("--years needs exactly two years (a,b)")
    store = load_bundle(cfg.workspace)
    req = QueryRequest(
        function=QueryFunction.RANK_DELTA,
        years=tuple(args.years),
        level=args.level,
        atm=cfg.atm,
        ga=cfg.ga,
        direction=args.direction,
        include_self_flows=cfg.include_self_flows,
    )
    rows = ResilienceQueries(store, workers=cfg.workers).run(req)
    with open_output(cfg) as sink:
        if cfg.output_format == 'json':
            write_json(rank_delta_payload(args.years, rows, cfg.params()), sink)
        else:
            write_csv(rank_delta_frame(rows), sink)
    moved = sum(1 for r in rows if r.delta)
    status(f"📊 {len(rows)} nodes compared, {moved} changed rank")
    return 0


def cmd_export(args: argparse.Namespace, cfg: CliConfig) -> int:
    store = load_bundle(cfg.workspace)
    if args.format == 'turtle':
        with open_output(cfg, binary=True) as sink:
            store.export_turtle(sink)
        return 0

    if args.year is None:
        args.parser.error(f"--year is required for --format {args.format}")
    function = QueryFunction.INFLUENCE if args.metric == 'i' else (
        QueryFunction.NODE_EXPORT_RESILIENCE
        if args.direction is Direction.EXPORT
        else QueryFunction.NODE_IMPORT_RESILIENCE
    )
    req = QueryRequest(
        function=function,
        years=(args.year,),
        level=args.level,
        atm=cfg.atm,
        ga=cfg.ga,
        direction=args.direction,
        include_self_flows=cfg.include_self_flows,
    )
    if args.format == 'geojson':
        if not store.geometries:
            raise MissingGeometry("no geometries in the workspace (ingest with --geojson)")
        geometries = collect_geometries(store, store.geometries, args.level)
        names = {r.id: r.name for r in store.regions_at(args.level)}
        entries = ResilienceQueries(store, workers=cfg.workers).run(req)
        layer = metric_layer(geometries, entries, names)
        with open_output(cfg) as sink:
            write_json(layer, sink)
        status(f"📊 {len(layer['features'])} features written")
        return 0

    entries = ResilienceQueries(store, workers=cfg.workers).run(req)
    with open_output(cfg) as sink:
        write_csv(entries_frame(entries, METRIC_COLUMNS), sink)
    return 0


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--workspace', default=config.DEFAULT_WORKSPACE,
                        help=f'Workspace bundle directory (overridden by ${config.WORKSPACE_ENV})')
    common.add_argument('--workers', type=positive_int, default=1,
                        help='Threads for per-node metric evaluation')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')

    params = argparse.ArgumentParser(add_help=False)
    params.add_argument('--atm', choices=['sqrt', 'unity'], default=config.DEFAULT_ATM_MODE,
                        help='Mileage weighting alpha')
    params.add_argument('--ga', type=ga_arg, default=config.DEFAULT_GA_FACTOR,
                        help='Adjacency factor beta for adjacent partners, in (0, 1]')
    params.add_argument('--exclude-self-flows', action='store_true',
                        help='Drop flows whose origin equals destination')

    view = argparse.ArgumentParser(add_help=False)
    view.add_argument('--level', type=level_arg, default=RegionLevel.STATE,
                      help='state, division or region')
    view.add_argument('--direction', type=direction_arg, default=Direction.EXPORT,
                      help='import or export')

    parser = argparse.ArgumentParser(
        prog='flowres', description='Resilience analysis of commodity flow networks'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('ingest', parents=[common], help='Build a workspace from CSV files')
    p.add_argument('--regions', required=True, help='regions.csv')
    p.add_argument('--codes', required=True, help='codes.csv')
    p.add_argument('--flows', required=True, help='flows.csv')
    where = p.add_mutually_exclusive_group()
    where.add_argument('--adjacency', help='id_a,id_b CSV of adjacent states')
    where.add_argument('--geojson', help='FeatureCollection of state polygons (property "id")')
    p.add_argument('--suppressed', choices=[s.value for s in SuppressedPolicy],
                   default=SuppressedPolicy.DROP.value, help='Handling of "S" cells')
    p.add_argument('--rollup', action='store_true',
                   help='Synthesize division and region flows from state flows')
    p.add_argument('--self-flows', choices=[s.value for s in SelfFlowHandling],
                   default=SelfFlowHandling.KEEP.value, help='Rollup handling of intra-unit flows')
    p.add_argument('--tolerance', type=float, default=config.DEFAULT_TOLERANCE_DEG,
                   help='Meet tolerance in degrees (with --geojson)')
    p.add_argument('--shared-edge', action='store_true',
                   help='Require a shared edge; corner contact is not adjacency')
    p.set_defaults(func=cmd_ingest, parser=p)

    for name, func, what in (
        ('resilience', cmd_resilience, 'R'),
        ('influence', cmd_influence, 'I'),
    ):
        p = sub.add_parser(name, parents=[common, params, view], help=f'Rank nodes by {what}')
        p.add_argument('--year', type=int, required=True)
        p.add_argument('--top', type=positive_int, default=None, help='Keep the first N rows')
        p.add_argument('--node', default=None, help='Report a single node')
        p.add_argument('--out', choices=['csv', 'json'], default='csv')
        p.add_argument('-o', '--output', default=None, help='Output file (default stdout)')
        p.set_defaults(func=func, parser=p)

    p = sub.add_parser('network', parents=[common, params], help='Network-level resilience')
    p.add_argument('--years', type=years_arg, required=True, help='e.g. 2012,2017')
    p.add_argument('--levels', type=levels_arg, default=[RegionLevel.STATE],
                   help='e.g. state,division,region')
    p.add_argument('--out', choices=['csv', 'json', 'md'], default='csv')
    p.add_argument('-o', '--output', default=None)
    p.set_defaults(func=cmd_network, parser=p)

    p = sub.add_parser('rank-delta', parents=[common, params, view],
                       help='Influence rank change between two years')
    p.add_argument('--years', type=years_arg, required=True, help='a,b')
    p.add_argument('--out', choices=['csv', 'json'], default='csv')
    p.add_argument('-o', '--output', default=None)
    p.set_defaults(func=cmd_rank_delta, parser=p)

    p = sub.add_parser('export', parents=[common, params, view], help='Export graph or metrics')
    p.add_argument('--format', choices=['turtle', 'geojson', 'csv'], default='turtle')
    p.add_argument('--metric', choices=['r', 'i'], default='r', help='Ranking metric')
    p.add_argument('--year', type=int, default=None)
    p.add_argument('-o', '--output', default=None)
    p.set_defaults(func=cmd_export, parser=p)

    return parser


def main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format='%(levelname)s %(name)s: %(message)s',
            stream=sys.stderr,
        )
        cfg = CliConfig.from_args(args)
        return args.func(args, cfg)
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 2
    except FlowresError as e:
        status(f"❌ {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
