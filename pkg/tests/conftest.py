from pathlib import Path

import pytest

from flowres.graph_store import CommodityCode, CommodityFlow, GraphStore, RegionLevel, RegionNode

FIXTURES = Path(__file__).resolve().parent.parent / 'data' / 'fixtures'


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def write_csv(tmp_path):
    """Write ``lines`` to a CSV file under tmp_path and return its path."""

    def _write(name: str, *lines: str) -> Path:
        path = tmp_path / name
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        return path

    return _write


def add_codes(store: GraphStore, groups=None) -> None:
    """Aggregates with their leaf codes, e.g. {'A': ['c1'], 'B': ['c2']}."""
    groups = groups or {'A': ['c1', 'c2'], 'B': ['c3', 'c4']}
    for aggregate, leaves in groups.items():
        store.add_code(CommodityCode(aggregate, is_aggregate=True))
        for leaf in leaves:
            store.add_code(CommodityCode(leaf, parent=aggregate))


def flat_store(nodes, flows=(), groups=None) -> GraphStore:
    """States without parents plus ``(origin, dest, code, value, atm)`` flows for 2017."""
    store = GraphStore()
    for node in nodes:
        store.upsert_region(RegionNode(node, node, RegionLevel.STATE))
    add_codes(store, groups)
    for origin, dest, code, value, atm in flows:
        store.add_flow(CommodityFlow(origin, dest, code, 2017, value, atm))
    return store


@pytest.fixture
def symmetric_store() -> GraphStore:
    """Two nodes trading the same goods (one code per aggregate) in both directions."""
    return flat_store(
        ['P', 'Q'],
        [
            ('P', 'Q', 'c1', 100.0, 400.0),
            ('P', 'Q', 'c3', 100.0, 400.0),
            ('Q', 'P', 'c1', 100.0, 400.0),
            ('Q', 'P', 'c3', 100.0, 400.0),
        ],
    )


@pytest.fixture
def census_store() -> GraphStore:
    """A slice of the census hierarchy: two divisions of the Midwest."""
    store = GraphStore()
    store.upsert_region(RegionNode('MIDWEST', 'Midwest', RegionLevel.REGION))
    for division, name in (
        ('EAST_NORTH_CENTRAL', 'East North Central'),
        ('WEST_NORTH_CENTRAL', 'West North Central'),
    ):
        store.upsert_region(RegionNode(division, name, RegionLevel.DIVISION, 'MIDWEST'))
    for state, name, division in (
        ('WI', 'Wisconsin', 'EAST_NORTH_CENTRAL'),
        ('IL', 'Illinois', 'EAST_NORTH_CENTRAL'),
        ('MI', 'Michigan', 'EAST_NORTH_CENTRAL'),
        ('MN', 'Minnesota', 'WEST_NORTH_CENTRAL'),
        ('IA', 'Iowa', 'WEST_NORTH_CENTRAL'),
    ):
        store.upsert_region(RegionNode(state, name, RegionLevel.STATE, division, 'ADM1'))
    add_codes(store, {'A': ['01', '02', '03'], 'B': ['06', '07']})
    return store


@pytest.fixture
def toy_store() -> GraphStore:
    """The 2x2 toy map with flows, border list and geometries attached."""
    from flowres.geo_adjacency import load_adjacency, read_geometries
    from flowres.ingest import load_codes, load_flows, load_regions

    store = GraphStore()
    load_regions(store, FIXTURES / 'toy_regions.csv')
    load_codes(store, FIXTURES / 'sctg_codes.csv')
    load_flows(store, FIXTURES / 'toy_flows.csv')
    store.set_adjacency(load_adjacency(FIXTURES / 'toy_adjacency.csv', store))
    for region_id, geometry in read_geometries(FIXTURES / 'toy_geometries.geojson').items():
        store.attach_geometry(region_id, geometry)
    return store
