import io

import pytest

from conftest import flat_store
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
from flowres.geo_adjacency import AdjacencyIndex, Geometry
from flowres.graph_store import (
    CommodityCode,
    CommodityFlow,
    Direction,
    GraphStore,
    RegionLevel,
    RegionNode,
    read_turtle,
)


def flow(origin='WI', dest='IL', code='02', year=2017, value=512.0, atm=210.0, weight=None):
    return CommodityFlow(origin, dest, code, year, value, atm, weight)


def turtle(store) -> bytes:
    sink = io.BytesIO()
    store.export_turtle(sink)
    return sink.getvalue()


class TestRegions:
    def test_upsert_parent_then_child(self):
        store = GraphStore()
        store.upsert_region(RegionNode('WEST', 'West', RegionLevel.REGION))
        store.upsert_region(RegionNode('PACIFIC', 'Pacific', RegionLevel.DIVISION, 'WEST'))
        assert store.region('PACIFIC').parent_id == 'WEST'
        assert store.children('WEST') == ['PACIFIC']

    def test_state_under_region_is_level_cycle(self):
        store = GraphStore()
        store.upsert_region(RegionNode('WEST', 'West', RegionLevel.REGION))
        with pytest.raises(LevelCycle):
            store.upsert_region(RegionNode('CA', 'California', RegionLevel.STATE, 'WEST'))

    def test_unknown_parent(self):
        with pytest.raises(DanglingParent):
            GraphStore().upsert_region(RegionNode('CA', 'California', RegionLevel.STATE, 'PACIFIC'))

    def test_reinsert_renames_and_keeps_hierarchy(self, census_store):
        census_store.upsert_region(
            RegionNode('WI', 'Badger State', RegionLevel.STATE, 'EAST_NORTH_CENTRAL', 'ADM1')
        )
        assert census_store.region('WI').name == 'Badger State'
        assert 'WI' in census_store.children('EAST_NORTH_CENTRAL')
        assert census_store.ancestor_at('WI', RegionLevel.REGION) == 'MIDWEST'

    def test_adm1_only_on_states(self):
        with pytest.raises(InvalidRegion):
            GraphStore().upsert_region(RegionNode('WEST', 'West', RegionLevel.REGION, None, 'ADM1'))

    def test_members_at(self, census_store):
        assert census_store.members_at('MIDWEST', RegionLevel.STATE) == ['IA', 'IL', 'MI', 'MN', 'WI']
        assert census_store.members_at('WEST_NORTH_CENTRAL', RegionLevel.STATE) == ['IA', 'MN']

    def test_unknown_region_lookup(self):
        with pytest.raises(UnknownRegion):
            GraphStore().region('ZZ')


class TestCodes:
    def test_aggregate_of(self, census_store):
        assert census_store.aggregate_of('02') == 'A'
        assert census_store.aggregate_of('07') == 'B'
        assert census_store.leaf_codes() == ['01', '02', '03', '06', '07']

    def test_self_parent(self):
        with pytest.raises(CycleDetected):
            GraphStore().add_code(CommodityCode('01', parent='01'))

    def test_reparent_into_cycle(self):
        store = GraphStore()
        store.add_code(CommodityCode('A', is_aggregate=True))
        store.add_code(CommodityCode('X', parent='A', is_aggregate=True))
        with pytest.raises(CycleDetected):
            store.add_code(CommodityCode('A', parent='X', is_aggregate=True))


class TestFlows:
    def test_add_and_lookup(self, census_store):
        census_store.add_flow(flow())
        assert census_store.flows[('WI', 'IL', '02', 2017)].value == 512.0

    def test_duplicate(self, census_store):
        census_store.add_flow(flow())
        with pytest.raises(DuplicateFlow):
            census_store.add_flow(flow(value=1.0))

    def test_negative_value(self, census_store):
        with pytest.raises(NegativeValue):
            census_store.add_flow(flow(value=-3.0))

    def test_unknown_references(self, census_store):
        with pytest.raises(UnknownRegion):
            census_store.add_flow(flow(origin='ZZ'))
        with pytest.raises(UnknownCode):
            census_store.add_flow(flow(code='99'))

    def test_aggregate_code_rejected(self, census_store):
        with pytest.raises(UnknownCode):
            census_store.add_flow(flow(code='A'))

    def test_level_mismatch(self, census_store):
        with pytest.raises(LevelMismatch):
            census_store.add_flow(flow(dest='WEST_NORTH_CENTRAL'))


class TestSnapshot:
    @pytest.fixture
    def store(self, census_store):
        for f in (
            flow(),
            flow('WI', 'MN', '01', value=40.0),
            flow('MN', 'IL', '06', value=75.0),
            flow('WI', 'IL', '02', year=2012, value=300.0),
            flow('IA', 'IL', '07', year=2012, value=20.0),
        ):
            census_store.add_flow(f)
        return census_store

    def test_filter_count(self, store):
        view = store.snapshot_view(2017, RegionLevel.STATE, Direction.EXPORT)
        assert view.flow_count == 3
        assert view.total_value() == 512.0 + 40.0 + 75.0

    def test_empty_selection(self, store):
        with pytest.raises(EmptySelection):
            store.snapshot_view(1999, RegionLevel.STATE, Direction.EXPORT)

    def test_import_groups_by_destination(self, store):
        view = store.snapshot_view(2017, RegionLevel.STATE, Direction.IMPORT)
        assert [f.origin for f in view.groups['IL']['02']] == ['WI']
        assert view.nodes() == ['IL', 'MN']

    def test_export_groups_by_origin(self, store):
        view = store.snapshot_view(2017, RegionLevel.STATE, Direction.EXPORT)
        assert sorted(view.groups['WI']) == ['01', '02']
        assert view.aggregates['06'] == 'B'

    def test_aggregates_follow_the_loaded_codes(self):
        store = flat_store(
            ['X', 'Y'],
            [('X', 'Y', 'grain', 5.0, 10.0), ('X', 'Y', 'coal', 5.0, 10.0)],
            groups={'FOOD': ['grain'], 'FUEL': ['coal']},
        )
        view = store.snapshot_view(2017, RegionLevel.STATE, Direction.EXPORT)
        assert dict(view.aggregates) == {'coal': 'FUEL', 'grain': 'FOOD'}

    def test_snapshot_is_immutable(self, store):
        view = store.snapshot_view(2017, RegionLevel.STATE, Direction.EXPORT)
        store.add_flow(flow('IL', 'WI', '03', value=9.0))
        assert view.flow_count == 3
        with pytest.raises(TypeError):
            view.groups['IL'] = {}

    def test_exclude_self_flows(self, store):
        store.add_flow(flow('WI', 'WI', '03', value=10.0))
        view = store.snapshot_view(2017, RegionLevel.STATE, Direction.EXPORT, include_self_flows=False)
        assert all(not f.is_self_flow for f in view.flows)


class TestTurtle:
    def test_empty_store_is_header_only(self):
        text = turtle(GraphStore()).decode('utf-8')
        lines = [line for line in text.splitlines() if line]
        assert len(lines) == 6
        assert all(line.startswith('@prefix ') for line in lines)
        assert turtle(GraphStore()) == turtle(GraphStore())

    def test_flow_triples(self, census_store):
        census_store.add_flow(flow())
        text = turtle(census_store).decode('utf-8')
        subject = 'cfs:Flow.2017.WI.IL.02'
        flow_lines = [line for line in text.splitlines() if line.startswith(subject + ' ')]
        predicates = {line.split(' ')[1] for line in flow_lines}
        assert {
            'cfs:CFValue',
            'cfs:AvgMileage',
            'time:year',
            'cfs:CFCode',
            'cfs:originRegion',
            'cfs:destinationRegion',
        } <= predicates
        assert f'{subject} cfs:originRegion cfs:Region.WI .' in flow_lines

    def test_repeat_export_is_byte_identical(self, census_store):
        census_store.add_flow(flow())
        census_store.add_flow(flow('MN', 'IA', '06', value=3.25))
        assert turtle(census_store) == turtle(census_store)

    def test_triples_are_sorted(self, census_store):
        census_store.add_flow(flow())
        body = [line for line in turtle(census_store).decode('utf-8').splitlines()[7:] if line]
        assert body == sorted(body)

    def test_round_trip(self, census_store):
        census_store.add_flow(flow(weight=12.5))
        census_store.add_flow(flow('MN', 'IA', '06', year=2012, value=0.1, atm=0.5))
        census_store.set_adjacency(AdjacencyIndex.from_pairs([('WI', 'IL'), ('MN', 'IA')]))
        census_store.attach_geometry(
            'WI', Geometry.from_coordinates([[[(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]]])
        )

        back = read_turtle(turtle(census_store))
        assert set(back.regions) == set(census_store.regions)
        assert set(back.codes) == set(census_store.codes)
        assert back.flows == census_store.flows
        assert back.adjacency.pairs() == census_store.adjacency.pairs()
        assert back.region('WI').geometry_ref == 'WI'
        assert turtle(back) == turtle(census_store)

    def test_sink_failure(self):
        class Broken(io.BytesIO):
            def write(self, data):
                raise OSError('disk full')

        with pytest.raises(SinkWrite):
            GraphStore().export_turtle(Broken())
