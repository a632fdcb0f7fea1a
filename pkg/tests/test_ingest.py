import math

import polars as pl
import pytest

from flowres.errors import (
    CycleDetected,
    DanglingParent,
    DuplicateFlow,
    MissingParent,
    ParseError,
    UnknownCode,
    UnknownRegion,
)
from flowres.graph_store import CommodityFlow, GraphStore, RegionLevel, RegionNode
from flowres.ingest import (
    RollupPolicy,
    SelfFlowHandling,
    SuppressedPolicy,
    combine_mileage,
    load_codes,
    load_flows,
    load_regions,
    normalize_code,
    numbered_rows,
    read_flow_records,
    rollup,
)

REGIONS_HEADER = 'id,name,level,parent_id,feature_code'
CODES_HEADER = 'code,description,parent,is_aggregate'
FLOWS_HEADER = 'year,origin_id,dest_id,sctg_code,value_musd,avg_miles'


@pytest.fixture
def us_store(fixtures):
    store = GraphStore()
    load_regions(store, fixtures / 'us_regions.csv')
    load_codes(store, fixtures / 'sctg_codes.csv')
    return store


class TestRegions:
    def test_us_fixture(self, fixtures):
        store = GraphStore()
        assert load_regions(store, fixtures / 'us_regions.csv') == 64
        assert len(store.regions_at(RegionLevel.STATE)) == 51
        assert len(store.regions_at(RegionLevel.DIVISION)) == 9
        assert len(store.regions_at(RegionLevel.REGION)) == 4
        assert store.ancestor_at('CA', RegionLevel.REGION) == 'WEST'
        assert all(r.feature_code == 'ADM1' for r in store.regions_at(RegionLevel.STATE))

    def test_header_only(self, write_csv):
        path = write_csv('regions.csv', REGIONS_HEADER)
        assert load_regions(GraphStore(), path) == 0

    def test_bad_level_names_the_row(self, write_csv):
        path = write_csv(
            'regions.csv',
            REGIONS_HEADER,
            'WEST,West,region,,',
            'KING,King County,county,WEST,ADM2',
        )
        with pytest.raises(ParseError) as exc:
            load_regions(GraphStore(), path)
        assert exc.value.line == 3
        assert str(exc.value).startswith(f"{path}:3:")

    def test_children_before_parents(self, write_csv):
        path = write_csv(
            'regions.csv',
            REGIONS_HEADER,
            'CA,California,state,PACIFIC,ADM1',
            'PACIFIC,Pacific,division,WEST,',
            'WEST,West,region,,',
        )
        store = GraphStore()
        assert load_regions(store, path) == 3
        assert store.ancestor_at('CA', RegionLevel.REGION) == 'WEST'

    def test_dangling_parent(self, write_csv):
        path = write_csv('regions.csv', REGIONS_HEADER, 'CA,California,state,PACIFIC,ADM1')
        with pytest.raises(DanglingParent) as exc:
            load_regions(GraphStore(), path)
        assert exc.value.line == 2

    def test_missing_column(self, write_csv):
        path = write_csv('regions.csv', 'id,name,level', 'WEST,West,region')
        with pytest.raises(ParseError):
            load_regions(GraphStore(), path)


class TestCodes:
    def test_sctg_fixture(self, fixtures):
        store = GraphStore()
        assert load_codes(store, fixtures / 'sctg_codes.csv') == 10
        assert store.leaf_codes() == ['01', '02', '03', '04', '05', '06', '07', '08']
        assert {store.aggregate_of(c) for c in ('01', '02', '03', '04', '05')} == {'A'}
        assert {store.aggregate_of(c) for c in ('06', '07', '08')} == {'B'}

    def test_self_parent(self, write_csv):
        path = write_csv('codes.csv', CODES_HEADER, 'A,Agri,,true', '01,Animals,01,false')
        with pytest.raises(CycleDetected):
            load_codes(GraphStore(), path)

    def test_two_code_cycle(self, write_csv):
        path = write_csv('codes.csv', CODES_HEADER, 'X,x,Y,true', 'Y,y,X,true')
        with pytest.raises(CycleDetected):
            load_codes(GraphStore(), path)

    def test_leaf_without_aggregate(self, write_csv):
        path = write_csv('codes.csv', CODES_HEADER, 'A,Agri,,true', '01,Animals,,false')
        with pytest.raises(ParseError) as exc:
            load_codes(GraphStore(), path)
        assert exc.value.line == 3

    def test_numeric_codes_are_padded(self, write_csv):
        path = write_csv('codes.csv', CODES_HEADER, 'A,Agri,,true', '1,Animals,A,false')
        store = GraphStore()
        load_codes(store, path)
        assert '01' in store.codes
        assert normalize_code(' 7 ') == '07'
        assert normalize_code('A') == 'A'


class TestRows:
    def test_line_numbers_count_from_after_header(self):
        df = pl.DataFrame({'id_a': ['WI', 'MN'], 'id_b': ['IL', 'IA']})
        rows = list(numbered_rows(df, "Reading pairs"))
        assert [line for line, _ in rows] == [2, 3]
        assert rows[1][1] == {'id_a': 'MN', 'id_b': 'IA'}


class TestFlows:
    def test_suppressed_drop(self, us_store, fixtures):
        path = fixtures / 'us_flows_suppressed.csv'
        stored = load_flows(us_store, path, SuppressedPolicy.DROP)
        records = read_flow_records(path)
        dropped = sum(1 for r in records if r.suppressed)
        assert stored == 4
        assert stored + dropped == len(records) == 5

    def test_suppressed_zero(self, us_store, fixtures):
        assert load_flows(us_store, fixtures / 'us_flows_suppressed.csv', SuppressedPolicy.ZERO) == 5
        assert us_store.flows[('WI', 'MN', '03', 2017)].value == 0.0

    def test_unknown_origin_names_the_row(self, us_store, write_csv):
        path = write_csv('flows.csv', FLOWS_HEADER, '2017,WI,IA,01,10,100', '2017,ZZ,IA,01,10,100')
        with pytest.raises(UnknownRegion) as exc:
            load_flows(us_store, path)
        assert exc.value.line == 3

    def test_unknown_code(self, us_store, write_csv):
        path = write_csv('flows.csv', FLOWS_HEADER, '2017,WI,IA,43,10,100')
        with pytest.raises(UnknownCode):
            load_flows(us_store, path)

    def test_bad_number(self, us_store, write_csv):
        path = write_csv('flows.csv', FLOWS_HEADER, '2017,WI,IA,01,ten,100')
        with pytest.raises(ParseError) as exc:
            load_flows(us_store, path)
        assert str(exc.value).startswith(f"{path}:2:")

    def test_optional_weight_column(self, us_store, write_csv):
        path = write_csv(
            'flows.csv', FLOWS_HEADER + ',weight', '2017,WI,IA,1,10,100,4.5', '2017,IA,WI,2,3,90,'
        )
        assert load_flows(us_store, path) == 2
        assert us_store.flows[('WI', 'IA', '01', 2017)].weight == 4.5
        assert us_store.flows[('IA', 'WI', '02', 2017)].weight is None

    def test_sample_fixture(self, us_store, fixtures):
        stored = load_flows(us_store, fixtures / 'us_flows_sample.csv')
        assert 0 < stored <= 100
        assert us_store.years() == [2012, 2017]


class TestRollup:
    def test_value_weighted_mileage(self, us_store, fixtures):
        load_flows(us_store, fixtures / 'us_flows_suppressed.csv')
        added = rollup(
            us_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), 2017
        )
        merged = us_store.flows[('EAST_NORTH_CENTRAL', 'WEST_NORTH_CENTRAL', '01', 2017)]
        assert merged.value == 400.0
        assert merged.avg_mileage == 350.0
        assert added == 3

    def test_conservation_with_self_flows_kept(self, us_store, fixtures):
        load_flows(us_store, fixtures / 'us_flows_sample.csv')
        for year in us_store.years(RegionLevel.STATE):
            rollup(us_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), year)
            rollup(us_store, RegionLevel.STATE, RollupPolicy(RegionLevel.REGION), year)
            states = math.fsum(f.value for f in us_store.flows_at(year, RegionLevel.STATE))
            divisions = math.fsum(f.value for f in us_store.flows_at(year, RegionLevel.DIVISION))
            regions = math.fsum(f.value for f in us_store.flows_at(year, RegionLevel.REGION))
            assert divisions == states
            assert regions == states

    def test_self_flow_drop(self, census_store):
        census_store.add_flow(CommodityFlow('WI', 'IL', '01', 2017, 10.0, 100.0))
        policy = RollupPolicy(RegionLevel.DIVISION, self_flow_handling=SelfFlowHandling.DROP)
        assert rollup(census_store, RegionLevel.STATE, policy, 2017) == 0

    def test_self_flow_keep(self, census_store):
        census_store.add_flow(CommodityFlow('WI', 'IL', '01', 2017, 10.0, 100.0))
        assert rollup(census_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), 2017) == 1
        assert census_store.flows[('EAST_NORTH_CENTRAL', 'EAST_NORTH_CENTRAL', '01', 2017)].value == 10.0

    def test_empty_year(self, census_store):
        assert rollup(census_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), 1999) == 0

    def test_rolled_level_has_nothing_finer(self, census_store):
        census_store.add_flow(CommodityFlow('WI', 'MN', '01', 2017, 10.0, 100.0))
        rollup(census_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), 2017)
        assert rollup(census_store, RegionLevel.DIVISION, RollupPolicy(RegionLevel.REGION), 2017) == 1
        assert rollup(census_store, RegionLevel.DIVISION, RollupPolicy(RegionLevel.REGION), 2017) == 0

    def test_conflicting_existing_flow(self, census_store):
        census_store.add_flow(CommodityFlow('WI', 'MN', '01', 2017, 10.0, 100.0))
        census_store.add_flow(
            CommodityFlow('EAST_NORTH_CENTRAL', 'WEST_NORTH_CENTRAL', '01', 2017, 99.0, 1.0)
        )
        with pytest.raises(DuplicateFlow):
            rollup(census_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), 2017)

    def test_missing_parent(self, census_store):
        census_store.upsert_region(RegionNode('PR', 'Puerto Rico', RegionLevel.STATE))
        census_store.add_flow(CommodityFlow('PR', 'WI', '01', 2017, 5.0, 1500.0))
        with pytest.raises(MissingParent):
            rollup(census_store, RegionLevel.STATE, RollupPolicy(RegionLevel.DIVISION), 2017)

    def test_combine_mileage_all_zero(self):
        members = [
            CommodityFlow('a', 'b', '01', 2017, 0.0, 100.0),
            CommodityFlow('c', 'b', '01', 2017, 0.0, 300.0),
        ]
        assert combine_mileage(members) == 200.0
