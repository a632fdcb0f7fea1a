"""
Project-wide constants and defaults.

Every tunable that is not a command-line flag lives here, including the
namespace IRIs used by the Turtle export. The cfs: and cfsf: IRIs are
placeholders; swap them for the published ones when available.
"""

# Namespaces bound in Turtle output (exactly these six prefixes)
NAMESPACES = {
    'cfs': 'https://example.org/cfs-geokg/ontology/',
    'kwg-ont': 'http://stko-kwg.geog.ucsb.edu/lod/ontology/',
    'gn': 'http://www.geonames.org/ontology#',
    'geo': 'http://www.opengis.net/ont/geosparql#',
    'time': 'http://www.w3.org/2006/time#',
    'cfsf': 'https://example.org/cfs-geokg/function/',
}

# Resilience parameter defaults
DEFAULT_ATM_MODE = 'sqrt'
DEFAULT_GA_FACTOR = 0.9
SHORT_HAUL_MILES = 1.0
DEFAULT_INCLUDE_SELF_FLOWS = True
DEFAULT_SELF_FLOW_BETA = 'adjacent'

# Geographic adjacency
DEFAULT_TOLERANCE_DEG = 1e-6

# Ingestion
SUPPRESSED_SENTINEL = 'S'
STATE_FEATURE_CODE = 'ADM1'
TRUE_TOKENS = {'true', '1', 'yes', 'y', 't'}
FALSE_TOKENS = {'false', '0', 'no', 'n', 'f', ''}

REGIONS_HEADER = ('id', 'name', 'level', 'parent_id', 'feature_code')
CODES_HEADER = ('code', 'description', 'parent', 'is_aggregate')
FLOWS_HEADER = ('year', 'origin_id', 'dest_id', 'sctg_code', 'value_musd', 'avg_miles')
ADJACENCY_HEADER = ('id_a', 'id_b')

# Output formatting
CSV_FLOAT_PRECISION = 6
CHANGE_PCT_DECIMALS = 1

# Workspace bundle layout
WORKSPACE_ENV = 'FLOWRES_WORKSPACE'
DEFAULT_WORKSPACE = 'workspace'
BUNDLE_FILES = {
    'graph': 'graph.ttl',
    'regions': 'regions.parquet',
    'codes': 'codes.parquet',
    'flows': 'flows.parquet',
    'adjacency': 'adjacency.parquet',
    'geometries': 'geometries.geojson',
    'manifest': 'manifest.json',
}
