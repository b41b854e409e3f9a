"""Report writers: CSV tables, canonical JSON summaries and standalone SVG figures."""
from . import svg
from .bundle import probe_bundle, stability_bundle
from .tables import canonical_dumps, jsonable, write_csv, write_json
