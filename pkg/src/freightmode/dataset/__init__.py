"""CFS-schema shipment data: schema registry, binning, ingestion, encoding and synthetic generation."""

from .encoding import FEATURE_NAMES, EncodedDataset, encode_columns, encode_dataset, weighted_mode_shares
from .records import COLUMNS, ShipmentRecord, ingest_table, table_text, validate_record, write_table
from .schema import (
    CLASS_NAMES,
    DEFAULT_BINNING,
    DEFAULT_REGISTRY,
    N_CLASSES,
    BandAxis,
    Bands,
    BinningScheme,
    ModeClass,
    SchemaRegistry,
    bin_features,
    consolidate_mode,
    dump_registry,
    load_registry,
    parse_mode,
)
from .synthetic import CFS2012_MODE_SHARES, SyntheticSpec, draw_columns, generate_synthetic, synthetic_dataset

__all__ = [
    "CLASS_NAMES", "COLUMNS", "DEFAULT_BINNING", "DEFAULT_REGISTRY", "FEATURE_NAMES", "N_CLASSES",
    "CFS2012_MODE_SHARES", "BandAxis", "Bands", "BinningScheme", "EncodedDataset", "ModeClass",
    "SchemaRegistry", "ShipmentRecord", "SyntheticSpec", "bin_features", "consolidate_mode",
    "draw_columns", "dump_registry", "encode_columns", "encode_dataset", "generate_synthetic",
    "ingest_table", "load_registry", "parse_mode", "synthetic_dataset", "table_text",
    "validate_record", "weighted_mode_shares", "write_table",
]
