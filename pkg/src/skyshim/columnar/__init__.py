"""Columnar file format, wire batches and pruning."""

from skyshim.columnar.file import (
    ColumnChunkMeta,
    ColumnStats,
    FileFooter,
    RowGroupMeta,
    build_file,
    compute_stats,
    decode_footer,
    encode_footer,
    read_footer,
    read_row_group,
    read_table,
    write_file,
)
from skyshim.columnar.pruning import prune_row_groups
from skyshim.columnar.sources import AccessLog, BytesSource
from skyshim.columnar.types import Column, ColumnTable, DataType, Field, Schema, concat_tables
from skyshim.columnar.wire import decode_wire_batch, encode_wire_batch

__all__ = [
    "AccessLog",
    "BytesSource",
    "Column",
    "ColumnChunkMeta",
    "ColumnStats",
    "ColumnTable",
    "DataType",
    "Field",
    "FileFooter",
    "RowGroupMeta",
    "Schema",
    "build_file",
    "compute_stats",
    "concat_tables",
    "decode_footer",
    "decode_wire_batch",
    "encode_footer",
    "encode_wire_batch",
    "prune_row_groups",
    "read_footer",
    "read_row_group",
    "read_table",
    "write_file",
]
