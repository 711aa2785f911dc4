"""Seeded synthetic tables for benchmarks and acceptance runs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from skyshim.columnar.types import Column, ColumnTable, DataType, Field, Schema, pack_validity
from skyshim.dataset_client import SEQ, STANDARD_SWEEP

MiB = 1024 * 1024


@dataclass(frozen=True)
class BenchSpec:
    rows: int = 200_000
    rows_per_group: int = 10_000
    replicate_factor: int = 8
    stripe_unit: int = 4 * MiB
    node_counts: tuple[int, ...] = (1, 2, 4)
    selectivities: tuple[float, ...] = STANDARD_SWEEP
    seed: int = 0
    int_columns: int = 8
    float_columns: int = 6
    utf8_columns: int = 2
    bool_columns: int = 1
    root: str = "/bench"

    def __post_init__(self) -> None:
        if self.rows < 1 or self.rows_per_group < 1:
            raise ValueError("rows and rows_per_group must be positive")
        if self.replicate_factor < 1:
            raise ValueError("replicate_factor must be >= 1")
        if not self.selectivities or not all(0 < s <= 1 for s in self.selectivities):
            raise ValueError("selectivities must lie in (0, 1]")
        if not self.node_counts or min(self.node_counts) < 1:
            raise ValueError("node_counts must be positive")

    @property
    def column_count(self) -> int:
        return self.int_columns + self.float_columns + self.utf8_columns + self.bool_columns


def bench_schema(spec: BenchSpec) -> Schema:
    fields = [Field(SEQ, DataType.INT64)]
    fields += [Field(f"i{k}", DataType.INT64, nullable=k % 4 == 3) for k in range(spec.int_columns)]
    fields += [Field(f"f{k}", DataType.FLOAT64, nullable=k % 2 == 1) for k in range(spec.float_columns)]
    fields += [Field(f"s{k}", DataType.UTF8, nullable=k % 2 == 1) for k in range(spec.utf8_columns)]
    fields += [Field(f"b{k}", DataType.BOOL) for k in range(spec.bool_columns)]
    return Schema(fields)


def _words(rng: np.random.Generator, count: int = 512) -> list[bytes]:
    letters = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz", dtype=np.uint8)
    return [letters[rng.integers(0, 26, rng.integers(3, 15))].tobytes() for _ in range(count)]


def _utf8_column(rng: np.random.Generator, n: int, vocab: list[bytes], validity) -> Column:
    lens = np.array([len(w) for w in vocab], dtype=np.int64)
    blob = np.frombuffer(b"".join(vocab), dtype=np.uint8)
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
    pick = rng.integers(0, len(vocab), n)
    if validity is not None:
        pick = np.where(np.unpackbits(validity, bitorder="little")[:n].astype(bool), pick, -1)
    row_lens = np.where(pick >= 0, lens[np.maximum(pick, 0)], 0)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(row_lens, out=offsets[1:])
    # gather bytes: index of each output byte into the vocabulary blob
    owners = np.repeat(np.arange(n), row_lens)
    within = np.arange(offsets[-1]) - offsets[owners]
    data = blob[starts[np.maximum(pick, 0)][owners] + within]
    return Column(DataType.UTF8, offsets, validity, data)


def generate_table(spec: BenchSpec) -> ColumnTable:
    """Base table; ``seq`` counts 0..group_rows-1 inside every row group."""
    rng = np.random.default_rng(spec.seed)
    schema = bench_schema(spec)
    n = spec.rows
    vocab = _words(rng)
    cols = []
    for f in schema.fields:
        validity = pack_validity(rng.random(n) >= 0.05) if f.nullable else None
        if f.name == SEQ:
            cols.append(Column(DataType.INT64, np.arange(n, dtype=np.int64) % spec.rows_per_group))
        elif f.type is DataType.INT64:
            cols.append(Column(f.type, rng.integers(-1_000_000, 1_000_000, n), validity))
        elif f.type is DataType.FLOAT64:
            cols.append(Column(f.type, np.round(rng.normal(0, 1000, n), 3), validity))
        elif f.type is DataType.UTF8:
            cols.append(_utf8_column(rng, n, vocab, validity))
        else:
            cols.append(Column(f.type, rng.random(n) < 0.5, validity))
    return ColumnTable(schema, cols)


def base_paths(spec: BenchSpec) -> list[str]:
    return [f"{spec.root}/file-{k:04d}" for k in range(spec.replicate_factor)]


def table_digest(table: ColumnTable) -> str:
    return hashlib.sha256(table.canonical_bytes()).hexdigest()


@dataclass
class GeneratedData:
    spec: BenchSpec
    table: ColumnTable
    layouts: list = field(default_factory=list)


def write_dataset(fs, spec: BenchSpec, table: ColumnTable | None = None) -> GeneratedData:
    """Write the base table ``replicate_factor`` times under distinct base paths."""
    table = table if table is not None else generate_table(spec)
    out = GeneratedData(spec, table)
    tasks = [fs.write_logical_table_task(p, table, spec.rows_per_group, spec.stripe_unit) for p in base_paths(spec)]
    for o in fs.client.transport.run(tasks):
        out.layouts.append(o.unwrap())
    return out
