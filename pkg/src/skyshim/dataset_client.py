"""Client-side datasets: discovery through index files, pruning, and scans.

OFFLOAD sends one ``scan_op`` per planned part object and decodes the
returned batches. LOCAL downloads each planned object whole and runs the same
fragment scan on the client. Results are concatenated in plan order (logical
files by index path, then row groups ascending), whatever order the
responses arrive in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from skyshim import expr as ex
from skyshim import metrics as m
from skyshim.columnar.file import FileFooter
from skyshim.columnar.pruning import prune_row_groups
from skyshim.columnar.sources import BytesSource
from skyshim.columnar.types import ColumnTable, Schema, concat_tables
from skyshim.columnar.wire import decode_wire_batch, frame_codec
from skyshim.errors import ErrorCode, NodeDownError, PluginError, QueryFailedError, SkyshimError
from skyshim.metrics import MetricsSnapshot
from skyshim.object_store.placement import ObjectName
from skyshim.object_store.transport import Compute, Task
from skyshim.scan_plugin import (
    INDEX_SCAN_OP,
    SCAN_OP,
    ScanRequest,
    ScanResponse,
    index_request,
    scan_fragment,
)
from skyshim.striped_fs import INDEX_SUFFIX, IndexInfo, LogicalFileLayout, StripedFS, read_index

DISCOVERY = "discovery"
SCAN = "scan"
SEQ = "seq"
STANDARD_SWEEP = (1.0, 0.99, 0.75, 0.50, 0.25, 0.10, 0.01)


class Mode(str, Enum):
    OFFLOAD = "offload"
    LOCAL = "local"


@dataclass(frozen=True)
class ScanOptions:
    filter: ex.Expression = ex.TRUE
    projection: ex.Projection = ex.ALL
    mode: Mode = Mode.OFFLOAD
    io_depth: int = 2
    # when set, OFFLOAD batches framed with any other codec are rejected
    codec_id: int | None = None
    partition: ex.Expression | None = None

    def __post_init__(self) -> None:
        if self.io_depth < 1:
            raise ValueError("io_depth must be at least 1")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def predicate(self) -> ex.Expression:
        return self.filter if self.partition is None else ex.conjoin([self.filter, self.partition])


@dataclass(frozen=True)
class LogicalFile:
    index_path: str
    layout: LogicalFileLayout
    footer: FileFooter


@dataclass(frozen=True)
class Dataset:
    root: str
    logical_files: tuple[LogicalFile, ...]
    schema: Schema

    @property
    def total_rows(self) -> int:
        return sum(f.footer.total_rows for f in self.logical_files)

    @property
    def row_group_count(self) -> int:
        return sum(len(f.footer.row_groups) for f in self.logical_files)

    def max_group_rows(self) -> int:
        return max(rg.row_count for f in self.logical_files for rg in f.footer.row_groups)


@dataclass(frozen=True)
class PlannedObject:
    index_path: str
    group: int
    part_path: str
    obj: ObjectName
    file_size: int
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class QueryPlan:
    epoch: int
    objects: tuple[PlannedObject, ...]
    groups: dict = field(compare=False)
    total_groups: int = 0

    @property
    def pruned(self) -> int:
        return self.total_groups - len(self.objects)


@dataclass
class ScanResult:
    table: ColumnTable
    metrics: MetricsSnapshot
    wall_time: float
    rows_scanned: int
    objects_scanned: int
    objects_pruned: int

    @property
    def retries(self) -> int:
        return int(self.metrics.client(m.RETRIES))

    def max_retries_per_object(self) -> int:
        keys = self.metrics.keys(m.CLIENT, m.RETRIES + "[")
        return max((int(self.metrics.client(k)) for k in keys), default=0)

    def client_wire_bytes(self, phase: str = SCAN) -> int:
        return int(self.metrics.client(m.keyed(m.WIRE_BYTES_IN, f"@{phase}")))


def selectivity_filter(dataset: Dataset, fraction: float) -> ex.Expression:
    """Predicate keeping the first ``floor(fraction * group_rows)`` rows of each group."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    if SEQ not in dataset.schema:
        raise SkyshimError(ErrorCode.UNKNOWN_FIELD, f"dataset has no {SEQ!r} column")
    if fraction >= 1.0:
        return ex.TRUE
    # epsilon keeps 0.29 * 100 from landing on 28.999...
    return ex.Cmp(SEQ, ex.CmpOp.LT, math.floor(fraction * dataset.max_group_rows() + 1e-9))


def _surface(err: BaseException) -> BaseException:
    """Plugin errors carry the plugin's own code; report that code."""
    if isinstance(err, PluginError):
        return SkyshimError(err.inner, err.detail)
    return err


class DatasetClient:
    def __init__(self, fs: StripedFS) -> None:
        self.fs = fs
        self.client = fs.client

    @property
    def transport(self):
        return self.client.transport

    def _single_object(self, path: str) -> tuple[ObjectName, int]:
        meta, objs = self.fs.path_to_objects(path)
        if len(objs) != 1:
            raise SkyshimError(ErrorCode.DECODE_ERROR, f"{path} spans {len(objs)} objects, expected 1")
        return objs[0], meta.file_size

    def _discover_one(self, path: str, mode: Mode) -> Task:
        obj, size = self._single_object(path)
        if mode is Mode.OFFLOAD:
            body = yield from self.client.exec_task(obj, INDEX_SCAN_OP, index_request(size), phase=DISCOVERY)
            return IndexInfo.decode(body)
        data = yield from self.client.get_task(obj, phase=DISCOVERY)
        return read_index(BytesSource(data))

    def discover(self, root: str, mode: Mode = Mode.OFFLOAD, io_depth: int = 2) -> Dataset:
        """Open every ``.index`` file under ``root``; nothing else is touched."""
        mode = Mode(mode)
        paths = [p for p in self.fs.mds.walk(root) if p.endswith(INDEX_SUFFIX)]
        if not paths:
            raise SkyshimError(ErrorCode.EMPTY_DATASET, f"no index files under {root}")
        outcomes = self.transport.run([self._discover_one(p, mode) for p in paths], io_depth)
        failures = {p: o.error for p, o in zip(paths, outcomes) if not o.ok}
        if failures:
            if any(isinstance(e, NodeDownError) for e in failures.values()):
                raise QueryFailedError(failures)
            raise _surface(next(iter(failures.values())))
        files = []
        for path, o in zip(paths, outcomes):
            info: IndexInfo = o.value
            base = path[: -len(INDEX_SUFFIX)]
            layout = LogicalFileLayout(base, len(info.footer.row_groups), info.part_paths, path)
            files.append(LogicalFile(path, layout, info.footer))
        schema = files[0].footer.schema
        for f in files[1:]:
            if f.footer.schema != schema:
                raise SkyshimError(ErrorCode.SCHEMA_CONFLICT, f"{f.index_path} disagrees with {files[0].index_path}")
        return Dataset(root, tuple(files), schema)

    def plan(self, dataset: Dataset, options: ScanOptions = ScanOptions()) -> QueryPlan:
        bound = ex.bind(options.predicate, dataset.schema)
        options.projection.resolve(dataset.schema)
        cmap = self.client.cluster_map
        objects, groups, total = [], {}, 0
        for lf in dataset.logical_files:
            keep = prune_row_groups(lf.footer, bound)
            groups[lf.index_path] = keep
            total += len(lf.footer.row_groups)
            for g in keep:
                path = lf.layout.part_paths[g]
                obj, size = self._single_object(path)
                objects.append(PlannedObject(lf.index_path, g, path, obj, size, self.client.placements(obj)))
        return QueryPlan(cmap.epoch, tuple(objects), groups, total)

    def _offload(self, po: PlannedObject, request: bytes, options: ScanOptions) -> Task:
        body = yield from self.client.exec_task(po.obj, SCAN_OP, request, phase=SCAN)
        resp = ScanResponse.decode(body).raise_for_status()
        if options.codec_id is not None and frame_codec(resp.batch) != options.codec_id:
            raise SkyshimError(ErrorCode.UNKNOWN_CODEC,
                               f"batch framed with codec {frame_codec(resp.batch)}, expected {options.codec_id}")
        table = decode_wire_batch(resp.batch)
        yield Compute(table.row_count * len(table.columns))
        return table, resp.rows_scanned

    def _local(self, po: PlannedObject, request: ScanRequest) -> Task:
        data = yield from self.client.get_task(po.obj, phase=SCAN)
        frag = scan_fragment(BytesSource(data), request)
        yield Compute(frag.work_units)
        return frag.table, frag.rows_scanned

    def scan(self, dataset: Dataset, options: ScanOptions = ScanOptions(),
             plan: QueryPlan | None = None) -> ScanResult:
        plan = plan or self.plan(dataset, options)
        out_schema = dataset.schema.select(options.projection.resolve(dataset.schema))
        ledger = self.transport.ledger
        before = ledger.snapshot()
        t0 = self.transport.now()
        tasks = []
        for po in plan.objects:
            req = ScanRequest.build(po.file_size, dataset.schema, options.filter, options.projection,
                                    options.partition)
            if options.mode is Mode.OFFLOAD:
                tasks.append(self._offload(po, req.encode(), options))
            else:
                tasks.append(self._local(po, req))
        outcomes = self.transport.run(tasks, options.io_depth)
        wall = self.transport.now() - t0
        ledger.add(m.CLIENT, m.WALL_TIME, wall)
        failures = {str(po.obj): _surface(o.error) for po, o in zip(plan.objects, outcomes) if not o.ok}
        if failures:
            raise QueryFailedError(failures)
        tables = [o.value[0] for o in outcomes]
        scanned = sum(o.value[1] for o in outcomes)
        result = concat_tables(out_schema, tables) if tables else ColumnTable.empty(out_schema)
        return ScanResult(result, ledger.snapshot().delta(before), wall, scanned,
                          len(plan.objects), plan.pruned)
