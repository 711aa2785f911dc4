import random

import pytest

from skyshim import expr as ex
from skyshim import metrics as m
from skyshim.cluster import start_cluster
from skyshim.columnar import ColumnTable, DataType, Field, Schema
from skyshim.dataset_client import Mode, ScanOptions, selectivity_filter
from skyshim.errors import ErrorCode, QueryFailedError, SkyshimError

from tablegen import brute_filter, random_conjunction, random_expr, random_projection, random_table, rows_of

SCHEMA = Schema([Field("seq", DataType.INT64), Field("x", DataType.FLOAT64, True), Field("tag", DataType.UTF8)])


def sample(n, offset=0, group=10):
    return ColumnTable.from_pydict(SCHEMA, {
        "seq": [i % group for i in range(n)],
        "x": [None if i % 4 == 0 else float(i + offset) for i in range(n)],
        "tag": [f"t{(i + offset) % 13}" for i in range(n)],
    })


def touched(snapshot) -> set[str]:
    """Object names that received at least one request on any node."""
    out = set()
    for n in snapshot.node_ids():
        for k in snapshot.keys(m.node_scope(n), m.REQUESTS + "["):
            out.add(k[len(m.REQUESTS) + 1:-1])
    return out


@pytest.fixture
def cluster():
    with start_cluster(node_count=4, replication=3) as h:
        for k in range(3):
            h.fs.write_logical_table(f"/ds/file-{k}", sample(35, k * 100), 10)
        yield h


class TestDiscovery:
    def test_counts(self, cluster):
        ds = cluster.datasets.discover("/ds")
        assert len(ds.logical_files) == 3 and ds.total_rows == 105 and ds.row_group_count == 12
        assert ds.schema == SCHEMA and ds.max_group_rows() == 10
        assert [lf.index_path for lf in ds.logical_files] == [f"/ds/file-{k}.index" for k in range(3)]

    @pytest.mark.parametrize("mode", list(Mode))
    def test_touches_only_index_objects(self, cluster, mode):
        cluster.fs.write_file("/ds/README", b"not a dataset file", 64)
        before = cluster.snapshot_metrics()
        ds = cluster.datasets.discover("/ds", mode)
        hit = touched(cluster.snapshot_metrics().delta(before))
        index_objs = {str(cluster.mds.lookup(lf.index_path).objects()[0]) for lf in ds.logical_files}
        assert hit == index_objs

    def test_modes_agree(self, cluster):
        a = cluster.datasets.discover("/ds", Mode.OFFLOAD)
        b = cluster.datasets.discover("/ds", Mode.LOCAL)
        assert a == b

    def test_discovery_bytes_are_labelled(self, cluster):
        before = cluster.snapshot_metrics()
        cluster.datasets.discover("/ds")
        d = cluster.snapshot_metrics().delta(before)
        assert d.client(m.keyed(m.WIRE_BYTES_IN, "@discovery")) == d.client(m.WIRE_BYTES_IN) > 0
        assert d.client(m.keyed(m.WIRE_BYTES_IN, "@scan")) == 0

    def test_empty(self, cluster):
        with pytest.raises(SkyshimError) as e:
            cluster.datasets.discover("/nothing")
        assert e.value.code is ErrorCode.EMPTY_DATASET
        cluster.fs.write_file("/only/raw", b"abc", 64)
        with pytest.raises(SkyshimError) as e:
            cluster.datasets.discover("/only")
        assert e.value.code is ErrorCode.EMPTY_DATASET

    def test_schema_conflict(self, cluster):
        other = Schema([Field("seq", DataType.INT64)])
        cluster.fs.write_logical_table("/ds/odd", ColumnTable.from_pydict(other, {"seq": [1, 2]}), 2)
        with pytest.raises(SkyshimError) as e:
            cluster.datasets.discover("/ds")
        assert e.value.code is ErrorCode.SCHEMA_CONFLICT


class TestPlanAndScan:
    def test_plan_prunes_soundly(self, cluster):
        ds = cluster.datasets.discover("/ds")
        table = ColumnTable.from_pydict(SCHEMA, {n: sum((sample(35, k * 100).column(n).to_pylist()
                                                         for k in range(3)), []) for n in SCHEMA.names})
        rng = random.Random(4)
        for _ in range(60):
            e = random_expr(rng, SCHEMA, table)
            plan = cluster.datasets.plan(ds, ScanOptions(filter=e))
            for k, lf in enumerate(ds.logical_files):
                part = sample(35, k * 100)
                keep = set(plan.groups[lf.index_path])
                for g in range(len(lf.footer.row_groups)):
                    if g not in keep:
                        assert not any(brute_filter(e, part.slice(g * 10, g * 10 + 10)))

    def test_pruned_objects_never_contacted(self, cluster):
        ds = cluster.datasets.discover("/ds")
        opts = ScanOptions(filter=ex.col("x") > 230.0)
        plan = cluster.datasets.plan(ds, opts)
        assert plan.pruned > 0
        before = cluster.snapshot_metrics()
        res = cluster.datasets.scan(ds, opts, plan)
        hit = touched(cluster.snapshot_metrics().delta(before))
        assert hit == {str(po.obj) for po in plan.objects}
        assert res.objects_pruned == plan.pruned and res.objects_scanned == len(plan.objects)

    @pytest.mark.parametrize("mode", list(Mode))
    def test_result_in_plan_order(self, cluster, mode):
        ds = cluster.datasets.discover("/ds")
        res = cluster.datasets.scan(ds, ScanOptions(mode=mode, io_depth=4))
        want = sum((sample(35, k * 100).column("x").to_pylist() for k in range(3)), [])
        assert res.table.column("x").to_pylist() == want

    def test_modes_equivalent_random(self):
        rng = random.Random(11)
        with start_cluster(node_count=3, replication=2) as h:
            for trial in range(25):
                schema = None
                tables = []
                for k in range(rng.randint(1, 3)):
                    t = random_table(rng, schema, rows=rng.randint(1, 80))
                    schema = t.schema
                    tables.append(t)
                    h.fs.write_logical_table(f"/r{trial}/f{k}", t, rng.choice([3, 10, 50]))
                full = ColumnTable.from_pydict(schema, {n: sum((t.column(n).to_pylist() for t in tables), [])
                                                        for n in schema.names})
                ds = h.datasets.discover(f"/r{trial}")
                e = random_conjunction(rng, schema, full) if rng.random() < 0.5 else random_expr(rng, schema, full)
                proj = random_projection(rng, schema)
                off = h.datasets.scan(ds, ScanOptions(e, proj, Mode.OFFLOAD)).table
                loc = h.datasets.scan(ds, ScanOptions(e, proj, Mode.LOCAL)).table
                assert off.canonical_bytes() == loc.canonical_bytes()
                keep = brute_filter(e, full)
                names = proj.resolve(schema)
                assert off.to_pydict() == {n: [r[n] for r, k in zip(rows_of(full), keep) if k] for n in names}

    def test_client_work_units(self, cluster):
        ds = cluster.datasets.discover("/ds")
        proj = ex.Projection(("tag", "seq"))
        off = cluster.datasets.scan(ds, ScanOptions(ex.col("seq") < 5, proj, Mode.OFFLOAD))
        loc = cluster.datasets.scan(ds, ScanOptions(ex.col("seq") < 5, proj, Mode.LOCAL))
        assert off.metrics.client(m.WORK_UNITS) == off.table.row_count * 2
        # LOCAL decodes seq and tag for every scanned row plus one leaf per row
        assert loc.metrics.client(m.WORK_UNITS) == loc.rows_scanned * 3
        assert loc.metrics.sum_nodes(m.WORK_UNITS) == 0 < off.metrics.sum_nodes(m.WORK_UNITS)

    def test_expected_codec_enforced(self, cluster):
        ds = cluster.datasets.discover("/ds")
        with pytest.raises(QueryFailedError) as e:
            cluster.datasets.scan(ds, ScanOptions(codec_id=1))
        assert {err.code for err in e.value.failures.values()} == {ErrorCode.UNKNOWN_CODEC}
        assert cluster.datasets.scan(ds, ScanOptions(codec_id=0)).table.row_count == 105

    def test_plugin_errors_surface_their_code(self, cluster):
        ds = cluster.datasets.discover("/ds")
        with pytest.raises(SkyshimError) as e:
            cluster.datasets.scan(ds, ScanOptions(filter=ex.col("nope") == 1))
        assert e.value.code is ErrorCode.UNKNOWN_FIELD

    def test_partition_expression(self, cluster):
        ds = cluster.datasets.discover("/ds")
        opts = ScanOptions(filter=ex.col("seq") < 5, partition=ex.col("tag") == "t1")
        for mode in Mode:
            res = cluster.datasets.scan(ds, ScanOptions(opts.filter, opts.projection, mode,
                                                        partition=opts.partition))
            assert set(res.table.column("tag").to_pylist()) == {"t1"}
            assert all(s < 5 for s in res.table.column("seq").to_pylist())

    def test_query_failed_when_all_replicas_down(self):
        with start_cluster(node_count=2, replication=1) as h:
            h.fs.write_logical_table("/q/f", sample(40), 10)
            ds = h.datasets.discover("/q")
            h.crash(0)
            h.crash(1)
            with pytest.raises(QueryFailedError) as e:
                h.datasets.scan(ds)
            assert e.value.code is ErrorCode.QUERY_FAILED
            assert {err.code for err in e.value.failures.values()} == {ErrorCode.NODE_DOWN}


class TestSelectivity:
    @pytest.mark.parametrize("fraction", [1.0, 0.99, 0.75, 0.5, 0.29, 0.1, 0.01, 0.0])
    def test_rows_kept(self, fraction):
        with start_cluster(node_count=1, replication=1) as h:
            h.fs.write_logical_table("/s/f", sample(1000, group=100), 100)
            ds = h.datasets.discover("/s")
            res = h.datasets.scan(ds, ScanOptions(selectivity_filter(ds, fraction)))
            per_group = 100 if fraction == 1.0 else int(fraction * 100 + 1e-9)
            assert res.table.row_count == 10 * per_group

    def test_bad_fraction(self, cluster):
        ds = cluster.datasets.discover("/ds")
        with pytest.raises(ValueError):
            selectivity_filter(ds, 1.5)

    def test_needs_seq(self):
        with start_cluster(node_count=1, replication=1) as h:
            s = Schema([Field("a", DataType.INT64)])
            h.fs.write_logical_table("/n/f", ColumnTable.from_pydict(s, {"a": [1]}), 1)
            with pytest.raises(SkyshimError) as e:
                selectivity_filter(h.datasets.discover("/n"), 0.5)
            assert e.value.code is ErrorCode.UNKNOWN_FIELD
