import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skyshim.cluster import start_cluster
from skyshim.columnar import (
    BytesSource, ColumnTable, DataType, Field, Schema, build_file, concat_tables, read_footer, read_row_group,
    read_table,
)
from skyshim.columnar.file import compute_stats
from skyshim.errors import ErrorCode, NodeDownError, SkyshimError
from skyshim.object_store import ClusterMap, ObjectName, PluginRegistry, StorageNode
from skyshim.object_store.node import ObjectHandle
from skyshim.striped_fs import (
    MetadataServer, ShimFile, index_path, read_index, shim_open, shim_read, shim_seek, shim_size,
)

from tablegen import brute_stats, random_table


@pytest.fixture
def cluster():
    with start_cluster(node_count=3, replication=2, stripe_unit=1 << 20) as h:
        yield h


def object_sizes(handle, path):
    _, objs = handle.fs.path_to_objects(path)
    return [handle.client.stat(o) for o in objs]


class TestStriping:
    def test_130_bytes_in_64_byte_stripes(self, cluster):
        data = bytes(range(130))
        meta = cluster.fs.write_file("/f", data, stripe_unit=64)
        assert meta.object_count == 3 and meta.file_size == 130
        assert object_sizes(cluster, "/f") == [64, 64, 2]
        assert cluster.fs.read_file("/f") == data

    def test_object_names_follow_file_id(self, cluster):
        meta = cluster.fs.write_file("/g", b"x" * 10, 4)
        _, objs = cluster.fs.path_to_objects("/g")
        assert objs == [ObjectName.for_stripe(meta.file_id, i) for i in range(3)]

    def test_empty_file(self, cluster):
        meta = cluster.fs.write_file("/empty", b"", 64)
        assert meta.object_count == 0 and cluster.fs.read_file("/empty") == b""

    def test_path_exists(self, cluster):
        cluster.fs.write_file("/a", b"1", 64)
        with pytest.raises(SkyshimError) as e:
            cluster.fs.write_file("/a", b"2", 64)
        assert e.value.code is ErrorCode.PATH_EXISTS

    def test_failed_write_leaves_no_path(self):
        with start_cluster(node_count=1, replication=1) as h:
            h.crash(0)
            with pytest.raises(NodeDownError):
                h.fs.write_file("/down", b"abc", 64)
            assert not h.mds.exists("/down")

    @settings(max_examples=40)
    @given(st.binary(max_size=600), st.integers(1, 200))
    def test_round_trip(self, data, unit):
        with start_cluster(node_count=2, replication=1) as h:
            meta = h.fs.write_file("/r", data, unit)
            assert meta.object_count == -(-len(data) // unit)
            assert h.fs.read_file("/r") == data


class TestMetadataServer:
    def test_journal_replay(self, tmp_path):
        j = tmp_path / "mds.jsonl"
        mds = MetadataServer(j)
        a = mds.create("/x/a", 100, 64)
        mds.create("/x/b", 5, 64)
        mds.remove("/x/b")
        again = MetadataServer(j)
        assert again.paths() == ["/x/a"] and again.lookup("/x/a") == a
        assert again.create("/x/c", 1, 64).file_id > a.file_id

    def test_corrupt_journal(self, tmp_path):
        j = tmp_path / "bad.jsonl"
        j.write_text('{"op": "create"}\n')
        with pytest.raises(SkyshimError) as e:
            MetadataServer(j)
        assert e.value.code is ErrorCode.DECODE_ERROR

    def test_walk_and_errors(self):
        mds = MetadataServer()
        for p in ("/d/1", "/d/sub/2", "/dd/3"):
            mds.create(p, 1, 8)
        assert mds.walk("/d") == ["/d/1", "/d/sub/2"]
        assert mds.walk("/") == ["/d/1", "/d/sub/2", "/dd/3"]
        for bad in (lambda: mds.lookup("/nope"), lambda: mds.remove("/nope"), lambda: mds.lookup("rel")):
            with pytest.raises(SkyshimError) as e:
                bad()
            assert e.value.code is ErrorCode.NOT_FOUND


SCHEMA = Schema([Field("k", DataType.INT64), Field("v", DataType.UTF8, True)])


def sample(rows=95):
    return ColumnTable.from_pydict(SCHEMA, {"k": list(range(rows)), "v": [None if i % 7 == 0 else f"v{i}"
                                                                         for i in range(rows)]})


class TestLogicalFiles:
    def test_r_groups_make_r_plus_one_objects(self, cluster):
        before = sum(len(n.objects()) for n in cluster.nodes.values())
        layout = cluster.fs.write_logical_table("/t/file", sample(95), 10)
        assert layout.row_group_count == 10
        paths = list(layout.part_paths) + [layout.index_path]
        assert layout.index_path == "/t/file.index"
        metas = [cluster.mds.lookup(p) for p in paths]
        assert all(mt.object_count == 1 for mt in metas)
        assert len({o for mt in metas for o in mt.objects()}) == 11
        stored = sum(len(n.objects()) for n in cluster.nodes.values()) - before
        assert stored == 11 * cluster.config.replication

    def test_parts_are_single_group_files(self, cluster):
        table = sample(95)
        layout = cluster.fs.write_logical_table("/t/p", table, 10)
        for g, p in enumerate(layout.part_paths):
            data = cluster.fs.read_file(p)
            assert len(read_footer(BytesSource(data)).row_groups) == 1
            assert read_table(data).equals(table.slice(g * 10, g * 10 + 10))

    def test_index_matches_parts(self, cluster):
        table = sample(95)
        layout = cluster.fs.write_logical_table("/t/i", table, 10)
        info = read_index(BytesSource(cluster.fs.read_file(layout.index_path)))
        assert info.part_paths == layout.part_paths and info.footer.total_rows == 95
        for g in range(10):
            part = table.slice(g * 10, g * 10 + 10)
            for c, col in enumerate(part.columns):
                expect = brute_stats(col.type, col.to_pylist())
                got = info.footer.group_stats(g)[c]
                assert got == compute_stats(col)
                assert got.null_count == expect.null_count
            part_footer = read_footer(BytesSource(cluster.fs.read_file(layout.part_paths[g])))
            assert part_footer.row_groups[0] == info.footer.row_groups[g]

    def test_not_an_index(self):
        data, _ = build_file(SCHEMA, [sample(5)])
        with pytest.raises(SkyshimError) as e:
            read_index(BytesSource(data))
        assert e.value.code is ErrorCode.NOT_AN_INDEX

    def test_part_too_large(self, cluster):
        with pytest.raises(SkyshimError) as e:
            cluster.fs.write_logical_table("/t/big", sample(95), 95, stripe_unit=256)
        assert e.value.code is ErrorCode.PART_TOO_LARGE
        assert not cluster.mds.walk("/t")

    def test_existing_base(self, cluster):
        cluster.fs.write_logical_table("/t/x", sample(5), 2)
        with pytest.raises(SkyshimError) as e:
            cluster.fs.write_logical_table("/t/x", sample(5), 2)
        assert e.value.code is ErrorCode.PATH_EXISTS

    def test_empty_table(self, cluster):
        with pytest.raises(SkyshimError) as e:
            cluster.fs.write_logical_table("/t/e", ColumnTable.empty(SCHEMA), 2)
        assert e.value.code is ErrorCode.EMPTY_TABLE


def handle_over(data: bytes) -> ObjectHandle:
    node = StorageNode(0, PluginRegistry(), ClusterMap(1, (0,), 1, 1))
    obj = ObjectName.for_stripe(1, 0)
    node.backend.put(obj, data)
    return ObjectHandle(node, obj, len(data), writable=False)


class TestShim:
    def test_ops(self):
        f = shim_open(handle_over(b"0123456789"))
        assert shim_size(f) == 10
        shim_seek(f, 3)
        assert shim_read(f, 4) == b"3456" and f.tell() == 7
        shim_seek(f, 10)
        assert shim_read(f, 0) == b""

    def test_errors(self):
        f = shim_open(handle_over(b"0123"))
        with pytest.raises(SkyshimError) as e:
            shim_seek(f, 5)
        assert e.value.code is ErrorCode.SEEK_OUT_OF_BOUNDS
        shim_seek(f, 2)
        with pytest.raises(SkyshimError) as e:
            shim_read(f, 3)
        assert e.value.code is ErrorCode.READ_OUT_OF_BOUNDS
        with pytest.raises(SkyshimError):
            shim_seek(f, -1)

    @given(st.binary(max_size=200), st.lists(st.tuples(st.integers(0, 220), st.integers(0, 50)), max_size=20))
    def test_matches_bytes_source(self, data, ops):
        shim, ref = ShimFile(handle_over(data)), BytesSource(data)
        for pos, n in ops:
            if pos > len(data):
                with pytest.raises(SkyshimError):
                    shim.seek(pos)
                continue
            shim.seek(pos)
            ref.seek(pos)
            if pos + n > len(data):
                with pytest.raises(SkyshimError):
                    shim.read(n)
                continue
            assert shim.read(n) == bytes(ref.read(n))

    def test_columnar_reader_over_shim(self):
        rng = random.Random(3)
        for _ in range(20):
            table = random_table(rng, max_rows=300)
            data, _ = build_file(table.schema, [table.slice(0, 100), table.slice(100, 300)]
                                 if table.row_count > 100 else [table])
            shim = ShimFile(handle_over(data))
            footer = read_footer(shim)
            got = concat_tables(table.schema, [read_row_group(shim, footer, g) for g in range(len(footer.row_groups))])
            assert got.equals(read_table(data)) and got.equals(table)


def test_index_path_helper():
    assert index_path("/a/b") == "/a/b.index"
