import random
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skyshim import metrics as m
from skyshim.errors import ErrorCode, NodeDownError, PluginError, SkyshimError
from skyshim.object_store import (
    ClusterMap,
    DirectoryBackend,
    DirectTransport,
    MemoryBackend,
    ObjectClient,
    ObjectName,
    PluginRegistry,
    StorageNode,
    object_pg,
    place,
)
from skyshim.object_store import protocol as p
from skyshim.object_store.placement import pg_placement


def obj(i: int = 0, pool: str = "data") -> ObjectName:
    return ObjectName.for_stripe(i, 0, pool)


def make_store(n=4, r=3, registry=None, backend=None):
    registry = registry or PluginRegistry()
    if "echo" not in registry.methods():
        registry.register("echo", lambda h, payload: payload)
    cmap = ClusterMap(1, tuple(range(n)), 128, r)
    transport = DirectTransport({})
    nodes = {i: StorageNode(i, registry, cmap, backend() if backend else None, transport.ledger) for i in range(n)}
    transport.nodes = nodes
    return ObjectClient(cmap, transport), nodes, registry


class TestNames:
    def test_format(self):
        o = ObjectName.for_stripe(0xABC, 2)
        assert o.name == "0000000000000abc.00000002" and o.file_id == 0xABC and o.stripe_index == 2

    @pytest.mark.parametrize("name", ["x", "abc.123", "ABC.00000001", "abc.000000001", ".00000000"])
    def test_rejects_bad(self, name):
        with pytest.raises(ValueError):
            ObjectName("data", name)

    def test_pool_required(self):
        with pytest.raises(ValueError):
            ObjectName("", "0.00000000")


class TestPlacement:
    def test_single_node(self):
        cmap = ClusterMap(1, (7,), 16, 1)
        assert {place(cmap, obj(i)) for i in range(50)} == {(7,)}

    def test_distinct_replicas(self):
        cmap = ClusterMap(1, tuple(range(5)), 128, 3)
        for i in range(300):
            nodes = place(cmap, obj(i))
            assert len(nodes) == len(set(nodes)) == 3

    def test_deterministic_10k(self):
        cmap = ClusterMap(1, tuple(range(8)), 512, 3)
        rng = random.Random(1)
        objs = [ObjectName.for_stripe(rng.getrandbits(64), rng.getrandbits(16)) for _ in range(10_000)]
        first = [place(cmap, o) for o in objs]
        again = [place(ClusterMap(1, tuple(range(8)), 512, 3), o) for o in objs]
        assert first == again

    def test_pg_formula(self):
        cmap = ClusterMap(1, (0, 1), 64, 1)
        from skyshim.object_store.placement import hash64

        o = obj(5, "pool")
        assert object_pg(cmap, o) == hash64(b"pool\x00" + o.name.encode()) % 64

    @pytest.mark.parametrize("n", [4, 8, 16])
    def test_removal_moves_few_pgs(self, n):
        before = ClusterMap(1, tuple(range(n)), 512, 3)
        after = before.without(n - 1)
        moved_primary = changed = 0
        for pg in range(512):
            a, b = pg_placement(before, pg), pg_placement(after, pg)
            if a != b:
                changed += 1
                # only PGs that used the removed node change, and survivors keep their order
                assert (n - 1) in a
                assert [x for x in a if x != n - 1] == list(b[:len(a) - 1])
            moved_primary += a[0] != b[0]
        assert moved_primary / 512 <= 2 / n

    def test_balance(self):
        cmap = ClusterMap(1, tuple(range(4)), 512, 1)
        counts = [0] * 4
        for pg in range(512):
            counts[pg_placement(cmap, pg)[0]] += 1
        assert min(counts) > 512 / 4 * 0.6

    def test_map_validation_and_encoding(self):
        with pytest.raises(ValueError):
            ClusterMap(1, (0, 1), 100, 1)
        with pytest.raises(ValueError):
            ClusterMap(1, (0, 1), 128, 3)
        cmap = ClusterMap(9, (3, 1, 2), 256, 2)
        assert ClusterMap.decode(cmap.encode()) == cmap


class TestProtocol:
    def test_frame_shape(self):
        f = p.frame(p.MsgType.STAT, b"abc")
        assert f[:4] == (4).to_bytes(4, "little") and f[4] == 3

    def test_limits(self):
        with pytest.raises(SkyshimError) as e:
            p.frame_length((p.MAX_FRAME + 1).to_bytes(4, "little"))
        assert e.value.code is ErrorCode.FRAME_TOO_LARGE
        with pytest.raises(SkyshimError) as e:
            p.frame_length(b"\0\0\0\0")
        assert e.value.code is ErrorCode.MALFORMED_FRAME

    def test_plugin_error_round_trip(self):
        resp = p.error_response(PluginError(ErrorCode.DECODE_ERROR, "bad chunk"))
        with pytest.raises(PluginError) as e:
            p.response_body(resp)
        assert e.value.inner is ErrorCode.DECODE_ERROR and e.value.detail == "bad chunk"

    def test_message_class(self):
        assert p.message_class(p.exec_request(obj(), "scan_op", b"")) == "EXEC:scan_op"
        assert p.message_class(p.stat_request(obj())) == "STAT"
        assert p.message_class(b"junk") == "INVALID"


class TestBasicOps:
    def test_put_stat_get(self):
        client, nodes, _ = make_store()
        client.put(obj(), bytes(range(64)))
        assert client.stat(obj()) == 64
        assert client.get(obj(), 60, 4) == bytes([60, 61, 62, 63])

    def test_out_of_bounds(self):
        client, _, _ = make_store()
        client.put(obj(), bytes(64))
        with pytest.raises(SkyshimError) as e:
            client.get(obj(), 60, 8)
        assert e.value.code is ErrorCode.OUT_OF_BOUNDS

    def test_not_found(self):
        client, _, _ = make_store()
        for op in (lambda: client.get(obj(9)), lambda: client.stat(obj(9)), lambda: client.exec(obj(9), "echo", b"x"),
                   lambda: client.delete(obj(9))):
            with pytest.raises(SkyshimError) as e:
                op()
            assert e.value.code is ErrorCode.NOT_FOUND

    def test_replicas_written(self):
        client, nodes, _ = make_store()
        for i in range(30):
            client.put(obj(i), f"payload-{i}".encode())
        for i in range(30):
            holders = [n for n in nodes if obj(i) in nodes[n].objects()]
            assert sorted(holders) == sorted(client.placements(obj(i)))
            assert {nodes[n].read_object(obj(i)) for n in holders} == {f"payload-{i}".encode()}

    def test_delete(self):
        client, nodes, _ = make_store()
        client.put(obj(), b"x")
        client.delete(obj())
        assert all(obj() not in nd.objects() for nd in nodes.values())

    def test_failover_to_replica(self):
        client, nodes, _ = make_store()
        client.put(obj(), b"important")
        nodes[client.placements(obj())[0]].up = False
        assert client.get(obj()) == b"important"
        snap = client.ledger.snapshot()
        assert snap.client(m.keyed(m.RETRIES, str(obj()))) == 1

    def test_single_replica_node_down(self):
        client, nodes, _ = make_store(n=2, r=1)
        client.put(obj(), b"x")
        nodes[client.placements(obj())[0]].up = False
        with pytest.raises(NodeDownError):
            client.get(obj())
        assert client.ledger.snapshot().client(m.RETRIES) == client.retry.attempts - 1

    def test_object_size_cap(self):
        registry = PluginRegistry()
        cmap = ClusterMap(1, (0,), 1, 1)
        node = StorageNode(0, registry, cmap, max_object_size=16)
        resp = node.handle_frame(p.put_request(obj(), bytes(17)))
        with pytest.raises(SkyshimError) as e:
            p.response_body(resp.response)
        assert e.value.code is ErrorCode.OUT_OF_BOUNDS

    def test_directory_backend_survives_restart(self, tmp_path):
        client, nodes, _ = make_store(n=2, r=2, backend=lambda: DirectoryBackend(tmp_path / str(random.random())))
        client.put(obj(), b"durable")
        roots = {i: nd.backend.root for i, nd in nodes.items()}
        for i in nodes:
            nodes[i] = StorageNode(i, nodes[i].registry, nodes[i].cluster_map, DirectoryBackend(roots[i]))
        assert all(nd.read_object(obj()) == b"durable" for nd in nodes.values())
        assert not list(tmp_path.rglob("*.tmp"))

    @given(st.lists(st.tuples(st.integers(0, 5), st.binary(max_size=40)), max_size=25))
    def test_replica_agreement(self, ops):
        client, nodes, _ = make_store(n=4, r=3)
        for i, data in ops:
            client.put(obj(i), data)
        for i, _ in ops:
            primary = client.get(obj(i))
            for n in client.placements(obj(i)):
                assert nodes[n].read_object(obj(i)) == primary


class TestPlugins:
    def test_echo(self):
        client, _, _ = make_store()
        client.put(obj(), b"")
        assert client.exec(obj(), "echo", b"ping") == b"ping"

    def test_unknown_method(self):
        client, _, _ = make_store()
        client.put(obj(), b"")
        with pytest.raises(SkyshimError) as e:
            client.exec(obj(), "nope")
        assert e.value.code is ErrorCode.UNKNOWN_METHOD

    def test_duplicate(self):
        reg = PluginRegistry()
        reg.register("x", lambda h, b: b)
        with pytest.raises(SkyshimError) as e:
            reg.register("x", lambda h, b: b)
        assert e.value.code is ErrorCode.DUPLICATE_METHOD

    def test_failing_plugin_is_contained(self):
        reg = PluginRegistry()

        def boom(handle, payload):
            raise RuntimeError("kaboom")

        reg.register("boom", boom)
        reg.register("notbytes", lambda h, b: 42)
        client, nodes, _ = make_store(registry=reg)
        client.put(obj(), b"data")
        for method in ("boom", "notbytes"):
            with pytest.raises(PluginError) as e:
                client.exec(obj(), method)
            assert e.value.inner is ErrorCode.INTERNAL
        assert client.get(obj()) == b"data"
        assert client.exec(obj(), "echo", b"still alive") == b"still alive"

    def test_handle_is_read_only_and_confined(self):
        reg = PluginRegistry()
        seen = {}

        def writer(handle, payload):
            seen["size"] = handle.stat()
            try:
                handle.read(0, handle.size + 1)
            except SkyshimError as e:
                seen["oob"] = e.code
            handle.write(b"overwrite")
            return b""

        reg.register("writer", writer)
        client, nodes, _ = make_store(registry=reg)
        client.put(obj(), b"original")
        with pytest.raises(PluginError) as e:
            client.exec(obj(), "writer")
        assert e.value.inner is ErrorCode.READ_ONLY
        assert seen == {"size": 8, "oob": ErrorCode.OUT_OF_BOUNDS}
        for n in client.placements(obj()):
            assert nodes[n].read_object(obj()) == b"original"

    def test_plugin_reads_are_disk_not_wire(self):
        reg = PluginRegistry()
        reg.register("first", lambda h, b: h.read(0, 4))
        client, nodes, _ = make_store(registry=reg)
        client.put(obj(), bytes(1000))
        before = client.ledger.snapshot()
        out = client.exec(obj(), "first")
        d = client.ledger.snapshot().delta(before)
        primary = client.placements(obj())[0]
        assert d.node(primary, m.DISK_BYTES_READ) == 4
        assert d.client(m.WIRE_BYTES_IN) == len(p.ok_response(out)) - p.HEADER
        assert d.client(m.WIRE_BYTES_IN) < 1000

    def test_concurrent_clients(self):
        client, nodes, _ = make_store()
        errors = []

        def work(k):
            try:
                for i in range(20):
                    client.put(obj(k * 100 + i), bytes([k]) * i)
                    assert client.get(obj(k * 100 + i)) == bytes([k]) * i
            except Exception as exc:  # pragma: no cover - reported below
                errors.append(exc)

        threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors


def test_node_never_raises_on_garbage():
    node = StorageNode(0, PluginRegistry(), ClusterMap(1, (0,), 1, 1))
    rng = random.Random(0)
    for _ in range(2000):
        data = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 30)))
        resp = node.handle_frame(data)
        status, _ = p.split_frame(resp.response)
        assert status in ErrorCode._value2member_map_ or status == p.OK


def test_backends_agree():
    mem, cmap = MemoryBackend(), ClusterMap(1, (0,), 1, 1)
    node = StorageNode(0, PluginRegistry(), cmap, mem)
    node.handle_frame(p.put_request(obj(), b"hello"))
    assert mem.read(obj(), 1, 3) == b"ell"
