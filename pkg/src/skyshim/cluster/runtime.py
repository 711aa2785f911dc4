"""Starting a cluster and poking it: faults, metrics, shutdown."""

from __future__ import annotations

import threading
from pathlib import Path

from skyshim.cluster.config import ClusterConfig
from skyshim.cluster.faults import Action, FaultEvent, FaultScript, Trigger
from skyshim.cluster.sim import SimCost, SimTransport
from skyshim.cluster.tcp import NodeServer, TcpTransport
from skyshim.dataset_client import DatasetClient
from skyshim.errors import ErrorCode, SkyshimError
from skyshim.metrics import MetricsLedger, MetricsSnapshot
from skyshim.object_store.client import ObjectClient
from skyshim.object_store.node import DirectoryBackend, MemoryBackend, PluginRegistry, StorageNode
from skyshim.object_store.placement import ClusterMap
from skyshim.scan_plugin import register_builtin_plugins
from skyshim.striped_fs import MetadataServer, StripedFS


class ClusterHandle:
    def __init__(self, config: ClusterConfig) -> None:
        self.config = config
        self.ledger = MetricsLedger()
        self.registry = PluginRegistry()
        register_builtin_plugins(self.registry, config.codec)
        self.cluster_map = ClusterMap(1, tuple(range(config.node_count)), config.pg_count, config.replication)
        root = Path(config.data_dir) if config.data_dir else None
        self.nodes: dict[int, StorageNode] = {}
        for i in self.cluster_map.nodes:
            backend = DirectoryBackend(root / f"node-{i}") if root else MemoryBackend()
            self.nodes[i] = StorageNode(i, self.registry, self.cluster_map, backend, self.ledger,
                                        max_object_size=config.stripe_unit)
        self.servers: dict[int, NodeServer] = {}
        self._fault_lock = threading.Lock()
        self._request_count = 0
        self._count_events: list[tuple[int, FaultEvent]] = []
        self._timers: list[threading.Timer] = []
        self.fault_log: list[tuple[float, str, int]] = []
        if config.transport == "sim":
            cost = SimCost(config.bandwidth, config.latency, config.latency_jitter, config.disk_bandwidth,
                           config.node_unit_cost, config.client_unit_cost, config.client_cores)
            self.transport = SimTransport(self.nodes, self.ledger, cost, config.io_depth, config.seed)
            self.transport.request_hook = self._on_request
        else:
            try:
                for i, node in self.nodes.items():
                    port = config.base_port + i if config.base_port else 0
                    srv = NodeServer(node, config.host, port, config.io_depth)
                    srv.request_hook = self._on_request
                    self.servers[i] = srv
            except SkyshimError:
                self.close()
                raise
            self.transport = TcpTransport({i: s.address for i, s in self.servers.items()},
                                          self.ledger, config.io_depth)
        self.client = ObjectClient(self.cluster_map, self.transport)
        if config.transport == "tcp":
            fetched = self.client.fetch_map(0)
            if fetched != self.cluster_map:
                raise SkyshimError(ErrorCode.INTERNAL, "node 0 published a different cluster map")
        self.mds = MetadataServer(root / "mds.jsonl" if root else None)
        self.fs = StripedFS(self.mds, self.client)
        self.datasets = DatasetClient(self.fs)

    # -- faults ----------------------------------------------------------------------

    def _check_node(self, node: int) -> None:
        if node not in self.nodes:
            raise SkyshimError(ErrorCode.UNKNOWN_NODE, f"node {node}")

    def crash(self, node: int) -> None:
        self._check_node(node)
        self.fault_log.append((self.transport.now(), "crash", node))
        if isinstance(self.transport, SimTransport):
            self.transport.crash(node)
        else:
            self.servers[node].crash()

    def restart(self, node: int) -> None:
        self._check_node(node)
        if self.nodes[node].up:
            raise SkyshimError(ErrorCode.INVALID_CONFIG, f"node {node} is not crashed")
        self.fault_log.append((self.transport.now(), "restart", node))
        if isinstance(self.transport, SimTransport):
            self.transport.restart(node)
        else:
            self.servers[node].restart()

    def _fire(self, event: FaultEvent) -> None:
        if event.action is Action.CRASH:
            self.crash(event.node)
        elif not self.nodes[event.node].up:
            self.restart(event.node)

    def _on_request(self, node_id: int) -> None:
        with self._fault_lock:
            self._request_count += 1
            due = [e for at, e in self._count_events if at <= self._request_count]
            self._count_events = [(at, e) for at, e in self._count_events if at > self._request_count]
        for e in due:
            self._fire(e)

    def inject(self, script: FaultScript) -> None:
        """Arm a fault script; triggers count from this moment."""
        script.validate(self.nodes)
        for e in script.events:
            if e.trigger is Trigger.REQUESTS:
                with self._fault_lock:
                    self._count_events.append((self._request_count + int(e.at), e))
            elif isinstance(self.transport, SimTransport):
                self.transport.schedule(self.transport.now() + e.at, lambda e=e: self._fire(e))
            else:
                timer = threading.Timer(e.at, self._fire, args=(e,))
                timer.daemon = True
                self._timers.append(timer)
                timer.start()

    def clear_faults(self) -> None:
        """Disarm pending triggers and bring every node back up."""
        with self._fault_lock:
            self._count_events.clear()
        for t in self._timers:
            t.cancel()
        self._timers.clear()
        if isinstance(self.transport, SimTransport):
            self.transport.clear_pending()
        for n, node in self.nodes.items():
            if not node.up:
                self.restart(n)

    # -- metrics & lifecycle ---------------------------------------------------------

    def snapshot_metrics(self) -> MetricsSnapshot:
        return self.ledger.snapshot()

    def close(self) -> None:
        for t in self._timers:
            t.cancel()
        if isinstance(getattr(self, "transport", None), TcpTransport):
            self.transport.close()
        for srv in self.servers.values():
            srv.close()

    def __enter__(self) -> "ClusterHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def start_cluster(config: ClusterConfig | None = None, **overrides) -> ClusterHandle:
    config = (config or ClusterConfig()).replace(**overrides)
    return ClusterHandle(config.with_env())


def inject(handle: ClusterHandle, script: FaultScript) -> None:
    handle.inject(script)


def snapshot_metrics(handle: ClusterHandle) -> MetricsSnapshot:
    return handle.snapshot_metrics()
