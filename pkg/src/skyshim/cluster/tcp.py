"""Length-prefixed TCP transport.

Each node listens on its own port. A client keeps one connection per node
and pipelines up to ``io_depth`` requests on it; the server executes them on
an ``io_depth``-worker pool and writes responses back in request order. A
frame with an invalid length prefix gets one error frame and the connection
is closed; the node keeps serving other connections.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, Sequence

from skyshim import metrics as m
from skyshim.errors import ErrorCode, SkyshimError
from skyshim.metrics import MetricsLedger
from skyshim.object_store import protocol as p
from skyshim.object_store.node import StorageNode
from skyshim.object_store.transport import (
    Call,
    Compute,
    Gather,
    Outcome,
    Sleep,
    Task,
    Transport,
    account,
    is_node_down,
    node_down_frame,
    run_sync,
)

IO_TIMEOUT = 30.0


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes | None:
    """One whole frame, None on clean EOF. Raises SkyshimError on a bad prefix."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    n = p.frame_length(head)
    rest = _recv_exact(sock, n)
    if rest is None:
        return None
    return head + rest


class NodeServer:
    def __init__(self, node: StorageNode, host: str = "127.0.0.1", port: int = 0, io_depth: int = 2) -> None:
        self.node = node
        self.io_depth = io_depth
        self._pool = ThreadPoolExecutor(max_workers=io_depth, thread_name_prefix=f"node{node.node_id}")
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._closed = False
        self.request_hook = None
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as exc:
            self._listener.close()
            raise SkyshimError(ErrorCode.PORT_IN_USE, f"{host}:{port}: {exc}") from None
        self._listener.listen(64)
        self.address = self._listener.getsockname()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        out: queue.Queue = queue.Queue()
        writer = threading.Thread(target=self._write_loop, args=(conn, out), daemon=True)
        writer.start()
        try:
            while True:
                try:
                    frame = read_frame(conn)
                except SkyshimError as err:
                    out.put(err)
                    break
                if frame is None:
                    break
                if self.request_hook is not None:
                    self.request_hook(self.node.node_id)
                cls = p.message_class(frame)
                if self.node.up:
                    account(self.node.ledger, self.node.scope, "in", cls, frame)
                out.put((cls, self._pool.submit(self.node.handle_frame, frame)))
        except OSError:
            pass
        finally:
            out.put(None)
            writer.join()
            self._drop(conn)

    def _write_loop(self, conn: socket.socket, out: queue.Queue) -> None:
        while True:
            item = out.get()
            if item is None:
                return
            try:
                if isinstance(item, SkyshimError):
                    conn.sendall(p.error_response(item))
                    conn.shutdown(socket.SHUT_RDWR)
                    return
                cls, fut = item
                result = fut.result()
                if not self.node.up:
                    # crashed while serving: drop the response and the connection
                    conn.shutdown(socket.SHUT_RDWR)
                    return
                account(self.node.ledger, self.node.scope, "out", cls, result.response)
                conn.sendall(result.response)
            except OSError:
                return

    def _drop(self, conn: socket.socket) -> None:
        with self._lock:
            self._conns.discard(conn)
        try:
            conn.close()
        except OSError:
            pass

    def crash(self) -> None:
        self.node.up = False
        with self._lock:
            conns = list(self._conns)
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def restart(self) -> None:
        self.node.up = True

    def close(self) -> None:
        self._closed = True
        self.crash()
        self.node.up = True
        try:
            self._listener.close()
        except OSError:
            pass
        self._pool.shutdown(wait=False, cancel_futures=True)


class _Connection:
    def __init__(self, address) -> None:
        self.sock = socket.create_connection(address, timeout=IO_TIMEOUT)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(None)
        # send order must match pending order; the reader only needs the pending lock
        self._send_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: deque[Future] = deque()
        self.alive = True
        threading.Thread(target=self._read_loop, daemon=True).start()

    def _read_loop(self) -> None:
        try:
            while True:
                frame = read_frame(self.sock)
                if frame is None:
                    break
                with self._pending_lock:
                    fut = self._pending.popleft() if self._pending else None
                if fut is None:
                    break
                fut.set_result(frame)
        except (OSError, SkyshimError):
            pass
        self._fail()

    def _fail(self) -> None:
        with self._pending_lock:
            self.alive = False
            pending, self._pending = list(self._pending), deque()
        for fut in pending:
            if not fut.done():
                fut.set_exception(ConnectionError("connection lost"))
        try:
            self.sock.close()
        except OSError:
            pass

    def request(self, frame: bytes) -> bytes:
        fut: Future = Future()
        with self._send_lock:
            with self._pending_lock:
                if not self.alive:
                    raise ConnectionError("connection closed")
                self._pending.append(fut)
            try:
                self.sock.sendall(frame)
            except OSError as exc:
                self._fail()
                raise ConnectionError(str(exc)) from None
        return fut.result(timeout=IO_TIMEOUT)


class TcpTransport(Transport):
    def __init__(self, addresses: dict[int, tuple], ledger: MetricsLedger, io_depth: int = 2,
                 max_workers: int = 64) -> None:
        self.addresses = dict(addresses)
        self.ledger = ledger
        self.default_depth = io_depth
        self._conns: dict[int, _Connection] = {}
        self._conn_lock = threading.Lock()
        self._slots = {n: threading.BoundedSemaphore(io_depth) for n in addresses}
        self._global = threading.BoundedSemaphore(max_workers)
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def _connection(self, node: int) -> _Connection:
        with self._conn_lock:
            conn = self._conns.get(node)
            if conn is None or not conn.alive:
                conn = self._conns[node] = _Connection(self.addresses[node])
            return conn

    def _call(self, op: Call) -> bytes:
        cls = p.message_class(op.request)
        account(self.ledger, m.CLIENT, "out", cls, op.request, op.phase)
        if op.node not in self.addresses:
            return node_down_frame(op.node)
        with self._global, self._slots[op.node]:
            try:
                resp = self._connection(op.node).request(op.request)
            except (ConnectionError, OSError, TimeoutError):
                return node_down_frame(op.node)
        if is_node_down(resp):
            return resp
        account(self.ledger, m.CLIENT, "in", cls, resp, op.phase)
        return resp

    def _perform(self, op) -> Any:
        if isinstance(op, Call):
            return self._call(op)
        if isinstance(op, Sleep):
            time.sleep(op.seconds)
            return None
        if isinstance(op, Compute):
            self.ledger.add(m.CLIENT, m.WORK_UNITS, op.units)
            return None
        if isinstance(op, Gather):
            return self._parallel(op.tasks)
        raise SkyshimError(ErrorCode.INTERNAL, f"unknown task op {op!r}")

    def _parallel(self, tasks: Sequence[Task]) -> list[Outcome]:
        results: list[Outcome | None] = [None] * len(tasks)

        def work(i: int, t: Task) -> None:
            results[i] = run_sync(t, self._perform)

        threads = [threading.Thread(target=work, args=(i, t), daemon=True) for i, t in enumerate(tasks)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        return results  # type: ignore[return-value]

    def run(self, tasks: Sequence[Task], io_depth: int | None = None) -> list[Outcome]:
        depth = io_depth or self.default_depth
        if depth != self.default_depth:
            saved = self._slots
            self._slots = {n: threading.BoundedSemaphore(depth) for n in self.addresses}
            try:
                return self._parallel(tasks)
            finally:
                self._slots = saved
        return self._parallel(tasks)

    def close(self) -> None:
        with self._conn_lock:
            for conn in self._conns.values():
                conn._fail()
            self._conns.clear()
