"""Blob server and the matching remote bucket store.

Frames are big-endian::

    request   opcode u8 | index u64 | length u32 | payload
    response  status u8 | length u32 | payload

``INIT`` carries ``T`` (u8) and the ciphertext size (u32); a ``PING``
reply carries the same pair once the server is initialized.  Error
responses carry a one-byte error code followed by a UTF-8 message.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from pathlib import Path

from .errors import NotInitialized, ProtocolError, SizeMismatch, StoreError, StoreTimeout
from .store import BucketStore, DirectoryStore

log = logging.getLogger(__name__)

GET, PUT, PING, INIT = 0x01, 0x02, 0x03, 0x04
OK, ERR = 0x00, 0x01

REQUEST = struct.Struct(">BQI")
RESPONSE = struct.Struct(">BI")
INIT_PAYLOAD = struct.Struct(">BI")
MAX_PAYLOAD = 1 << 30

E_NOT_INIT, E_SIZE, E_IO, E_PROTO = 1, 2, 3, 4
_ERRORS = {E_NOT_INIT: NotInitialized, E_SIZE: SizeMismatch,
           E_IO: StoreError, E_PROTO: ProtocolError}


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def encode_request(op: int, index: int = 0, payload: bytes = b"") -> bytes:
    return REQUEST.pack(op, index, len(payload)) + payload


def encode_response(status: int, payload: bytes = b"") -> bytes:
    return RESPONSE.pack(status, len(payload)) + payload


def read_request(sock) -> tuple[int, int, bytes]:
    op, index, length = REQUEST.unpack(recv_exact(sock, REQUEST.size))
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {length} bytes refused")
    return op, index, recv_exact(sock, length)


def read_response(sock) -> tuple[int, bytes]:
    status, length = RESPONSE.unpack(recv_exact(sock, RESPONSE.size))
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {length} bytes refused")
    return status, recv_exact(sock, length)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        store: DirectoryStore = self.server.store
        sock = self.request
        while True:
            try:
                op, index, payload = read_request(sock)
            except (ProtocolError, ConnectionError, struct.error):
                return
            try:
                reply = self._dispatch(store, op, index, payload)
                sock.sendall(encode_response(OK, reply))
            except NotInitialized as exc:
                sock.sendall(_error(E_NOT_INIT, exc))
            except SizeMismatch as exc:
                sock.sendall(_error(E_SIZE, exc))
            except (StoreError, IndexError, OSError) as exc:
                sock.sendall(_error(E_IO, exc))
            except ProtocolError as exc:
                sock.sendall(_error(E_PROTO, exc))

    def _dispatch(self, store, op, index, payload) -> bytes:
        if op == PING:
            if store.initialized:
                return INIT_PAYLOAD.pack(store.T, store.ciphertext_size)
            return b""
        if op == INIT:
            if len(payload) != INIT_PAYLOAD.size:
                raise ProtocolError("INIT payload must be 5 bytes")
            T, size = INIT_PAYLOAD.unpack(payload)
            with self.server.lock:
                store.init(T, size)
            return b""
        if op == GET:
            return store.get_bucket(index)
        if op == PUT:
            store.put_bucket(index, payload)
            return b""
        raise ProtocolError(f"unknown opcode {op:#x}")


def _error(code: int, exc: Exception) -> bytes:
    return encode_response(ERR, bytes([code]) + str(exc).encode())


class BlobServer(socketserver.ThreadingTCPServer):
    """TCP server storing one bucket per file in ``backing_dir``."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], backing_dir):
        Path(backing_dir).mkdir(parents=True, exist_ok=True)
        self.store = DirectoryStore(backing_dir, parallelism=1)
        self.lock = threading.Lock()
        super().__init__(address, _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> threading.Thread:
        """Serve from a daemon thread; returns the thread."""
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(listen_address: str, backing_dir) -> None:
    host, port = parse_address(listen_address)
    with BlobServer((host, port), backing_dir) as server:
        log.info("serving buckets from %s on %s:%d", backing_dir, *server.address)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


class RemoteStore(BucketStore):
    """Client for :class:`BlobServer`.

    Each worker thread keeps its own connection so path transfers run in
    parallel.  Timeouts surface as :class:`StoreTimeout`; nothing is
    retried.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0,
                 parallelism: int | None = None):
        super().__init__(parallelism)
        self.address = (host, port)
        self.timeout = timeout
        self._local = threading.local()
        self._conns: list[socket.socket] = []

    def _sock(self) -> socket.socket:
        sock = getattr(self._local, "sock", None)
        if sock is None:
            try:
                sock = socket.create_connection(self.address, timeout=self.timeout)
            except OSError as exc:
                raise StoreError(f"cannot reach {self.address}: {exc}") from exc
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._local.sock = sock
            with self._lock:
                self._conns.append(sock)
        return sock

    def _call(self, op: int, index: int = 0, payload: bytes = b"") -> bytes:
        sock = self._sock()
        try:
            sock.sendall(encode_request(op, index, payload))
            status, body = read_response(sock)
        except socket.timeout as exc:
            self._drop(sock)
            raise StoreTimeout(f"no reply from {self.address}") from exc
        except (ProtocolError, OSError) as exc:
            self._drop(sock)
            if isinstance(exc, ProtocolError):
                raise
            raise StoreError(str(exc)) from exc
        if status == OK:
            return body
        if status != ERR or not body:
            raise ProtocolError(f"bad response status {status}")
        raise _ERRORS.get(body[0], StoreError)(body[1:].decode(errors="replace"))

    def _drop(self, sock):
        self._local.sock = None
        with self._lock:
            if sock in self._conns:
                self._conns.remove(sock)
        sock.close()

    def ping(self) -> tuple[int, int] | None:
        """Round-trip check; returns the server's geometry if it has one."""
        body = self._call(PING)
        return INIT_PAYLOAD.unpack(body) if body else None

    def _setup(self, T, ciphertext_size):
        self._call(INIT, 0, INIT_PAYLOAD.pack(T, ciphertext_size))

    def _check_index(self, i):
        if not self.initialized:
            geometry = self.ping()
            if geometry is not None:
                self.T, self.ciphertext_size = geometry
        super()._check_index(i)

    def _read(self, i):
        data = self._call(GET, i)
        if len(data) != self.ciphertext_size:
            raise ProtocolError(f"bucket {i} came back as {len(data)} bytes")
        return data

    def _write(self, i, c):
        self._call(PUT, i, c)

    def close(self):
        super().close()
        with self._lock:
            conns, self._conns = self._conns, []
        for sock in conns:
            sock.close()
        self._local = threading.local()
