"""Peer endpoints, the TCP block server, and a fault-scriptable in-process transport.

A server answers REQ_BLOCK with the locally stored bytes verbatim; it never
validates what it serves (a peer may unknowingly serve its own corrupted
bytes, the requester validates).  NOT_FOUND covers both out-of-range numbers
and a ledger id that is not the one being served.  Unknown message types get
an ERROR response and the connection stays usable.

Clients raise TransportError for connect failures, timeouts, and framing
violations; protocol-level NOT_FOUND/ERROR are ordinary results.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass

from ledgerguard import wire
from ledgerguard.errors import OutOfRange, TransportError
from ledgerguard.store import LedgerStore

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 5.0


@dataclass(frozen=True)
class PeerEndpoint:
    address: str  # "host:port", or a channel name on an in-process network
    ledger_id: bytes


@dataclass(frozen=True)
class FetchResult:
    status: str  # "ok" | "not_found" | "error"
    data: bytes | None = None


def handle_message(store: LedgerStore, ledger_id: bytes,
                   msg: wire.WireMessage) -> wire.WireMessage:
    """Shared request handling for the TCP and in-process servers."""
    if msg.msg_type != wire.MSG_REQ_BLOCK:
        return wire.encode_block_response(wire.STATUS_ERROR)
    try:
        req_ledger, number = wire.decode_block_request(msg.payload)
    except ValueError:
        return wire.encode_block_response(wire.STATUS_ERROR)
    if req_ledger != ledger_id:
        return wire.encode_block_response(wire.STATUS_NOT_FOUND)
    try:
        data = store.read_block_bytes(number)
    except OutOfRange:
        return wire.encode_block_response(wire.STATUS_NOT_FOUND)
    return wire.encode_block_response(wire.STATUS_OK, data)


# -- TCP ---------------------------------------------------------------------


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        while True:
            try:
                msg = wire.read_frame(lambda n: _recv_exact(sock, n))
            except (ConnectionError, OSError, _ShortRead):
                return
            response = handle_message(self.server.store, self.server.ledger_id, msg)
            try:
                sock.sendall(wire.encode_frame(response))
            except OSError:
                return


class BlockServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, store: LedgerStore, listen_address: str, ledger_id: bytes):
        host, port = _split_address(listen_address)
        super().__init__((host, port), _Handler)
        self.store = store
        self.ledger_id = ledger_id
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "BlockServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(store: LedgerStore, listen_address: str, ledger_id: bytes) -> BlockServer:
    """Bind, start serving in a background thread, and return the handle."""
    return BlockServer(store, listen_address, ledger_id).start()


class _ShortRead(Exception):
    pass


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise _ShortRead(f"connection closed with {remaining} bytes missing")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address {address!r} is not host:port")
    return host, int(port)


class TcpPeerClient:
    """One framed request per connection; blocking with a timeout."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout

    def fetch(self, endpoint: PeerEndpoint, number: int) -> FetchResult:
        request = wire.encode_frame(wire.encode_block_request(endpoint.ledger_id, number))
        try:
            host, port = _split_address(endpoint.address)
        except ValueError as exc:
            raise TransportError(str(exc)) from None
        try:
            with socket.create_connection((host, port), timeout=self.timeout) as sock:
                sock.sendall(request)
                msg = wire.read_frame(lambda n: _recv_exact(sock, n))
        except socket.timeout:
            raise TransportError("timeout") from None
        except _ShortRead as exc:
            raise TransportError(f"truncated frame: {exc}") from None
        except OSError as exc:
            raise TransportError(f"connect failed: {exc}") from None
        return _parse_response(msg)


def _parse_response(msg: wire.WireMessage) -> FetchResult:
    if msg.msg_type != wire.MSG_RESP_BLOCK:
        raise TransportError(f"unexpected message type {msg.msg_type}")
    try:
        status, data = wire.decode_block_response(msg.payload)
    except ValueError as exc:
        raise TransportError(str(exc)) from None
    if status == wire.STATUS_OK:
        return FetchResult("ok", data)
    if status == wire.STATUS_NOT_FOUND:
        return FetchResult("not_found")
    return FetchResult("error")


def request_block(endpoint: PeerEndpoint, number: int,
                  client=None) -> FetchResult:
    """One framed request, one framed response; bytes are not validated here."""
    return (client or TcpPeerClient()).fetch(endpoint, number)


# -- in-process transport ----------------------------------------------------


class InProcessNetwork:
    """Deterministic test transport: named channels, scriptable faults.

    A channel handler maps a request frame (WireMessage) to raw response
    frame bytes, or None to simulate a dropped response (the client reports
    a timeout).  ``serve_store`` wires up the standard block server logic,
    optionally post-processed by an interceptor for fault injection.
    """

    def __init__(self):
        self._handlers: dict[str, object] = {}

    def serve_store(self, name: str, store: LedgerStore, ledger_id: bytes,
                    interceptor=None) -> PeerEndpoint:
        def handler(msg: wire.WireMessage):
            response = wire.encode_frame(handle_message(store, ledger_id, msg))
            if interceptor is not None:
                _, number = _request_number(msg)
                response = interceptor(number, response)
            return response

        self._handlers[name] = handler
        return PeerEndpoint(address=name, ledger_id=ledger_id)

    def register(self, name: str, handler) -> None:
        """Raw handler for fully scripted (e.g. adversarial) peers."""
        self._handlers[name] = handler

    def client(self) -> "InProcessPeerClient":
        return InProcessPeerClient(self)

    def dispatch(self, endpoint: PeerEndpoint, msg: wire.WireMessage):
        handler = self._handlers.get(endpoint.address)
        if handler is None:
            raise TransportError(f"connect failed: no channel {endpoint.address!r}")
        return handler(msg)


def _request_number(msg: wire.WireMessage):
    try:
        return wire.decode_block_request(msg.payload)
    except ValueError:
        return b"", -1


class InProcessPeerClient:
    def __init__(self, network: InProcessNetwork):
        self.network = network

    def fetch(self, endpoint: PeerEndpoint, number: int) -> FetchResult:
        msg = wire.encode_block_request(endpoint.ledger_id, number)
        try:
            raw = self.network.dispatch(endpoint, msg)
        except TransportError:
            raise
        except Exception as exc:  # a crashed peer looks like a dead connection
            raise TransportError(f"peer crashed: {exc!r}") from None
        if raw is None:
            raise TransportError("timeout")
        try:
            response = wire.decode_frame(raw)
        except ValueError as exc:
            raise TransportError(f"truncated frame: {exc}") from None
        return _parse_response(response)
