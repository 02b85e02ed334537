"""Socket transport around a Session.

One listening port serves two framings: plain newline-delimited lines, and
WebSocket text frames for in-page clients at path /mvx (one encoded message
per frame, no trailing newline). The framing is sniffed from the first
bytes of each connection — an HTTP upgrade starts with "GET", a line client
starts with "{".

All session mutation is funneled through one lock, so each message is
processed to completion before the next regardless of which connection
thread delivered it.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
import threading
import time
from typing import Callable

from .coordinator import Session, SessionError, SessionFullError
from .protocol import Bye, DecodeError, Message, decode, encode

WS_PATH = "/mvx"
WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_WATCHDOG_INTERVAL_S = 0.1


class BindError(OSError):
    """The requested port could not be bound."""


class WsHandshakeError(RuntimeError):
    pass


def monotonic_ms() -> float:
    return time.monotonic() * 1000.0


class _Conn:
    def __init__(self, conn_id: int, sock: socket.socket):
        self.id = conn_id
        self.sock = sock
        self.ws = False
        self.write_lock = threading.Lock()
        self.closed = False

    def send_message(self, msg: Message) -> None:
        line = encode(msg)
        data = _ws_text_frame(line[:-1]) if self.ws else line
        with self.write_lock:
            try:
                self.sock.sendall(data)
            except OSError:
                pass  # reader side will observe the close

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class CoordinatorServer:
    """Accepts connections, frames bytes, and drives one Session."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        ack_mode: bool = False,
        clock: Callable[[], float] | None = None,
        log_path: str | None = None,
        session: Session | None = None,
    ):
        self.session = session or Session(clock=clock or monotonic_ms, ack_mode=ack_mode)
        self.log_path = log_path
        self._lock = threading.RLock()
        self._conns: dict[int, _Conn] = {}
        self._next_id = 0
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self._listener.settimeout(0.1)  # closing a listener does not wake accept()
        self.host, self.port = self._listener.getsockname()[:2]

    def start(self) -> None:
        for target in (self._accept_loop, self._watchdog_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in list(self._conns.values()):
            conn.close()
        for t in self._threads:
            t.join(timeout=2)
        self.persist_log()

    def persist_log(self) -> None:
        if self.log_path:
            self.session.log.persist(self.log_path)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc_info):
        self.stop()

    # -- accept / read loops ---------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                sock, _ = self._listener.accept()
            except TimeoutError:
                continue
            except OSError:
                return
            sock.settimeout(None)
            with self._lock:
                self._next_id += 1
                conn = _Conn(self._next_id, sock)
                self._conns[conn.id] = conn
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: _Conn) -> None:
        try:
            head = _peek(conn.sock, 3)
            if head == b"GET":
                _ws_handshake(conn.sock)
                conn.ws = True
                self._ws_loop(conn)
            else:
                self._line_loop(conn)
        except (OSError, WsHandshakeError, DecodeError):
            pass
        finally:
            self._drop(conn)

    def _line_loop(self, conn: _Conn) -> None:
        buffer = b""
        while not conn.closed:
            chunk = conn.sock.recv(65536)
            if not chunk:
                return
            buffer += chunk
            while b"\n" in buffer:
                line, buffer = buffer.split(b"\n", 1)
                if not self._dispatch(conn, line + b"\n"):
                    return

    def _ws_loop(self, conn: _Conn) -> None:
        while not conn.closed:
            opcode, payload = _ws_read_frame(conn.sock)
            if opcode == 0x8:  # close
                return
            if opcode == 0x9:  # ping
                with conn.write_lock:
                    conn.sock.sendall(_ws_frame(0xA, payload))
                continue
            if opcode != 0x1:
                raise WsHandshakeError(f"unsupported ws opcode {opcode:#x}")
            if not self._dispatch(conn, payload):
                return

    def _dispatch(self, conn: _Conn, raw: bytes) -> bool:
        """Decode and hand one message to the session. Returns False when the
        connection must be dropped."""
        msg = decode(raw)  # DecodeError propagates: drop the connection, not the session
        with self._lock:
            try:
                sends = self.session.handle(conn.id, msg)
            except SessionFullError:
                conn.send_message(Bye())
                return False
            except SessionError:
                return True  # typed rejection: message dropped, connection lives
            self._transmit(sends)
        if isinstance(msg, Bye):
            return False
        return True

    def _transmit(self, sends) -> None:
        for conn_id, msg in sends:
            target = self._conns.get(conn_id)
            if target is not None:
                target.send_message(msg)

    def _drop(self, conn: _Conn) -> None:
        with self._lock:
            self._conns.pop(conn.id, None)
            try:
                sends = self.session.on_disconnect(conn.id)
            except SessionError:
                sends = []
            self._transmit(sends)
            if self.session.ended:
                self.persist_log()
        conn.close()

    def _watchdog_loop(self) -> None:
        while not self._stopping.wait(_WATCHDOG_INTERVAL_S):
            with self._lock:
                self._transmit(self.session.check_swap_timeout())


# -- WebSocket plumbing (RFC 6455, text frames only) -------------------------


def _peek(sock: socket.socket, n: int) -> bytes:
    data = b""
    while len(data) < n:
        chunk = sock.recv(n, socket.MSG_PEEK)
        if not chunk:
            return data
        data = chunk
    return data[:n]


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    data = b""
    while len(data) < n:
        chunk = sock.recv(n - len(data))
        if not chunk:
            raise OSError("connection closed mid-frame")
        data += chunk
    return data


def ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _ws_handshake(sock: socket.socket) -> None:
    request = b""
    while b"\r\n\r\n" not in request:
        chunk = sock.recv(4096)
        if not chunk:
            raise WsHandshakeError("connection closed during handshake")
        request += chunk
        if len(request) > 65536:
            raise WsHandshakeError("oversized handshake")
    head, _, _ = request.partition(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    method, _, _ = lines[0].partition(" ")
    path = lines[0].split(" ")[1] if len(lines[0].split(" ")) > 1 else ""
    headers = {}
    for line in lines[1:]:
        name, _, value = line.partition(":")
        headers[name.strip().lower()] = value.strip()
    if method != "GET" or path != WS_PATH:
        sock.sendall(b"HTTP/1.1 404 Not Found\r\nConnection: close\r\n\r\n")
        raise WsHandshakeError(f"bad upgrade target {path!r}")
    key = headers.get("sec-websocket-key")
    if not key or "websocket" not in headers.get("upgrade", "").lower():
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\nConnection: close\r\n\r\n")
        raise WsHandshakeError("missing websocket upgrade headers")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {ws_accept_key(key)}\r\n"
        "\r\n"
    )
    sock.sendall(response.encode("ascii"))


def _ws_read_frame(sock: socket.socket) -> tuple[int, bytes]:
    b1, b2 = _recv_exact(sock, 2)
    fin = b1 & 0x80
    opcode = b1 & 0x0F
    if not fin or opcode == 0x0:
        raise WsHandshakeError("fragmented frames are not supported")
    masked = b2 & 0x80
    length = b2 & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _recv_exact(sock, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _recv_exact(sock, 8))
    mask = _recv_exact(sock, 4) if masked else b""
    payload = _recv_exact(sock, length) if length else b""
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _ws_frame(opcode: int, payload: bytes) -> bytes:
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 65536:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    return header + payload


def _ws_text_frame(payload: bytes) -> bytes:
    return _ws_frame(0x1, payload)


# -- socket-side client driver ------------------------------------------------


class WireClientDriver:
    """Runs a simulated client over a real TCP connection. The reader thread
    and the caller both funnel through one lock, preserving the client's
    run-to-completion contract."""

    def __init__(self, client, host: str, port: int):
        self.client = client
        self.lock = threading.RLock()
        self.sock = socket.create_connection((host, port))
        self.error: Exception | None = None
        client.emit = self._send
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._send(client.hello())

    def _send(self, msg: Message) -> None:
        self.sock.sendall(encode(msg))

    def _read_loop(self) -> None:
        buffer = b""
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    return
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    with self.lock:
                        self.client.handle_message(decode(line + b"\n"))
        except OSError:
            return
        except Exception as exc:  # divergence in a handler must reach the test
            self.error = exc

    def run_step(self, step) -> None:
        from .harness import apply_step

        with self.lock:
            apply_step(self.client, step)

    def initiate_promote(self) -> None:
        with self.lock:
            self.client.initiate_promote()

    def wait_for(self, predicate: Callable[[], bool], timeout: float = 10.0, what: str = "condition") -> None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.error is not None:
                raise self.error
            with self.lock:
                if predicate():
                    return
            time.sleep(0.002)
        raise TimeoutError(f"timed out waiting for {what}")

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
