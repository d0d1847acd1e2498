"""Newline-delimited JSON protocol making an external process a logit source.

Strictly synchronous request-response: one outstanding request per
connection, request ids strictly increasing, responses matched by id echo.
Transports: child-process stdio (default) or TCP. Full dense logits only;
floats ride JSON's shortest round-trip encoding, which is exact for doubles.
"""

from __future__ import annotations

import json
import select
import socket
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .core import LogitVector
from .engine import LogitSource, SourceDescriptor, SourceError

__all__ = [
    "PROTOCOL_VERSION",
    "BridgeError",
    "BridgeRequest",
    "BridgeResponse",
    "BridgeConnection",
    "BridgeSource",
    "connect_stdio",
    "connect_tcp",
    "serve_check",
]

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT = 30.0
QUERY_TIMEOUT = 120.0


class BridgeError(SourceError):
    """Protocol violation or transport failure; the connection is dead."""


@dataclass(frozen=True)
class BridgeRequest:
    request_id: int
    kind: str  # hello | logits | shutdown
    modality: str | None = None
    context_tokens: tuple[int, ...] = ()
    visual_ref: str | None = None

    def to_line(self) -> str:
        msg: dict = {"request_id": self.request_id, "kind": self.kind}
        if self.kind == "hello":
            msg["protocol_version"] = PROTOCOL_VERSION
        if self.kind == "logits":
            if not self.context_tokens:
                raise BridgeError("logits request needs a non-empty context")
            msg["modality"] = self.modality
            msg["context_tokens"] = list(self.context_tokens)
            # text_only queries never carry a visual_ref on the wire
            if self.modality == "multimodal":
                if self.visual_ref is None:
                    raise BridgeError("multimodal request needs a visual_ref")
                msg["visual_ref"] = self.visual_ref
        return json.dumps(msg, sort_keys=True)


@dataclass(frozen=True)
class BridgeResponse:
    request_id: int
    kind: str  # hello_ack | logits | error
    vocab_size: int | None = None
    logits: tuple[float, ...] | None = None
    error_message: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_line(cls, line: str) -> "BridgeResponse":
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"malformed response line: {exc}") from None
        if not isinstance(msg, dict) or "kind" not in msg or "request_id" not in msg:
            raise BridgeError("response missing kind or request_id")
        known = {"request_id", "kind", "vocab_size", "logits", "error_message"}
        return cls(
            request_id=int(msg["request_id"]),
            kind=str(msg["kind"]),
            vocab_size=msg.get("vocab_size"),
            logits=tuple(msg["logits"]) if msg.get("logits") is not None else None,
            error_message=str(msg.get("error_message", "")),
            extra={k: v for k, v in msg.items() if k not in known},
        )


class _StdioTransport:
    def __init__(self, cmd: list[str]):
        self._proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_line(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise BridgeError(f"adapter process closed stdin: {exc}") from None

    def recv_line(self, timeout: float) -> str:
        fd = self._proc.stdout
        ready, _, _ = select.select([fd], [], [], timeout)
        if not ready:
            raise BridgeError(f"response timeout after {timeout}s")
        line = fd.readline()
        if line == "":
            raise BridgeError("adapter process closed its stdout")
        return line.rstrip("\n")

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise BridgeError(f"tcp send failed: {exc}") from None

    def recv_line(self, timeout: float) -> str:
        self._sock.settimeout(timeout)
        try:
            line = self._reader.readline()
        except socket.timeout:
            raise BridgeError(f"response timeout after {timeout}s") from None
        if line == "":
            raise BridgeError("peer closed the connection")
        return line.rstrip("\n")

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()


class BridgeConnection:
    """One logical request-response stream over a transport."""

    def __init__(self, transport, query_timeout: float = QUERY_TIMEOUT):
        self._transport = transport
        self._query_timeout = query_timeout
        self._next_id = 1
        self._vocab_size: int | None = None
        self._closed = False

    @property
    def vocab_size(self) -> int:
        if self._vocab_size is None:
            raise BridgeError("not handshaken")
        return self._vocab_size

    def _roundtrip(self, req: BridgeRequest, timeout: float) -> BridgeResponse:
        if self._closed:
            raise BridgeError("connection closed")
        self._transport.send_line(req.to_line())
        try:
            resp = BridgeResponse.from_line(self._transport.recv_line(timeout))
        except BridgeError:
            self.close()
            raise
        if resp.request_id != req.request_id:
            self.close()
            raise BridgeError(
                f"response id {resp.request_id} does not match request {req.request_id}"
            )
        return resp

    def _take_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        return rid

    def hello(self, timeout: float = HANDSHAKE_TIMEOUT) -> int:
        resp = self._roundtrip(BridgeRequest(self._take_id(), "hello"), timeout)
        if resp.kind != "hello_ack" or not resp.vocab_size:
            self.close()
            raise BridgeError(f"handshake failed: {resp.kind} {resp.error_message}")
        self._vocab_size = int(resp.vocab_size)
        return self._vocab_size

    def query(
        self, modality: str, context, visual_ref: str | None = None
    ) -> LogitVector:
        req = BridgeRequest(
            self._take_id(),
            "logits",
            modality=modality,
            context_tokens=tuple(context),
            visual_ref=visual_ref,
        )
        resp = self._roundtrip(req, self._query_timeout)
        if resp.kind == "error":
            raise SourceError(f"adapter error: {resp.error_message}")
        if resp.kind != "logits" or resp.logits is None:
            self.close()
            raise BridgeError(f"unexpected response kind {resp.kind!r}")
        if len(resp.logits) != self.vocab_size:
            self.close()
            raise BridgeError(
                f"logits length {len(resp.logits)} != negotiated vocab {self.vocab_size}"
            )
        arr = np.asarray(resp.logits, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            self.close()
            raise BridgeError("adapter returned non-finite logits")
        return LogitVector(arr)

    def send_raw(self, line: str, timeout: float | None = None) -> BridgeResponse:
        """Ship an arbitrary line; used by serve-check's recovery probe."""
        self._transport.send_line(line)
        return BridgeResponse.from_line(
            self._transport.recv_line(timeout or self._query_timeout)
        )

    def shutdown(self) -> None:
        if self._closed:
            return
        try:
            self._transport.send_line(
                BridgeRequest(self._take_id(), "shutdown").to_line()
            )
        except BridgeError:
            pass
        self.close()

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._transport.close()


class BridgeSource(LogitSource):
    def __init__(self, conn: BridgeConnection, source_id: str):
        self._conn = conn
        self._desc = SourceDescriptor(
            vocab_size=conn.vocab_size,
            supports_visual=True,
            source_id=source_id,
            deterministic=True,
            thread_safe=False,
        )

    @property
    def descriptor(self) -> SourceDescriptor:
        return self._desc

    @property
    def connection(self) -> BridgeConnection:
        return self._conn

    def logits(self, modality, context, visual_ref=None):
        return self._conn.query(modality, context, visual_ref)

    def close(self) -> None:
        self._conn.shutdown()


def connect_stdio(
    cmd: list[str],
    handshake_timeout: float = HANDSHAKE_TIMEOUT,
    query_timeout: float = QUERY_TIMEOUT,
) -> BridgeSource:
    """Spawn an adapter child process and handshake over its stdio."""
    conn = BridgeConnection(_StdioTransport(cmd), query_timeout)
    conn.hello(handshake_timeout)
    return BridgeSource(conn, source_id=f"stdio:{cmd[0]}")


def connect_tcp(
    address: str,
    handshake_timeout: float = HANDSHAKE_TIMEOUT,
    query_timeout: float = QUERY_TIMEOUT,
) -> BridgeSource:
    host, _, port = address.rpartition(":")
    conn = BridgeConnection(
        _TcpTransport(host, int(port), handshake_timeout), query_timeout
    )
    conn.hello(handshake_timeout)
    return BridgeSource(conn, source_id=f"tcp:{address}")


def serve_check(
    source: BridgeSource,
    probe_contexts: list[list[int]] | None = None,
    visual_ref: str | None = None,
    check_recovery: bool = True,
) -> dict:
    """Validate an adapter endpoint: probes, determinism, malformed-line recovery.

    The handshake already happened in connect_*; its negotiated vocab size is
    reported here.
    """
    conn = source.connection
    report = {"vocab_size": conn.vocab_size, "probes": 0, "checks": {}}
    contexts = probe_contexts or [[0], [0, 2], [0, 2, 3]]
    first_pass = []
    for ctx in contexts[:3]:
        first_pass.append(source.logits("text_only", ctx).values)
        report["probes"] += 1
    report["checks"]["probe_queries"] = True

    deterministic = all(
        np.array_equal(source.logits("text_only", ctx).values, ref)
        for ctx, ref in zip(contexts[:3], first_pass)
    )
    report["checks"]["determinism"] = deterministic

    if check_recovery:
        resp = conn.send_raw("this is not json")
        recovered = resp.kind == "error"
        if recovered:
            # connection must still answer real queries
            recovered = np.array_equal(
                source.logits("text_only", contexts[0]).values, first_pass[0]
            )
        report["checks"]["malformed_line_recovery"] = recovered

    report["ok"] = all(report["checks"].values())
    return report
