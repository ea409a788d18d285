"""Header-framed JSON-RPC messaging with a language-analyzer child process.

The wire format is ``Content-Length: <N>\\r\\n\\r\\n<UTF-8 JSON>`` where N is
the byte length of the JSON content.  :class:`LspSession` drives one analyzer
child process per workspace; requests on a session are serialized, responses
are routed back by id.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Iterable, Sequence
from urllib.parse import unquote, urlparse
from urllib.request import pathname2url

log = logging.getLogger(__name__)

JSONRPC_VERSION = "2.0"
DEFAULT_TIMEOUT = 30.0


class ProtocolError(Exception):
    """Malformed framing or content on the wire."""


class TruncatedStreamError(ProtocolError):
    """The stream ended before the declared Content-Length was read."""


class SessionError(Exception):
    """The analyzer session failed (dead process, server error, timeout)."""


class RequestTimeout(SessionError):
    pass


def path_to_uri(path: str | Path) -> str:
    return "file://" + pathname2url(str(Path(path).absolute()))


def uri_to_path(uri: str) -> Path:
    parsed = urlparse(uri)
    if parsed.scheme != "file":
        raise ValueError(f"not a file uri: {uri}")
    return Path(unquote(parsed.path))


@dataclass(frozen=True)
class RpcMessage:
    """One JSON-RPC message.

    ``payload`` holds the params of a request/notification, or the result
    (respectively error object, when ``is_error``) of a response.
    """

    kind: str  # "request" | "response" | "notification"
    id: int | None = None
    method: str | None = None
    payload: Any = None
    is_error: bool = False

    def __post_init__(self) -> None:
        if self.kind == "request":
            if self.id is None or self.method is None:
                raise ValueError("request needs both id and method")
        elif self.kind == "response":
            if self.id is None:
                raise ValueError("response needs an id")
            if self.method is not None:
                raise ValueError("response carries no method")
        elif self.kind == "notification":
            if self.method is None:
                raise ValueError("notification needs a method")
            if self.id is not None:
                raise ValueError("notification carries no id")
        else:
            raise ValueError(f"unknown message kind: {self.kind}")

    @classmethod
    def request(cls, id: int, method: str, params: Any = None) -> "RpcMessage":
        return cls(kind="request", id=id, method=method, payload=params)

    @classmethod
    def notification(cls, method: str, params: Any = None) -> "RpcMessage":
        return cls(kind="notification", method=method, payload=params)

    @classmethod
    def response(cls, id: int, result: Any) -> "RpcMessage":
        return cls(kind="response", id=id, payload=result)

    @classmethod
    def error_response(cls, id: int, error: Any) -> "RpcMessage":
        return cls(kind="response", id=id, payload=error, is_error=True)

    def to_wire(self) -> dict:
        obj: dict[str, Any] = {"jsonrpc": JSONRPC_VERSION}
        if self.kind == "request":
            obj["id"] = self.id
            obj["method"] = self.method
            if self.payload is not None:
                obj["params"] = self.payload
        elif self.kind == "notification":
            obj["method"] = self.method
            if self.payload is not None:
                obj["params"] = self.payload
        else:
            obj["id"] = self.id
            if self.is_error:
                obj["error"] = self.payload
            else:
                obj["result"] = self.payload
        return obj

    @classmethod
    def from_wire(cls, obj: dict) -> "RpcMessage":
        if not isinstance(obj, dict):
            raise ProtocolError("message content must be a JSON object")
        has_id = "id" in obj and obj["id"] is not None
        if "method" in obj:
            if has_id:
                return cls.request(obj["id"], obj["method"], obj.get("params"))
            return cls.notification(obj["method"], obj.get("params"))
        if "error" in obj:
            return cls.error_response(obj["id"], obj["error"])
        if "result" in obj or has_id:
            return cls.response(obj.get("id"), obj.get("result"))
        raise ProtocolError(f"cannot classify message: {sorted(obj)}")


@dataclass(frozen=True, order=True)
class SourcePosition:
    """0-based (line, character) position in a document."""

    uri: str
    line: int
    character: int

    def __post_init__(self) -> None:
        if self.line < 0 or self.character < 0:
            raise ValueError("line and character must be non-negative")


@dataclass(frozen=True)
class SourceRange:
    uri: str
    start: SourcePosition
    end: SourcePosition

    def __post_init__(self) -> None:
        if self.start.uri != self.uri or self.end.uri != self.uri:
            raise ValueError("range endpoints must share the range's uri")
        if (self.start.line, self.start.character) > (self.end.line, self.end.character):
            raise ValueError("range start must not follow its end")

    @classmethod
    def from_lsp(cls, uri: str, rng: dict) -> "SourceRange":
        return cls(
            uri=uri,
            start=SourcePosition(uri, rng["start"]["line"], rng["start"]["character"]),
            end=SourcePosition(uri, rng["end"]["line"], rng["end"]["character"]),
        )

    def to_lsp(self) -> dict:
        return {
            "start": {"line": self.start.line, "character": self.start.character},
            "end": {"line": self.end.line, "character": self.end.character},
        }


def frame_message(msg: RpcMessage) -> bytes:
    """Serialize ``msg`` to its framed wire form."""
    content = json.dumps(msg.to_wire(), ensure_ascii=False, separators=(",", ":"))
    body = content.encode("utf-8")
    return frame_content(body)


def frame_content(body: bytes) -> bytes:
    return b"Content-Length: %d\r\n\r\n%s" % (len(body), body)


def _read_line(stream: BinaryIO) -> bytes:
    # One byte at a time: the content after the blank line must stay unread.
    buf = bytearray()
    while True:
        ch = stream.read(1)
        if not ch:
            if buf:
                raise TruncatedStreamError("stream ended inside a header line")
            raise TruncatedStreamError("stream ended at a message boundary")
        buf += ch
        if buf.endswith(b"\r\n"):
            return bytes(buf)


def read_frame(stream: BinaryIO) -> bytes:
    """Read one framed message, returning the raw content bytes."""
    content_length = None
    while True:
        line = _read_line(stream)
        if line == b"\r\n":
            break
        name, sep, value = line[:-2].partition(b":")
        if not sep:
            raise ProtocolError(f"malformed header line: {line!r}")
        if name.strip().lower() == b"content-length":
            try:
                content_length = int(value.strip())
            except ValueError as exc:
                raise ProtocolError(f"bad Content-Length: {value!r}") from exc
    if content_length is None:
        raise ProtocolError("missing Content-Length header")
    body = stream.read(content_length)
    if body is None or len(body) < content_length:
        raise TruncatedStreamError(
            f"expected {content_length} content bytes, got {0 if body is None else len(body)}"
        )
    return body

def parse_message(stream: BinaryIO) -> RpcMessage:
    """Read and parse the next framed message from ``stream``."""
    body = read_frame(stream)
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"content is not valid UTF-8 JSON: {exc}") from exc
    return RpcMessage.from_wire(obj)


@dataclass
class SessionDiagnostics:
    """Side records a session accumulates: extra definition ranges, server
    notifications, restarts."""

    notifications: list = field(default_factory=list)
    alternate_definitions: list = field(default_factory=list)
    restarts: int = 0


class LspSession:
    """One analyzer child process bound to one workspace root.

    Requests are serialized by an internal lock (single-writer); distinct
    sessions are independent.  A timed-out request triggers one transparent
    restart (re-initialize, re-open documents) before failing.
    """

    def __init__(
        self,
        command: Sequence[str],
        root_path: str | Path,
        timeout: float = DEFAULT_TIMEOUT,
        extra_sys_path: Iterable[str] = (),
    ) -> None:
        self.command = list(command)
        self.root_path = Path(root_path)
        self.timeout = timeout
        self.extra_sys_path = list(extra_sys_path)
        self.diagnostics = SessionDiagnostics()
        self._proc: subprocess.Popen | None = None
        self._queue: queue.Queue[RpcMessage] = queue.Queue()
        self._reader: threading.Thread | None = None
        self._lock = threading.Lock()
        self._next_id = 0
        self._open_docs: dict[str, str] = {}
        self._initialize_result: Any = None

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        self._spawn()
        self._initialize()

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self._queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        stream = self._proc.stdout
        while True:
            try:
                msg = parse_message(stream)
            except ProtocolError:
                return
            self._queue.put(msg)

    def _initialize(self) -> None:
        result = self._request_raw(
            "initialize",
            {
                "processId": None,
                "rootUri": path_to_uri(self.root_path),
                "capabilities": {},
                "initializationOptions": {"extra_sys_path": self.extra_sys_path},
            },
        )
        self._initialize_result = result
        self._send(RpcMessage.notification("initialized", {}))

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._request_raw("shutdown", None)
            self._send(RpcMessage.notification("exit"))
            self._proc.wait(timeout=5)
        except (SessionError, subprocess.TimeoutExpired, OSError):
            self._proc.kill()
        finally:
            self._proc = None

    def __enter__(self) -> "LspSession":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- plumbing ------------------------------------------------------

    def _send(self, msg: RpcMessage) -> None:
        if self._proc is None or self._proc.stdin is None:
            raise SessionError("session is not running")
        try:
            self._proc.stdin.write(frame_message(msg))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SessionError(f"analyzer process is dead: {exc}") from exc

    def _await_response(self, want_id: int) -> RpcMessage:
        while True:
            try:
                msg = self._queue.get(timeout=self.timeout)
            except queue.Empty:
                raise RequestTimeout(f"no response to request {want_id} "
                                     f"within {self.timeout}s")
            if msg.kind == "response":
                if msg.id == want_id:
                    return msg
                log.warning("dropping response to unknown request id %s", msg.id)
            else:
                self.diagnostics.notifications.append(msg)

    def _request_raw(self, method: str, params: Any) -> Any:
        self._next_id += 1
        req_id = self._next_id
        self._send(RpcMessage.request(req_id, method, params))
        resp = self._await_response(req_id)
        if resp.is_error:
            raise SessionError(f"{method} failed: {resp.payload}")
        return resp.payload

    def _restart(self) -> None:
        self.diagnostics.restarts += 1
        if self._proc is not None:
            self._proc.kill()
            self._proc = None
        self._spawn()
        self._initialize()
        for uri, text in self._open_docs.items():
            self._send_did_open(uri, text)

    def request(self, method: str, params: Any) -> Any:
        """Issue one request, restarting the server once on timeout."""
        with self._lock:
            try:
                return self._request_raw(method, params)
            except (RequestTimeout, SessionError):
                self._restart()
                return self._request_raw(method, params)

    # -- protocol surface ----------------------------------------------

    def _send_did_open(self, uri: str, text: str) -> None:
        self._send(
            RpcMessage.notification(
                "textDocument/didOpen",
                {
                    "textDocument": {
                        "uri": uri,
                        "languageId": "python",
                        "version": 1,
                        "text": text,
                    }
                },
            )
        )

    def open_document(self, path: str | Path, text: str | None = None) -> str:
        path = Path(path)
        if text is None:
            text = path.read_text(encoding="utf-8")
        uri = path_to_uri(path)
        if uri not in self._open_docs:
            with self._lock:
                self._send_did_open(uri, text)
        self._open_docs[uri] = text
        return uri

    def _locations(self, result: Any) -> list[SourceRange]:
        if result is None:
            return []
        if isinstance(result, dict):
            result = [result]
        return [SourceRange.from_lsp(loc["uri"], loc["range"]) for loc in result]

    def request_definition(self, pos: SourcePosition) -> list[SourceRange]:
        result = self.request(
            "textDocument/definition",
            {
                "textDocument": {"uri": pos.uri},
                "position": {"line": pos.line, "character": pos.character},
            },
        )
        ranges = self._locations(result)
        if len(ranges) > 1:
            self.diagnostics.alternate_definitions.append((pos, ranges[1:]))
        return ranges

    def request_references(
        self, pos: SourcePosition, include_declaration: bool = False
    ) -> list[SourceRange]:
        result = self.request(
            "textDocument/references",
            {
                "textDocument": {"uri": pos.uri},
                "position": {"line": pos.line, "character": pos.character},
                "context": {"includeDeclaration": include_declaration},
            },
        )
        return self._locations(result)
