"""Scripted analyzer stand-in for protocol tests.

Speaks the identical ``Content-Length`` framing over stdio and replays
responses from a golden transcript file.  A transcript is a JSON object::

    {"responses": [
        {"method": "textDocument/definition", "result": [...]},
        {"method": "textDocument/references", "content": "{...raw json...}"}
    ]}

Entries are consumed FIFO per method.  An entry with ``content`` is emitted
verbatim (byte-exact apart from the computed Content-Length header), which is
what golden-replay tests compare against.  ``initialize``, ``shutdown`` and
the lifecycle notifications are handled generically.

Run with ``python3 -m callctx.mock_server --transcript t.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import deque
from pathlib import Path

from .wire import (
    ProtocolError,
    RpcMessage,
    TruncatedStreamError,
    frame_content,
    frame_message,
    parse_message,
)


def load_transcript(path: str | Path) -> dict[str, deque]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    by_method: dict[str, deque] = {}
    for entry in data.get("responses", []):
        by_method.setdefault(entry["method"], deque()).append(entry)
    return by_method


def _respond(msg: RpcMessage, by_method: dict[str, deque], out) -> None:
    entries = by_method.get(msg.method or "")
    if not entries:
        out.write(
            frame_message(
                RpcMessage.error_response(
                    msg.id, {"code": -32601, "message": f"no scripted response for {msg.method}"}
                )
            )
        )
        return
    entry = entries.popleft()
    if "content" in entry:
        body = entry["content"].replace("$ID", json.dumps(msg.id)).encode("utf-8")
        out.write(frame_content(body))
    else:
        out.write(frame_message(RpcMessage.response(msg.id, entry.get("result"))))


def serve(by_method: dict[str, deque], stdin, stdout) -> int:
    while True:
        try:
            msg = parse_message(stdin)
        except TruncatedStreamError:
            return 0
        except ProtocolError as exc:
            print(f"mock server: {exc}", file=sys.stderr)
            return 1
        if msg.kind == "notification":
            if msg.method == "exit":
                return 0
            continue  # initialized, didOpen: nothing to do
        if msg.method == "initialize":
            stdout.write(frame_message(RpcMessage.response(msg.id, {"capabilities": {}})))
        elif msg.method == "shutdown":
            stdout.write(frame_message(RpcMessage.response(msg.id, None)))
        else:
            _respond(msg, by_method, stdout)
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="golden-transcript mock analyzer")
    parser.add_argument("--transcript", required=True, help="transcript JSON file")
    args = parser.parse_args(argv)
    by_method = load_transcript(args.transcript)
    return serve(by_method, sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
