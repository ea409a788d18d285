"""Minimal stdio language server backed by the jedi analysis library.

Supports exactly the capabilities the pipeline queries: initialize /
initialized, textDocument/didOpen, textDocument/definition,
textDocument/references, shutdown, exit.  The workspace root comes from
``rootUri``; ``initializationOptions.extra_sys_path`` lets a caller point
jedi at an isolated environment's installed dependencies.

Run with ``python3 -m callctx.analyzer_server``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import jedi

from .wire import (
    ProtocolError,
    RpcMessage,
    TruncatedStreamError,
    frame_message,
    parse_message,
    path_to_uri,
    uri_to_path,
)


class JediServer:
    def __init__(self) -> None:
        self.root: Path | None = None
        self.extra_sys_path: list[str] = []
        self.docs: dict[str, str] = {}
        self._project = None

    # -- request handlers ----------------------------------------------

    def initialize(self, params: dict):
        self.root = uri_to_path(params["rootUri"]) if params.get("rootUri") else Path.cwd()
        options = params.get("initializationOptions") or {}
        self.extra_sys_path = list(options.get("extra_sys_path", []))
        self._project = jedi.Project(self.root, added_sys_path=self.extra_sys_path)
        # Pre-parse workspace files: jedi's cross-file reference search expects
        # them in its parser cache and KeyErrors otherwise (seen in 0.19.x).
        for path in sorted(self.root.rglob("*.py")):
            try:
                jedi.Script(path=path, project=self._project)
            except (OSError, ValueError):
                continue
        return {"capabilities": {"definitionProvider": True, "referencesProvider": True}}

    def did_open(self, params: dict) -> None:
        doc = params["textDocument"]
        self.docs[doc["uri"]] = doc["text"]

    def _script(self, uri: str) -> jedi.Script:
        path = uri_to_path(uri)
        code = self.docs.get(uri)
        if code is None:
            code = path.read_text(encoding="utf-8")
        return jedi.Script(code=code, path=path, project=self._project)

    @staticmethod
    def _locations(names) -> list[dict]:
        locations = []
        for name in names:
            if name.module_path is None or name.line is None:
                continue
            start = {"line": name.line - 1, "character": name.column}
            end = {"line": name.line - 1, "character": name.column + len(name.name)}
            locations.append(
                {"uri": path_to_uri(name.module_path), "range": {"start": start, "end": end}}
            )
        # jedi's result order is not stable across processes; sort so the
        # first location a client takes is always the same one.
        locations.sort(
            key=lambda loc: (loc["uri"], loc["range"]["start"]["line"], loc["range"]["start"]["character"])
        )
        return locations

    def definition(self, params: dict) -> list[dict]:
        pos = params["position"]
        script = self._script(params["textDocument"]["uri"])
        names = script.goto(
            pos["line"] + 1, pos["character"], follow_imports=True, follow_builtin_imports=True
        )
        return self._locations(names)

    def references(self, params: dict) -> list[dict]:
        pos = params["position"]
        include_declaration = bool((params.get("context") or {}).get("includeDeclaration"))
        script = self._script(params["textDocument"]["uri"])
        names = script.get_references(pos["line"] + 1, pos["character"])
        if not include_declaration:
            names = [n for n in names if not n.is_definition()]
        return self._locations(names)

    # -- dispatch ------------------------------------------------------

    def serve(self, stdin, stdout) -> int:
        handlers = {
            "initialize": self.initialize,
            "textDocument/definition": self.definition,
            "textDocument/references": self.references,
            "shutdown": lambda params: None,
        }
        while True:
            try:
                msg = parse_message(stdin)
            except TruncatedStreamError:
                return 0
            except ProtocolError as exc:
                print(f"analyzer server: {exc}", file=sys.stderr)
                return 1
            if msg.kind == "notification":
                if msg.method == "exit":
                    return 0
                if msg.method == "textDocument/didOpen":
                    self.did_open(msg.payload)
                continue
            handler = handlers.get(msg.method or "")
            if handler is None:
                reply = RpcMessage.error_response(
                    msg.id, {"code": -32601, "message": f"method not supported: {msg.method}"}
                )
            else:
                try:
                    reply = RpcMessage.response(msg.id, handler(msg.payload or {}))
                except Exception as exc:  # analyzer faults become error responses
                    reply = RpcMessage.error_response(
                        msg.id, {"code": -32603, "message": f"{type(exc).__name__}: {exc}"}
                    )
            stdout.write(frame_message(reply))
            stdout.flush()


def main() -> int:
    return JediServer().serve(sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
