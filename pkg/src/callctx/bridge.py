"""Definition resolution, implementation extraction and usage grouping.

Two-pass design: first every kept call instance is resolved against its
project's analyzer session, then calls sharing a definition range are grouped
corpus-wide so usage collection is a pure lookup.
"""

from __future__ import annotations

import ast
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .assembly import UsageContext, usage_similarity
from .environments import SourceUniverse
from .extraction import CallInstance, LineIndex, lex_tokens, slice_span
from .wire import LspSession, SessionError, SourceRange, path_to_uri, uri_to_path


def def_group_id(def_range: SourceRange, universe: SourceUniverse | None = None) -> str:
    """Stable id for a definition site.

    When a universe is given, paths under the project source tree or its
    environment's site directory are keyed relative to those roots, so the id
    does not depend on where the environment was materialized.
    """
    location = def_range.uri
    if universe is not None:
        path = uri_to_path(def_range.uri)
        site = universe.site_dir()
        for tag, root in (("src", universe.project.source_root), ("site", site)):
            if root is not None and root in path.parents:
                location = f"{tag}:{path.relative_to(root).as_posix()}"
                break
    key = f"{location}:{def_range.start.line}:{def_range.start.character}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:12]


@dataclass
class ResolvedCall:
    instance: CallInstance
    def_range: SourceRange | None = None
    origin: str | None = None
    group_id: str | None = None
    failure: str | None = None

    @property
    def resolved(self) -> bool:
        return self.def_range is not None

    def to_json(self) -> dict:
        obj = {"instance": self.instance.to_json()}
        if self.def_range is not None:
            obj["def_uri"] = self.def_range.uri
            obj["def_range"] = self.def_range.to_lsp()
            obj["origin"] = self.origin
            obj["def_group_id"] = self.group_id
        if self.failure is not None:
            obj["failure"] = self.failure
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ResolvedCall":
        resolved = cls(instance=CallInstance.from_json(obj["instance"]))
        if "def_range" in obj:
            resolved.def_range = SourceRange.from_lsp(obj["def_uri"], obj["def_range"])
            resolved.origin = obj.get("origin")
            resolved.group_id = obj.get("def_group_id")
        resolved.failure = obj.get("failure")
        return resolved


def resolve_call(
    session: LspSession, inst: CallInstance, universe: SourceUniverse
) -> ResolvedCall:
    """Resolve one call's definition; failures leave the call unresolved
    (filter rule R6 picks that up)."""
    try:
        session.open_document(inst.file)
        ranges = session.request_definition(inst.callee_pos)
    except SessionError as exc:
        return ResolvedCall(instance=inst, failure=f"analyzer: {exc}")
    if not ranges:
        return ResolvedCall(instance=inst, failure="no-definition")
    first = ranges[0]  # alternates are kept in session diagnostics
    origin = universe.classify(uri_to_path(first.uri))
    return ResolvedCall(
        instance=inst, def_range=first, origin=origin,
        group_id=def_group_id(first, universe),
    )


DEFAULT_ANALYZER_CMD = [sys.executable, "-m", "callctx.analyzer_server"]


def resolve_instances(
    instances: list[CallInstance],
    universe: SourceUniverse,
    analyzer_cmd: list[str] | None = None,
    timeout: float = 30.0,
) -> list[ResolvedCall]:
    """Resolve all of one project's instances over a single analyzer session."""
    site = universe.site_dir()
    extra = [str(site)] if site is not None and site.is_dir() else []
    cmd = analyzer_cmd or DEFAULT_ANALYZER_CMD
    with LspSession(
        cmd, root_path=universe.project.source_root, timeout=timeout, extra_sys_path=extra
    ) as session:
        return [resolve_call(session, inst, universe) for inst in instances]


def group_resolved(calls: list[ResolvedCall]) -> dict[str, list[ResolvedCall]]:
    groups: dict[str, list[ResolvedCall]] = {}
    for call in calls:
        if call.group_id is not None:
            groups.setdefault(call.group_id, []).append(call)
    return groups


@dataclass(frozen=True)
class Parameter:
    name: str
    has_default: bool
    kind: str  # "positional-only" | "positional-or-keyword" | "keyword-only"


@dataclass
class FunctionSignature:
    params: list[Parameter] = field(default_factory=list)
    has_var_positional: bool = False
    has_var_keyword: bool = False

    def without_receiver(self) -> "FunctionSignature":
        """Drop the implicit receiver (``self``/``cls``) of a bound method."""
        if self.params and self.params[0].name in ("self", "cls"):
            return FunctionSignature(
                self.params[1:], self.has_var_positional, self.has_var_keyword
            )
        return self

    def to_json(self) -> dict:
        return {
            "params": [
                {"name": p.name, "has_default": p.has_default, "kind": p.kind}
                for p in self.params
            ],
            "has_var_positional": self.has_var_positional,
            "has_var_keyword": self.has_var_keyword,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FunctionSignature":
        return cls(
            params=[
                Parameter(p["name"], p["has_default"], p["kind"]) for p in obj["params"]
            ],
            has_var_positional=obj["has_var_positional"],
            has_var_keyword=obj["has_var_keyword"],
        )

    @classmethod
    def from_ast(cls, node: ast.FunctionDef | ast.AsyncFunctionDef) -> "FunctionSignature":
        args = node.args
        params: list[Parameter] = []
        positional = list(args.posonlyargs) + list(args.args)
        n_defaults = len(args.defaults)
        for i, arg in enumerate(positional):
            kind = "positional-only" if i < len(args.posonlyargs) else "positional-or-keyword"
            has_default = i >= len(positional) - n_defaults
            params.append(Parameter(arg.arg, has_default, kind))
        for arg, default in zip(args.kwonlyargs, args.kw_defaults):
            params.append(Parameter(arg.arg, default is not None, "keyword-only"))
        return cls(
            params=params,
            has_var_positional=args.vararg is not None,
            has_var_keyword=args.kwarg is not None,
        )


@dataclass
class ImplementationContext:
    """Source text and signature of the called function's definition.

    ``receiver_bound`` marks definitions whose first parameter is implicitly
    bound at the call site, i.e. a class's ``__init__`` reached through a
    constructor call.
    """

    text: str
    tokens: list[str]
    signature: FunctionSignature
    stub: bool = False
    receiver_bound: bool = False

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "tokens": self.tokens,
            "signature": self.signature.to_json(),
            "stub": self.stub,
            "receiver_bound": self.receiver_bound,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImplementationContext":
        return cls(
            text=obj["text"],
            tokens=list(obj["tokens"]),
            signature=FunctionSignature.from_json(obj["signature"]),
            stub=obj["stub"],
            receiver_bound=obj.get("receiver_bound", False),
        )


def _is_stub_body(body: list[ast.stmt]) -> bool:
    for stmt in body:
        if isinstance(stmt, ast.Pass):
            continue
        if isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Constant):
            if stmt.value.value is Ellipsis or isinstance(stmt.value.value, str):
                continue
        return False
    return True


def _find_definition(tree: ast.AST, text: str, def_range: SourceRange):
    """Locate the function the definition range names.  A range naming a class
    picks the class's ``__init__`` when present (constructor calls)."""
    name = slice_span(text, def_range)
    target_line = def_range.start.line

    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            if node.name == name and node.lineno - 1 == target_line:
                return node, False
        elif isinstance(node, ast.ClassDef):
            if node.name == name and node.lineno - 1 == target_line:
                for stmt in node.body:
                    if (
                        isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef))
                        and stmt.name == "__init__"
                    ):
                        return stmt, True
                return None, False
    return None, False


def extract_implementation(def_range: SourceRange) -> ImplementationContext | None:
    """Definition header-through-body text plus the parsed signature.

    Returns None when the range does not name a function or class the file's
    syntax tree knows about.
    """
    path = uri_to_path(def_range.uri)
    text = path.read_text(encoding="utf-8")
    try:
        tree = ast.parse(text)
    except SyntaxError:
        return None
    node, is_constructor = _find_definition(tree, text, def_range)
    if node is None:
        return None
    index = LineIndex(text)
    start = index.offset(node.lineno - 1, node.col_offset)
    end = index.offset(node.end_lineno - 1, node.end_col_offset)
    stub = _is_stub_body(node.body)
    if stub:
        # Header only: everything before the (empty) body, e.g. overload stubs.
        body_start = index.offset(node.body[0].lineno - 1, node.body[0].col_offset)
        impl_text = text[start:body_start].rstrip()
    else:
        impl_text = text[start:end]
    return ImplementationContext(
        text=impl_text,
        tokens=lex_tokens(impl_text),
        signature=FunctionSignature.from_ast(node),
        stub=stub,
        receiver_bound=is_constructor,
    )


class _FileTexts:
    def __init__(self) -> None:
        self._cache: dict[Path, str] = {}

    def get(self, path: Path) -> str:
        if path not in self._cache:
            self._cache[path] = path.read_text(encoding="utf-8")
        return self._cache[path]


def collect_usages(
    group: list[ResolvedCall],
    target: ResolvedCall,
    file_texts: _FileTexts | None = None,
) -> list[UsageContext]:
    """Usage contexts for ``target`` drawn from the other calls in its
    definition group: same-file sites strictly before the target, plus sites
    in other project files.  The target's own site never appears."""
    file_texts = file_texts or _FileTexts()
    target_inst = target.instance
    target_left = set(target_inst.left_context)
    usages: list[UsageContext] = []
    for member in group:
        inst = member.instance
        if inst.instance_id == target_inst.instance_id:
            continue
        same_file = inst.file == target_inst.file
        before = (inst.arg_span.start.line, inst.arg_span.start.character) < (
            target_inst.arg_span.start.line,
            target_inst.arg_span.start.character,
        )
        if same_file and not before:
            continue
        body = slice_span(file_texts.get(inst.file), inst.enclosing_fn_span)
        usages.append(
            UsageContext(
                source=inst.call_span,
                tokens=lex_tokens(body),
                left_tokens=set(inst.left_context),
                similarity=usage_similarity(target_left, set(inst.left_context)),
                args_text=inst.ground_truth_args,
                same_file_before_target=same_file,
                line_distance=abs(inst.call_span.start.line - target_inst.call_span.start.line),
                source_path=str(inst.file),
            )
        )
    return usages
