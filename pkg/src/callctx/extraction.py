"""Syntax-tree call-site extraction and selection filtering.

Every syntactic call expression inside a (named) function body becomes a
:class:`CallInstance` carrying the spans the completion task needs: the whole
call, the argument list, the enclosing function body, plus the verbatim
argument text and the lexical left/right token contexts.  ``apply_filters``
then applies the selection rules R1..R8 and records which rule rejected an
instance.
"""

from __future__ import annotations

import ast
import io
import tokenize
from dataclasses import dataclass, field
from pathlib import Path

from .wire import SourcePosition, SourceRange, path_to_uri

R1 = "R1"  # error / logging callees, raise constructors
R2 = "R2"  # standard type constructors and conversions
R3 = "R3"  # test assertions
R4 = "R4"  # outside any function body (excluded at extraction, kept for audit)
R5 = "R5"  # zero arguments
R6 = "R6"  # definition not resolved by the analyzer
R7 = "R7"  # ground truth contains a string literal
R8 = "R8"  # configurable denylist
ALL_RULES = (R1, R2, R3, R4, R5, R6, R7, R8)


class ExtractionError(Exception):
    """The file could not be parsed; callers record a skip and move on."""


_DROPPED_TOKEN_TYPES = {
    tokenize.COMMENT,
    tokenize.NL,
    tokenize.NEWLINE,
    tokenize.INDENT,
    tokenize.DEDENT,
    tokenize.ENCODING,
    tokenize.ENDMARKER,
}


def lex_tokens(text: str) -> list[str]:
    """Lexical tokens of ``text``, comments removed, whitespace collapsed.

    Tolerates incomplete fragments (e.g. a left context that ends inside an
    open parenthesis): tokens produced before the tokenizer gives up are kept.
    """
    tokens: list[str] = []
    try:
        for tok in tokenize.generate_tokens(io.StringIO(text).readline):
            if tok.type in _DROPPED_TOKEN_TYPES or not tok.string.strip():
                continue
            tokens.append(tok.string)
    except (tokenize.TokenError, IndentationError, SyntaxError):
        pass
    return tokens


def contains_string_literal(text: str) -> bool:
    try:
        for tok in tokenize.generate_tokens(io.StringIO(text).readline):
            if tok.type == tokenize.STRING:
                return True
    except (tokenize.TokenError, IndentationError, SyntaxError):
        # Fragment did not lex cleanly; fall back to a quote scan.
        return '"' in text or "'" in text
    return False


class LineIndex:
    """Bidirectional (line, character) <-> absolute offset conversion."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.starts = [0]
        for i, ch in enumerate(text):
            if ch == "\n":
                self.starts.append(i + 1)

    def offset(self, line: int, character: int) -> int:
        return self.starts[line] + character

    def linecol(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self.starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo, offset - self.starts[lo]


def _span_json(rng: SourceRange) -> dict:
    return rng.to_lsp()


def _span_from_json(uri: str, obj: dict) -> SourceRange:
    return SourceRange.from_lsp(uri, obj)


@dataclass
class CallInstance:
    """One extracted function call and everything local to it."""

    file: Path
    callee_name: str
    call_span: SourceRange
    arg_span: SourceRange
    enclosing_fn_span: SourceRange
    ground_truth_args: str
    left_context: list[str]
    right_context: list[str]
    callee_pos: SourcePosition  # analyzer query point (the callee name token)
    in_raise: bool = False
    at_module_level: bool = False

    @property
    def instance_id(self) -> str:
        return (
            f"{self.file}:{self.call_span.start.line}:{self.call_span.start.character}"
        )

    def to_json(self) -> dict:
        return {
            "file": str(self.file),
            "callee_name": self.callee_name,
            "call_span": _span_json(self.call_span),
            "arg_span": _span_json(self.arg_span),
            "enclosing_fn_span": _span_json(self.enclosing_fn_span),
            "ground_truth_args": self.ground_truth_args,
            "left_context": self.left_context,
            "right_context": self.right_context,
            "callee_pos": {
                "line": self.callee_pos.line,
                "character": self.callee_pos.character,
            },
            "in_raise": self.in_raise,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CallInstance":
        file = Path(obj["file"])
        uri = path_to_uri(file)
        return cls(
            file=file,
            callee_name=obj["callee_name"],
            call_span=_span_from_json(uri, obj["call_span"]),
            arg_span=_span_from_json(uri, obj["arg_span"]),
            enclosing_fn_span=_span_from_json(uri, obj["enclosing_fn_span"]),
            ground_truth_args=obj["ground_truth_args"],
            left_context=list(obj["left_context"]),
            right_context=list(obj["right_context"]),
            callee_pos=SourcePosition(
                uri, obj["callee_pos"]["line"], obj["callee_pos"]["character"]
            ),
            in_raise=obj.get("in_raise", False),
        )


@dataclass(frozen=True)
class FilterVerdict:
    kept: bool
    rule: str | None = None

    def __post_init__(self) -> None:
        if self.kept == (self.rule is not None):
            raise ValueError("kept instances carry no rule; rejected ones carry one")


@dataclass
class FilterConfig:
    """Rule parameters.  The denylist ships with the two canonical entries and
    is user-extensible."""

    error_logging_callees: set[str] = field(
        default_factory=lambda: {
            "print",
            "debug",
            "info",
            "warning",
            "warn",
            "error",
            "critical",
            "exception",
            "fatal",
            "log",
        }
    )
    type_constructors: set[str] = field(
        default_factory=lambda: {
            "int",
            "float",
            "complex",
            "bool",
            "str",
            "bytes",
            "bytearray",
            "list",
            "tuple",
            "dict",
            "set",
            "frozenset",
        }
    )
    assert_prefix: str = "assert"
    denylist: set[str] = field(default_factory=lambda: {"sleep", "add_argument"})

    def to_json(self) -> dict:
        return {
            "error_logging_callees": sorted(self.error_logging_callees),
            "type_constructors": sorted(self.type_constructors),
            "assert_prefix": self.assert_prefix,
            "denylist": sorted(self.denylist),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FilterConfig":
        config = cls()
        if "error_logging_callees" in obj:
            config.error_logging_callees = set(obj["error_logging_callees"])
        if "type_constructors" in obj:
            config.type_constructors = set(obj["type_constructors"])
        if "assert_prefix" in obj:
            config.assert_prefix = obj["assert_prefix"]
        if "denylist" in obj:
            config.denylist = set(obj["denylist"])
        return config


def apply_filters(
    inst: CallInstance, resolved: bool, config: FilterConfig | None = None
) -> FilterVerdict:
    """Total function: every instance gets exactly one verdict.  Rules fire in
    index order and the first hit is recorded."""
    config = config or FilterConfig()
    if inst.in_raise or inst.callee_name in config.error_logging_callees:
        return FilterVerdict(False, R1)
    if inst.callee_name in config.type_constructors:
        return FilterVerdict(False, R2)
    if inst.callee_name.startswith(config.assert_prefix):
        return FilterVerdict(False, R3)
    if inst.at_module_level:
        return FilterVerdict(False, R4)
    if not inst.ground_truth_args.strip():
        return FilterVerdict(False, R5)
    if not resolved:
        return FilterVerdict(False, R6)
    if contains_string_literal(inst.ground_truth_args):
        return FilterVerdict(False, R7)
    if inst.callee_name in config.denylist:
        return FilterVerdict(False, R8)
    return FilterVerdict(True)


def _callee_name(func: ast.expr) -> str:
    if isinstance(func, ast.Name):
        return func.id
    if isinstance(func, ast.Attribute):
        return func.attr
    return ast.unparse(func)


class _CallVisitor(ast.NodeVisitor):
    def __init__(self, path: Path, text: str, index: LineIndex) -> None:
        self.path = path
        self.uri = path_to_uri(path)
        self.text = text
        self.index = index
        self.fn_stack: list[ast.AST] = []
        self.raise_exprs: set[int] = set()
        self.instances: list[CallInstance] = []

    def visit_FunctionDef(self, node: ast.FunctionDef) -> None:
        self.fn_stack.append(node)
        self.generic_visit(node)
        self.fn_stack.pop()

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_Raise(self, node: ast.Raise) -> None:
        if isinstance(node.exc, ast.Call):
            self.raise_exprs.add(id(node.exc))
        self.generic_visit(node)

    def _pos(self, offset: int) -> SourcePosition:
        line, col = self.index.linecol(offset)
        return SourcePosition(self.uri, line, col)

    def _range(self, start: int, end: int) -> SourceRange:
        return SourceRange(self.uri, self._pos(start), self._pos(end))

    def _find_open_paren(self, start: int) -> int | None:
        i = start
        text = self.text
        while i < len(text):
            ch = text[i]
            if ch == "(":
                return i
            if ch == "#":
                nl = text.find("\n", i)
                i = nl + 1 if nl >= 0 else len(text)
            elif ch in " \t\r\n\\":
                i += 1
            else:
                return None
        return None

    def visit_Call(self, node: ast.Call) -> None:
        if self.fn_stack:  # calls outside any function body are not extracted
            self._record(node)
        self.generic_visit(node)

    def _record(self, node: ast.Call) -> None:
        # Innermost named function provides the local context; lambdas inherit
        # their nearest named enclosing function.
        fn = self.fn_stack[-1]
        idx = self.index
        call_start = idx.offset(node.lineno - 1, node.col_offset)
        call_end = idx.offset(node.end_lineno - 1, node.end_col_offset)
        func_end = idx.offset(node.func.end_lineno - 1, node.func.end_col_offset)
        open_paren = self._find_open_paren(func_end)
        if open_paren is None or call_end <= open_paren:
            return  # not a plain parenthesized call form
        close_paren = call_end - 1
        if self.text[close_paren] != ")":
            return
        fn_start = idx.offset(fn.lineno - 1, fn.col_offset)
        fn_end = idx.offset(fn.end_lineno - 1, fn.end_col_offset)

        func = node.func
        if isinstance(func, ast.Attribute):
            callee_pos = self._pos(func_end - len(func.attr))
        elif isinstance(func, ast.Name):
            callee_pos = self._pos(call_start)
        else:
            callee_pos = self._pos(func_end - 1)

        self.instances.append(
            CallInstance(
                file=self.path,
                callee_name=_callee_name(func),
                call_span=self._range(call_start, call_end),
                arg_span=self._range(open_paren + 1, close_paren),
                enclosing_fn_span=self._range(fn_start, fn_end),
                ground_truth_args=self.text[open_paren + 1 : close_paren],
                left_context=lex_tokens(self.text[fn_start : open_paren + 1]),
                right_context=lex_tokens(self.text[close_paren:fn_end]),
                callee_pos=callee_pos,
                in_raise=id(node) in self.raise_exprs,
            )
        )


def extract_calls(path: str | Path, text: str | None = None) -> list[CallInstance]:
    """All call instances of one file, in document order (pre-filter)."""
    path = Path(path)
    if text is None:
        text = path.read_text(encoding="utf-8")
    try:
        tree = ast.parse(text)
    except SyntaxError as exc:
        raise ExtractionError(f"{path}: {exc}") from exc
    visitor = _CallVisitor(path, text, LineIndex(text))
    visitor.visit(tree)
    return visitor.instances


def slice_span(text: str, rng: SourceRange) -> str:
    """Re-slice ``text`` with a span; used to check span consistency."""
    index = LineIndex(text)
    start = index.offset(rng.start.line, rng.start.character)
    end = index.offset(rng.end.line, rng.end.character)
    return text[start:end]
