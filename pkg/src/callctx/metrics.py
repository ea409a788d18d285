"""Evaluation metrics, copy baselines and the external-predictor adapter.

Argument text is normalized before comparison: enclosing parentheses
stripped, comments dropped, whitespace collapsed to single spaces between
lexical tokens, one trailing comma removed.  EM and EditSim operate on the
normalized strings; SPM* checks whether a predicted argument list can bind to
the callee's parameter list.
"""

from __future__ import annotations

import ast
import json
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .bridge import FunctionSignature
from .extraction import lex_tokens


def normalize_args(text: str) -> str:
    stripped = text.strip()
    if stripped.startswith("(") and stripped.endswith(")"):
        inner = stripped[1:-1]
        try:
            ast.parse(f"__probe__({inner})", mode="eval")
            stripped = inner
        except SyntaxError:
            pass  # parentheses are part of the first argument
    tokens = lex_tokens(stripped)
    if not tokens:
        return " ".join(stripped.split())
    if tokens[-1] == ",":
        tokens = tokens[:-1]
    return " ".join(tokens)


def exact_match(pred: str, truth: str) -> int:
    return int(normalize_args(pred) == normalize_args(truth))


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ch_a in enumerate(a, start=1):
        current = [i]
        for j, ch_b in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ch_a != ch_b),
                )
            )
        previous = current
    return previous[-1]


def edit_similarity(pred: str, truth: str) -> float:
    """100 * (1 - lev/max length) over normalized strings; two empties are a
    perfect match."""
    a, b = normalize_args(pred), normalize_args(truth)
    longest = max(len(a), len(b))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(a, b) / longest)


@dataclass(frozen=True)
class SpmResult:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def spm(
    pred: str, signature: FunctionSignature, require_all_bound: bool = True
) -> SpmResult:
    """Surface-level positional matching of a predicted argument list.

    The caller passes a receiver-excluded signature for method calls.  A
    ``**`` expansion in the prediction is assumed able to bind anything.
    """
    try:
        node = ast.parse(f"__probe__({pred}\n)", mode="eval").body
    except SyntaxError:
        return SpmResult(False, "parse-failure")
    if not isinstance(node, ast.Call):
        return SpmResult(False, "parse-failure")

    positional_capable = [p for p in signature.params if p.kind != "keyword-only"]
    names = {p.name for p in signature.params}

    n_positional = len(node.args)
    if n_positional > len(positional_capable) and not signature.has_var_positional:
        return SpmResult(False, "too-many-positional")

    bound: set[str] = {p.name for p in positional_capable[:n_positional]}
    has_kw_expansion = False
    for kw in node.keywords:
        if kw.arg is None:
            has_kw_expansion = True
            continue
        if kw.arg not in names and not signature.has_var_keyword:
            return SpmResult(False, f"unknown-keyword: {kw.arg}")
        if kw.arg in bound:
            return SpmResult(False, f"bound-twice: {kw.arg}")
        bound.add(kw.arg)

    if require_all_bound and not has_kw_expansion:
        starred = any(isinstance(a, ast.Starred) for a in node.args)
        for param in signature.params:
            if not param.has_default and param.name not in bound and not starred:
                return SpmResult(False, f"unbound-required: {param.name}")
    return SpmResult(True)


@dataclass
class EvalInstance:
    """One evaluation record: ground truth plus everything a baseline
    predictor may consult."""

    instance_id: str
    ground_truth: str
    origin: str | None = None
    usages: list[tuple[float, str]] = field(default_factory=list)  # ranked (sim, args)
    signature: FunctionSignature | None = None
    method_call: bool = False
    template: str = "decoder-only"
    input_text: list[str] = field(default_factory=list)

    def effective_signature(self) -> FunctionSignature | None:
        if self.signature is None:
            return None
        return self.signature.without_receiver() if self.method_call else self.signature


def coverage_curve(instances: Sequence[EvalInstance], k_max: int) -> dict[int, float]:
    """Percentage of instances whose top-k usages contain an exact argument
    match, for each k in 0..k_max."""
    curve: dict[int, float] = {0: 0.0}
    if not instances:
        return {k: 0.0 for k in range(k_max + 1)}
    truths = [normalize_args(inst.ground_truth) for inst in instances]
    for k in range(1, k_max + 1):
        hits = sum(
            1
            for inst, truth in zip(instances, truths)
            if any(normalize_args(args) == truth for _, args in inst.usages[:k])
        )
        curve[k] = 100.0 * hits / len(instances)
    return curve


# -- predictors --------------------------------------------------------

Predictor = Callable[[EvalInstance], str]


def predict_empty(inst: EvalInstance) -> str:
    return ""


def predict_copy_top(inst: EvalInstance) -> str:
    return inst.usages[0][1] if inst.usages else ""


def predict_echo(inst: EvalInstance) -> str:
    # Testing aid: a perfect oracle.
    return inst.ground_truth


def make_threshold_copier(theta: float, fallback: Predictor = predict_empty) -> Predictor:
    """Copy the top usage when its similarity clears ``theta``; otherwise ask
    the fallback predictor."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must be in [0, 1]")

    def predict(inst: EvalInstance) -> str:
        if inst.usages and inst.usages[0][0] >= theta:
            return inst.usages[0][1]
        return fallback(inst)

    return predict


def tune_threshold(
    validation: Sequence[EvalInstance],
    fallback: Predictor = predict_empty,
    grid: Sequence[float] | None = None,
) -> float:
    """EM-maximizing theta over the validation split; ties pick the smallest."""
    if grid is None:
        grid = [i / 20 for i in range(21)]
    best_theta, best_em = None, -1
    for theta in grid:
        predictor = make_threshold_copier(theta, fallback)
        em = sum(exact_match(predictor(inst), inst.ground_truth) for inst in validation)
        if em > best_em:
            best_theta, best_em = theta, em
    return best_theta


class AdapterError(Exception):
    pass


def run_external_predictor(
    instances: Sequence[EvalInstance], command: Sequence[str], timeout: float = 120.0
) -> tuple[dict[str, str], list[str]]:
    """Drive a child-process predictor over the line-delimited JSON protocol.

    Requests are ``{"id": n, "template": ..., "text": ...}``, one per line;
    responses ``{"id": n, "prediction": ...}`` in any order.  Returns
    (instance_id -> prediction, error records); missing responses yield
    flagged empty predictions.
    """
    request_lines = []
    for n, inst in enumerate(instances):
        request_lines.append(
            json.dumps({"id": n, "template": inst.template, "text": " ".join(inst.input_text)})
        )
    proc = subprocess.Popen(
        list(command),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    errors: list[str] = []
    try:
        stdout, _ = proc.communicate("\n".join(request_lines) + "\n", timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        stdout, _ = proc.communicate()
        errors.append(f"adapter timed out after {timeout}s")
    if proc.returncode not in (0, None):
        errors.append(f"adapter exited with status {proc.returncode}")

    by_seq: dict[int, str] = {}
    for line in stdout.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            by_seq[int(obj["id"])] = str(obj["prediction"])
        except (json.JSONDecodeError, KeyError, ValueError):
            errors.append(f"unparseable adapter line: {line[:80]}")

    predictions: dict[str, str] = {}
    for n, inst in enumerate(instances):
        if n not in by_seq:
            errors.append(f"no response for {inst.instance_id}; empty prediction used")
        predictions[inst.instance_id] = by_seq.get(n, "")
    return predictions, errors


# -- reporting ---------------------------------------------------------

@dataclass
class EvalReport:
    per_instance: list[dict]
    aggregates: dict[str, dict]
    coverage: dict[int, float]
    predictor: str = ""
    errors: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "predictor": self.predictor,
            "per_instance": self.per_instance,
            "aggregates": self.aggregates,
            "coverage": {str(k): v for k, v in self.coverage.items()},
            "errors": self.errors,
        }


def _aggregate(rows: list[dict]) -> dict:
    spm_rows = [r for r in rows if r["spm"] is not None]
    return {
        "count": len(rows),
        "em": 100.0 * sum(r["em"] for r in rows) / len(rows) if rows else 0.0,
        "edit_sim": sum(r["edit_sim"] for r in rows) / len(rows) if rows else 0.0,
        "spm": 100.0 * sum(r["spm"] for r in spm_rows) / len(spm_rows) if spm_rows else None,
    }


def evaluate(
    instances: Sequence[EvalInstance],
    predictions: dict[str, str],
    predictor_name: str = "",
    k_max: int = 10,
    require_all_bound: bool = True,
    errors: list[str] | None = None,
) -> EvalReport:
    rows = []
    for inst in instances:
        pred = predictions.get(inst.instance_id, "")
        row = {
            "instance_id": inst.instance_id,
            "origin": inst.origin,
            "prediction": pred,
            "em": exact_match(pred, inst.ground_truth),
            "edit_sim": edit_similarity(pred, inst.ground_truth),
            "spm": None,
        }
        signature = inst.effective_signature()
        if signature is not None:
            result = spm(pred, signature, require_all_bound=require_all_bound)
            row["spm"] = int(result.ok)
            if result.reason:
                row["spm_reason"] = result.reason
        rows.append(row)

    aggregates = {"overall": _aggregate(rows)}
    for origin in sorted({r["origin"] for r in rows if r["origin"]}):
        aggregates[origin] = _aggregate([r for r in rows if r["origin"] == origin])
    return EvalReport(
        per_instance=rows,
        aggregates=aggregates,
        coverage=coverage_curve(instances, k_max),
        predictor=predictor_name,
        errors=errors or [],
    )
