"""Similarity ranking, budget truncation and input-template rendering.

Components are counted in lexical tokens.  Separator markers cost one token
each and are charged to the total before component allocation, so an
assembled input never exceeds its plan's total.  Budget slack from short
components is redistributed toward the local context (3:1 left:right for the
in-filling template).
"""

from __future__ import annotations

from dataclasses import dataclass, field

SEP_OPEN = "<s>"
SEP_CLOSE = "</s>"
SEP_PREDICT = "<PREDICT>"

DECODER_ONLY = "decoder-only"
ENCODER_DECODER = "encoder-decoder"
TEMPLATES = (DECODER_ONLY, ENCODER_DECODER)


class AssemblyError(Exception):
    """The budget plan cannot fit any local context."""


def usage_similarity(target_left: set[str], usage_left: set[str]) -> float:
    """|S_l ∩ S_u| / |S_l|; an empty target set is defined as similarity 0."""
    if not target_left:
        return 0.0
    return len(target_left & usage_left) / len(target_left)


@dataclass
class UsageContext:
    """One other call of the same function, with its surrounding local
    context and the data the ranking tie-breaks need."""

    source: object  # SourceRange of the usage's call
    tokens: list[str]
    left_tokens: set[str]
    similarity: float
    args_text: str
    same_file_before_target: bool = False
    line_distance: int = 0
    source_path: str = ""

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens,
            "left_tokens": sorted(self.left_tokens),
            "similarity": self.similarity,
            "args_text": self.args_text,
            "same_file_before_target": self.same_file_before_target,
            "line_distance": self.line_distance,
            "source_path": self.source_path,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UsageContext":
        return cls(
            source=None,
            tokens=list(obj["tokens"]),
            left_tokens=set(obj["left_tokens"]),
            similarity=obj["similarity"],
            args_text=obj["args_text"],
            same_file_before_target=obj.get("same_file_before_target", False),
            line_distance=obj.get("line_distance", 0),
            source_path=obj.get("source_path", ""),
        )


def rank_usages(usages: list[UsageContext], k: int = 3) -> list[UsageContext]:
    """Top-k by similarity, descending.  Ties prefer same-file-before-target
    sites, then nearer locations, then path order."""
    ordered = sorted(
        usages,
        key=lambda u: (
            -u.similarity,
            not u.same_file_before_target,
            u.line_distance,
            u.source_path,
        ),
    )
    return ordered[: max(k, 0)]


def truncate(tokens: list[str], budget: int, direction: str) -> list[str]:
    """Cut ``tokens`` to ``budget``: from-right keeps the longest prefix,
    from-left keeps the longest suffix."""
    if budget <= 0:
        return []
    if len(tokens) <= budget:
        return list(tokens)
    if direction == "right":
        return tokens[:budget]
    if direction == "left":
        return tokens[-budget:]
    raise ValueError(f"unknown truncation direction: {direction}")


@dataclass(frozen=True)
class BudgetPlan:
    total: int
    left_ctx: int
    right_ctx: int
    implementation: int
    per_usage: int
    max_usages: int
    name: str = ""

    def separator_cost(self, template: str) -> int:
        # Worst case, all components present.
        if template == DECODER_ONLY:
            return 2 + self.max_usages
        return 4 + self.max_usages

    def __post_init__(self) -> None:
        used = (
            self.left_ctx
            + self.right_ctx
            + self.implementation
            + self.max_usages * self.per_usage
        )
        if used > self.total - self.separator_cost(ENCODER_DECODER):
            raise ValueError("component budgets exceed the total after separators")


def make_plan(preset: str, template: str, total: int = 512) -> BudgetPlan:
    """Named budget presets.

    ``cdi``     — analyzer context gets at least a quarter of the total.
    ``finetune``— right = left/3, implementation = total/8, usage = total/8.
    ``NxM``-style names pin (count, per-usage length) directly:
    512-3x64, 1024-3x128, 1024-6x64, 1024-8x64.
    """
    fc_presets = {
        "512-3x64": (512, 3, 64),
        "1024-3x128": (1024, 3, 128),
        "1024-6x64": (1024, 6, 64),
        "1024-8x64": (1024, 8, 64),
    }
    if preset in fc_presets:
        total, m, per_usage = fc_presets[preset]
        implementation = total // 8
    elif preset == "finetune":
        m = 3
        per_usage = total // 8
        implementation = total // 8
    elif preset == "cdi":
        m = 3
        implementation = total // 8
        per_usage = total // 24  # implementation + 3 usages = total / 4
    else:
        raise ValueError(f"unknown preset: {preset}")

    seps = 4 + m  # reserve for the larger template so plans are shareable
    rest = total - seps - implementation - m * per_usage
    if rest <= 0:
        raise ValueError(f"preset {preset} leaves no room for local context")
    if template == ENCODER_DECODER:
        right = rest // 4
        left = rest - right
    else:
        left = rest
        right = 0
    return BudgetPlan(
        total=total,
        left_ctx=left,
        right_ctx=right,
        implementation=implementation,
        per_usage=per_usage,
        max_usages=m,
        name=preset,
    )


PRESETS = ("cdi", "finetune", "512-3x64", "1024-3x128", "1024-6x64", "1024-8x64")


@dataclass
class ContextBundle:
    """Everything a predictor may see for one instance, untruncated."""

    left: list[str]
    right: list[str]
    implementation: list[str]
    usages: list[UsageContext] = field(default_factory=list)


@dataclass
class AssembledInput:
    template: str
    text: list[str]
    slots: dict[str, tuple[int, int]]

    def to_json(self) -> dict:
        return {
            "template": self.template,
            "text": self.text,
            "slots": {k: list(v) for k, v in self.slots.items()},
        }


def assemble(bundle: ContextBundle, plan: BudgetPlan, template: str) -> AssembledInput:
    """Render one input per the chosen template.

    Decoder-only order: Imp, U_m..U_1, X_L (most similar usage adjacent to
    X_L).  Encoder-decoder order: X_L, predict marker, X_R, Imp, U_1..U_m.
    Omitted components collapse their separators.
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template: {template}")

    usages = bundle.usages[: plan.max_usages]
    implementation = truncate(bundle.implementation, plan.implementation, "right")
    usage_tokens = [truncate(u.tokens, plan.per_usage, "left") for u in usages]

    slack = (plan.implementation - len(implementation)) + sum(
        plan.per_usage - len(toks) for toks in usage_tokens
    )
    slack += (plan.max_usages - len(usage_tokens)) * plan.per_usage

    if template == ENCODER_DECODER:
        right_budget = plan.right_ctx + slack // 4
        right = truncate(bundle.right, right_budget, "right")
        left_budget = plan.left_ctx + slack - slack // 4 + (right_budget - len(right))
    else:
        right = []
        left_budget = plan.left_ctx + plan.right_ctx + slack
    if left_budget <= 0:
        raise AssemblyError("plan leaves no budget for the left context")
    left = truncate(bundle.left, left_budget, "left")

    analyzer_parts: list[tuple[str, list[str]]] = []
    if implementation:
        analyzer_parts.append(("implementation", implementation))
    for i, toks in enumerate(usage_tokens):
        if toks:
            analyzer_parts.append((f"usage_{i + 1}", toks))

    text: list[str] = []
    slots: dict[str, tuple[int, int]] = {}

    def emit(name: str | None, tokens: list[str]) -> None:
        if name is not None:
            slots[name] = (len(text), len(text) + len(tokens))
        text.extend(tokens)

    if template == DECODER_ONLY:
        if analyzer_parts:
            emit(None, [SEP_OPEN])
            # usages most-similar-last so U_1 sits adjacent to X_L
            ordered = [p for p in analyzer_parts if p[0] == "implementation"] + list(
                reversed([p for p in analyzer_parts if p[0] != "implementation"])
            )
            for name, tokens in ordered:
                emit(name, tokens)
                emit(None, [SEP_CLOSE])
        emit("left_ctx", left)
    else:
        if analyzer_parts:
            emit(None, [SEP_OPEN])
        emit("left_ctx", left)
        emit(None, [SEP_PREDICT])
        emit("right_ctx", right)
        if analyzer_parts:
            emit(None, [SEP_CLOSE])
            for name, tokens in analyzer_parts:
                emit(name, tokens)
                emit(None, [SEP_CLOSE])

    if len(text) > plan.total:
        raise AssemblyError(
            f"assembled length {len(text)} exceeds plan total {plan.total}"
        )
    return AssembledInput(template=template, text=text, slots=slots)
