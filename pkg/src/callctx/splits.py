"""Dependency-isolated train/valid/test split construction.

Isolation is defined over one-hop import closures: with train set ``s`` and
test set ``t``, ``s_1`` and ``t_1`` add each set's direct imports.  Levels:

    1: s ∩ t = ∅          2: s_1 ∩ t = ∅
    3: s_1 ∩ t = ∅ and s ∩ t_1 = ∅
    4: s_1 ∩ t_1 = ∅

all evaluated after removing the stdlib exemption set.  Sampling follows the
"test first, then greedily admit training projects" procedure, retried over
sub-seeds, keeping the split closest to the requested ratio.  Valid/test
mutual isolation is deliberately not enforced; overlap through shared imports
is flagged in the manifest instead.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

LEVELS = (1, 2, 3, 4)


class SplitError(Exception):
    pass


@dataclass
class ImportGraph:
    nodes: set[str]
    edges: dict[str, set[str]] = field(default_factory=dict)
    stdlib_set: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        for source, targets in self.edges.items():
            if source in targets:
                raise ValueError(f"self-edge on {source}")

    def successors(self, node: str) -> set[str]:
        if node in self.stdlib_set:
            return set()  # stdlib members contribute no tracked imports
        return set(self.edges.get(node, ()))

    def to_json(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "edges": {k: sorted(v) for k, v in sorted(self.edges.items()) if v},
            "stdlib_set": sorted(self.stdlib_set),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImportGraph":
        return cls(
            nodes=set(obj["nodes"]),
            edges={k: set(v) for k, v in obj.get("edges", {}).items()},
            stdlib_set=set(obj.get("stdlib_set", ())),
        )

    @classmethod
    def from_projects(cls, projects, stdlib_set: set[str] | None = None) -> "ImportGraph":
        """Edges come from resolved ``direct_deps``, not source scanning."""
        return cls(
            nodes={p.name for p in projects},
            edges={p.name: set(p.direct_deps) for p in projects if p.direct_deps},
            stdlib_set=set(stdlib_set or ()),
        )


def closure(graph: ImportGraph, projects: set[str]) -> set[str]:
    """``projects`` plus their direct imports (one hop only)."""
    unknown = projects - graph.nodes
    if unknown:
        raise SplitError(f"unknown nodes: {sorted(unknown)}")
    result = set(projects)
    for p in projects:
        result |= graph.successors(p)
    return result


@dataclass
class SplitManifest:
    train: list[str]
    valid: list[str]
    test: list[str]
    level: int
    seed: int
    closure_evidence: dict[str, list[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    valid_test_shared_imports: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "train": self.train,
            "valid": self.valid,
            "test": self.test,
            "level": self.level,
            "seed": self.seed,
            "closure_evidence": self.closure_evidence,
            "warnings": self.warnings,
            "valid_test_shared_imports": self.valid_test_shared_imports,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitManifest":
        return cls(
            train=list(obj["train"]),
            valid=list(obj["valid"]),
            test=list(obj["test"]),
            level=obj["level"],
            seed=obj["seed"],
            closure_evidence=dict(obj.get("closure_evidence", {})),
            warnings=list(obj.get("warnings", ())),
            valid_test_shared_imports=list(obj.get("valid_test_shared_imports", ())),
        )


def _violations(
    level: int, s: set[str], t: set[str], s1: set[str], t1: set[str], stdlib: set[str]
) -> set[str]:
    s, t = s - stdlib, t - stdlib
    s1, t1 = s1 - stdlib, t1 - stdlib
    if level == 1:
        return s & t
    if level == 2:
        return s1 & t
    if level == 3:
        return (s1 & t) | (s & t1)
    if level == 4:
        return s1 & t1
    raise SplitError(f"unknown isolation level: {level}")


def check_isolation(manifest: SplitManifest, graph: ImportGraph) -> list[str]:
    """Empty list means pass; otherwise the offending shared projects."""
    s, t = set(manifest.train), set(manifest.test)
    s1, t1 = closure(graph, s), closure(graph, t)
    return sorted(_violations(manifest.level, s, t, s1, t1, graph.stdlib_set))


def sample_split(
    graph: ImportGraph,
    level: int,
    seed: int,
    ratio: tuple[int, int, int] = (10, 1, 1),
    trials: int = 20,
) -> SplitManifest:
    """Sample test (and valid) sets, then greedily admit isolated training
    projects; repeated over sub-seeded trials, keeping the best-ratio split."""
    if not graph.nodes:
        raise SplitError("empty graph")
    if level not in LEVELS:
        raise SplitError(f"unknown isolation level: {level}")
    nodes = sorted(graph.nodes)
    n = len(nodes)
    r_train, r_valid, r_test = ratio
    r_sum = r_train + r_valid + r_test
    stdlib = graph.stdlib_set

    best: tuple[float, SplitManifest] | None = None
    for trial in range(trials):
        rng = random.Random(seed * 1_000_003 + trial)
        scale = rng.choice([1.0, 0.75, 0.5, 1.25, 1.5])
        t_size = max(1, min(n - 2, round(n * r_test / r_sum * scale))) if n > 2 else 1
        v_size = max(1, round(t_size * r_valid / r_test)) if n - t_size > 1 else 0

        pool = list(nodes)
        rng.shuffle(pool)
        test = set(pool[:t_size])
        valid = set(pool[t_size : t_size + v_size])
        remaining = pool[t_size + v_size :]

        t1 = closure(graph, test)
        train: set[str] = set()
        s1: set[str] = set()
        for candidate in remaining:
            cand_s1 = s1 | {candidate} | graph.successors(candidate)
            if not _violations(level, train | {candidate}, test, cand_s1, t1, stdlib):
                train.add(candidate)
                s1 = cand_s1

        deviation = abs(len(train) - r_train / r_test * len(test)) + abs(
            len(valid) - r_valid / r_test * len(test)
        )
        manifest = SplitManifest(
            train=sorted(train),
            valid=sorted(valid),
            test=sorted(test),
            level=level,
            seed=seed,
            closure_evidence={"s_1": sorted(s1 - stdlib), "t_1": sorted(t1 - stdlib)},
            valid_test_shared_imports=sorted(
                (closure(graph, valid) & t1) - stdlib
            ),
        )
        if best is None or deviation < best[0]:
            best = (deviation, manifest)

    deviation, manifest = best
    achieved = len(manifest.train)
    wanted = r_train / r_test * len(manifest.test)
    if achieved < wanted:
        manifest.warnings.append(
            f"ratio {ratio} infeasible at level {level}: best achievable train size "
            f"{achieved} (wanted ~{wanted:.0f})"
        )
    return manifest
