"""Release gate: one test per acceptance criterion.

Run with ``pytest tests/test_acceptance.py -v`` to get one pass/fail line per
criterion.  Each test enforces its stated tolerance and time budget; the
corpus-level checks run against the fixture registry under tests/fixtures.
"""

import io
import json
import random
import subprocess
import sys
import time
from pathlib import Path

import pytest

from callctx.assembly import (
    DECODER_ONLY,
    ENCODER_DECODER,
    PRESETS,
    SEP_PREDICT,
    ContextBundle,
    UsageContext,
    assemble,
    make_plan,
    usage_similarity,
)
from callctx.metrics import (
    EvalInstance,
    coverage_curve,
    edit_similarity,
    exact_match,
    levenshtein,
    make_threshold_copier,
    predict_copy_top,
    predict_echo,
    spm,
    tune_threshold,
)
from callctx.pipeline import (
    eval_instances_from_records,
    pipeline_run,
    read_jsonl,
    resolve_config,
    stage_envs,
    stage_eval,
    stage_extract,
    stage_resolve,
    load_universe,
)
from callctx.splits import (
    LEVELS,
    ImportGraph,
    SplitManifest,
    check_isolation,
    sample_split,
)
from callctx.wire import (
    LspSession,
    RpcMessage,
    SourcePosition,
    frame_message,
    parse_message,
    read_frame,
)

HERE = Path(__file__).parent
REGISTRY = HERE / "fixtures" / "registry"
GOLDEN = HERE / "golden"
FIXTURE_COUNTS = json.loads((GOLDEN / "fixture_counts.json").read_text())


def fixture_config():
    return resolve_config(
        {"corpus": {"registry": str(REGISTRY)}, "split": {"level": 2, "seed": 7}}
    )


@pytest.fixture(scope="module")
def corpus_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    manifest = pipeline_run(fixture_config(), out)
    return out, manifest


# -- generators used by the bulk criteria ------------------------------


def random_message(rng: random.Random) -> RpcMessage:
    def value(depth=0):
        choice = rng.randrange(6 if depth < 2 else 4)
        if choice == 0:
            return rng.randint(-(2**40), 2**40)
        if choice == 1:
            return "".join(chr(rng.randint(32, 0x2FA0)) for _ in range(rng.randint(0, 12)))
        if choice == 2:
            return None
        if choice == 3:
            return rng.random() < 0.5
        if choice == 4:
            return [value(depth + 1) for _ in range(rng.randint(0, 4))]
        return {f"k{i}": value(depth + 1) for i in range(rng.randint(0, 4))}

    kind = rng.randrange(4)
    if kind == 0:
        return RpcMessage.request(rng.randint(0, 2**31), f"m/{rng.randint(0, 99)}", value())
    if kind == 1:
        return RpcMessage.notification(f"n/{rng.randint(0, 99)}", value())
    if kind == 2:
        return RpcMessage.response(rng.randint(0, 2**31), value())
    return RpcMessage.error_response(
        rng.randint(0, 2**31), {"code": rng.randint(-32768, 0), "message": str(value())}
    )


def random_graph(rng: random.Random, max_nodes: int = 200) -> ImportGraph:
    n = rng.randint(2, max_nodes)
    nodes = [f"p{i}" for i in range(n)]
    edges: dict[str, set[str]] = {}
    for _ in range(rng.randint(0, 2 * n)):
        a, b = rng.sample(nodes, 2)
        edges.setdefault(a, set()).add(b)
    stdlib = set(rng.sample(nodes, rng.randint(0, n // 10)))
    return ImportGraph(nodes=set(nodes), edges=edges, stdlib_set=stdlib)


def oracle_levenshtein(a: str, b: str) -> int:
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[m][n]


# -- the criteria ------------------------------------------------------


def test_wire_roundtrip_and_byte_exact_replay():
    """10,000-message frame/parse identity plus byte-exact scripted replay."""
    rng = random.Random(20260823)
    for _ in range(10_000):
        msg = random_message(rng)
        assert parse_message(io.BytesIO(frame_message(msg))) == msg

    started = time.perf_counter()
    transcript_path = GOLDEN / "ls_examples_transcript.json"
    proc = subprocess.Popen(
        [sys.executable, "-m", "callctx.mock_server", "--transcript", str(transcript_path)],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
    )
    try:
        request = RpcMessage.request(
            7,
            "textDocument/definition",
            {
                "textDocument": {"uri": "file://path/to/file/"},
                "position": {"line": 1, "character": 10},
            },
        )
        proc.stdin.write(frame_message(request))
        proc.stdin.flush()
        body = read_frame(proc.stdout)
    finally:
        proc.kill()
    transcript = json.loads(transcript_path.read_text())
    expected = transcript["responses"][0]["content"].replace("$ID", "7").encode()
    assert body == expected, "replayed response is not byte-identical"
    assert time.perf_counter() - started < 1.0


def test_extraction_filters_and_reference_scenario(tmp_path):
    """Golden instance/rejection counts and the mapper scenario in < 10 s."""
    started = time.perf_counter()
    accepted, _ = stage_envs(REGISTRY, tmp_path / "envs")
    universes = [load_universe(tmp_path / "envs", name) for name in accepted]
    counts = stage_extract(universes, tmp_path / "instances.jsonl")
    assert counts == FIXTURE_COUNTS["extract"]
    counts = stage_resolve(tmp_path / "instances.jsonl", tmp_path / "envs", tmp_path / "resolved.jsonl")
    assert counts == FIXTURE_COUNTS["resolve"]

    # the cross-file scenario: a map() call whose definition has a 3-line
    # body and whose usage pool includes resolve_arguments in another file
    from callctx.bridge import (
        ResolvedCall,
        _FileTexts,
        collect_usages,
        extract_implementation,
        group_resolved,
    )

    calls = [
        ResolvedCall.from_json(r)
        for r in read_jsonl(tmp_path / "resolved.jsonl")
        if r["kept"] and r["project"] == "argmapper"
    ]
    targets = [
        c for c in calls
        if c.instance.callee_name == "map" and c.instance.file.name == "keywords.py"
    ]
    assert len(targets) == 1
    target = targets[0]
    assert target.instance.ground_truth_args == "positional, named"

    impl = extract_implementation(target.def_range)
    assert impl is not None and len(impl.text.splitlines()) == 3

    usages = collect_usages(group_resolved(calls)[target.group_id], target, _FileTexts())
    assert any(
        "resolve_arguments" in u.tokens and u.source_path.endswith("runner.py")
        for u in usages
    )
    assert time.perf_counter() - started < 10.0


def test_similarity_properties_and_half_example():
    """Range, identity and monotonicity over 10,000 random set pairs."""
    rng = random.Random(99)
    vocabulary = [f"t{i}" for i in range(40)]
    for _ in range(10_000):
        target = set(rng.sample(vocabulary, rng.randint(0, 20)))
        usage = set(rng.sample(vocabulary, rng.randint(0, 20)))
        sim = usage_similarity(target, usage)
        assert 0.0 <= sim <= 1.0
        if target:
            assert usage_similarity(target, set(target)) == 1.0
            extra = rng.choice(vocabulary)
            assert usage_similarity(target, usage | {extra}) >= sim
    assert usage_similarity({"a", "b", "c", "d"}, {"a", "b", "x"}) == 0.5


def test_truncation_and_templates_never_overflow():
    """1,000 random component configs under every preset and template."""
    rng = random.Random(4242)
    for _ in range(1_000):
        lengths = {
            "left": rng.randint(0, 3000),
            "right": rng.randint(0, 3000),
            "implementation": rng.randint(0, 1500),
            "n_usages": rng.randint(0, 8),
            "usage_len": rng.randint(0, 400),
        }
        preset = rng.choice(PRESETS)
        for template in (DECODER_ONLY, ENCODER_DECODER):
            plan = make_plan(preset, template)
            usages = [
                UsageContext(
                    source=None,
                    tokens=[f"u{i}_{j}" for j in range(lengths["usage_len"])],
                    left_tokens=set(),
                    similarity=1.0 - i / 10,
                    args_text="a",
                )
                for i in range(lengths["n_usages"])
            ]
            bundle = ContextBundle(
                left=[f"l{i}" for i in range(lengths["left"])],
                right=[f"r{i}" for i in range(lengths["right"])],
                implementation=[f"i{i}" for i in range(lengths["implementation"])],
                usages=usages,
            )
            assembled = assemble(bundle, plan, template)
            assert len(assembled.text) <= plan.total

            # the token adjacent to the prediction point survives
            if lengths["left"]:
                left_slot = assembled.slots["left_ctx"]
                assert left_slot[1] > left_slot[0]
                assert assembled.text[left_slot[1] - 1] == f"l{lengths['left'] - 1}"

            # slot order per template
            order = sorted(assembled.slots, key=lambda k: assembled.slots[k][0])
            if template == ENCODER_DECODER:
                assert order[0] == "left_ctx"
                assert assembled.text[assembled.slots["left_ctx"][1]] == SEP_PREDICT
                tail = [s for s in order if s.startswith("usage_")]
                assert tail == sorted(tail)  # U_1 before U_2 ...
            else:
                assert order[-1] == "left_ctx"
                usage_slots = [s for s in order if s.startswith("usage_")]
                assert usage_slots == sorted(usage_slots, reverse=True)


def test_split_isolation_over_random_graphs():
    """1,000 random graphs: sampled manifests isolate; monotone; star case."""
    rng = random.Random(31337)
    for i in range(1_000):
        graph = random_graph(rng)
        level = rng.choice(LEVELS)
        manifest = sample_split(graph, level=level, seed=i, trials=2)
        assert check_isolation(manifest, graph) == []
        if i % 25 == 0:  # monotonicity spot checks on the L4 sampler
            l4 = sample_split(graph, level=4, seed=i, trials=2)
            for lower in LEVELS:
                relabeled = SplitManifest(
                    train=l4.train, valid=l4.valid, test=l4.test, level=lower, seed=i
                )
                assert check_isolation(relabeled, graph) == []

    hub_graph = ImportGraph(
        nodes={f"p{i}" for i in range(9)} | {"hub"},
        edges={f"p{i}": {"hub"} for i in range(9)},
    )
    manifest = sample_split(hub_graph, level=4, seed=3)
    assert manifest.warnings, "star-graph level-4 infeasibility must be reported"
    assert check_isolation(manifest, hub_graph) == []


def test_metrics_against_oracles(corpus_run):
    """EditSim DP oracle, the 57.14 example, em=>100, SPM* on ground truths."""
    rng = random.Random(7)
    alphabet = "abc(),= _x"
    for _ in range(1_000):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 24)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 24)))
        assert levenshtein(a, b) == oracle_levenshtein(a, b)
    assert edit_similarity("kitten", "sitting") == pytest.approx(57.14, abs=0.01)

    out, _ = corpus_run
    instances = eval_instances_from_records(read_jsonl(out / "assembled.jsonl"))
    assert instances
    predictions = {inst.instance_id: predict_echo(inst) for inst in instances}
    from callctx.metrics import evaluate

    report = evaluate(instances, predictions, "echo")
    for row in report.per_instance:
        assert row["em"] == 1 and row["edit_sim"] == 100.0

    for inst in instances:
        signature = inst.effective_signature()
        if signature is not None:
            result = spm(inst.ground_truth, signature)
            assert result.ok, f"{inst.instance_id}: {result.reason}"


def test_coverage_curve_matches_oracle(corpus_run):
    """Monotone on the corpus, equal to the exhaustive oracle, and
    diminishing increments on the 3-of-10 planted fixture."""
    out, _ = corpus_run
    instances = eval_instances_from_records(read_jsonl(out / "assembled.jsonl"))
    curve = coverage_curve(instances, k_max=10)
    values = [curve[k] for k in sorted(curve)]
    assert values == sorted(values)
    for k in sorted(curve):
        hits = sum(
            1
            for inst in instances
            if any(exact_match(args, inst.ground_truth) for _, args in inst.usages[:k])
        )
        expected = 100.0 * hits / len(instances) if instances else 0.0
        assert curve[k] == pytest.approx(expected)

    planted = [
        EvalInstance("p0", "a, b", usages=[(0.9, "a, b")]),
        EvalInstance("p1", "c", usages=[(0.9, "x"), (0.8, "c")]),
        EvalInstance("p2", "e", usages=[(0.9, "x"), (0.8, "y"), (0.7, "e")]),
    ] + [EvalInstance(f"p{3 + i}", "q", usages=[(0.5, "no")]) for i in range(7)]
    planted_curve = coverage_curve(planted, k_max=6)
    assert [planted_curve[k] for k in range(4)] == [0.0, 10.0, 20.0, 30.0]
    increments = [planted_curve[k + 1] - planted_curve[k] for k in range(6)]
    assert increments == sorted(increments, reverse=True)  # diminishing gains


def test_copy_baseline_threshold_sweep(corpus_run):
    """Tuned theta strictly beats both extremes; exact-top-usage => EM=100."""
    validation = [
        EvalInstance("v0", "a, b", usages=[(0.9, "a, b")]),
        EvalInstance("v1", "c, d", usages=[(0.85, "c, d")]),
        EvalInstance("v2", "", usages=[(0.2, "wrong")]),
        EvalInstance("v3", "", usages=[(0.15, "also wrong")]),
    ]
    theta = tune_threshold(validation)

    def em_at(t: float) -> int:
        predictor = make_threshold_copier(t)
        return sum(exact_match(predictor(i), i.ground_truth) for i in validation)

    assert em_at(theta) > em_at(0.0)
    assert em_at(theta) > em_at(1.0)

    out, _ = corpus_run
    instances = eval_instances_from_records(read_jsonl(out / "assembled.jsonl"))
    exact_top = [
        inst
        for inst in instances
        if inst.usages and exact_match(inst.usages[0][1], inst.ground_truth)
    ]
    assert exact_top, "fixture corpus must contain exact-top-usage instances"
    for inst in exact_top:
        assert exact_match(predict_copy_top(inst), inst.ground_truth) == 1


def test_end_to_end_determinism(corpus_run, tmp_path):
    """Two full runs of the same config produce identical artifact digests."""
    started = time.perf_counter()
    _, first = corpus_run
    second = pipeline_run(fixture_config(), tmp_path)
    assert first.artifacts == second.artifacts
    assert first.config_hash == second.config_hash
    assert time.perf_counter() - started < 120.0
