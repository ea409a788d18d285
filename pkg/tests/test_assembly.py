import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callctx.assembly import (
    DECODER_ONLY,
    ENCODER_DECODER,
    PRESETS,
    SEP_CLOSE,
    SEP_OPEN,
    SEP_PREDICT,
    AssembledInput,
    AssemblyError,
    BudgetPlan,
    ContextBundle,
    UsageContext,
    assemble,
    make_plan,
    rank_usages,
    truncate,
    usage_similarity,
)


def usage(similarity, n_tokens=10, args="a, b", **kwargs):
    return UsageContext(
        source=None,
        tokens=[f"u{i}" for i in range(n_tokens)],
        left_tokens=set(),
        similarity=similarity,
        args_text=args,
        **kwargs,
    )


def bundle(n_left=20, n_right=10, n_impl=15, usages=()):
    return ContextBundle(
        left=[f"l{i}" for i in range(n_left)],
        right=[f"r{i}" for i in range(n_right)],
        implementation=[f"i{i}" for i in range(n_impl)],
        usages=list(usages),
    )


class TestSimilarity:
    def test_identical_sets(self):
        s = {"a", "b"}
        assert usage_similarity(s, set(s)) == 1.0

    def test_disjoint_sets(self):
        assert usage_similarity({"a"}, {"b"}) == 0.0

    def test_hand_computed_half(self):
        assert usage_similarity({"a", "b", "c", "d"}, {"b", "d", "e"}) == 0.5

    def test_empty_target_defined_zero(self):
        assert usage_similarity(set(), {"a"}) == 0.0

    @settings(max_examples=500)
    @given(st.sets(st.text(min_size=1), min_size=1), st.sets(st.text(min_size=1)))
    def test_range_and_subset_identity(self, s_l, s_u):
        sim = usage_similarity(s_l, s_u)
        assert 0.0 <= sim <= 1.0
        assert (sim == 1.0) == s_l.issubset(s_u)

    @settings(max_examples=500)
    @given(
        st.sets(st.text(min_size=1), min_size=1),
        st.sets(st.text(min_size=1)),
        st.sets(st.text(min_size=1)),
    )
    def test_monotone_in_overlap(self, s_l, s_u, extra):
        grown = s_u | (extra & s_l)
        assert usage_similarity(s_l, grown) >= usage_similarity(s_l, s_u)


class TestRanking:
    def test_sorted_descending_topk(self):
        us = [usage(0.9), usage(0.4), usage(0.7)]
        top = rank_usages(us, k=2)
        assert [u.similarity for u in top] == [0.9, 0.7]

    def test_tie_break_prefers_in_file(self):
        cross = usage(0.5, source_path="b.py")
        in_file = usage(0.5, same_file_before_target=True, source_path="a.py")
        assert rank_usages([cross, in_file], k=2)[0] is in_file

    def test_tie_break_nearer_then_path(self):
        far = usage(0.5, line_distance=40, source_path="a.py")
        near = usage(0.5, line_distance=2, source_path="z.py")
        assert rank_usages([far, near], k=2)[0] is near
        a = usage(0.5, line_distance=2, source_path="a.py")
        assert rank_usages([near, a], k=2)[0] is a

    def test_k_larger_than_available(self):
        us = [usage(0.1), usage(0.2)]
        assert len(rank_usages(us, k=5)) == 2


class TestTruncate:
    def test_left_keeps_suffix(self):
        tokens = [str(i) for i in range(600)]
        out = truncate(tokens, 384, "left")
        assert len(out) == 384 and out[-1] == "599" and out[0] == "216"

    def test_right_keeps_prefix(self):
        tokens = [str(i) for i in range(200)]
        out = truncate(tokens, 128, "right")
        assert len(out) == 128 and out[0] == "0" and out[-1] == "127"

    def test_within_budget_unchanged(self):
        tokens = ["a", "b"]
        assert truncate(tokens, 10, "left") == tokens
        assert truncate(tokens, 10, "right") == tokens


class TestAssemble:
    def test_encoder_decoder_slot_order(self):
        b = bundle(usages=[usage(0.9)])
        plan = make_plan("finetune", ENCODER_DECODER, total=512)
        out = assemble(b, plan, ENCODER_DECODER)
        text = out.text
        assert text[0] == SEP_OPEN
        order = sorted(out.slots, key=lambda k: out.slots[k][0])
        assert order == ["left_ctx", "right_ctx", "implementation", "usage_1"]
        assert text[out.slots["left_ctx"][1]] == SEP_PREDICT
        assert text[-1] == SEP_CLOSE

    def test_decoder_only_usage_order(self):
        b = bundle(usages=[usage(0.9), usage(0.5)])
        plan = make_plan("finetune", DECODER_ONLY, total=512)
        out = assemble(b, plan, DECODER_ONLY)
        order = sorted(out.slots, key=lambda k: out.slots[k][0])
        # U_2 precedes U_1 which precedes X_L; implementation leads
        assert order == ["implementation", "usage_2", "usage_1", "left_ctx"]
        assert out.text[-1] == b.left[-1]

    def test_no_analyzer_context_collapses_separators(self):
        b = bundle(n_impl=0)
        plan = make_plan("finetune", DECODER_ONLY, total=512)
        out = assemble(b, plan, DECODER_ONLY)
        assert out.text == b.left

        plan2 = make_plan("finetune", ENCODER_DECODER, total=512)
        out2 = assemble(b, plan2, ENCODER_DECODER)
        assert out2.text == b.left + [SEP_PREDICT] + b.right

    def test_infeasible_plan_raises(self):
        with pytest.raises(ValueError):
            BudgetPlan(
                total=16, left_ctx=10, right_ctx=5, implementation=4, per_usage=2, max_usages=3
            )
        plan = BudgetPlan(
            total=10, left_ctx=0, right_ctx=0, implementation=2, per_usage=0, max_usages=1
        )
        big = bundle(n_impl=50)
        with pytest.raises(AssemblyError):
            assemble(big, plan, DECODER_ONLY)


component_configs = st.tuples(
    st.integers(0, 2000),  # left
    st.integers(0, 800),  # right
    st.integers(0, 600),  # implementation
    st.lists(st.integers(1, 400), max_size=8),  # usage lengths
)


def check_assembled(b, plan, template):
    out = assemble(b, plan, template)
    assert len(out.text) <= plan.total
    if b.left:
        lo, hi = out.slots["left_ctx"]
        assert hi > lo, "some left context must survive"
        assert out.text[hi - 1] == b.left[-1], "token adjacent to prediction point survives"
    return out


class TestAssembleProperties:
    @settings(max_examples=200, deadline=None)
    @given(component_configs, st.sampled_from(PRESETS))
    def test_budget_and_adjacency_decoder_only(self, config, preset):
        n_left, n_right, n_impl, usage_lens = config
        b = bundle(n_left, n_right, n_impl, [usage(0.5, n) for n in usage_lens])
        plan = make_plan(preset, DECODER_ONLY)
        check_assembled(b, plan, DECODER_ONLY)

    @settings(max_examples=200, deadline=None)
    @given(component_configs, st.sampled_from(PRESETS))
    def test_budget_and_adjacency_encoder_decoder(self, config, preset):
        n_left, n_right, n_impl, usage_lens = config
        b = bundle(n_left, n_right, n_impl, [usage(0.5, n) for n in usage_lens])
        plan = make_plan(preset, ENCODER_DECODER)
        check_assembled(b, plan, ENCODER_DECODER)

    @settings(max_examples=200, deadline=None)
    @given(component_configs)
    def test_slot_order_invariant_under_sizes(self, config):
        n_left, n_right, n_impl, usage_lens = config
        b = bundle(n_left, n_right, n_impl, [usage(0.5, n) for n in usage_lens])
        plan = make_plan("finetune", ENCODER_DECODER, total=1024)
        out = check_assembled(b, plan, ENCODER_DECODER)
        order = [k for k in sorted(out.slots, key=lambda k: out.slots[k][0])]
        expected = [
            k
            for k in ["left_ctx", "right_ctx", "implementation"]
            + [f"usage_{i + 1}" for i in range(len(usage_lens))]
            if k in out.slots
        ]
        assert order == expected
