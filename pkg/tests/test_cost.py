import math

import pytest
from hypothesis import given, settings, strategies as st

from einplan.cost import (
    Binding,
    SymPoly,
    aux_bytes,
    bound_sym,
    depths,
    evaluate,
    memory_complexity,
    nnz_sym,
    parse_poly,
    sparsity_sym,
    time_complexity,
    UnboundSymbolError,
)
from einplan.igraph import Lig, Schedule
from einplan.expr import parse_einsum

from conftest import CASE1_BOUNDS, CASE2_BOUNDS


def poly_text(s):
    return time_complexity(s).text()


class TestTimeComplexity:
    def test_linear_schedule(self, figures):
        assert poly_text(figures["a"]) == "L*M*N*nnz(B,3)"

    def test_fused_k_temp_schedule(self, figures):
        assert poly_text(figures["b"]) == "K*L*M*N + L*M*nnz(B,3)"

    def test_quoted_c_and_e_shapes(self, figures):
        assert poly_text(figures["c"]) == "J*K*L*M + K*L*M*N + L*nnz(B,3)"
        assert poly_text(figures["e"]) == "J*K*L*M*N + L*nnz(B,3)"

    def test_dense_nest_is_product_of_bounds(self):
        expr = parse_einsum("X(i,k)=A(i,j)*B(j,k)")
        vs = {ix.name: ix for ix in expr.index_vars()}
        lig = Lig((vs["i"], vs["k"], vs["j"]), expr.output, expr.inputs)
        s = Schedule.of(lig, expr)
        assert time_complexity(s).text() == "I*J*K"

    def test_interleaved_dense_multiplies_prefix_count(self, kernel, ixs):
        # A dense loop inside the chain leaves the innermost count unchanged.
        lig = Lig(tuple(ixs[n] for n in "ijnklm"), kernel.output, kernel.inputs)
        s = Schedule.of(lig, kernel)
        assert time_complexity(s).text() == "L*M*N*nnz(B,3)"

    def test_fused_sparse_prefix_uses_prefix_count(self):
        # Fusing under the first two chain levels makes the consumer iterate
        # stored (i,j) fibers only: N*(nnz3 + nnz2*L*M) overall.
        from einplan.expr import parse_einsum, parse_format_pattern
        from einplan.igraph import loopfuse

        expr = parse_einsum(
            "A(l,m,n)=B(i,j,k)*E(k,n)*C(i,l)*D(j,m)", {"B": parse_format_pattern("ccc")}
        )
        vs = {ix.name: ix for ix in expr.index_vars()}
        lig = Lig(tuple(vs[n] for n in "ijnklm"), expr.output, expr.inputs)
        s = Schedule.of(loopfuse(lig, [], 2, True), expr)
        assert time_complexity(s).text() == "L*M*N*nnz(B,2) + N*nnz(B,3)"
        assert memory_complexity(s).text() == "1"
        assert depths(s) == (5, 0)


class TestMemoryComplexity:
    def test_k_temp(self, figures):
        assert memory_complexity(figures["b"]).text() == "K"

    def test_two_level_with_scalar(self, figures):
        assert memory_complexity(figures["c"]).text() == "1 + J*K"

    def test_unsplit_has_none(self, figures):
        assert memory_complexity(figures["a"]).is_zero()


class TestDepths:
    @pytest.mark.parametrize(
        "fig,pair", [("a", (6, 0)), ("b", (5, 1)), ("c", (4, 2)), ("d", (4, 2)), ("e", (5, 2))]
    )
    def test_figures(self, figures, fig, pair):
        assert depths(figures[fig]) == pair

    def test_unfused_split_has_memory_depth_three(self, kernel, ixs):
        from einplan.igraph import loopfuse

        lig = Lig(tuple(ixs[n] for n in "nlmijk"), kernel.output, kernel.inputs)
        g = loopfuse(lig, [], 2, True)
        assert depths(g, kernel) == (5, 3)


class TestEvaluate:
    def test_case1_linear_time(self, kernel, figures):
        b = Binding.for_expr(kernel, CASE1_BOUNDS, {"B": 0.08})
        val = evaluate(time_complexity(figures["a"]), b)
        assert val == pytest.approx(3.77487e12, rel=1e-5)

    def test_case1_ratio_near_paper_chain(self, kernel, figures):
        b = Binding.for_expr(kernel, CASE1_BOUNDS, {"B": 0.08})
        ratio = evaluate(time_complexity(figures["a"]), b) / evaluate(
            time_complexity(figures["b"]), b
        )
        assert ratio == pytest.approx(237.5 / 7.5, abs=0.5)

    def test_constant_poly(self):
        assert evaluate(SymPoly.const(1), Binding()) == 1

    def test_unbound_symbol_is_named(self):
        with pytest.raises(UnboundSymbolError, match="nnz"):
            evaluate(SymPoly.term([nnz_sym("B", 2)]), Binding())

    def test_measured_nnz_overrides_estimator(self):
        b = Binding(bounds={"I": 10}, nnz={("B", 1): 7})
        assert evaluate(SymPoly.term([nnz_sym("B", 1)]), b) == 7

    def test_estimator_full_depth_is_exact(self, kernel):
        b = Binding.for_expr(kernel, CASE1_BOUNDS, {"B": 0.08})
        got = evaluate(SymPoly.term([nnz_sym("B", 3)]), b)
        assert got == pytest.approx(0.08 * 1800 * 800 * 1000)

    def test_estimator_prefix_monotone(self, kernel):
        b = Binding.for_expr(kernel, {"I": 30, "J": 20, "K": 10, "L": 1, "M": 1, "N": 1}, {"B": 0.05})
        n1, n2, n3 = (b.estimate_nnz("B", d) for d in (1, 2, 3))
        assert 0 <= n1 <= n2 <= n3
        assert n2 <= n1 * 20 and n3 <= n2 * 10
        assert n1 <= 30


class TestAuxBytes:
    def test_jk_temp_small(self, kernel, figures):
        b = Binding.for_expr(kernel, CASE1_BOUNDS, {"B": 0.08})
        assert aux_bytes(figures["e"], b) == 800 * 1000 * 4

    def test_jk_temp_large(self, kernel, figures):
        b = Binding.for_expr(kernel, CASE2_BOUNDS, {"B": 0.02})
        assert aux_bytes(figures["e"], b) == 1600 * 2000 * 4

    def test_k_temp_bytes(self, kernel, ixs):
        from einplan.igraph import loopfuse

        b = Binding.for_expr(kernel, CASE1_BOUNDS, {"B": 0.08})
        lig = Lig(tuple(ixs[n] for n in "lmnijk"), kernel.output, kernel.inputs)
        g = loopfuse(lig, [], 3, True)  # temp T(k)
        assert aux_bytes(Schedule.of(g, kernel), b) == 1000 * 4

    def test_scalar_temp_is_one_element(self):
        from einplan.expr import parse_einsum, parse_format_pattern
        from einplan.igraph import loopfuse

        # permuted factor order lets the fully fused split produce a scalar
        expr = parse_einsum(
            "A(l,m,n)=B(i,j,k)*E(k,n)*C(i,l)*D(j,m)", {"B": parse_format_pattern("ccc")}
        )
        vs = {ix.name: ix for ix in expr.index_vars()}
        lig = Lig(tuple(vs[n] for n in "ijnklm"), expr.output, expr.inputs)
        g = loopfuse(lig, [], 2, True)
        s = Schedule.of(g, expr)
        assert memory_complexity(s).text() == "1"
        b = Binding.for_expr(expr, CASE1_BOUNDS, {"B": 0.08})
        assert aux_bytes(s, b) == 4

    def test_scalar_only(self, kernel, figures):
        b = Binding.for_expr(kernel, CASE1_BOUNDS, {"B": 0.08})
        c = aux_bytes(figures["c"], b)
        e = aux_bytes(figures["e"], b)
        assert c - e == 4  # the scalar workspace costs one element


sym_st = st.sampled_from(
    [bound_sym("I"), bound_sym("J"), bound_sym("K"), nnz_sym("B", 2), sparsity_sym("B")]
)
term_st = st.tuples(st.integers(1, 9), st.lists(sym_st, max_size=3))
poly_st = st.builds(lambda ts: SymPoly.make(ts), st.lists(term_st, max_size=4))


@st.composite
def binding_st(draw):
    return Binding(
        bounds={"I": draw(st.integers(1, 50)), "J": draw(st.integers(1, 50)), "K": draw(st.integers(1, 50))},
        sparsity={"B": 1.0},
        nnz={("B", 2): draw(st.integers(0, 100))},
    )


class TestPolyAlgebra:
    @settings(max_examples=100, deadline=None)
    @given(poly_st, poly_st, binding_st())
    def test_evaluate_is_a_ring_homomorphism(self, p, q, b):
        assert evaluate(p + q, b) == evaluate(p, b) + evaluate(q, b)
        assert evaluate(p * q, b) == evaluate(p, b) * evaluate(q, b)

    @settings(max_examples=100, deadline=None)
    @given(poly_st)
    def test_text_parse_round_trip(self, p):
        assert parse_poly(p.text()) == p

    def test_canonical_form_merges_terms(self):
        p = SymPoly.make([(1, (bound_sym("I"),)), (2, (bound_sym("I"),)), (0, ())])
        assert p == SymPoly.term([bound_sym("I")], 3)

    def test_drop_constants(self):
        p = SymPoly.make([(1, ()), (1, (bound_sym("J"), bound_sym("K")))])
        assert p.drop_constants().text() == "J*K"
        assert p.constant_part() == 1


class TestFusionMonotonicity:
    def test_fused_temp_divides_unfused_temp(self, kernel, ixs):
        from einplan.igraph import loopfuse

        fused = loopfuse(Lig(tuple(ixs[n] for n in "lmnijk"), kernel.output, kernel.inputs), [], 2, True)
        unfused = loopfuse(Lig(tuple(ixs[n] for n in "nlmijk"), kernel.output, kernel.inputs), [], 2, True)
        m_f = memory_complexity(fused, kernel)
        m_u = memory_complexity(unfused, kernel)
        (cf, f_syms), = m_f.terms
        (cu, u_syms), = m_u.terms
        remaining = list(u_syms)
        for s in f_syms:
            assert s in remaining
            remaining.remove(s)
        assert depths(fused, kernel)[1] <= depths(unfused, kernel)[1]
