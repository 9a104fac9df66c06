import pytest

from einplan.expr import (
    COMPRESSED,
    DENSE,
    ContractionExpr,
    ExprError,
    IndexVar,
    TensorAccess,
    access_constraints,
    indices_of,
    parse_einsum,
    parse_format_pattern,
)


def names(ixs):
    return [ix.name for ix in ixs]


class TestParse:
    def test_four_input_kernel(self, kernel):
        assert sorted(ix.name for ix in kernel.contracted) == ["i", "j", "k"]
        assert [acc.tensor for acc in kernel.inputs] == ["B", "C", "D", "E"]
        assert kernel.inputs[0].levels == (COMPRESSED,) * 3

    def test_matmul_contracts_j(self):
        expr = parse_einsum("X(i,k)=A(i,j)*B(j,k)")
        assert names(expr.contracted) == ["j"]

    def test_copy_contracts_nothing(self):
        expr = parse_einsum("Y(i)=Z(i)")
        assert not expr.contracted

    def test_whitespace_tolerated(self):
        expr = parse_einsum("X(i,k) = A(i,j) * B(j,k)")
        assert str(expr) == "X(i,k) = A(i,j) * B(j,k)"

    @pytest.mark.parametrize(
        "text",
        ["A(l,m,n)=B(i,j,k)*C(i,l)*D(j,m)*E(k,n)", "X(i,k)=A(i,j)*B(j,k)", "Y(i)=Z(i)"],
    )
    def test_print_parse_round_trip(self, text):
        first = parse_einsum(text)
        again = parse_einsum(str(first))
        assert first == again

    def test_contracted_disjoint_from_output(self, kernel):
        assert not set(kernel.contracted) & set(kernel.output.indices)


class TestParseErrors:
    def test_syntax_error_reports_position(self):
        with pytest.raises(ExprError) as e:
            parse_einsum("X(i,k)=A(i,j)+B(j,k)")
        assert e.value.pos is not None

    def test_repeated_index_in_access(self):
        with pytest.raises(ExprError, match="repeated"):
            parse_einsum("X(i)=A(j,j)")

    def test_unknown_tensor_in_formats(self):
        with pytest.raises(ExprError, match="unknown tensor"):
            parse_einsum("X(i,k)=A(i,j)*B(j,k)", {"Q": parse_format_pattern("dc")})

    def test_output_index_absent_from_inputs(self):
        with pytest.raises(ExprError, match="absent"):
            parse_einsum("X(i,z)=A(i,j)*B(j,k)")

    def test_two_sparse_inputs_rejected(self):
        with pytest.raises(ExprError, match="one compressed input"):
            parse_einsum(
                "X(i,k)=A(i,j)*B(j,k)",
                {"A": parse_format_pattern("dc"), "B": parse_format_pattern("dc")},
            )

    def test_format_arity_mismatch(self):
        with pytest.raises(ExprError, match="levels"):
            parse_einsum("X(i,k)=A(i,j)*B(j,k)", {"A": parse_format_pattern("dcc")})

    def test_sparse_output_rejected(self):
        with pytest.raises(ExprError, match="dense"):
            parse_einsum("X(i,k)=A(i,j)*B(j,k)", {"X": parse_format_pattern("dc")})


class TestAccessConstraints:
    def test_csr_matrix(self):
        expr = parse_einsum("X(i,k)=B(i,j)*C(j,k)", {"B": parse_format_pattern("dc")})
        assert {(a.name, b.name) for a, b in access_constraints(expr)} == {("i", "j")}

    def test_csf_full_chain(self, kernel):
        got = {(a.name, b.name) for a, b in access_constraints(kernel)}
        assert got == {("i", "j"), ("j", "k")}

    def test_all_dense_unconstrained(self):
        expr = parse_einsum("X(i,k)=A(i,j)*B(j,k)")
        assert access_constraints(expr) == frozenset()

    def test_depends_only_on_formats_and_mode_order(self):
        a = parse_einsum("X(i,k)=B(i,j)*C(j,k)", {"B": parse_format_pattern("dc")})
        b = parse_einsum("X(i,k)=B(i,j)*Q(j,k)", {"B": parse_format_pattern("dc")})
        assert access_constraints(a) == access_constraints(b)

    def test_cycle_across_accesses_detected(self):
        i, j = IndexVar("i"), IndexVar("j")
        accs = [
            TensorAccess("B", (i, j), (DENSE, COMPRESSED)),
            TensorAccess("C", (j, i), (DENSE, COMPRESSED)),
        ]
        with pytest.raises(ExprError, match="cycle"):
            access_constraints(accs)


class TestIndicesOf:
    def test_producer_of_worked_split(self, kernel):
        got = indices_of(list(kernel.inputs[:3]))
        assert names(got) == ["i", "j", "k", "l", "m"]

    def test_single_access(self, kernel):
        assert names(indices_of([kernel.inputs[3]])) == ["k", "n"]

    def test_empty_product(self):
        assert indices_of([]) == ()
