import pytest
from hypothesis import given, strategies as st

from dpsmc.expr import Binary, ExprError, Lit, Member, Name, c_div, names, parse_assignment, parse_expr, unparse


def test_precedence():
    e = parse_expr("a + b * 2 < 7 && !c || d")
    assert e.op == "||"
    assert e.left.op == "&&"
    assert e.left.left == Binary("<", Binary("+", Name("a"), Binary("*", Name("b"), Lit(2))), Lit(7))


def test_member_access_with_args():
    e = parse_expr("Train(0).Cross")
    assert e == Member("Train", (Lit(0),), "Cross")
    assert parse_expr("P0.Done") == Member("P0", None, "Done")


def test_assignment():
    lhs, rhs = parse_assignment("cnt[s] := cnt[s] + 1")
    assert unparse(lhs) == "cnt[s]"
    assert unparse(rhs) == "cnt[s] + 1"
    with pytest.raises(ExprError):
        parse_assignment("3 := x")


@pytest.mark.parametrize("bad", ["a +", "(a", "a $ b", "", "1 2"])
def test_syntax_errors_carry_column(bad):
    with pytest.raises(ExprError):
        parse_expr(bad)


def test_column_reported():
    with pytest.raises(ExprError) as ei:
        parse_expr("x + $")
    assert ei.value.column == 5


def test_c_division_truncates_toward_zero():
    assert c_div(7, 2) == 3
    assert c_div(-7, 2) == -3
    assert c_div(7, -2) == -3
    with pytest.raises(ZeroDivisionError):
        c_div(1, 0)


def test_names():
    assert names(parse_expr("a[i] + f - 2")) == {"a", "i", "f"}


_atoms = st.one_of(st.integers(0, 50).map(Lit), st.sampled_from(["a", "b", "c"]).map(Name))


def _trees(children):
    ops = st.sampled_from(["+", "-", "*", "/", "<", "<=", "==", "!=", "&&", "||"])
    return st.builds(Binary, ops, children, children)


@given(st.recursive(_atoms, _trees, max_leaves=12))
def test_unparse_round_trip(tree):
    assert parse_expr(unparse(tree)) == tree
