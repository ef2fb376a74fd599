from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifty import ast as A
from lifty import formula as F
from lifty.parser import ParseError, parse_policy_module, parse_program

from conftest import BENCHMARKS, FIXTURES, load


def _statements(s) -> list:
    out = []
    while not isinstance(s, A.Skip):
        out.append(type(s).__name__)
        s = s.rest
    return out


def test_edas_leak_shape(edas):
    _, program, fn = edas
    assert (FIXTURES / "edas" / "leaky.lifty").read_text().count("\n") == 9
    assert [f.name for f in program.functions] == ["showPaper"]
    assert fn.params == ("client", "p")
    assert _statements(fn.body) == ["Let", "Print"]
    assert fn.body.binder == "row"


def test_edas_row_reads_three_fields(edas):
    _, _, fn = edas
    gets = [t.ref.fn.name for t in A.subterms(fn.body.term) if isinstance(t, A.Get)]
    assert gets == ["title", "status", "session"]


def test_empty_program():
    assert parse_program("").functions == []


@pytest.mark.parametrize("fx", BENCHMARKS, ids=lambda f: f.name)
def test_benchmarks_parse(fx):
    for which in ("leaky", "golden"):
        _, program = fx.load(which)
        assert program.functions


def test_positions_attached(edas):
    _, _, fn = edas
    get = next(t for t in A.subterms(fn.body.term) if isinstance(t, A.Get) and t.ref.fn.name == "status")
    assert get.pos == (4, 11)


def test_syntax_error_reports_position():
    with pytest.raises(ParseError) as e:
        parse_program("f x =\n  let y = (x in\n  print x y\n")
    assert e.value.line >= 2


def test_function_names_unique():
    with pytest.raises(ParseError):
        parse_program("f x = x\nf y = y\n")


def test_out_of_scope_refinement_variable():
    with pytest.raises(ParseError):
        parse_policy_module("module M where\nf :: Ref (Tagged Bool <\\(s,u). u == nobody>)\n")


# ------------------------------------------------------------ policy modules


def test_edas_policy_module(edas):
    module, _, _ = edas
    assert {"title", "status", "session"} <= set(module.fields)
    pol = lambda f: module.fields[f].scheme.body.ret.inner.policy  # noqa: E731
    assert pol("title") == F.TOP and pol("session") == F.TOP
    assert pol("status") == F.Eq(F.Select(F.Var(F.POL_S), F.location("phase")), F.Ctor("Done"))
    assert module.redactions == ["NoDecision"]
    assert module.fields["status"].is_field and len(module.fields["status"].params) == 1


def test_module_without_fields():
    m = parse_policy_module("module Empty where\ndata Phase = A | B\n")
    assert m.fields == {} and m.datatypes == {"Phase": ["A", "B"]}


def test_health_record_policy_has_four_cases():
    module = parse_policy_module((FIXTURES / "health" / "policy.liftyp").read_text())
    rt = module.fields["record"].scheme.body.ret.inner
    assert len(F.disjuncts(rt.policy)) == 4
    assert "psychiatristRole" in F.show(rt.policy)


def test_inline_definitions_expand():
    module = parse_policy_module((FIXTURES / "health" / "policy.liftyp").read_text())
    pol = module.fields["isTreating"].scheme.body.ret.ret.inner.policy
    role = F.Select(F.Var(F.POL_S), F.location("psychiatristRole", [F.Var(F.POL_U)]))
    assert F.truth(role) in F.atoms(pol)


def test_store_refinement_in_content():
    module, _, _ = load("b10_airbnb")
    ty = module.fields["sender"].scheme.body.ret.inner
    recipient = F.Select(F.Var(F.POL_S), F.location("recipient", [F.Var("m")]))
    assert ty.inner.ref == F.Not(F.Eq(F.Var(F.NU), recipient))


@given(st.text(alphabet="fx=()\\. \n+-<>ydo", max_size=40))
def test_parser_total(text):
    """Arbitrary input either parses or raises ParseError; nothing else escapes."""
    try:
        parse_program(text)
    except ParseError:
        pass
