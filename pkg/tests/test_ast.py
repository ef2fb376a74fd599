from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifty import ast as A
from lifty.interp import Interpreter, Store, Universe
from lifty.parser import parse_term
from lifty.pretty import CastInOutput, pretty, pretty_program, pretty_term, pretty_type

from conftest import BENCHMARKS, load

NAMES = st.sampled_from(["x", "y", "z", "w"])


def terms(depth: int = 3):
    leaf = st.one_of(NAMES.map(A.Var), st.sampled_from(["Accept", "Done", "Nothing"]).map(A.Const))
    if depth == 0:
        return leaf
    sub = terms(depth - 1)
    return st.one_of(
        leaf,
        st.builds(A.Lambda, NAMES, sub),
        st.builds(A.App, sub, sub),
        st.builds(A.Bind, sub, st.builds(A.Lambda, NAMES, sub)),
        st.builds(A.If, sub, sub, sub),
        st.builds(A.Get, sub),
    )


def rename_binders(t, suffix="'"):
    """Rename every binder consistently (capture is impossible: new names are fresh)."""
    def go(t, m):
        if isinstance(t, A.Var):
            return A.Var(m.get(t.name, t.name))
        if isinstance(t, A.Lambda):
            new = t.binder + suffix
            return A.Lambda(new, go(t.body, {**m, t.binder: new}))
        kids = A.children(t)
        return A.with_children(t, tuple(go(k, m) for k in kids)) if kids else t
    return go(t, {})


# ------------------------------------------------------------ alpha-equivalence


def test_alpha_identity_lambdas():
    assert A.alpha_equiv(A.Lambda("x", A.Var("x")), A.Lambda("y", A.Var("y")))


def test_alpha_distinguishes_binder_order():
    a = A.Lambda("x", A.Lambda("y", A.Var("x")))
    b = A.Lambda("y", A.Lambda("x", A.Var("x")))
    assert not A.alpha_equiv(a, b)


def test_alpha_free_variables_must_match():
    assert not A.alpha_equiv(A.Var("x"), A.Var("y"))


@given(terms())
def test_alpha_equiv_under_renaming(t):
    assert A.alpha_equiv(t, rename_binders(t))


@given(terms(), terms())
def test_alpha_equiv_symmetric(a, b):
    assert A.alpha_equiv(a, b) == A.alpha_equiv(b, a)


def test_alpha_symmetric_operator():
    a = parse_term("x == Done")
    b = parse_term("Done == x")
    assert not A.alpha_equiv(a, b)
    assert A.alpha_equiv(a, b, ("==",))


# ------------------------------------------------------------ substitution


def test_substitute_variable_hit():
    assert A.substitute(A.Var("x"), {"x": A.Lit(3)}) == A.Lit(3)


def test_substitute_respects_shadowing():
    lam = A.Lambda("x", A.Var("x"))
    assert A.substitute(lam, {"x": A.Var("v")}) == lam


def test_substitute_avoids_capture():
    lam = A.Lambda("y", A.App(A.Var("x"), A.Var("y")))
    out = A.substitute(lam, {"x": A.Var("y")})
    assert isinstance(out, A.Lambda) and out.binder != "y"
    assert A.free_vars(out) == {"y"}


@given(terms(), NAMES, terms(1))
def test_substitute_free_vars(t, x, v):
    out = A.substitute(t, {x: v})
    expect = (A.free_vars(t) - {x}) | (A.free_vars(v) if x in A.free_vars(t) else set())
    assert A.free_vars(out) == expect


@given(terms(), NAMES)
def test_substitute_non_free_is_identity(t, x):
    if x not in A.free_vars(t):
        assert A.alpha_equiv(A.substitute(t, {x: A.Const("Accept")}), t)


def test_substitute_bind_redex_matches_interpreter():
    # bind Accept (\st. if st == Accept then "yes" else "no")
    body = parse_term('if st == Accept then "yes" else "no"', bound=("st",))
    redex = A.Bind(A.Const("Accept"), A.Lambda("st", body))
    it = Interpreter(None, None, Universe())
    direct = it.eval(A.substitute(body, {"st": A.Const("Accept")}), {}, Store({}))
    assert it.eval(redex, {}, Store({})) == direct


# ------------------------------------------------------------ do-notation


def test_desugar_edas_row(edas):
    _, program, fn = edas
    row = fn.body.term
    assert isinstance(row, A.Bind) and row.tagged == A.Get(A.App(A.Const("title"), A.Var("p")))
    inner = row.cont.body
    assert isinstance(inner, A.Bind) and inner.tagged == A.Get(A.App(A.Const("status"), A.Var("p")))


def test_single_pure_do_is_unchanged():
    assert A.desugar_do(A.Do(((None, A.Var("x")),))) == A.Var("x")


def test_do_ending_in_bind_is_rejected():
    with pytest.raises(SyntaxError):
        A.desugar_do(A.Do((("x", A.Var("y")),)))


@given(terms())
def test_resugar_then_desugar_roundtrip(t):
    assert A.alpha_equiv(A.desugar_do(A.resugar(t)), t)


@given(terms())
def test_desugar_adds_no_free_variables(t):
    assert A.free_vars(A.desugar_do(A.resugar(t))) <= A.free_vars(t)


@pytest.mark.parametrize("fx", BENCHMARKS, ids=lambda f: f.name)
def test_corpus_sugar_roundtrip(fx):
    _, program = fx.load()
    for fn in program.functions:
        assert A.alpha_equiv(A.desugar_do(A.resugar(fn.body)), fn.body)


def test_parse_renames_binders_apart():
    t = parse_term(r"\x. \x. x")
    names = A.binders(t)
    assert len(names) == len(set(names))


# ------------------------------------------------------------ printing


def test_pretty_skip():
    assert pretty(A.Skip()) == "skip"


def test_pretty_refuses_casts():
    c = A.Cast(A.TBase("Bool"), A.TBase("Bool"), A.Var("x"))
    with pytest.raises(CastInOutput):
        pretty_term(c)
    assert "x" in pretty_term(c, allow_casts=True)


def test_pretty_tagged_type(edas):
    module, _, _ = edas
    ty = module.fields["status"].scheme.body.ret.inner
    assert pretty_type(ty) == r"Tagged Status <\(s,u). s[phase] == Done>"


@pytest.mark.parametrize("fx", BENCHMARKS, ids=lambda f: f.name)
def test_pretty_parse_roundtrip(fx):
    from lifty.parser import parse_program
    module, program = fx.load()
    again = parse_program(pretty_program(program), module)
    for f, g in zip(program.functions, again.functions):
        assert A.alpha_equiv(f.body, g.body), f.name


@given(terms())
@settings(max_examples=50)
def test_pretty_term_reparses(t):
    free = sorted(A.free_vars(t))
    assert A.alpha_equiv(parse_term(pretty_term(t), bound=free), t)
