from __future__ import annotations

import shutil

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lifty import formula as F
from lifty import logic
from lifty.logic import INVALID, VALID, ValidityQuery, apply_policy, check_validity, is_sat, is_valid

from conftest import load

z3 = pytest.importorskip("z3")

S, U = F.Var(F.POL_S), F.Var(F.POL_U)
SIGMA, CLIENT = F.Var("σ"), F.Var("client")
PHASE_DONE = F.Eq(F.Select(S, F.location("phase")), F.Ctor("Done"))


def sel(store, field, *args):
    return F.Select(store, F.location(field, args))


# ------------------------------------------------------------ policy application


def test_apply_top():
    assert apply_policy(F.TOP, SIGMA, F.Var("alice")) == F.TOP


def test_apply_phase_policy():
    assert apply_policy(PHASE_DONE, SIGMA, U) == F.Eq(sel(SIGMA, "phase"), F.Ctor("Done"))


def test_apply_self_referential_policy():
    module, _, _ = load("b03_edas_selfref")
    sig = module.fields["authors"]
    p = sig.params[0]
    body = F.subst(sig.scheme.body.ret.inner.policy, {p: F.Var("p")})
    got = apply_policy(body, SIGMA, CLIENT)
    elem = F.truth(F.App("elem", (CLIENT, sel(SIGMA, "authors", F.Var("p")))))
    assert set(F.disjuncts(got)) == {F.Eq(sel(SIGMA, "phase"), F.Ctor("Done")), elem}


def test_apply_rejects_sort_mismatch():
    with pytest.raises(logic.LogicError):
        apply_policy(PHASE_DONE, F.Lit(3), U)


# ------------------------------------------------------------ validity


def test_reflexive_implication():
    p = F.Eq(F.Var("x"), F.Var("y"))
    assert is_valid([], F.Implies(p, p))


def test_phase_not_implied_by_viewer_context():
    hyps = [F.Eq(U, CLIENT), F.Eq(S, SIGMA)]
    assert check_validity(ValidityQuery.of(hyps, PHASE_DONE)).status == INVALID


def test_path_condition_discharges_phase():
    hyps = [F.Eq(sel(SIGMA, "phase"), F.Ctor("Done")), F.Eq(U, CLIENT), F.Eq(S, SIGMA)]
    assert check_validity(ValidityQuery.of(hyps, PHASE_DONE)).status == VALID


def test_congruence():
    x, y = F.Var("x"), F.Var("y")
    assert is_valid([F.Eq(x, y)], F.Eq(F.App("f", (x,)), F.App("f", (y,))))


def test_constructors_distinct():
    assert is_valid([], F.Not(F.Eq(F.Ctor("Done"), F.Ctor("Review"))))
    assert not is_sat([F.Eq(F.Var("x"), F.Ctor("Done")), F.Eq(F.Var("x"), F.Ctor("Review"))])


def test_read_over_write():
    a, i, v = F.Var("a"), F.Var("i"), F.Var("v")
    assert is_valid([], F.Eq(F.Select(F.Store(a, i, v), i), v))
    j = F.Var("j")
    assert is_valid([F.Not(F.Eq(i, j))], F.Eq(F.Select(F.Store(a, i, v), j), F.Select(a, j)))
    assert not is_valid([], F.Eq(F.Select(F.Store(a, i, v), j), F.Select(a, j)))


def test_invalid_verdict_has_model():
    v = check_validity(ValidityQuery.of([], F.Eq(F.Var("x"), F.Var("y"))))
    assert not v.valid and v.model


# ------------------------------------------------------------ SMT-LIB


def _z3_unsat(script: str) -> bool:
    s = z3.Solver()
    s.add(z3.parse_smt2_string(script))
    return s.check() == z3.unsat


def test_smtlib_top():
    assert _z3_unsat(logic.to_smtlib(ValidityQuery.of([], F.TOP)))


def test_smtlib_array_axiom():
    a, i, v = F.Var("a"), F.Var("i"), F.Var("v")
    assert _z3_unsat(logic.to_smtlib(ValidityQuery.of([], F.Eq(F.Select(F.Store(a, i, v), i), v))))


def test_smtlib_edas_query_agrees():
    hyps = [F.Eq(U, CLIENT), F.Eq(S, SIGMA)]
    assert not _z3_unsat(logic.to_smtlib(ValidityQuery.of(hyps, PHASE_DONE)))


def test_smtlib_unicode_names():
    q = ValidityQuery.of([F.Eq(F.Var("ν"), F.Var("σ'"))], F.Eq(F.Var("σ'"), F.Var("ν")))
    assert _z3_unsat(logic.to_smtlib(q))


@pytest.mark.skipif(shutil.which("z3") is None, reason="no z3 binary")
def test_external_binary():
    q = ValidityQuery.of([F.Eq(sel(SIGMA, "phase"), F.Ctor("Done"))], F.Eq(sel(SIGMA, "phase"), F.Ctor("Done")))
    assert check_validity(q, "z3").status == VALID


def test_external_missing_binary_is_unknown():
    assert check_validity(ValidityQuery.of([], F.TOP), "/nonexistent/solver").status == logic.UNKNOWN


# ------------------------------------------------------------ random cross-check

VARS = [F.Var(n) for n in "xyz"]
CTORS = [F.Ctor(c) for c in ("Done", "Review")]


def terms(depth=2):
    leaf = st.sampled_from(VARS + CTORS)
    if depth == 0:
        return leaf
    sub = terms(depth - 1)
    return st.one_of(
        leaf,
        st.builds(lambda a: F.App("f", (a,)), sub),
        st.builds(lambda a: F.Select(F.Var("σ"), F.App("#g", (a,))), sub),
        st.builds(lambda a, b: F.Select(F.Store(F.Var("σ"), F.App("#g", (a,)), b), F.App("#g", (a,))), sub, sub),
    )


def formulas(depth=2):
    atom = st.builds(F.Eq, terms(), terms())
    if depth == 0:
        return atom
    sub = formulas(depth - 1)
    return st.one_of(
        atom,
        st.builds(F.Not, sub),
        st.builds(lambda a, b: F.And((a, b)), sub, sub),
        st.builds(lambda a, b: F.Or((a, b)), sub, sub),
        st.builds(F.Implies, sub, sub),
    )


@given(st.lists(formulas(1), max_size=3), formulas())
@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_internal_agrees_with_z3(hyps, goal):
    internal = check_validity(ValidityQuery.of(hyps, goal)).valid
    assert internal == _z3_unsat(logic.to_smtlib(ValidityQuery.of(hyps, goal)))


@given(formulas())
@settings(max_examples=80, deadline=None)
def test_excluded_middle(f):
    assert is_valid([], F.Or((f, F.Not(f))))
    assert not is_sat([f, F.Not(f)])
