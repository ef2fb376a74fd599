from __future__ import annotations

import dataclasses

import pytest

from lifty import ast as A
from lifty import formula as F
from lifty.localize import CastSite, FunctionalDependency, insert_casts, localize, minimality_check, typechecks
from lifty.parser import parse_policy_module, parse_program

from conftest import BENCHMARKS, FIXTURES, load

S, U = F.Var(F.POL_S), F.Var(F.POL_U)
VIEWER = {F.Eq(U, F.Var("client")), F.Eq(S, F.Var("σ"))}


def test_edas_single_cast(edas):
    module, program, fn = edas
    loc = localize(module, program, fn)
    (c,) = loc.casts
    assert c.term == A.Get(A.App(A.Const("status"), A.Var("p")))
    assert set(F.conjuncts(c.expected_policy)) == VIEWER
    assert c.span() == "4:11"
    assert A.strip_refinements(c.expected.inner) == A.TBase("Status")


def test_well_typed_is_identity():
    module, program, fn = load("edas", "golden")
    loc = localize(module, program, fn)
    assert loc.casts == [] and loc.function is fn


def test_benchmark2_two_casts():
    module, program, fn = load("b02_edas_multiple")
    loc = localize(module, program, fn)
    fields = sorted(c.term.ref.fn.name for c in loc.casts)
    assert fields == ["authors", "status"]
    assert all(set(F.conjuncts(c.expected_policy)) == VIEWER for c in loc.casts)


def test_casted_program_typechecks(edas):
    module, program, fn = edas
    loc = localize(module, program, fn)
    assert A.has_cast(loc.function.body)
    assert typechecks(module, program, loc.function)
    assert not typechecks(module, program, fn)


def test_minimality_edas(edas):
    module, program, fn = edas
    assert minimality_check(module, program, localize(module, program, fn))


def test_spurious_cast_not_minimal(edas):
    module, program, fn = edas
    loc = localize(module, program, fn)
    path = (0, 0)
    title = A.at_path(fn.body, path)
    assert title == A.Get(A.App(A.Const("title"), A.Var("p")))
    string = A.TBase("String")
    extra = CastSite(path, title, A.TTagged(string, F.TOP), A.TTagged(string, F.conj(sorted(VIEWER, key=F.show))))
    bad = dataclasses.replace(loc, casts=loc.casts + [extra])
    assert not minimality_check(module, program, bad)


def test_stronger_expected_policy_breaks_typing(edas):
    """The inferred expected policy is the least restrictive one: adding a conjunct fails."""
    module, program, fn = edas
    loc = localize(module, program, fn)
    c = loc.casts[0]
    phase = F.Eq(F.Select(S, F.location("phase")), F.Ctor("Done"))
    stronger = dataclasses.replace(c, expected=dataclasses.replace(c.expected, policy=F.conj([c.expected_policy, phase])))
    assert not typechecks(module, program, insert_casts(fn, [stronger]))
    assert typechecks(module, program, insert_casts(fn, [c]))


@pytest.mark.parametrize("fx", BENCHMARKS, ids=lambda f: f.name)
def test_benchmark_minimality(fx):
    module, program = fx.load()
    for fn in program.functions:
        loc = localize(module, program, fn)
        assert minimality_check(module, program, loc), fn.name


def test_functional_dependency():
    module = parse_policy_module((FIXTURES / "downgrade" / "policy.liftyp").read_text())
    program = parse_program((FIXTURES / "downgrade" / "empty.lifty").read_text(), module)
    with pytest.raises(FunctionalDependency) as e:
        localize(module, program, program.functions[0])
    assert "2:19" in str(e.value)


def test_cast_json(edas):
    module, program, fn = edas
    j = localize(module, program, fn).to_json()
    assert j["function"] == "showPaper"
    assert j["casts"][0]["term"] == "get (status p)"
    assert j["casts"][0]["actual_policy"] == "s[phase] == Done"
