from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifty import ast as A
from lifty import formula as F
from lifty import generate as G
from lifty import logic
from lifty.interp import Interpreter, Universe
from lifty.localize import localize
from lifty.nioracle import holds, random_store
from lifty.parser import parse_term
from lifty.pretty import pretty_term
from lifty.typecheck import WellTyped, check_isolated, check_program

from conftest import BENCHMARKS, load

SIGMA = F.Var("σ")


def site(name: str, i: int = 0, which: str = "leaky"):
    module, program, fn = load(name, which)
    loc = localize(module, program, fn)
    return module, program, fn, loc, G.site_of(loc, loc.casts[i])


def branch_shows(s, components) -> set:
    return {pretty_term(b.term) for b in G.enumerate_branches(s, components)}


# ------------------------------------------------------------ enumeration


def test_edas_branches():
    module, *_, s = site("edas")
    assert branch_shows(s, G.redaction_set(module)) == {"get (status p)", "NoDecision"}


def test_no_components_only_original():
    *_, s = site("edas")
    assert branch_shows(s, []) == {"get (status p)"}


def test_auction_branches_include_masked_bid():
    module, *_, s = site("b04_auction")
    shows = branch_shows(s, G.redaction_set(module))
    assert any("<- get (bid p)" in x and "mbMap (\\_. 0)" in x for x in shows)
    assert "Nothing" in shows


def test_original_branch_first():
    module, *_, s = site("b04_auction")
    bs = G.enumerate_branches(s, G.redaction_set(module))
    assert bs[0].template == A.Var(G.X0)


def test_branches_fit_bound():
    module, *_, s = site("b04_auction")
    for bound in (1, 3, 6):
        assert all(b.size <= bound for b in G.enumerate_branches(s, G.redaction_set(module), bound)[1:])


def test_branches_typecheck_at_bottom():
    module, *_, s = site("b04_auction")
    for b in G.enumerate_branches(s, G.redaction_set(module)):
        check_isolated(s.checker, s.env, b.term, G._bot_type(s.expected), s.cast.path)


# ------------------------------------------------------------ abduction


def equiv(a, b) -> bool:
    return logic.is_valid([a], b) and logic.is_valid([b], a)


def _cond(s, term):
    b = G.Branch(term, None)
    return G.abduce_condition(s, G.BranchSystem(s, b))


def test_abduce_edas_original():
    *_, s = site("edas")
    assert equiv(_cond(s, s.x0), F.Eq(F.Select(SIGMA, F.location("phase")), F.Ctor("Done")))


def test_abduce_redaction_is_top():
    *_, s = site("edas")
    assert _cond(s, A.Const("NoDecision")) == F.TOP


def test_abduce_selfref_disjunction():
    *_, s = site("b03_edas_selfref")
    assert "authors" in pretty_term(s.x0)
    c = _cond(s, s.x0)
    elem = F.truth(F.App("elem", (F.Var("client"), F.Select(SIGMA, F.location("authors", [F.Var("p")])))))
    assert len(F.disjuncts(c)) == 2
    assert equiv(c, F.Or((F.Eq(F.Select(SIGMA, F.location("phase")), F.Ctor("Done")), elem)))


def test_abduced_condition_mentions_no_policy_parameters():
    for name in ("edas", "b03_edas_selfref", "b04_auction"):
        *_, s = site(name)
        c = _cond(s, s.x0)
        assert not {F.POL_S, F.POL_U} & F.free_vars(c)


# ------------------------------------------------------------ guards


def test_guard_phase():
    *_, s = site("edas")
    var, g = G.synthesize_guard(s, F.Eq(F.Select(SIGMA, F.location("phase")), F.Ctor("Done")), G.Names(set()))
    assert A.alpha_equiv(g, parse_term(r"bind (get phase) (\x1. x1 == Done)"))
    assert var == "c1"


def test_guard_elem_is_downgraded():
    *_, s = site("b03_edas_selfref")
    elem = F.truth(F.App("elem", (F.Var("client"), F.Select(SIGMA, F.location("authors", [F.Var("p")])))))
    _, g = G.synthesize_guard(s, elem, G.Names(set()))
    assert isinstance(g, A.Downgrade)
    assert A.alpha_equiv(g.inner, parse_term(r"bind (get (authors p)) (\x. elem client x)", bound=("client", "p")))


def test_guard_unenforceable():
    *_, s = site("edas_unenforceable")
    with pytest.raises(G.UnenforceablePolicy) as e:
        G.synthesize_guard(s, F.Eq(F.Select(SIGMA, F.location("phase")), F.Ctor("Done")), G.Names(set()))
    assert "phase" in str(e.value)


# ------------------------------------------------------------ assembly


def test_edas_patch_shape():
    module, program, fn, loc, s = site("edas")
    p = G.generate_patch(loc, loc.casts[0], G.redaction_set(module), G.Names(G._names_in(fn)))
    want = parse_term(r"bind (bind (get phase) (\x1. x1 == Done)) (\c1. if c1 then get (status p) else NoDecision)",
                      bound=("p",))
    assert A.alpha_equiv(p.term, want, ("==",))
    assert pretty_term(p.default) == "NoDecision"
    assert not A.has_cast(p.term)


def test_single_top_branch_is_unconditional():
    _, _, fn, loc, s = site("edas")
    p = G.assemble_patch(s, [], G.Branch(A.Const("NoDecision"), A.Const("NoDecision")), G.Names(set()))
    assert p.term == A.Const("NoDecision") and p.guards == []


def test_auction_nesting_order():
    module, program, fn, loc, s = site("b04_auction")
    p = G.generate_patch(loc, loc.casts[0], G.redaction_set(module), G.Names(G._names_in(fn)))
    conds = [c for _, c in p.branches]
    assert "phase" in F.show(conds[0]) and "isJust" in F.show(conds[1])
    assert pretty_term(p.default) == "Nothing"


def test_missing_default():
    module, program, fn, loc, s = site("edas")
    with pytest.raises(G.MissingDefault):
        G.generate_patch(loc, loc.casts[0], [], G.Names(set()))


@pytest.mark.parametrize("fx", BENCHMARKS, ids=lambda f: f.name)
def test_patches_typecheck_in_isolation(fx):
    module, program = fx.load()
    for fn in program.functions:
        loc = localize(module, program, fn)
        names = G.Names(G._names_in(fn))
        for c in loc.casts:
            s = G.site_of(loc, c)
            p = G.generate_patch(loc, c, G.redaction_set(module), names)
            assert not A.has_cast(p.term)
            assert G.TermSystem(s, p.term, s.expected).solves(F.TOP)


# ------------------------------------------------------------ enforcement


def test_enforce_edas_patch_matches_golden():
    """The EDAS patch equals the b01 golden at the cast (the two programs differ elsewhere)."""
    module, program, fn = load("edas")
    res = G.enforce(module, program)
    path = res.reports[0].patches[0].cast.path
    _, _, leaky1 = load("b01_edas")
    _, _, golden1 = load("b01_edas", "golden")
    path1 = localize(*load("b01_edas")[:2], leaky1).casts[0].path
    assert A.alpha_equiv(A.at_path(res.program.functions[0].body, path), A.at_path(golden1.body, path1), ("==",))
    assert isinstance(check_program(res.program, module), WellTyped)


def test_enforce_safe_program_unchanged():
    module, program, _ = load("edas", "golden")
    res = G.enforce(module, program)
    assert not res.changed and res.program.functions == program.functions


def test_enforce_unenforceable():
    module, program, _ = load("edas_unenforceable")
    with pytest.raises(G.UnenforceablePolicy):
        G.enforce(module, program)


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_independent_of_order(order):
    module, program, fn = load("b02_edas_multiple")
    new, rep = G.enforce_function(module, program, fn, order=order)
    base, _ = G.enforce_function(module, program, fn)
    assert A.alpha_equiv(new.body, base.body, ("==",))
    assert isinstance(check_program(A.Program([new]), module), WellTyped)


def test_report_json():
    module, program, _ = load("edas")
    j = G.enforce(module, program).to_json()
    (patch,) = j["functions"][0]["patches"]
    assert patch["span"] == "4:11" and patch["default"] == "NoDecision"
    assert patch["guards"][0]["term"] == "do x1 <- get phase\n   x1 == Done"


# ------------------------------------------------------------ patches pick the right branch

CASES = {
    "edas": {"client": "User", "p": "PaperId"},
    "b03_edas_selfref": {"client": "User", "p": "PaperId"},
    "b04_auction": {"client": "User", "p": "User"},
}


def _value(sort, universe, rng):
    return rng.choice(universe.values_of(sort))


@pytest.mark.parametrize("name", sorted(CASES))
@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_patch_selects_first_safe_branch(name, seed):
    """Evaluated on a concrete store, a patch returns the first branch whose condition holds."""
    module, program, fn, loc, s = _cached_site(name)
    patch = _cached_patch(name)
    universe, rng = Universe(), random.Random(seed)
    store = random_store(module, universe, rng)
    env = {v: _value(srt, universe, rng) for v, srt in CASES[name].items()}
    it = Interpreter(module, program, universe)
    got = it.eval(patch.term, env, store)
    fenv = {**env, "σ": store}
    for b, c in patch.branches:
        if holds(c, store, fenv):
            assert got == it.eval(b.term, env, store)
            return
    assert got == it.eval(patch.default, env, store) or patch.default != A.Var(G.X0)


_SITES: dict = {}
_PATCHES: dict = {}


def _cached_site(name):
    if name not in _SITES:
        _SITES[name] = site(name)
    return _SITES[name]


def _cached_patch(name):
    if name not in _PATCHES:
        module, program, fn, loc, s = _cached_site(name)
        _PATCHES[name] = G.generate_patch(loc, loc.casts[0], G.redaction_set(module), G.Names(G._names_in(fn)))
    return _PATCHES[name]


# ------------------------------------------------------------ exactness of abduced conditions

# Cast sites where the abduced condition for the original term is not implied by
# expected ∧ actual policy: there the golden guards are stronger than exact too.
INEXACT = {("b04_auction", "3:14"), ("b05_auction_place_bid", "9:14"), ("b10_airbnb", "7:34"), ("b11_instagram", "6:16")}


def test_abduced_condition_exact_except_known_sites():
    inexact = set()
    for fx in BENCHMARKS:
        module, program = fx.load()
        for fn in program.functions:
            loc = localize(module, program, fn)
            for c in loc.casts:
                s = G.site_of(loc, c)
                cond = G.abduce_condition(s, G.BranchSystem(s, G.Branch(s.x0, None)))
                assert cond is not None and logic.is_valid([c.expected_policy, cond], c.actual_policy)
                if not logic.is_valid([c.expected_policy, c.actual_policy], cond):
                    inexact.add((fx.name, c.span()))
    assert inexact == INEXACT
