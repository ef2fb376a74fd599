from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifty import ast as A
from lifty.interp import DataV, IdV, LocV, StrV, Store, Universe, UserV, mk_list
from lifty.nioracle import (check_noninterference, equivalent, equivalent_pair, field_table, locations, observable,
                            random_store)

from conftest import load

P1 = IdV("PaperId", "p1")
ALICE, BOB = UserV("alice"), UserV("bob")
U = Universe()


def edas_module():
    module, _, _ = load("edas")
    return module


def _loc(module, name, *args):
    info = field_table(module)[name]
    return LocV(name, args), info


def _store(module, phase="Review", rng=None):
    s = random_store(module, U, rng or random.Random(1))
    s.locs[LocV("phase", ())] = DataV(phase)
    return s


def test_public_field_observable():
    m = edas_module()
    s = _store(m)
    loc, info = _loc(m, "title", P1)
    assert observable(ALICE, s, s, loc, info)


def test_status_observable_if_done_in_one_store():
    m = edas_module()
    s1, s2 = _store(m, "Done"), _store(m, "Review")
    loc, info = _loc(m, "status", P1)
    assert observable(ALICE, s1, s2, loc, info)
    assert observable(ALICE, s2, s1, loc, info)


def test_status_hidden_before_done():
    m = edas_module()
    s1, s2 = _store(m, "Review"), _store(m, "Submission")
    loc, info = _loc(m, "status", P1)
    assert not observable(ALICE, s1, s2, loc, info)


def test_equivalence_basics():
    m = edas_module()
    locs = locations(m, U)
    s = _store(m)
    assert equivalent(ALICE, s, s.copy(), locs)
    t = s.copy()
    t.locs[LocV("status", (P1,))] = DataV("Accept" if s.locs[LocV("status", (P1,))] != DataV("Accept") else "Reject")
    assert equivalent(ALICE, s, t, locs)
    t = s.copy()
    t.outputs[ALICE] = [StrV("x")]
    assert not equivalent(ALICE, s, t, locs)
    assert equivalent(BOB, s, t, locs)


@given(st.integers(0, 10_000), st.sampled_from(["alice", "bob", "carol"]))
@settings(max_examples=60, deadline=None)
def test_pairs_are_equivalent_and_symmetric(seed, who):
    m = edas_module()
    locs = locations(m, U)
    o = UserV(who)
    s1, s2 = equivalent_pair(m, U, random.Random(seed), o, locs)
    assert equivalent(o, s1, s2, locs) and equivalent(o, s2, s1, locs)
    assert equivalent(o, s1, s1, locs)


def test_selfref_policy_is_literal():
    module, _, _ = load("b03_edas_selfref")
    s = random_store(module, U, random.Random(0))
    s.locs[LocV("phase", ())] = DataV("Review")
    s.locs[LocV("authors", (P1,))] = mk_list([ALICE])
    loc, info = _loc(module, "authors", P1)
    assert observable(ALICE, s, s, loc, info)
    assert not observable(BOB, s, s, loc, info)


def test_conflict_list_hides_itself():
    module, _, _ = load("b07_sort")
    s = random_store(module, U, random.Random(0))
    s.locs[LocV("conflicts", (P1,))] = mk_list([ALICE])
    loc, info = _loc(module, "score", P1)
    assert not observable(ALICE, s, s, loc, info)
    assert observable(BOB, s, s, loc, info)


# ------------------------------------------------------------ the tester


def test_patched_edas_passes():
    module, program, fn = load("edas", "golden")
    res = check_noninterference(module, program, fn, trials=300, seed=0)
    assert res.ok and res.trials == 300


def test_leaky_edas_violates():
    module, program, fn = load("edas")
    res = check_noninterference(module, program, fn, trials=1000, seed=0)
    assert res.violations
    v = res.violations[0]
    s1, s2 = v.before
    status = LocV("status", (v.params["p"],))
    assert s1.locs[status] != s2.locs[status]
    assert s1.locs[LocV("phase", ())] != DataV("Done") and s1.locs[LocV("phase", ())] == s2.locs[LocV("phase", ())]
    assert v.after[0].output(v.observer) != v.after[1].output(v.observer)
    assert "store 1" in v.describe()


def test_skip_passes():
    module, program, _ = load("edas")
    fn = A.FunDef("nop", ("client",), A.Skip())
    assert check_noninterference(module, A.Program([fn]), fn, trials=20).ok


def test_evaluation_errors_are_harness_failures():
    module, _, _ = load("edas")
    from lifty.parser import parse_program
    program = parse_program('f client =\n  let x = if "s" then 1 else 2 in\n  print client x\n', module)
    res = check_noninterference(module, program, program.functions[0], trials=5)
    assert res.errors and not res.violations and res.verdict == "error"


@pytest.mark.parametrize("name", ["b04_auction", "b07_sort", "b10_airbnb"])
def test_leaky_benchmarks_violate(name):
    module, program, fn = load(name)
    assert check_noninterference(module, program, fn, trials=1000, seed=0).violations


def test_seeded_runs_are_reproducible():
    module, program, fn = load("edas")
    a = check_noninterference(module, program, fn, trials=200, seed=3)
    b = check_noninterference(module, program, fn, trials=200, seed=3)
    assert a.trials == b.trials and a.violations[0].before == b.violations[0].before
