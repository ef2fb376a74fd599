from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifty import ast as A
from lifty import formula as F
from lifty import logic
from lifty.fixpoint import Solver
from lifty.horn import Origin
from lifty.parser import parse_policy_module, parse_program
from lifty.typecheck import (Checker, Env, LiftyTypeError, NeedsEnforcement, TypeErrorReport, WellTyped,
                             check_program, constraints)

from conftest import BENCHMARKS, FIXTURES, load
from oracles import edas_shape

S, U = F.Var(F.POL_S), F.Var(F.POL_U)
PHASE_DONE = F.Eq(F.Select(S, F.location("phase")), F.Ctor("Done"))
STATUS = A.TBase("Status")


def _checker(module=None):
    return Checker(module, None, A.FunDef("t", (), A.Skip()))


def _sub(sub, sup, module=None):
    c = _checker(module)
    c.subtype(Env(), sub, sup, Origin((), None, "test"))
    return c


# ------------------------------------------------------------ subtyping


def test_untagged_below_public_tag():
    c = _sub(STATUS, A.TTagged(STATUS, F.TOP))
    assert c.sys.nontrivial() == []


def test_public_below_secret():
    c = _sub(A.TTagged(STATUS, F.TOP), A.TTagged(STATUS, PHASE_DONE))
    assert all(logic.is_valid(cl.hyps, cl.head) for cl in c.sys.nontrivial())


def test_secret_below_unknown():
    k = F.KApp("κ1")
    c = _sub(A.TTagged(STATUS, PHASE_DONE), A.TTagged(STATUS, k))
    (cl,) = c.sys.nontrivial()
    assert cl.hyps == (k,) and cl.head == PHASE_DONE


POLICIES = [F.TOP, PHASE_DONE, F.Eq(U, F.Var("client")), F.And((PHASE_DONE, F.Eq(U, F.Var("client"))))]


@given(st.sampled_from(POLICIES), st.sampled_from(POLICIES))
def test_subtyping_is_contravariant(p, q):
    c = _sub(A.TTagged(STATUS, p), A.TTagged(STATUS, q))
    holds = all(logic.is_valid(cl.hyps, cl.head) for cl in c.sys.nontrivial())
    assert holds == logic.is_valid([q], p)


def test_shape_mismatch_is_type_error():
    with pytest.raises(LiftyTypeError):
        _sub(STATUS, A.TBase("Phase"))


def test_tagged_where_untagged_expected():
    with pytest.raises(LiftyTypeError):
        _sub(A.TTagged(STATUS, PHASE_DONE), STATUS)


# ------------------------------------------------------------ EDAS constraints


def test_edas_three_clauses(edas):
    module, program, fn = edas
    assert edas_shape(constraints(module, program, fn))


def test_print_clause(edas):
    module, program, fn = edas
    sink = [c for c in constraints(module, program, fn).nontrivial() if c.origin.rule == "T-print"
            and not F.kvars(F.conj(list(c.hyps)))]
    assert len(sink) == 1 and isinstance(sink[0].head, F.KApp)


def test_public_fields_solve_to_top():
    module = parse_policy_module("module M where\ntitle :: PaperId -> Ref (Tagged String <any>)\n")
    program = parse_program("f client p =\n  let t = get (title p) in\n  print client t\n", module)
    fn = program.functions[0]
    sol = Solver(constraints(module, program, fn)).solve()
    assert sol.ok


def test_selfref_downgrade_solution():
    module, program, fn = load("b03_edas_selfref", "golden")
    system = constraints(module, program, fn)
    sol = Solver(system).solve()
    assert sol.ok
    down = [k for k, v in system.kvars.items() if v.kind == "downgrade"]
    elem = F.truth(F.App("elem", (F.Var("client"), F.Select(F.Var("σ"), F.location("authors", [F.Var("p")])))))
    assert down and all(elem in sol.assignment[k] for k in down)


def test_downgrade_scope_excludes_policy_parameters():
    module, program, fn = load("b03_edas_selfref", "golden")
    system = constraints(module, program, fn)
    for k, v in system.kvars.items():
        if v.kind == "downgrade":
            sol = Solver(system).solve()
            assert not {F.POL_S, F.POL_U} & F.free_vars(F.conj(sol.assignment[k]))


def test_set_before_print_uses_new_store():
    module, program, fn = load("b05_auction_place_bid", "golden")
    system = constraints(module, program, [f for f in program.functions if f.name == "placeBid"][0])
    assert len(system.stores) > 1
    assert Solver(system).solve().ok


# ------------------------------------------------------------ whole programs


def test_patched_edas_well_typed():
    module, program, _ = load("edas", "golden")
    assert isinstance(check_program(program, module), WellTyped)


def test_empty_program_well_typed(edas):
    module, _, _ = edas
    assert isinstance(check_program(A.Program([]), module), WellTyped)


def test_leaky_edas_needs_enforcement(edas):
    module, program, fn = edas
    res = check_program(program, module)
    assert isinstance(res, NeedsEnforcement)
    (bad,) = res.failing[fn.name]
    assert bad.head == PHASE_DONE


def test_functional_error_reported(edas):
    module, _, _ = edas
    program = parse_program('f client p =\n  let t = get (title p) in\n  let n = t + 1 in\n  print client n\n', module)
    assert isinstance(check_program(program, module), TypeErrorReport)


@pytest.mark.parametrize("fx", BENCHMARKS, ids=lambda f: f.name)
def test_benchmark_verdicts(fx):
    module, leaky = fx.load("leaky")
    _, golden = fx.load("golden")
    assert isinstance(check_program(leaky, module), NeedsEnforcement)
    expect = NeedsEnforcement if fx.name == "b06_search" else WellTyped  # golden leaves the authors read unguarded
    assert isinstance(check_program(golden, module), expect)


def test_downgrade_pair():
    module = parse_policy_module((FIXTURES / "downgrade" / "policy.liftyp").read_text())
    ok = parse_program((FIXTURES / "downgrade" / "elem.lifty").read_text(), module)
    bad = parse_program((FIXTURES / "downgrade" / "empty.lifty").read_text(), module)
    assert isinstance(check_program(ok, module), WellTyped)
    assert not isinstance(check_program(bad, module), WellTyped)


def test_health_show_needs_enforcement():
    module = parse_policy_module((FIXTURES / "health" / "policy.liftyp").read_text())
    program = parse_program((FIXTURES / "health" / "show.lifty").read_text(), module)
    assert isinstance(check_program(program, module), NeedsEnforcement)
