from __future__ import annotations

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lifty import formula as F
from lifty.fixpoint import Solver, qualifiers_from_policies, solve_horn, unsat_core
from lifty.horn import HornClause, HornSystem, Origin, PolicyVar
from lifty.parser import parse_policy_module
from lifty.typecheck import constraints

from conftest import FIXTURES
from oracles import brute_force, horn_instances

S, U = F.Var(F.POL_S), F.Var(F.POL_U)
CLIENT, SIGMA = F.Var("client"), F.Var("σ")
PHASE_DONE = F.Eq(F.Select(S, F.location("phase")), F.Ctor("Done"))
VIEWER = [F.Eq(U, CLIENT), F.Eq(S, SIGMA)]


def _shows(qs):
    return {F.show(q.body) for q in qs}


def test_edas_qualifiers(edas):
    module, _, _ = edas
    assert _shows(qualifiers_from_policies(module)) == {"s[phase] == Done", "u == ?user", "s == ?store"}


def test_empty_module_has_only_grounding():
    assert _shows(qualifiers_from_policies(parse_policy_module("module E where\n"))) == {"u == ?user", "s == ?store"}


def test_health_qualifiers():
    qs = qualifiers_from_policies(parse_policy_module((FIXTURES / "health" / "policy.liftyp").read_text()))
    assert len(qs) >= 8
    assert "s[psychiatristRole u]" in _shows(qs)


def _edas_parts(edas):
    module, program, fn = edas
    system = constraints(module, program, fn)
    cl = system.nontrivial()
    src = next(c for c in cl if c.head == PHASE_DONE)
    sink = next(c for c in cl if set(c.hyps) == set(VIEWER))
    mid = next(c for c in cl if c is not src and c is not sink)
    return system, src, mid, sink


def test_sink_and_bind_alone(edas):
    system, src, mid, sink = _edas_parts(edas)
    sol = Solver(system).solve([mid, sink])
    assert sol.ok
    for k in system.kvars:
        assert set(sol.assignment[k]) == set(VIEWER)


def test_empty_system():
    sol = solve_horn(HornSystem())
    assert sol.ok and sol.assignment == {}


def test_full_edas_unsat(edas):
    system, src, mid, sink = _edas_parts(edas)
    assert not solve_horn(system).ok
    core = unsat_core(system)
    assert src in core and sink in core


def test_core_is_minimal(edas):
    system, *_ = _edas_parts(edas)
    core = unsat_core(system)
    solver = Solver(system)
    for i in range(len(core)):
        assert solver.solve(core[:i] + core[i + 1:]).ok


@pytest.mark.parametrize("inst", horn_instances(), ids=lambda i: i[0])
def test_matches_brute_force(inst):
    _, system, solver, clauses, cands = inst
    sat, strongest = brute_force(system, clauses, cands)
    sol = solver.solve(clauses)
    assert sol.ok == sat
    if sat:
        assert strongest == {k: frozenset(sol.assignment[k]) for k in cands}


# ------------------------------------------------------------ random systems

ATOMS = [PHASE_DONE, F.Eq(U, CLIENT), F.Eq(S, SIGMA), F.Eq(F.Select(SIGMA, F.location("phase")), F.Ctor("Done"))]
KS = ["κa", "κb"]


def _clause(hyp_ks, hyp_atoms, head):
    return HornClause(tuple(F.KApp(k) for k in hyp_ks) + tuple(hyp_atoms), head, Origin((), None, "test"))


clauses_st = st.lists(
    st.builds(
        _clause,
        st.lists(st.sampled_from(KS), max_size=1, unique=True),
        st.lists(st.sampled_from(ATOMS), max_size=2, unique=True),
        st.one_of(st.sampled_from(KS).map(F.KApp), st.sampled_from(ATOMS)),
    ),
    min_size=1, max_size=4,
)


@given(clauses_st)
@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_random_systems_match_brute_force(clauses):
    system = HornSystem(clauses, {k: PolicyVar(k, ("client", "σ"), Origin((), None, "test")) for k in KS})
    solver = Solver(system)
    cands = {k: ATOMS[:3] for k in KS}
    solver.candidates = dict(cands)
    sat, strongest = brute_force(system, clauses, cands)
    sol = solver.solve(clauses)
    assert sol.ok == sat
    if sat:
        assert strongest == {k: frozenset(sol.assignment[k]) for k in KS}


@given(clauses_st)
@settings(max_examples=40, deadline=None)
def test_solution_scope(clauses):
    """Solutions only mention the unknown's scope and the policy parameters."""
    system = HornSystem(clauses, {k: PolicyVar(k, ("client", "σ"), Origin((), None, "test")) for k in KS})
    solver = Solver(system)
    solver.candidates = {k: ATOMS[:3] for k in KS}
    sol = solver.solve(clauses)
    for k in KS:
        assert F.free_vars(F.conj(sol.assignment[k])) <= {"client", "σ", F.POL_S, F.POL_U}
