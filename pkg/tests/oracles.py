"""Independent oracles the tests compare the implementation against."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor

from lifty import formula as F
from lifty import generate as G
from lifty import logic
from lifty.fixpoint import Solver, apply_solution, cone
from lifty.typecheck import LiftyTypeError, check_program, constraints

from conftest import FIXTURES
from lifty.corpus import fixtures


def corpus_programs():
    """(label, module, program) for every leaky and golden fixture program."""
    out = []
    for fx in fixtures(FIXTURES):
        for which in ("leaky", "golden"):
            if which == "golden" and fx.golden is None:
                continue
            module, program = fx.load(which)
            out.append((f"{fx.name}/{which}", module, program))
    return out


# ------------------------------------------------------------ EDAS constraints

_PHASE_DONE = F.Eq(F.Select(F.Var(F.POL_S), F.location("phase")), F.Ctor("Done"))


def edas_shape(system) -> bool:
    """The three EDAS clauses: κa ⇒ phase; κb ⇒ κa; viewer ⇒ κb (κ names free)."""
    cl = system.nontrivial()
    if len(cl) != 3:
        return False
    src = [c for c in cl if c.head == _PHASE_DONE and len(c.hyps) == 1 and isinstance(c.hyps[0], F.KApp)]
    sink = [c for c in cl if isinstance(c.head, F.KApp) and set(c.hyps) == {F.Eq(F.Var(F.POL_U), F.Var("client")), F.Eq(F.Var(F.POL_S), F.Var("σ"))}]
    if len(src) != 1 or len(sink) != 1:
        return False
    a, b = src[0].hyps[0].name, sink[0].head.name
    mid = [c for c in cl if c.hyps == (F.KApp(b),) and c.head == F.KApp(a)]
    return len(mid) == 1 and a != b


# ------------------------------------------------------------ Horn brute force


def _holds(system, clause, asg) -> bool:
    hyps = [apply_solution(h, asg) for h in clause.hyps]
    hyps += [apply_solution(f, asg) for f in system.facts]
    goal = apply_solution(clause.head, asg)
    return all(logic.is_valid(hyps, g) for g in F.conjuncts(goal))


def brute_force(system, clauses, candidates: dict):
    """Every qualifier-subset assignment that satisfies ``clauses``; returns (sat, strongest)."""
    names = sorted(candidates)
    subsets = [
        [frozenset(c) for k in range(len(candidates[n]) + 1) for c in itertools.combinations(candidates[n], k)]
        for n in names
    ]
    sols = []
    for choice in itertools.product(*subsets):
        asg = {n: list(qs) for n, qs in zip(names, choice)}
        if all(_holds(system, c, asg) for c in clauses):
            sols.append(dict(zip(names, choice)))
    if not sols:
        return False, None
    top = [s for s in sols if all(all(o[n] <= s[n] for n in names) for o in sols)]
    return True, (top[0] if top else "no unique strongest solution")


def horn_instances(max_unknowns: int = 3, max_quals: int = 6):
    """Corpus Horn systems (whole functions and per-goal cones) small enough to enumerate."""
    out, seen = [], set()
    for label, module, program in corpus_programs():
        for fn in program.functions:
            system = constraints(module, program, fn)
            solver = Solver(system)
            clauses = system.nontrivial()
            pieces = [("all", clauses)]
            pieces += [(f"cone{i}", cone(clauses, c)) for i, c in enumerate(clauses) if not isinstance(c.head, F.KApp)]
            for tag, cl in pieces:
                used = set()
                for c in cl:
                    for h in (*c.hyps, c.head):
                        used |= F.kvars(h)
                if not cl or len(used) > max_unknowns:
                    continue
                if any(len(solver.candidates[k]) > max_quals for k in used):
                    continue
                key = (label, fn.name, tuple(sorted(id(c) for c in cl)))
                if key in seen:
                    continue
                seen.add(key)
                out.append((f"{label}:{fn.name}:{tag}", system, solver, cl, {k: solver.candidates[k] for k in used}))
    return out


# ------------------------------------------------------------ prover cross-check


def corpus_queries() -> list:
    """Every validity query the internal prover answers while checking and enforcing the corpus."""
    seen: dict = {}
    inner = logic._internal

    def recording(hyps, goal):
        seen.setdefault((hyps, goal), None)
        return inner(hyps, goal)

    logic.clear_cache()
    logic._internal = recording
    try:
        for _, module, program in corpus_programs():
            check_program(program, module)
            try:
                G.enforce(module, program)
            except LiftyTypeError:
                pass
    finally:
        logic._internal = inner
    return [logic.ValidityQuery(h, g) for h, g in seen]


def cross_check(queries, solver: str = "z3", workers: int = 8) -> list:
    """Queries where the external solver's verdict differs from the internal one."""
    def one(q):
        ext = logic.check_validity(q, solver)
        internal = logic._internal(tuple(q.hypotheses), q.goal)
        return q, internal.status, ext.status

    with ThreadPoolExecutor(workers) as ex:
        return [(q, a, b) for q, a, b in ex.map(one, queries) if a != b]
