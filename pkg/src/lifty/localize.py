"""Blame unsafe terms: turn an unsolvable policy system into type casts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import ast as A
from . import formula as F
from .fixpoint import Solution, Solver, apply_solution
from .horn import HornClause, HornSystem
from .typecheck import LiftyTypeError, checked, constraints, map_policies


class FunctionalDependency(LiftyTypeError):
    """The program relies on a functional property of a value that has to be replaced."""


@dataclass
class CastSite:
    path: tuple
    term: object
    actual: object
    expected: object
    pos: Optional[tuple] = None

    def span(self) -> str:
        return f"{self.pos[0]}:{self.pos[1]}" if self.pos else "?"

    @property
    def expected_policy(self):
        return self.expected.policy if isinstance(self.expected, A.TTagged) else F.TOP

    @property
    def actual_policy(self):
        return self.actual.policy if isinstance(self.actual, A.TTagged) else F.TOP

    def to_json(self) -> dict:
        from .pretty import pretty_term
        return {
            "span": self.span(),
            "term": pretty_term(self.term),
            "actual_policy": F.show(self.actual_policy),
            "expected_policy": F.show(self.expected_policy),
        }


@dataclass
class Localization:
    original: A.FunDef
    function: A.FunDef  # body with casts inserted
    casts: list = field(default_factory=list)
    system: Optional[HornSystem] = None
    solution: Optional[Solution] = None
    checker: object = None  # checker state of the program with casts
    cast_solution: Optional[Solution] = None

    def to_json(self) -> dict:
        return {"function": self.original.name, "casts": [c.to_json() for c in self.casts]}


def blame_key(c: HornClause):
    """Smallest origin term first; then innermost; then leftmost."""
    return (c.origin.size, -len(c.origin.path), c.origin.path)


def _fail(fn, msg, c=None, cls=LiftyTypeError):
    pos = c.origin.pos if c is not None else fn.pos
    rule = c.origin.rule if c is not None else ""
    return cls(msg, pos, rule, function=fn.name)


def blame(system: HornSystem, fn, solver: Solver):
    """Paths of the terms to cast, plus the solution of the remaining clauses."""
    clauses = system.nontrivial()
    sol = solver.solve(clauses)
    blamed: list = []
    while not sol.ok:
        core = solver.core(clauses)
        other = [c for c in core if c.kind != "flow"]
        if other:
            raise _fail(fn, f"type error unrelated to information flow: {other[0].show()}", other[0])
        sources = [c for c in core if c.is_source and c.origin.path in system.sources]
        if not sources:
            raise _fail(fn, f"cannot localize the leak: {core[0].show()}", core[0])
        path = min(sources, key=blame_key).origin.path
        blamed.append(path)
        clauses = [c for c in clauses if not (c.is_source and c.origin.path == path)]
        sol = solver.solve(clauses)
    return blamed, sol


def expected_type(sup, assignment: dict):
    """The solved expected type with its non-policy refinements reset."""
    t = map_policies(sup, lambda p: F.simplify(apply_solution(p, assignment)))
    return A.strip_refinements(t)


def insert_casts(fn, casts: list):
    body = fn.body
    # innermost first, so that outer paths stay valid
    for c in sorted(casts, key=lambda c: len(c.path), reverse=True):
        body = A.replace_at(body, c.path, A.Cast(c.actual, c.expected, A.at_path(body, c.path), c.pos))
    return replace(fn, body=body)


def typechecks(module, program, fn, external=None) -> bool:
    try:
        system = constraints(module, program, fn)
    except LiftyTypeError:
        return False
    return Solver(system, external).solve().ok


def localize(module, program, fn, system: Optional[HornSystem] = None, external=None) -> Localization:
    """Insert casts at the smallest terms whose policies conflict with their use."""
    if system is None:
        system = constraints(module, program, fn)
    solver = Solver(system, external)
    paths, sol = blame(system, fn, solver)
    if not paths:
        return Localization(fn, fn, [], system, sol)
    casts = []
    for path in paths:
        origin, sup, actual = system.sources[path]
        term = A.at_path(fn.body, path)
        if isinstance(term, (A.Let, A.Print, A.PrintAll, A.Set, A.Skip)):
            raise _fail(fn, "the leak is in a statement and cannot be patched locally")
        casts.append(CastSite(path, term, actual, expected_type(sup, sol.assignment), origin.pos))
    casts.sort(key=lambda c: c.path)
    patched = insert_casts(fn, casts)
    where = ", ".join(c.span() for c in casts)
    msg = f"the program depends on a functional property of the unsafe term(s) at {where}"
    try:
        chk = checked(module, program, patched)
    except LiftyTypeError as e:
        raise _fail(fn, f"{msg}: {e.msg}", cls=FunctionalDependency) from e
    csol = Solver(chk.sys, external).solve()
    if not csol.ok:
        raise _fail(fn, msg, cls=FunctionalDependency)
    return Localization(fn, patched, casts, system, sol, chk, csol)


def minimality_check(module, program, loc: Localization, external=None) -> bool:
    """No cast can be dropped and no expected policy can be made less restrictive."""
    if not loc.casts:
        return True
    solver = Solver(loc.system, external)
    for i in range(len(loc.casts)):
        rest = loc.casts[:i] + loc.casts[i + 1:]
        if typechecks(module, program, insert_casts(loc.original, rest), external):
            return False
    for i, c in enumerate(loc.casts):
        for q in dropped_qualifiers(loc, c, solver):
            exp = replace(c.expected, policy=F.conj([c.expected.policy, q]))
            trial = loc.casts[:i] + [replace(c, expected=exp)] + loc.casts[i + 1:]
            if typechecks(module, program, insert_casts(loc.original, trial), external):
                return False
    return True


def dropped_qualifiers(loc: Localization, cast: CastSite, solver: Solver) -> list:
    """Candidate conjuncts of the cast's unknown that the solution left out."""
    _, sup, _ = loc.system.sources[cast.path]
    pol = sup.policy if isinstance(sup, A.TTagged) else None
    if not isinstance(pol, F.KApp):
        return []
    kept = set(loc.solution.assignment.get(pol.name, []))
    return [F.subst(q, pol.mapping) for q in solver.candidates.get(pol.name, []) if q not in kept]
