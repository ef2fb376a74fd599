"""Liquid fixpoint: strongest conjunctive solutions by predicate abstraction."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from . import ast as A
from . import formula as F
from . import logic
from .horn import HornClause, HornSystem, PolicyVar, Qualifier

S = F.Var(F.POL_S)
U = F.Var(F.POL_U)
HOLE_USER = "?user"
HOLE_STORE = "?store"


def _sig_params(sig) -> dict:
    """Field parameter name -> sort name."""
    out = {}
    t = sig.scheme.body
    while isinstance(t, A.TFun):
        arg = t.arg
        while isinstance(arg, A.TTagged):
            arg = arg.inner
        if isinstance(arg, A.TBase):
            out[t.binder] = {"String": "Str", "Password": "Str"}.get(arg.name, arg.name)
        t = t.ret
    return out


def _type_policies(t) -> list:
    if isinstance(t, A.TTagged):
        own = [] if F.kvars(t.policy) else [t.policy]
        return own + _type_policies(t.inner)
    if isinstance(t, A.TBase):
        return [p for a in t.args for p in _type_policies(a)]
    if isinstance(t, A.TRef):
        return _type_policies(t.inner)
    if isinstance(t, A.TFun):
        return _type_policies(t.arg) + _type_policies(t.ret)
    return []


def _content_base(t):
    while isinstance(t, (A.TRef, A.TTagged)):
        t = t.inner
    return t.name if isinstance(t, A.TBase) else None


def qualifiers_from_policies(module) -> list:
    """Atoms of every policy (and whole policy bodies), plus grounding templates."""
    out: list = []
    seen = set()

    def add(body, params):
        used = tuple(sorted((p, s) for p, s in params.items() if p in F.free_vars(body)))
        q = Qualifier(body, used)
        if q not in seen:
            seen.add(q)
            out.append(q)

    if module is not None:
        sigs = list(module.fields.values()) + list(module.functions.values())
        for sig in sigs:
            params = _sig_params(sig)
            for pol in _type_policies(sig.scheme.body):
                if pol in (F.TOP, F.BOT):
                    continue
                for a in F.atoms(pol):
                    add(a, params)
                if len(F.atoms(pol)) > 1 or isinstance(pol, F.Not):
                    add(pol, params)
        for name, sig in module.fields.items():
            if not sig.params and _content_base(sig.scheme.body) == "User":
                add(F.Eq(U, F.Select(S, F.location(name))), {})
    add(F.Eq(U, F.Var(HOLE_USER)), {HOLE_USER: "User"})
    add(F.Eq(S, F.Var(HOLE_STORE)), {HOLE_STORE: "Store"})
    return out


def instances(qualifiers, scope, sorts: dict, kind: str = "policy") -> list:
    """Instantiate qualifier templates over the variables in ``scope``.

    For policy unknowns the parameters s and u stay (u may also stand for a
    user variable); for downgrade unknowns and abduction s ranges over the
    symbolic stores and u over user variables in scope.
    """
    by_sort: dict = {}
    for v in scope:
        srt = sorts.get(v)
        if srt is not None:
            by_sort.setdefault(srt, []).append(F.Var(v))
    policy = kind == "policy"
    if policy:
        by_sort.setdefault("User", []).append(U)
    out: list = []
    seen = set()

    def emit(f):
        f = F.simplify(f)
        if f in (F.TOP, F.BOT) or f in seen:
            return
        if not policy and (F.POL_S in F.free_vars(f) or F.POL_U in F.free_vars(f)):
            return
        seen.add(f)
        out.append(f)

    for q in qualifiers:
        names = [p for p, _ in q.params]
        choices = [by_sort.get(s, []) for _, s in q.params]
        bodies = []
        if not policy:
            stores = [F.Var(v) for v in scope if sorts.get(v) == "Store"]
            users = by_sort.get("User", [])
            for st in stores or [S]:
                for us in users or [U]:
                    bodies.append(F.subst(q.body, {F.POL_S: st, F.POL_U: us}))
        else:
            bodies.append(q.body)
        for body in bodies:
            for combo in itertools.product(*choices):
                f = F.subst(body, dict(zip(names, combo)))
                if f == F.Eq(U, U) or f == F.Eq(S, S):
                    continue
                if isinstance(f, F.Eq) and f.lhs == f.rhs:
                    continue
                emit(f)
                if len(F.atoms(f)) == 1 and not (policy and isinstance(f, F.Eq) and f.lhs in (S, U)):
                    emit(F.neg(f))
    out.sort(key=F.show)
    return out


# ------------------------------------------------------------------ solving


@dataclass
class Solution:
    assignment: dict = field(default_factory=dict)  # κ name -> list of conjuncts
    failing: list = field(default_factory=list)  # clauses violated by the assignment

    @property
    def ok(self) -> bool:
        return not self.failing

    def formula(self, name: str) -> F.Formula:
        return F.conj(self.assignment.get(name, []))


def apply_solution(f, assignment: dict):
    """Replace unknown applications by their (substituted) solutions."""
    def leaf(g):
        if isinstance(g, F.KApp):
            body = F.conj(assignment.get(g.name, []))
            return F.subst(body, g.mapping)
        return g
    return F.map_formula(f, leaf)


def _relevant_facts(facts, formulas) -> list:
    vars_: set = set()
    for f in formulas:
        vars_ |= F.free_vars(f)
    chosen = []
    rest = list(facts)
    changed = True
    while changed:
        changed = False
        keep = []
        for f in rest:
            fv = F.free_vars(f)
            if fv & vars_ or not fv:
                chosen.append(f)
                vars_ |= fv
                changed = True
            else:
                keep.append(f)
        rest = keep
    return chosen


class Solver:
    def __init__(self, system: HornSystem, external: Optional[str] = None):
        self.sys = system
        self.external = external
        self.candidates = {}
        for name, kv in system.kvars.items():
            self.candidates[name] = instances(system.qualifiers, kv.scope, system.sorts, kv.kind)

    def valid(self, hyps, goal) -> bool:
        hyps = tuple(h for h in hyps if h != F.TOP)
        if goal == F.TOP or goal in hyps:
            return True
        q = logic.ValidityQuery.of(hyps, goal)
        return logic.check_validity(q, self.external).valid

    def hypotheses(self, c: HornClause, assignment: dict, extra=()) -> tuple:
        hyps = [apply_solution(h, assignment) for h in c.hyps]
        local = hyps + list(extra)
        facts = [apply_solution(f, assignment) for f in _relevant_facts(self.sys.facts, local)]
        return tuple(F.conjuncts(F.conj(hyps + facts)))

    def clause_holds(self, c: HornClause, assignment: dict) -> bool:
        goal = apply_solution(c.head, assignment)
        hyps = self.hypotheses(c, assignment, [goal])
        return all(self.valid(hyps, g) for g in F.conjuncts(goal))

    def solve(self, clauses=None) -> Solution:
        clauses = [c for c in (self.sys.nontrivial() if clauses is None else clauses)]
        assignment = {k: list(v) for k, v in self.candidates.items()}
        changed = True
        while changed:
            changed = False
            for c in clauses:
                if not isinstance(c.head, F.KApp):
                    continue
                name = c.head.name
                keep = []
                for q in assignment[name]:
                    goal = F.subst(q, c.head.mapping)
                    hyps = self.hypotheses(c, assignment, [goal])
                    if self.valid(hyps, goal):
                        keep.append(q)
                if len(keep) != len(assignment[name]):
                    assignment[name] = keep
                    changed = True
        failing = [c for c in clauses if not isinstance(c.head, F.KApp) and not self.clause_holds(c, assignment)]
        return Solution(assignment, failing)

    def core(self, clauses=None) -> list:
        """Greedy deletion-minimal unsatisfiable subset of ``clauses``."""
        cl = list(self.sys.nontrivial() if clauses is None else clauses)
        sol = self.solve(cl)
        if sol.ok:
            return []
        cl = cone(cl, sol.failing[0])
        i = 0
        while i < len(cl):
            trial = cl[:i] + cl[i + 1:]
            if not self.solve(trial).ok:
                cl = trial
            else:
                i += 1
        return cl


def cone(clauses, target: HornClause) -> list:
    """``target`` plus every clause that can weaken an unknown it depends on."""
    needed = set()
    for h in target.hyps:
        needed |= F.kvars(h)
    chosen = [target]
    rest = [c for c in clauses if c is not target]
    changed = True
    while changed:
        changed = False
        keep = []
        for c in rest:
            if isinstance(c.head, F.KApp) and c.head.name in needed:
                chosen.append(c)
                for h in c.hyps:
                    needed |= F.kvars(h)
                changed = True
            else:
                keep.append(c)
        rest = keep
    return [c for c in clauses if any(c is x for x in chosen)]


def solve_horn(system: HornSystem, external: Optional[str] = None) -> Solution:
    return Solver(system, external).solve()


def unsat_core(system: HornSystem, external: Optional[str] = None) -> list:
    return Solver(system, external).core()
