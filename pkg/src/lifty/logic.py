"""Validity checking for quantifier-free refinement formulas.

The internal procedure decides ground formulas over equality with
uninterpreted functions, distinct data constructors, store arrays
(select/store) and two built-in measures (``isJust`` and ``elem`` over the
empty list). It negates the goal, instantiates read-over-write lemmas, and
runs a tableau search whose leaves are checked by congruence closure.

An external SMT-LIB v2 solver can be used instead by setting ``LIFTY_SMT``
to the solver binary.
"""
from __future__ import annotations

import os
import subprocess
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .formula import (
    And, App, BoolConst, Ctor, Eq, FALSE_C, Formula, Iff, Implies, KApp, Lit,
    NIL, NOTHING, Not, Or, POL_S, POL_U, Select, Store, TERM_TYPES, TOP, TRUE_C,
    Var, conj, disj, formula_terms, is_ctor_name, neg, subst, subterms,
)

VALID = "valid"
INVALID = "invalid"
UNKNOWN = "unknown"


class LogicError(Exception):
    pass


@dataclass(frozen=True)
class ValidityQuery:
    hypotheses: tuple
    goal: Formula

    @staticmethod
    def of(hyps, goal) -> "ValidityQuery":
        return ValidityQuery(tuple(hyps), goal)


@dataclass
class Verdict:
    status: str
    model: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.status == VALID

    def __bool__(self) -> bool:
        return self.valid


def apply_policy(body: Formula, store, user) -> Formula:
    """Instantiate a policy body at an output context: ``body[s := store, u := user]``."""
    for t in (store, user):
        if not isinstance(t, TERM_TYPES):
            raise LogicError(f"policy argument is not a term: {t!r}")
    if isinstance(user, (Select, Store)) or isinstance(store, (Lit, Ctor)):
        raise LogicError("sort mismatch in policy application")
    return subst(body, {POL_S: store, POL_U: user})


# ---------------------------------------------------------- congruence


def _is_value(t) -> bool:
    """Terms headed by a constructor (distinct heads denote distinct values)."""
    return isinstance(t, (Ctor, Lit)) or (isinstance(t, App) and (is_ctor_name(t.fn) or t.fn == "::"))


def _head(t):
    if isinstance(t, App):
        return ("app", t.fn)
    if isinstance(t, Select):
        return ("select",)
    if isinstance(t, Store):
        return ("store",)
    return None


def _children(t) -> tuple:
    if isinstance(t, App):
        return t.args
    if isinstance(t, Select):
        return (t.arr, t.idx)
    if isinstance(t, Store):
        return (t.arr, t.idx, t.val)
    return ()


class Congruence:
    def __init__(self):
        self.parent: dict = {}
        self.terms: list = []

    def add(self, t):
        if t in self.parent:
            return
        for c in _children(t):
            self.add(c)
        self.parent[t] = t
        self.terms.append(t)

    def find(self, t):
        p = self.parent[t]
        while p != self.parent[p]:
            self.parent[p] = self.parent[self.parent[p]]
            p = self.parent[p]
        return p

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        # keep constructor-headed terms as representatives
        if _is_value(ra) and not _is_value(rb):
            ra, rb = rb, ra
        self.parent[ra] = rb
        return True

    def close(self):
        changed = True
        while changed:
            changed = False
            sigs: dict = {}
            for t in self.terms:
                h = _head(t)
                if h is None:
                    continue
                key = (h, tuple(self.find(c) for c in _children(t)))
                other = sigs.get(key)
                if other is None:
                    sigs[key] = t
                elif self.union(t, other):
                    changed = True
            for t in self.terms:
                if not isinstance(t, App) or len(t.args) == 0:
                    continue
                if t.fn == "isJust" and len(t.args) == 1:
                    cls = self.members(t.args[0])
                    if NOTHING in cls and self.union(t, FALSE_C):
                        changed = True
                    if any(isinstance(m, App) and m.fn == "Just" for m in cls) and self.union(t, TRUE_C):
                        changed = True
                elif t.fn == "elem" and len(t.args) == 2:
                    if NIL in self.members(t.args[1]) and self.union(t, FALSE_C):
                        changed = True

    def members(self, t) -> list:
        r = self.find(t)
        return [x for x in self.terms if self.find(x) == r]

    def classes(self) -> dict:
        out: dict = {}
        for t in self.terms:
            out.setdefault(self.find(t), []).append(t)
        return out

    def values_clash(self) -> bool:
        for members in self.classes().values():
            vals = [m for m in members if _is_value(m)]
            for i, a in enumerate(vals):
                for b in vals[i + 1:]:
                    if _values_differ(a, b, self):
                        return True
        return False


def _values_differ(a, b, cc: Congruence) -> bool:
    if isinstance(a, (Ctor, Lit)) or isinstance(b, (Ctor, Lit)):
        return a != b
    if a.fn != b.fn or len(a.args) != len(b.args):
        return True
    return False


def _consistent(pos: list, negs: list, extra=()):
    cc = Congruence()
    for a, b in list(pos) + list(negs) + list(extra):
        cc.add(a)
        cc.add(b)
    cc.add(TRUE_C)
    cc.add(FALSE_C)
    for a, b in pos:
        cc.union(a, b)
    cc.close()
    if cc.values_clash():
        return None
    for a, b in negs:
        if cc.find(a) == cc.find(b):
            return None
    return cc


def _literal_value(g, cc: Congruence, negs: set):
    """Truth of a literal in the current closure: True, False or None (undetermined)."""
    if isinstance(g, BoolConst):
        return g.value
    positive = True
    if isinstance(g, Not):
        g, positive = g.arg, False
    if not isinstance(g, Eq):
        return None
    ra, rb = cc.find(g.lhs), cc.find(g.rhs)
    if ra == rb:
        return positive
    if (ra, rb) in negs or (rb, ra) in negs:
        return not positive
    if _is_value(ra) and _is_value(rb) and _values_differ(ra, rb, cc):
        return not positive
    return None


# -------------------------------------------------------------- tableau


def _nnf(f: Formula, positive: bool = True) -> Formula:
    if isinstance(f, BoolConst):
        return f if positive else BoolConst(not f.value)
    if isinstance(f, Eq):
        return f if positive else Not(f)
    if isinstance(f, Not):
        return _nnf(f.arg, not positive)
    if isinstance(f, And):
        parts = [_nnf(a, positive) for a in f.args]
        return conj(parts) if positive else disj(parts)
    if isinstance(f, Or):
        parts = [_nnf(a, positive) for a in f.args]
        return disj(parts) if positive else conj(parts)
    if isinstance(f, Implies):
        return _nnf(Or((Not(f.lhs), f.rhs)), positive)
    if isinstance(f, Iff):
        a, b = f.lhs, f.rhs
        if positive:
            return disj([conj([_nnf(a), _nnf(b)]), conj([_nnf(a, False), _nnf(b, False)])])
        return disj([conj([_nnf(a), _nnf(b, False)]), conj([_nnf(a, False), _nnf(b)])])
    if isinstance(f, KApp):
        raise LogicError(f"unsolved unknown {f.name} reached the prover")
    raise LogicError(f"unsupported formula {f!r}")


def _array_lemmas(f: Formula) -> list:
    lemmas: list = []
    seen: set = set()
    stores = {t for t in formula_terms(f) if isinstance(t, Store)}
    selects = {t for t in formula_terms(f) if isinstance(t, Select)}
    arr_terms = {t for t in formula_terms(f) if isinstance(t, Var)}
    # store terms may equal any store-sorted variable
    work = list(selects)
    rounds = 0
    while work and rounds < 6:
        rounds += 1
        new: list = []
        for sel in work:
            for st in stores:
                key = (sel, st)
                if key in seen:
                    continue
                seen.add(key)
                a, i = sel.arr, sel.idx
                if not (a == st or isinstance(a, Var)):
                    continue
                inner = Select(st.arr, i)
                body = disj([
                    conj([Eq(i, st.idx), Eq(sel, st.val)]),
                    conj([Not(Eq(i, st.idx)), Eq(sel, inner)]),
                ])
                lemmas.append(body if a == st else Implies(Eq(a, st), body))
                if inner not in selects:
                    selects.add(inner)
                    new.append(inner)
        work = new
    del arr_terms
    return lemmas


def _absorb(todo: list, pos: list, negs: list, pending: list) -> bool:
    """Move literals from ``todo`` into ``pos``/``negs`` and disjunctions into ``pending``."""
    while todo:
        g = todo.pop()
        if isinstance(g, BoolConst):
            if not g.value:
                return False
        elif isinstance(g, And):
            todo.extend(g.args)
        elif isinstance(g, Or):
            pending.append(g)
        elif isinstance(g, Eq):
            pos.append((g.lhs, g.rhs))
        elif isinstance(g, Not):
            negs.append((g.arg.lhs, g.arg.rhs))
        else:
            raise LogicError(f"unexpected node {g!r}")
    return True


def _literal_terms(f, out: list):
    if isinstance(f, (And, Or)):
        for a in f.args:
            _literal_terms(a, out)
    elif isinstance(f, Not):
        _literal_terms(f.arg, out)
    elif isinstance(f, Eq):
        out.append((f.lhs, f.rhs))


def _search(todo: list, pos: list, negs: list):
    """Satisfying closure of the conjunction of ``todo`` and the literals, or None."""
    pos, negs, pending = list(pos), list(negs), []
    if not _absorb(list(todo), pos, negs, pending):
        return None
    while True:
        extra: list = []
        for g in pending:
            _literal_terms(g, extra)
        cc = _consistent(pos, negs, extra)
        if cc is None:
            return None
        if not pending:
            return cc
        neg_reps = {(cc.find(a), cc.find(b)) for a, b in negs}
        units, left = [], []
        for g in pending:
            keep, sat = [], False
            for d in g.args:
                v = _literal_value(d, cc, neg_reps)
                if v is True:
                    sat = True
                    break
                if v is None:
                    keep.append(d)
            if sat:
                continue
            if not keep:
                return None
            if len(keep) == 1:
                units.append(keep[0])
            else:
                left.append(Or(tuple(keep)) if len(keep) != len(g.args) else g)
        pending = left
        if not units:
            break
        if not _absorb(units, pos, negs, pending):
            return None
    if not pending:
        return cc
    pending.sort(key=lambda g: len(g.args))
    first, rest = pending[0], pending[1:]
    for d in first.args:
        res = _search([d] + rest, pos, negs)
        if res is not None:
            return res
    return None


def _model(cc: Congruence) -> dict:
    model: dict = {}
    for rep, members in cc.classes().items():
        for m in members:
            if isinstance(m, Var):
                model[m.name] = rep
    return model


@lru_cache(maxsize=200_000)
def _internal(hyps: tuple, goal: Formula) -> Verdict:
    f = conj(list(hyps) + [neg(goal)])
    f = _nnf(f)
    f = conj([f] + [_nnf(lemma) for lemma in _array_lemmas(f)])
    cc = _search([f], [], [])
    if cc is None:
        return Verdict(VALID)
    return Verdict(INVALID, _model(cc))


def check_validity(q: ValidityQuery, external: Optional[str] = None) -> Verdict:
    """Decide ``hypotheses ⊨ goal``.

    With ``external`` (or ``LIFTY_SMT``) set to a solver binary the query is
    sent as SMT-LIB instead; otherwise the internal procedure is used.
    """
    solver = external if external is not None else os.environ.get("LIFTY_SMT") or None
    if solver:
        return check_external(q, solver)
    try:
        return _internal(tuple(q.hypotheses), q.goal)
    except LogicError:
        return Verdict(UNKNOWN)


def is_valid(hyps, goal) -> bool:
    """Conservative validity: Unknown counts as not valid."""
    return check_validity(ValidityQuery.of(hyps, goal)).valid


def is_sat(hyps) -> bool:
    return not is_valid(hyps, BoolConst(False))


# -------------------------------------------------------------- SMT-LIB


def _sym(name: str) -> str:
    """An SMT-LIB symbol; non-ASCII characters are spelled out as ``uXXXX``."""
    name = "".join(c if c.isascii() else f"u{ord(c):04x}" for c in name)
    safe = all(c.isalnum() or c in "_.-" for c in name) and not name[0].isdigit()
    return name if safe else "|" + name.replace("|", "_").replace("\\", "_") + "|"


def _store_sorted(terms: list, f: Formula) -> set:
    stores: set = {POL_S}
    changed = True
    eqs = [a for a in _all_eqs(f)]
    while changed:
        changed = False
        for t in terms:
            if isinstance(t, (Select, Store)) and isinstance(t.arr, Var) and t.arr.name not in stores:
                stores.add(t.arr.name)
                changed = True
        for a, b in eqs:
            sa = isinstance(a, Store) or (isinstance(a, Var) and a.name in stores)
            sb = isinstance(b, Store) or (isinstance(b, Var) and b.name in stores)
            if sa and isinstance(b, Var) and b.name not in stores:
                stores.add(b.name)
                changed = True
            if sb and isinstance(a, Var) and a.name not in stores:
                stores.add(a.name)
                changed = True
    return stores


def _is_store_term(t, stores: set) -> bool:
    return isinstance(t, Store) or (isinstance(t, Var) and t.name in stores)


def _all_eqs(f):
    if isinstance(f, Eq):
        yield (f.lhs, f.rhs)
    elif isinstance(f, Not):
        yield from _all_eqs(f.arg)
    elif isinstance(f, (And, Or)):
        for a in f.args:
            yield from _all_eqs(a)
    elif isinstance(f, (Implies, Iff)):
        yield from _all_eqs(f.lhs)
        yield from _all_eqs(f.rhs)


def _smt_term(t, names: dict) -> str:
    if isinstance(t, Var):
        return names[("var", t.name)]
    if isinstance(t, Ctor):
        return names[("ctor", t.name)]
    if isinstance(t, Lit):
        return names[("lit", t.value)]
    if isinstance(t, App):
        if not t.args:
            return names[("fn", t.fn, 0)]
        return "(" + " ".join([names[("fn", t.fn, len(t.args))]] + [_smt_term(a, names) for a in t.args]) + ")"
    if isinstance(t, Select):
        return f"(select {_smt_term(t.arr, names)} {_smt_term(t.idx, names)})"
    if isinstance(t, Store):
        return f"(store {_smt_term(t.arr, names)} {_smt_term(t.idx, names)} {_smt_term(t.val, names)})"
    raise LogicError(f"unsupported term {t!r}")


def _smt_formula(f, names: dict) -> str:
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return f"(not {_smt_formula(f.arg, names)})"
    if isinstance(f, And):
        return "(and " + " ".join(_smt_formula(a, names) for a in f.args) + ")"
    if isinstance(f, Or):
        return "(or " + " ".join(_smt_formula(a, names) for a in f.args) + ")"
    if isinstance(f, Implies):
        return f"(=> {_smt_formula(f.lhs, names)} {_smt_formula(f.rhs, names)})"
    if isinstance(f, Iff):
        return f"(= {_smt_formula(f.lhs, names)} {_smt_formula(f.rhs, names)})"
    if isinstance(f, Eq):
        return f"(= {_smt_term(f.lhs, names)} {_smt_term(f.rhs, names)})"
    raise LogicError(f"unsupported construct in SMT-LIB export: {f!r}")


def to_smtlib(q: ValidityQuery) -> str:
    """SMT-LIB v2 script asserting the hypotheses and the negated goal; ``unsat`` means valid."""
    body = conj(list(q.hypotheses) + [neg(q.goal)])
    terms: list = []
    for t in formula_terms(body):
        if t not in terms:
            terms.append(t)
    for t in (TRUE_C, FALSE_C):
        if t not in terms:
            terms.append(t)
    stores = _store_sorted(terms, body)
    names: dict = {}
    decls: list = ["(set-logic ALL)", "(declare-sort Val 0)"]
    used: set = set()

    def fresh(base: str) -> str:
        cand = _sym(base)
        k = 0
        while cand in used:
            k += 1
            cand = _sym(f"{base}_{k}")
        used.add(cand)
        return cand

    for t in terms:
        if isinstance(t, Var) and ("var", t.name) not in names:
            nm = fresh("v_" + t.name.lstrip("@"))
            names[("var", t.name)] = nm
            sort = "(Array Val Val)" if t.name in stores else "Val"
            decls.append(f"(declare-fun {nm} () {sort})")
        elif isinstance(t, Ctor) and ("ctor", t.name) not in names:
            nm = fresh("c_" + ("Nil" if t.name == "[]" else t.name))
            names[("ctor", t.name)] = nm
            decls.append(f"(declare-fun {nm} () Val)")
        elif isinstance(t, Lit) and ("lit", t.value) not in names:
            nm = fresh(f"lit_{len(names)}")
            names[("lit", t.value)] = nm
            decls.append(f"(declare-fun {nm} () Val)")
        elif isinstance(t, App) and ("fn", t.fn, len(t.args)) not in names:
            nm = fresh("f_" + ("Cons" if t.fn == "::" else t.fn))
            names[("fn", t.fn, len(t.args))] = nm
            arg_sorts = ["(Array Val Val)" if _is_store_term(a, stores) else "Val" for a in t.args]
            decls.append(f"(declare-fun {nm} ({' '.join(arg_sorts)}) Val)")
    axioms: list = []
    values = [t for t in terms if _is_value(t)]
    for i, a in enumerate(values):
        for b in values[i + 1:]:
            if isinstance(a, App) and isinstance(b, App) and a.fn == b.fn and len(a.args) == len(b.args):
                continue
            axioms.append(f"(assert (not (= {_smt_term(a, names)} {_smt_term(b, names)})))")
    for t in terms:
        if isinstance(t, App) and t.fn == "isJust" and len(t.args) == 1:
            arg = _smt_term(t.args[0], names)
            if NOTHING in terms:
                axioms.append(f"(assert (=> (= {arg} {_smt_term(NOTHING, names)}) (= {_smt_term(t, names)} {_smt_term(FALSE_C, names)})))")
            for j in terms:
                if isinstance(j, App) and j.fn == "Just":
                    axioms.append(f"(assert (=> (= {arg} {_smt_term(j, names)}) (= {_smt_term(t, names)} {_smt_term(TRUE_C, names)})))")
        if isinstance(t, App) and t.fn == "elem" and len(t.args) == 2 and NIL in terms:
            axioms.append(
                f"(assert (=> (= {_smt_term(t.args[1], names)} {_smt_term(NIL, names)}) "
                f"(= {_smt_term(t, names)} {_smt_term(FALSE_C, names)})))"
            )
    lines = decls + axioms
    for h in q.hypotheses:
        lines.append(f"(assert {_smt_formula(h, names)})")
    lines.append(f"(assert (not {_smt_formula(q.goal, names)}))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


def check_external(q: ValidityQuery, solver: str, timeout: float = 30.0) -> Verdict:
    try:
        script = to_smtlib(q)
    except LogicError:
        return Verdict(UNKNOWN)
    with tempfile.NamedTemporaryFile("w", suffix=".smt2", delete=False) as fh:
        fh.write(script)
        path = fh.name
    try:
        out = subprocess.run([solver, path], capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired):
        return Verdict(UNKNOWN)
    finally:
        os.unlink(path)
    answer = out.stdout.strip().splitlines()[:1]
    if answer == ["unsat"]:
        return Verdict(VALID)
    if answer == ["sat"]:
        return Verdict(INVALID)
    return Verdict(UNKNOWN)


def sub_formulas_terms(f):
    """All subterms of all atoms (exposed for oracles)."""
    for t in formula_terms(f):
        yield from subterms(t)


def clear_cache() -> None:
    """Forget memoized verdicts (for timing runs)."""
    _internal.cache_clear()
