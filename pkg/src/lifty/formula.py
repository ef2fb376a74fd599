"""Refinement-logic terms and formulas.

Terms denote values (variables, constructors, literals, uninterpreted
applications, array select/store over stores). Formulas are built from
equalities between terms with the usual connectives. A boolean-valued term
``t`` is used as a formula through :func:`truth`, i.e. ``t = True``.

Policy parameters and the value variable use reserved names that cannot
clash with program identifiers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Union

POL_S = "@s"
POL_U = "@u"
NU = "@v"


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self) -> str:
        return f"Var({self.name})"


@dataclass(frozen=True)
class Ctor:
    """Nullary data constructor; distinct constructors denote distinct values."""

    name: str


@dataclass(frozen=True)
class Lit:
    """String or integer literal (distinct literals are distinct values)."""

    value: Union[str, int]


@dataclass(frozen=True)
class App:
    """Application of an uninterpreted function, measure or constructor."""

    fn: str
    args: tuple


@dataclass(frozen=True)
class Select:
    arr: "Term"
    idx: "Term"


@dataclass(frozen=True)
class Store:
    arr: "Term"
    idx: "Term"
    val: "Term"


Term = Union[Var, Ctor, Lit, App, Select, Store]

TRUE_C = Ctor("True")
FALSE_C = Ctor("False")
NIL = Ctor("[]")
NOTHING = Ctor("Nothing")

# ------------------------------------------------------------- formulas


@dataclass(frozen=True)
class BoolConst:
    value: bool

    def __repr__(self) -> str:
        return "⊤" if self.value else "⊥"


TOP = BoolConst(True)
BOT = BoolConst(False)


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


@dataclass(frozen=True)
class Implies:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Iff:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Eq:
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class KApp:
    """Occurrence of an unknown predicate, under a pending substitution."""

    name: str
    subst: tuple = ()

    @property
    def mapping(self) -> dict:
        return dict(self.subst)


Formula = Union[BoolConst, Not, And, Or, Implies, Iff, Eq, KApp]

TERM_TYPES = (Var, Ctor, Lit, App, Select, Store)
FORMULA_TYPES = (BoolConst, Not, And, Or, Implies, Iff, Eq, KApp)


def is_ctor_name(name: str) -> bool:
    """Constructor-like heads: data constructors and store locations (``#field``)."""
    return name[:1].isupper() or name == "[]" or name[:1] == "#"


def location(field_name: str, args=()) -> "App":
    """Logic term for the store location of a field applied to its parameters."""
    return App("#" + field_name, tuple(args))


def truth(t: Term) -> Formula:
    if t == TRUE_C:
        return TOP
    if t == FALSE_C:
        return BOT
    return Eq(t, TRUE_C)


def conj(items: Iterable[Formula]) -> Formula:
    out: list = []
    for f in items:
        if f == TOP:
            continue
        if f == BOT:
            return BOT
        if isinstance(f, And):
            out.extend(a for a in f.args if a not in out)
        elif f not in out:
            out.append(f)
    if not out:
        return TOP
    if len(out) == 1:
        return out[0]
    return And(tuple(out))


def disj(items: Iterable[Formula]) -> Formula:
    out: list = []
    for f in items:
        if f == BOT:
            continue
        if f == TOP:
            return TOP
        if isinstance(f, Or):
            out.extend(a for a in f.args if a not in out)
        elif f not in out:
            out.append(f)
    if not out:
        return BOT
    if len(out) == 1:
        return out[0]
    return Or(tuple(out))


def neg(f: Formula) -> Formula:
    if f == TOP:
        return BOT
    if f == BOT:
        return TOP
    if isinstance(f, Not):
        return f.arg
    return Not(f)


def eq(a: Term, b: Term) -> Formula:
    if a == b:
        return TOP
    return Eq(a, b)


def conjuncts(f: Formula) -> list:
    if f == TOP:
        return []
    if isinstance(f, And):
        return list(f.args)
    return [f]


def disjuncts(f: Formula) -> list:
    if f == BOT:
        return []
    if isinstance(f, Or):
        return list(f.args)
    return [f]


# --------------------------------------------------------- traversal


def term_vars(t: Term) -> set:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, App):
        out: set = set()
        for a in t.args:
            out |= term_vars(a)
        return out
    if isinstance(t, Select):
        return term_vars(t.arr) | term_vars(t.idx)
    if isinstance(t, Store):
        return term_vars(t.arr) | term_vars(t.idx) | term_vars(t.val)
    return set()


def free_vars(f) -> set:
    """Free variable names of a term or formula (KApp substitution ranges included)."""
    if isinstance(f, TERM_TYPES):
        return term_vars(f)
    if isinstance(f, BoolConst):
        return set()
    if isinstance(f, Not):
        return free_vars(f.arg)
    if isinstance(f, (And, Or)):
        out: set = set()
        for a in f.args:
            out |= free_vars(a)
        return out
    if isinstance(f, (Implies, Iff)):
        return free_vars(f.lhs) | free_vars(f.rhs)
    if isinstance(f, Eq):
        return term_vars(f.lhs) | term_vars(f.rhs)
    if isinstance(f, KApp):
        out = set()
        for _, t in f.subst:
            out |= term_vars(t)
        return out
    raise TypeError(f"not a formula: {f!r}")


def kvars(f) -> set:
    if isinstance(f, KApp):
        return {f.name}
    if isinstance(f, Not):
        return kvars(f.arg)
    if isinstance(f, (And, Or)):
        out: set = set()
        for a in f.args:
            out |= kvars(a)
        return out
    if isinstance(f, (Implies, Iff)):
        return kvars(f.lhs) | kvars(f.rhs)
    return set()


def subst_term(t: Term, m: Mapping[str, Term]) -> Term:
    if isinstance(t, Var):
        return m.get(t.name, t)
    if isinstance(t, App):
        return App(t.fn, tuple(subst_term(a, m) for a in t.args))
    if isinstance(t, Select):
        return Select(subst_term(t.arr, m), subst_term(t.idx, m))
    if isinstance(t, Store):
        return Store(subst_term(t.arr, m), subst_term(t.idx, m), subst_term(t.val, m))
    return t


def subst(f, m: Mapping[str, Term]):
    """Simultaneous substitution of terms for variables (terms or formulas)."""
    if not m:
        return f
    if isinstance(f, TERM_TYPES):
        return subst_term(f, m)
    if isinstance(f, BoolConst):
        return f
    if isinstance(f, Not):
        return Not(subst(f.arg, m))
    if isinstance(f, And):
        return And(tuple(subst(a, m) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(subst(a, m) for a in f.args))
    if isinstance(f, Implies):
        return Implies(subst(f.lhs, m), subst(f.rhs, m))
    if isinstance(f, Iff):
        return Iff(subst(f.lhs, m), subst(f.rhs, m))
    if isinstance(f, Eq):
        return Eq(subst_term(f.lhs, m), subst_term(f.rhs, m))
    if isinstance(f, KApp):
        pending = dict(f.subst)
        out = {k: subst_term(v, m) for k, v in pending.items()}
        for k, v in m.items():
            if k not in pending:
                out[k] = v
        return KApp(f.name, tuple(sorted(out.items(), key=lambda kv: kv[0])))
    raise TypeError(f"not a formula: {f!r}")


def map_formula(f: Formula, fn) -> Formula:
    """Rebuild ``f`` bottom-up, replacing each leaf (Eq, KApp, BoolConst) by ``fn(leaf)``."""
    if isinstance(f, Not):
        return neg(map_formula(f.arg, fn))
    if isinstance(f, And):
        return conj(map_formula(a, fn) for a in f.args)
    if isinstance(f, Or):
        return disj(map_formula(a, fn) for a in f.args)
    if isinstance(f, Implies):
        return Implies(map_formula(f.lhs, fn), map_formula(f.rhs, fn))
    if isinstance(f, Iff):
        return Iff(map_formula(f.lhs, fn), map_formula(f.rhs, fn))
    return fn(f)


def atoms(f: Formula) -> list:
    """Leaf equalities of a formula, in first-occurrence order."""
    out: list = []

    def walk(g):
        if isinstance(g, Not):
            walk(g.arg)
        elif isinstance(g, (And, Or)):
            for a in g.args:
                walk(a)
        elif isinstance(g, (Implies, Iff)):
            walk(g.lhs)
            walk(g.rhs)
        elif isinstance(g, Eq) and g not in out:
            out.append(g)

    walk(f)
    return out


def subterms(t: Term):
    yield t
    if isinstance(t, App):
        for a in t.args:
            yield from subterms(a)
    elif isinstance(t, Select):
        yield from subterms(t.arr)
        yield from subterms(t.idx)
    elif isinstance(t, Store):
        yield from subterms(t.arr)
        yield from subterms(t.idx)
        yield from subterms(t.val)


def formula_terms(f: Formula):
    for a in atoms(f):
        yield from subterms(a.lhs)
        yield from subterms(a.rhs)


def simplify(f: Formula) -> Formula:
    """Cheap syntactic simplification (constant folding, flattening)."""
    if isinstance(f, Not):
        return neg(simplify(f.arg))
    if isinstance(f, And):
        return conj(simplify(a) for a in f.args)
    if isinstance(f, Or):
        return disj(simplify(a) for a in f.args)
    if isinstance(f, Implies):
        lhs, rhs = simplify(f.lhs), simplify(f.rhs)
        if lhs == TOP:
            return rhs
        if lhs == BOT or rhs == TOP:
            return TOP
        if rhs == BOT:
            return neg(lhs)
        return Implies(lhs, rhs)
    if isinstance(f, Iff):
        lhs, rhs = simplify(f.lhs), simplify(f.rhs)
        if lhs == TOP:
            return rhs
        if rhs == TOP:
            return lhs
        if lhs == BOT:
            return neg(rhs)
        if rhs == BOT:
            return neg(lhs)
        if lhs == rhs:
            return TOP
        return Iff(lhs, rhs)
    if isinstance(f, Eq):
        if f.lhs == f.rhs:
            return TOP
        if _distinct_values(f.lhs, f.rhs):
            return BOT
        return f
    return f


def _distinct_values(a: Term, b: Term) -> bool:
    return isinstance(a, (Ctor, Lit)) and isinstance(b, (Ctor, Lit)) and a != b


# ------------------------------------------------------------ printing


def show_term(t: Term) -> str:
    if isinstance(t, Var):
        return {POL_S: "s", POL_U: "u", NU: "_v"}.get(t.name, t.name)
    if isinstance(t, Ctor):
        return {"True": "true", "False": "false"}.get(t.name, t.name)
    if isinstance(t, Lit):
        return f'"{t.value}"' if isinstance(t.value, str) else str(t.value)
    if isinstance(t, App):
        fn = t.fn.lstrip("#")
        if not t.args:
            return fn
        return "(" + " ".join([fn] + [show_term(a) for a in t.args]) + ")"
    if isinstance(t, Select):
        idx = show_term(t.idx)
        if idx.startswith("(") and idx.endswith(")"):
            idx = idx[1:-1]
        return f"{show_term(t.arr)}[{idx}]"
    if isinstance(t, Store):
        return f"{show_term(t.arr)}[{show_term(t.idx)} := {show_term(t.val)}]"
    raise TypeError(t)


def show(f) -> str:
    """Concrete syntax for formulas, as accepted inside policy annotations."""
    if isinstance(f, TERM_TYPES):
        return show_term(f)
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return f"!{_paren(f.arg)}"
    if isinstance(f, And):
        return " && ".join(_paren(a) for a in f.args)
    if isinstance(f, Or):
        return " || ".join(_paren(a) for a in f.args)
    if isinstance(f, Implies):
        return f"{_paren(f.lhs)} ==> {_paren(f.rhs)}"
    if isinstance(f, Iff):
        return f"{_paren(f.lhs)} <==> {_paren(f.rhs)}"
    if isinstance(f, Eq):
        if f.rhs == TRUE_C:
            s = show_term(f.lhs)
            if isinstance(f.lhs, App) and f.lhs.fn == "elem" and len(f.lhs.args) == 2:
                return f"{show_term(f.lhs.args[0])} in {show_term(f.lhs.args[1])}"
            if s.startswith("(") and s.endswith(")"):
                return s[1:-1]
            return s
        return f"{show_term(f.lhs)} == {show_term(f.rhs)}"
    if isinstance(f, KApp):
        if not f.subst:
            return f.name
        inner = ", ".join(f"{show_term(Var(k))}:={show_term(v)}" for k, v in f.subst)
        return f"{f.name}[{inner}]"
    raise TypeError(f)


def _paren(f) -> str:
    s = show(f)
    if isinstance(f, (And, Or, Implies, Iff)):
        return f"({s})"
    return s
