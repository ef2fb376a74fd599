"""Abstract syntax of the core language: terms, statements, types, signatures."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .formula import Formula, TOP

Pos = Optional[tuple]  # (line, column)


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Const:
    """Named constant: data constructor, field, prelude or top-level function."""

    name: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Lit:
    """Integer or string literal."""

    value: Union[int, str]
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Lambda:
    binder: str
    body: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class App:
    fn: "Term"
    arg: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class If:
    cond: "Term"
    then: "Term"
    els: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Get:
    ref: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Bind:
    tagged: "Term"
    cont: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Downgrade:
    inner: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Cast:
    """Synthesis hole: ``inner`` has type ``actual`` but ``expected`` is required."""

    actual: "Ty"
    expected: "Ty"
    inner: "Term"
    pos: Pos = field(default=None, compare=False, repr=False)


Term = Union[Const, Lit, Var, Lambda, App, If, Get, Bind, Downgrade, Cast]
TERM_NODES = (Const, Lit, Var, Lambda, App, If, Get, Bind, Downgrade, Cast)


@dataclass(frozen=True)
class Do:
    """Surface do-block: ``items`` are (binder or None, term); the last has no binder."""

    items: tuple
    pos: Pos = field(default=None, compare=False, repr=False)


# ----------------------------------------------------------- statements


@dataclass(frozen=True)
class Skip:
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Let:
    binder: str
    term: Term
    rest: "Stmt"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Set:
    ref: str
    val: str
    rest: "Stmt"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Print:
    user: str
    msg: str
    rest: "Stmt"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class PrintAll:
    """Print one message to every user in a (tagged) list of viewers."""

    users: str
    msg: str
    rest: "Stmt"
    pos: Pos = field(default=None, compare=False, repr=False)


Stmt = Union[Skip, Let, Set, Print, PrintAll]
STMT_NODES = (Skip, Let, Set, Print, PrintAll)


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class TBase:
    """Refined base type ``{name args | ref}``; ``ref`` ranges over the value variable."""

    name: str
    args: tuple = ()
    ref: Formula = TOP


@dataclass(frozen=True)
class TTagged:
    inner: "Ty"
    policy: Formula  # body over the reserved policy parameters, or an unknown


@dataclass(frozen=True)
class TRef:
    inner: "Ty"


@dataclass(frozen=True)
class TFun:
    binder: str
    arg: "Ty"
    ret: "Ty"


@dataclass(frozen=True)
class TVar:
    name: str


@dataclass(frozen=True)
class Scheme:
    tvars: tuple
    pvars: tuple
    body: "Ty"


Ty = Union[TBase, TTagged, TRef, TFun, TVar]


def strip_refinements(t: Ty) -> Ty:
    if isinstance(t, TBase):
        return TBase(t.name, tuple(strip_refinements(a) for a in t.args), TOP)
    if isinstance(t, TTagged):
        return TTagged(strip_refinements(t.inner), t.policy)
    if isinstance(t, TRef):
        return TRef(strip_refinements(t.inner))
    if isinstance(t, TFun):
        return TFun(t.binder, strip_refinements(t.arg), strip_refinements(t.ret))
    return t


@dataclass(frozen=True)
class ConstSig:
    name: str
    scheme: Scheme
    params: tuple = ()  # parameter names of a field signature
    is_location: bool = False
    is_field: bool = False
    is_redaction: bool = False


@dataclass
class FunDef:
    name: str
    params: tuple
    body: Union[Term, Stmt]
    signature: Optional[Scheme] = None
    pos: Pos = None

    @property
    def is_statement(self) -> bool:
        return isinstance(self.body, STMT_NODES)


@dataclass
class Program:
    functions: list = field(default_factory=list)
    signatures: dict = field(default_factory=dict)

    def function(self, name: str) -> FunDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def entries(self) -> list:
        return [f.name for f in self.functions]


# ------------------------------------------------------- generic walks


def children(t) -> tuple:
    if isinstance(t, Lambda):
        return (t.body,)
    if isinstance(t, App):
        return (t.fn, t.arg)
    if isinstance(t, If):
        return (t.cond, t.then, t.els)
    if isinstance(t, (Get, Downgrade, Cast)):
        return (t.inner if not isinstance(t, Get) else t.ref,)
    if isinstance(t, Bind):
        return (t.tagged, t.cont)
    if isinstance(t, Let):
        return (t.term, t.rest)
    if isinstance(t, (Set, Print, PrintAll)):
        return (t.rest,)
    return ()


def with_children(t, kids: tuple):
    """Rebuild ``t`` with new children (in the order of ``children``)."""
    if isinstance(t, Lambda):
        return replace(t, body=kids[0])
    if isinstance(t, App):
        return replace(t, fn=kids[0], arg=kids[1])
    if isinstance(t, If):
        return replace(t, cond=kids[0], then=kids[1], els=kids[2])
    if isinstance(t, Get):
        return replace(t, ref=kids[0])
    if isinstance(t, (Downgrade, Cast)):
        return replace(t, inner=kids[0])
    if isinstance(t, Bind):
        return replace(t, tagged=kids[0], cont=kids[1])
    if isinstance(t, Let):
        return replace(t, term=kids[0], rest=kids[1])
    if isinstance(t, (Set, Print, PrintAll)):
        return replace(t, rest=kids[0])
    return t


def at_path(t, path: tuple):
    for i in path:
        t = children(t)[i]
    return t


def replace_at(t, path: tuple, new):
    if not path:
        return new
    kids = list(children(t))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(t, tuple(kids))


def size(t) -> int:
    """Number of AST nodes."""
    return 1 + sum(size(c) for c in children(t))


def subterms(t):
    yield t
    for c in children(t):
        yield from subterms(c)


def free_vars(t) -> set:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Lambda):
        return free_vars(t.body) - {t.binder}
    if isinstance(t, Do):
        out: set = set()
        bound: set = set()
        for b, e in t.items:
            out |= free_vars(e) - bound
            if b:
                bound.add(b)
        return out
    if isinstance(t, Let):
        return free_vars(t.term) | (free_vars(t.rest) - {t.binder})
    if isinstance(t, Set):
        return {t.ref, t.val} | free_vars(t.rest)
    if isinstance(t, Print):
        return {t.user, t.msg} | free_vars(t.rest)
    if isinstance(t, PrintAll):
        return {t.users, t.msg} | free_vars(t.rest)
    out = set()
    for c in children(t):
        out |= free_vars(c)
    return out


def binders(t) -> list:
    out = []
    for n in subterms(t):
        if isinstance(n, (Lambda, Let)):
            out.append(n.binder)
    return out


_fresh_counter = itertools.count()


def fresh_name(base: str, avoid) -> str:
    base = base.rstrip("0123456789'") or "x"
    for k in itertools.count(1):
        cand = f"{base}{k}"
        if cand not in avoid:
            return cand
    raise AssertionError


def substitute(t, binding: dict):
    """Capture-avoiding simultaneous substitution of terms for free variables."""
    if not binding:
        return t
    if isinstance(t, Var):
        return binding.get(t.name, t)
    if isinstance(t, (Const, Lit, Skip)):
        return t
    if isinstance(t, Lambda):
        inner = {k: v for k, v in binding.items() if k != t.binder}
        if not inner:
            return t
        captured = set()
        for v in inner.values():
            captured |= free_vars(v)
        binder, body = t.binder, t.body
        if binder in captured:
            new = fresh_name(binder, captured | free_vars(body) | set(inner))
            body = substitute(body, {binder: Var(new)})
            binder = new
        return Lambda(binder, substitute(body, inner), t.pos)
    if isinstance(t, App):
        return App(substitute(t.fn, binding), substitute(t.arg, binding), t.pos)
    if isinstance(t, If):
        return If(substitute(t.cond, binding), substitute(t.then, binding), substitute(t.els, binding), t.pos)
    if isinstance(t, Get):
        return Get(substitute(t.ref, binding), t.pos)
    if isinstance(t, Bind):
        return Bind(substitute(t.tagged, binding), substitute(t.cont, binding), t.pos)
    if isinstance(t, Downgrade):
        return Downgrade(substitute(t.inner, binding), t.pos)
    if isinstance(t, Cast):
        return Cast(t.actual, t.expected, substitute(t.inner, binding), t.pos)
    if isinstance(t, Let):
        term = substitute(t.term, binding)
        inner = {k: v for k, v in binding.items() if k != t.binder}
        binder, rest = t.binder, t.rest
        captured = set()
        for v in inner.values():
            captured |= free_vars(v)
        if binder in captured:
            new = fresh_name(binder, captured | free_vars(rest) | set(inner))
            rest = rename_free(rest, {binder: new})
            binder = new
        return Let(binder, term, substitute(rest, inner), t.pos)
    if isinstance(t, (Set, Print, PrintAll)):
        a, b = _stmt_args(t)
        a, b = _subst_name(a, binding), _subst_name(b, binding)
        return _with_args(t, a, b, substitute(t.rest, binding))
    raise TypeError(f"cannot substitute into {t!r}")


def _stmt_args(t):
    if isinstance(t, Set):
        return t.ref, t.val
    if isinstance(t, Print):
        return t.user, t.msg
    return t.users, t.msg


def _with_args(t, a, b, rest):
    if isinstance(t, Set):
        return Set(a, b, rest, t.pos)
    if isinstance(t, Print):
        return Print(a, b, rest, t.pos)
    return PrintAll(a, b, rest, t.pos)


def _subst_name(name: str, binding: dict) -> str:
    if name in binding:
        v = binding[name]
        if not isinstance(v, Var):
            raise ValueError("statement arguments must remain variables")
        return v.name
    return name


def rename_free(t, renaming: dict):
    return substitute(t, {k: Var(v) for k, v in renaming.items()})


def alpha_equiv(a, b, symmetric: tuple = ()) -> bool:
    """Equality up to consistent renaming of bound variables.

    Binary operators named in ``symmetric`` may also match with swapped operands.
    """
    return _alpha(a, b, {}, {}, frozenset(symmetric))


def _binop(t):
    if isinstance(t, App) and isinstance(t.fn, App) and isinstance(t.fn.fn, Const):
        return t.fn.fn.name, t.fn.arg, t.arg
    return None


def _alpha(a, b, ma: dict, mb: dict, sym=frozenset()) -> bool:
    if type(a) is not type(b):
        return False
    if sym and isinstance(a, App):
        oa, ob = _binop(a), _binop(b)
        if oa and ob and oa[0] == ob[0] and oa[0] in sym:
            return (_alpha(oa[1], ob[1], ma, mb, sym) and _alpha(oa[2], ob[2], ma, mb, sym)) or (
                _alpha(oa[1], ob[2], ma, mb, sym) and _alpha(oa[2], ob[1], ma, mb, sym))
    if isinstance(a, Var):
        if a.name in ma or b.name in mb:
            return ma.get(a.name) == b.name and mb.get(b.name) == a.name
        return a.name == b.name
    if isinstance(a, (Const, Lit)):
        return a == b
    if isinstance(a, Skip):
        return True
    if isinstance(a, Lambda):
        return _alpha(a.body, b.body, {**ma, a.binder: b.binder}, {**mb, b.binder: a.binder}, sym)
    if isinstance(a, Let):
        return _alpha(a.term, b.term, ma, mb, sym) and _alpha(
            a.rest, b.rest, {**ma, a.binder: b.binder}, {**mb, b.binder: a.binder}, sym
        )
    if isinstance(a, (Set, Print, PrintAll)):
        for x, y in zip(_stmt_args(a), _stmt_args(b)):
            if not _alpha(Var(x), Var(y), ma, mb):
                return False
        return _alpha(a.rest, b.rest, ma, mb, sym)
    if isinstance(a, Cast):
        if a.actual != b.actual or a.expected != b.expected:
            return False
    ca, cb = children(a), children(b)
    return len(ca) == len(cb) and all(_alpha(x, y, ma, mb, sym) for x, y in zip(ca, cb))


def uniquify(t, taken: Optional[set] = None):
    """Alpha-rename so that every binder is distinct from every other name."""
    taken = set(taken or ()) | free_vars(t)
    return _uniq(t, taken)


def _claim(name: str, taken: set) -> str:
    if name not in taken:
        taken.add(name)
        return name
    new = fresh_name(name, taken)
    taken.add(new)
    return new


def _uniq(t, taken: set):
    if isinstance(t, Lambda):
        b = _claim(t.binder, taken)
        body = t.body if b == t.binder else rename_free(t.body, {t.binder: b})
        return Lambda(b, _uniq(body, taken), t.pos)
    if isinstance(t, Let):
        term = _uniq(t.term, taken)
        b = _claim(t.binder, taken)
        rest = t.rest if b == t.binder else rename_free(t.rest, {t.binder: b})
        return Let(b, term, _uniq(rest, taken), t.pos)
    if isinstance(t, App):
        return App(_uniq(t.fn, taken), _uniq(t.arg, taken), t.pos)
    if isinstance(t, If):
        return If(_uniq(t.cond, taken), _uniq(t.then, taken), _uniq(t.els, taken), t.pos)
    if isinstance(t, Get):
        return Get(_uniq(t.ref, taken), t.pos)
    if isinstance(t, Bind):
        return Bind(_uniq(t.tagged, taken), _uniq(t.cont, taken), t.pos)
    if isinstance(t, Downgrade):
        return Downgrade(_uniq(t.inner, taken), t.pos)
    if isinstance(t, Cast):
        return Cast(t.actual, t.expected, _uniq(t.inner, taken), t.pos)
    if isinstance(t, (Set, Print, PrintAll)):
        a, b = _stmt_args(t)
        return _with_args(t, a, b, _uniq(t.rest, taken))
    return t


# ------------------------------------------------------- do-notation


def desugar_do(t):
    """Rewrite surface do-blocks into nested binds, recursively."""
    if isinstance(t, Do):
        if not t.items:
            raise SyntaxError("empty do-block")
        items = list(t.items)
        if items[-1][0] is not None:
            raise SyntaxError("do-block ends with a bind")
        result = desugar_do(items[-1][1])
        for binder, e in reversed(items[:-1]):
            result = Bind(desugar_do(e), Lambda(binder or "_", result), e.pos)
        return result
    if isinstance(t, Lambda):
        return replace(t, body=desugar_do(t.body))
    if isinstance(t, App):
        return replace(t, fn=desugar_do(t.fn), arg=desugar_do(t.arg))
    if isinstance(t, If):
        return replace(t, cond=desugar_do(t.cond), then=desugar_do(t.then), els=desugar_do(t.els))
    if isinstance(t, Get):
        return replace(t, ref=desugar_do(t.ref))
    if isinstance(t, Bind):
        return replace(t, tagged=desugar_do(t.tagged), cont=desugar_do(t.cont))
    if isinstance(t, Downgrade):
        return replace(t, inner=desugar_do(t.inner))
    if isinstance(t, Cast):
        return replace(t, inner=desugar_do(t.inner))
    if isinstance(t, Let):
        return replace(t, term=desugar_do(t.term), rest=desugar_do(t.rest))
    if isinstance(t, (Set, Print, PrintAll)):
        return replace(t, rest=desugar_do(t.rest))
    return t


def resugar(t):
    """Inverse of :func:`desugar_do`: chains of binds become do-blocks."""
    if isinstance(t, Bind) and isinstance(t.cont, Lambda):
        items = []
        cur = t
        while isinstance(cur, Bind) and isinstance(cur.cont, Lambda):
            items.append((cur.cont.binder, resugar(cur.tagged)))
            cur = cur.cont.body
        items.append((None, resugar(cur)))
        return Do(tuple(items), t.pos)
    if isinstance(t, Lambda):
        return replace(t, body=resugar(t.body))
    if isinstance(t, App):
        return replace(t, fn=resugar(t.fn), arg=resugar(t.arg))
    if isinstance(t, If):
        return replace(t, cond=resugar(t.cond), then=resugar(t.then), els=resugar(t.els))
    if isinstance(t, Get):
        return replace(t, ref=resugar(t.ref))
    if isinstance(t, Bind):
        return replace(t, tagged=resugar(t.tagged), cont=resugar(t.cont))
    if isinstance(t, Downgrade):
        return replace(t, inner=resugar(t.inner))
    if isinstance(t, Let):
        return replace(t, term=resugar(t.term), rest=resugar(t.rest))
    if isinstance(t, (Set, Print, PrintAll)):
        return replace(t, rest=resugar(t.rest))
    return t


def has_cast(t) -> bool:
    return any(isinstance(n, Cast) for n in subterms(t))


def app_spine(t) -> tuple:
    """Split ``f a1 .. an`` into ``(f, [a1, .., an])``."""
    args = []
    while isinstance(t, App):
        args.append(t.arg)
        t = t.fn
    return t, args[::-1]


def apps(fn, *args):
    for a in args:
        fn = App(fn, a)
    return fn
