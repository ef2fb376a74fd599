"""Bidirectional constraint generation for λL.

Checking a function body produces a :class:`HornSystem` whose unknowns are
the policies of bind, print and downgrade sites.  Functional (non-policy)
mismatches are reported immediately as :class:`LiftyTypeError`.
"""
from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

from . import ast as A
from . import formula as F
from . import prelude
from .horn import HornClause, HornSystem, Origin, PolicyVar, Qualifier
from .parser import PolicyModule

NU = F.Var(F.NU)
S = F.Var(F.POL_S)
U = F.Var(F.POL_U)
STORE0 = "σ"


class LiftyTypeError(Exception):
    """A typing failure unrelated to information flow."""

    def __init__(self, msg: str, pos=None, rule: str = "", expected=None, actual=None, function: str = ""):
        super().__init__(msg)
        self.msg = msg
        self.pos = pos
        self.rule = rule
        self.expected = expected
        self.actual = actual
        self.function = function

    def to_json(self) -> dict:
        from .pretty import pretty_type

        def show(t):
            if t is None:
                return None
            return t if isinstance(t, str) else pretty_type(t)

        return {
            "function": self.function,
            "span": f"{self.pos[0]}:{self.pos[1]}" if self.pos else None,
            "rule": self.rule,
            "message": self.msg,
            "expected": show(self.expected),
            "actual": show(self.actual),
        }

    def __str__(self):
        where = f"{self.pos[0]}:{self.pos[1]}: " if self.pos else ""
        return where + self.msg


@dataclass(frozen=True)
class Env:
    vars: tuple = ()  # ((name, type), ...) innermost last
    paths: tuple = ()  # path conditions
    store: str = STORE0
    stores: tuple = (STORE0,)

    def lookup(self, name: str):
        for n, t in reversed(self.vars):
            if n == name:
                return t
        return None

    def bind(self, name: str, ty) -> "Env":
        return Env(self.vars + ((name, ty),), self.paths, self.store, self.stores)

    def assume(self, f) -> "Env":
        if f == F.TOP:
            return self
        return Env(self.vars, self.paths + (f,), self.store, self.stores)

    def with_store(self, name: str) -> "Env":
        return Env(self.vars, self.paths, name, self.stores + (name,))

    def names(self) -> tuple:
        return tuple(n for n, _ in self.vars)


# ----------------------------------------------------------- type helpers


def ty_subst(t, m: dict):
    """Substitute logic terms for program variables inside refinements and policies."""
    if not m:
        return t
    if isinstance(t, A.TBase):
        inner = {k: v for k, v in m.items() if k != F.NU}
        return A.TBase(t.name, tuple(ty_subst(a, m) for a in t.args), F.subst(t.ref, inner))
    if isinstance(t, A.TTagged):
        inner = {k: v for k, v in m.items() if k not in (F.POL_S, F.POL_U)}
        return A.TTagged(ty_subst(t.inner, m), F.subst(t.policy, inner))
    if isinstance(t, A.TRef):
        return A.TRef(ty_subst(t.inner, m))
    if isinstance(t, A.TFun):
        rest = {k: v for k, v in m.items() if k != t.binder}
        return A.TFun(t.binder, ty_subst(t.arg, m), ty_subst(t.ret, rest))
    return t


def map_policies(t, fn):
    """Rebuild ``t`` applying ``fn`` to each tagged policy (outermost first)."""
    if isinstance(t, A.TTagged):
        return A.TTagged(map_policies(t.inner, fn), fn(t.policy))
    if isinstance(t, A.TBase):
        return A.TBase(t.name, tuple(map_policies(a, fn) for a in t.args), t.ref)
    if isinstance(t, A.TRef):
        return A.TRef(map_policies(t.inner, fn))
    if isinstance(t, A.TFun):
        return A.TFun(t.binder, map_policies(t.arg, fn), map_policies(t.ret, fn))
    return t


def strengthen(t, f):
    """Conjoin ``f`` (over ν) to the content refinement of ``t``."""
    if f == F.TOP:
        return t
    if isinstance(t, A.TTagged):
        return A.TTagged(strengthen(t.inner, f), t.policy)
    if isinstance(t, A.TBase):
        return A.TBase(t.name, t.args, F.conj([t.ref, f]))
    return t


def at_store(t, store: str):
    """Instantiate the store parameter in the refinements (not the policies) of a field's content."""
    if isinstance(t, A.TBase):
        ref = t.ref if F.POL_S not in F.free_vars(t.ref) else F.subst(t.ref, {F.POL_S: F.Var(store)})
        return A.TBase(t.name, tuple(at_store(a, store) for a in t.args), ref)
    if isinstance(t, A.TTagged):
        return A.TTagged(at_store(t.inner, store), t.policy)
    return t


def content(t):
    """The value type under an outer tag, and the tag's policy (⊤ for untagged)."""
    if isinstance(t, A.TTagged):
        return t.inner, t.policy
    return t, F.TOP


def base_sort(t) -> Optional[str]:
    t, _ = content(t)
    if isinstance(t, A.TBase):
        return t.name
    return None


def with_ref(t, ref):
    if isinstance(t, A.TBase):
        return A.TBase(t.name, t.args, ref)
    return t


def shape(t) -> str:
    if isinstance(t, A.TTagged):
        return f"Tagged({shape(t.inner)})"
    if isinstance(t, A.TBase):
        return t.name + "".join(f" ({shape(a)})" for a in t.args)
    if isinstance(t, A.TRef):
        return f"Ref({shape(t.inner)})"
    if isinstance(t, A.TFun):
        return f"{shape(t.arg)} -> {shape(t.ret)}"
    if isinstance(t, A.TVar):
        return t.name
    return repr(t)


ALIASES = {"String": "Str", "Password": "Str", "Boolean": "Bool"}


def canon(name: str) -> str:
    return ALIASES.get(name, name)


# ---------------------------------------------------------------- checker


def _child_paths(t, path: tuple) -> list:
    return [path + (i,) for i in range(len(A.children(t)))]


def _spine_paths(t, path: tuple):
    """Paths of the head and arguments of an application spine."""
    arg_paths = []
    while isinstance(t, A.App):
        arg_paths.append(path + (1,))
        path = path + (0,)
        t = t.fn
    return path, list(reversed(arg_paths))


class Checker:
    """Generates the Horn system of one function."""

    def __init__(self, module: Optional[PolicyModule], program: Optional[A.Program], fn: A.FunDef):
        self.module = module or PolicyModule()
        self.program = program or A.Program()
        self.fn = fn
        self.sys = HornSystem()
        self.tv: dict = {}
        self.var_types: dict = {}
        self.aliases: dict = {}
        self.counter = itertools.count(1)
        self.site_names: dict = {}
        self.cast_envs: dict = {}  # cast path -> environment at the cast

    # ---- names

    def fresh_tvar(self) -> A.TVar:
        return A.TVar(f"'t{next(self.counter)}")

    def fresh_name(self, base: str) -> str:
        return f"{base}#{next(self.counter)}"

    def fresh_k(self, env: Env, origin: Origin, kind: str = "policy") -> F.KApp:
        line = origin.pos[0] if origin.pos else 0
        prefix = "κ" if kind == "policy" else "r"
        k = self.site_names.get((prefix, line), 0)
        self.site_names[(prefix, line)] = k + 1
        name = f"{prefix}{line}" + ("" if k == 0 else "abcdefghijklmnopqrstuvwxyz"[(k - 1) % 26] * (1 + (k - 1) // 26))
        scope = tuple(n for n in env.names()) + tuple(env.stores)
        self.sys.kvars[name] = PolicyVar(name, scope, origin, kind)
        return F.KApp(name)

    def origin(self, t, path, rule: str) -> Origin:
        return Origin(path, t, rule, getattr(t, "pos", None) or self.fn.pos)

    def error(self, msg, t=None, rule="", expected=None, actual=None):
        pos = getattr(t, "pos", None) if t is not None else None
        return LiftyTypeError(msg, pos or self.fn.pos, rule, expected, actual, self.fn.name)

    # ---- unification variables

    def resolve(self, t):
        if isinstance(t, A.TVar):
            if t.name in self.tv:
                return self.resolve(self.tv[t.name])
            return t
        if isinstance(t, A.TBase):
            return A.TBase(canon(t.name), tuple(self.resolve(a) for a in t.args), t.ref)
        if isinstance(t, A.TTagged):
            return A.TTagged(self.resolve(t.inner), t.policy)
        if isinstance(t, A.TRef):
            return A.TRef(self.resolve(t.inner))
        if isinstance(t, A.TFun):
            return A.TFun(t.binder, self.resolve(t.arg), self.resolve(t.ret))
        return t

    def shallow(self, t):
        while isinstance(t, A.TVar) and t.name in self.tv:
            t = self.tv[t.name]
        return t

    def root_tvar(self, t) -> Optional[str]:
        """The last unification variable in a binding chain, if ``t`` is one."""
        name = None
        while isinstance(t, A.TVar):
            name = t.name
            if name not in self.tv:
                break
            t = self.tv[name]
        return name

    def template(self, env: Env, t, origin: Origin, keep_ref: bool = False):
        """Same shape as ``t`` with every tag policy replaced by a fresh unknown."""
        t = self.resolve(t)
        if isinstance(t, A.TTagged):
            return A.TTagged(self.template(env, t.inner, origin, keep_ref), self.fresh_k(env, origin))
        if isinstance(t, A.TBase):
            args = tuple(self.template(env, a, origin, keep_ref) for a in t.args)
            return A.TBase(t.name, args, t.ref if keep_ref else F.TOP)
        if isinstance(t, A.TFun):
            return A.TFun(t.binder, self.template(env, t.arg, origin), self.template(env, t.ret, origin))
        return t

    def erase(self, t):
        """Shape of ``t`` with the outer tag removed and refinements dropped."""
        t = self.resolve(t)
        if isinstance(t, A.TTagged):
            t = t.inner
        return A.strip_refinements(t)

    def instantiate(self, env: Env, scheme: A.Scheme, origin: Origin):
        tm = {v: self.fresh_tvar() for v in scheme.tvars}
        pm = {v: self.fresh_k(env, origin) for v in scheme.pvars}

        def go(t):
            if isinstance(t, A.TVar):
                return tm.get(t.name, t)
            if isinstance(t, A.TBase):
                return A.TBase(t.name, tuple(go(a) for a in t.args), t.ref)
            if isinstance(t, A.TTagged):
                pol = t.policy
                if isinstance(pol, F.KApp) and pol.name in pm:
                    pol = pm[pol.name]
                return A.TTagged(go(t.inner), pol)
            if isinstance(t, A.TRef):
                return A.TRef(go(t.inner))
            if isinstance(t, A.TFun):
                return A.TFun(t.binder, go(t.arg), go(t.ret))
            return t

        return go(scheme.body)

    # ---- clauses

    def clause(self, env: Env, hyps, head, origin: Origin, kind: str = "flow"):
        hyps = [c for h in hyps for c in F.conjuncts(h) if c != F.TOP]
        for h in F.conjuncts(head):
            extra = []
            while isinstance(h, F.Implies):
                extra.append(h.lhs)
                h = h.rhs
            if isinstance(h, F.And):
                self.clause(env, hyps + extra, h, origin, kind)
                continue
            k = "flow" if (kind == "flow" or F.kvars(h)) else "refine"
            c = HornClause(tuple(env.paths) + tuple(hyps) + tuple(extra), h, origin, k)
            if not c.is_trivial():
                self.sys.clauses.append(c)

    def source(self, origin: Origin, sup, actual):
        """Remember the expected type at a term whose policy is concrete (a blame candidate)."""
        if origin.path not in self.sys.sources:
            self.sys.sources[origin.path] = (origin, sup, actual)

    # ---- subtyping

    def subtype(self, env: Env, sub, sup, origin: Origin, hyps=()):
        orig_sub, orig_sup = sub, sup
        sub = self.resolve(sub)
        sup = self.resolve(sup)
        if isinstance(sup, A.TVar):
            if isinstance(sub, A.TVar):
                if sub.name != sup.name:
                    self.tv[sup.name] = sub
                return
            self.tv[sup.name] = self.template(env, sub, origin)
            sup = self.resolve(sup)
        if isinstance(sub, A.TVar):
            if isinstance(sup, A.TTagged) and F.kvars(sup.policy):
                # keep the flow: the unknown value is tagged at least as strictly
                self.tv[sub.name] = self.template(env, sup, origin)
            else:
                self.tv[sub.name] = self.erase(sup)
            sub = self.resolve(sub)
        if isinstance(sup, A.TTagged):
            if isinstance(sub, A.TTagged):
                if not F.kvars(sub.policy) and sub.policy != F.TOP:
                    self.source(origin, sup, sub)
                self.clause(env, list(hyps) + [sup.policy], sub.policy, origin)
                self.subtype(env, sub.inner, sup.inner, origin, hyps)
            else:
                self.subtype(env, sub, sup.inner, origin, hyps)
            return
        if isinstance(sub, A.TTagged):
            root = self.root_tvar(orig_sup)
            if root is not None and isinstance(sup, A.TBase):
                # a type variable first met an untagged value; widen it to a tagged one
                self.tv[root] = A.TTagged(A.strip_refinements(sup), self.fresh_k(env, origin))
                self.subtype(env, sub, orig_sup, origin, hyps)
                return
            raise self.error("a tagged value is used where an untagged one is expected", origin.term,
                             "<:-Tag", sup, sub)
        if isinstance(sub, A.TBase) and isinstance(sup, A.TBase):
            if sub.name != sup.name or len(sub.args) != len(sup.args):
                raise self.error(f"type mismatch: expected {shape(sup)}, found {shape(sub)}", origin.term,
                                 "<:-Sc", sup, sub)
            for a, b in zip(sub.args, sup.args):
                self.subtype(env, a, b, origin, hyps)
            if sup.ref != F.TOP:
                self.clause(env, list(hyps) + [sub.ref], sup.ref, origin, "refine")
            return
        if isinstance(sub, A.TFun) and isinstance(sup, A.TFun):
            # keep unification variables in argument/result positions unresolved
            sub, sup = self.shallow(orig_sub), self.shallow(orig_sup)
            self.subtype(env, sup.arg, sub.arg, origin, hyps)
            x = sup.binder
            ret = ty_subst(sub.ret, {sub.binder: F.Var(x)}) if sub.binder != x else sub.ret
            arg_fact = self.fact_of(x, sup.arg)
            self.subtype(env.bind(x, sup.arg), ret, sup.ret, origin, tuple(hyps) + ((arg_fact,) if arg_fact != F.TOP else ()))
            return
        if isinstance(sub, A.TRef) and isinstance(sup, A.TRef):
            self.subtype(env, sub.inner, sup.inner, origin, hyps)
            return
        raise self.error(f"type mismatch: expected {shape(sup)}, found {shape(sub)}", origin.term, "<:", sup, sub)

    def fact_of(self, x: str, t):
        t = self.resolve(t)
        inner, _ = content(t)
        if isinstance(inner, A.TBase) and inner.ref != F.TOP:
            return F.subst(inner.ref, {F.NU: F.Var(x)})
        return F.TOP

    def declare(self, x: str, t):
        """Record a binder's type and its refinement as a global fact."""
        self.var_types[x] = t
        f = self.fact_of(x, t)
        if f != F.TOP:
            self.sys.facts.append(f)

    # ---- logic embedding of program terms

    def embed(self, env: Env, t):
        """Logic term denoting the value of ``t``, or None if it has none."""
        if isinstance(t, A.Var):
            return self.aliases.get(t.name, F.Var(t.name))
        if isinstance(t, A.Lit):
            return F.Lit(t.value)
        if isinstance(t, A.Const):
            name = t.name
            if name == "True":
                return F.TRUE_C
            if name == "False":
                return F.FALSE_C
            if name in ("[]", "Nothing"):
                return F.Ctor(name)
            sig = self.module.fields.get(name)
            if sig is not None and not sig.params:
                return F.location(name)
            if name in self.module.ctor_types or name[:1].isupper():
                return F.Ctor(name)
            return None
        if isinstance(t, A.App):
            fn, args = A.app_spine(t)
            if not isinstance(fn, A.Const):
                return None
            parts = [self.embed(env, a) for a in args]
            if any(p is None for p in parts):
                return None
            sig = self.module.fields.get(fn.name)
            if sig is not None:
                if len(sig.params) == len(args):
                    return F.location(fn.name, parts)
                return None
            if fn.name in prelude.MEASURES or fn.name in ("Just", "::") or fn.name in self.module.ctor_types:
                return F.App(fn.name, tuple(parts))
        return None

    # ---- constants

    def const_type(self, env: Env, t: A.Const, path):
        name = t.name
        o = self.origin(t, path, "T-C")
        if name in self.program.signatures:
            return self.instantiate(env, self.program.signatures[name], o)
        sig = self.module.signature(name)
        if sig is not None:
            return self.instantiate(env, sig.scheme, o)
        if name in prelude.SCHEMES:
            return self.instantiate(env, prelude.SCHEMES[name], o)
        if name in self.module.ctor_types:
            return A.TBase(self.module.ctor_types[name], (), F.Eq(NU, F.Ctor(name)))
        raise self.error(f"unknown constant {name}", t, "T-C")

    # ---- synthesis

    def selfify(self, t, x: str):
        inner, _ = content(t)
        if isinstance(inner, A.TBase):
            return strengthen(t, F.Eq(NU, self.aliases.get(x, F.Var(x))))
        return t

    def anchor(self, env: Env, t, term, path):
        """Give a concrete, non-public policy its own unknown at its source term."""
        t = self.resolve(t)
        if isinstance(t, A.TTagged) and t.policy != F.TOP and not F.kvars(t.policy):
            o = self.origin(term, path, "T-<:")
            sup = A.TTagged(self.template(env, t.inner, o, keep_ref=True), self.fresh_k(env, o))
            self.subtype(env, t, sup, o)
            return sup
        return t

    def synth(self, env: Env, t, path: tuple = ()):
        if isinstance(t, A.Var):
            ty = env.lookup(t.name)
            if ty is None:
                raise self.error(f"unbound variable {t.name}", t, "T-Var")
            return self.selfify(self.resolve(ty), t.name)
        if isinstance(t, A.Lit):
            return prelude.literal_type(t.value)
        if isinstance(t, A.Const):
            return self.const_type(env, t, path)
        if isinstance(t, A.Lambda):
            tv = self.fresh_tvar()
            self.declare(t.binder, tv)
            body = self.synth(env.bind(t.binder, tv), t.body, path + (0,))
            body = self.anchor(env.bind(t.binder, tv), body, t.body, path + (0,))
            return A.TFun(t.binder, tv, body)
        if isinstance(t, A.App):
            return self.synth_app(env, t, path)
        if isinstance(t, A.If):
            return self.synth_if(env, t, path)
        if isinstance(t, A.Get):
            return self.synth_get(env, t, path)
        if isinstance(t, A.Bind):
            k = self.fresh_k(env, self.origin(t, path, "T-bind"))
            return A.TTagged(self.bind_rule(env, t, k, path), k)
        if isinstance(t, A.Downgrade):
            k = self.fresh_k(env, self.origin(t, path, "T-downgrade"))
            return A.TTagged(self.synth_tagged(env, t, k, path), k)
        if isinstance(t, A.Cast):
            self.cast_envs[path] = env
            return t.expected
        raise self.error(f"cannot type {type(t).__name__}", t)

    def synth_get(self, env: Env, t: A.Get, path):
        rt = self.resolve(self.synth(env, t.ref, path + (0,)))
        if not isinstance(rt, A.TRef):
            raise self.error("get of a non-reference", t, "T-get", "Ref", rt)
        loc = self.embed(env, t.ref)
        if loc is None:
            loc = F.Var(self.fresh_name("loc"))
        return strengthen(at_store(rt.inner, env.store), F.Eq(NU, F.Select(F.Var(env.store), loc)))

    def cond_formulas(self, env: Env, cond, path):
        ct = self.resolve(self.synth(env, cond, path))
        inner, pol = content(ct)
        if pol != F.TOP:
            raise self.error("branching on a tagged value; bind it first", cond, "T-If", "Bool", ct)
        if not isinstance(inner, A.TBase) or inner.name != "Bool":
            if isinstance(inner, A.TVar):
                self.tv[inner.name] = prelude.BOOL
                return F.TOP, F.TOP
            raise self.error("condition is not a boolean", cond, "T-If", "Bool", ct)
        yes = F.simplify(F.subst(inner.ref, {F.NU: F.TRUE_C}))
        no = F.simplify(F.subst(inner.ref, {F.NU: F.FALSE_C}))
        return yes, no

    def synth_if(self, env: Env, t: A.If, path):
        yes, no = self.cond_formulas(env, t.cond, path + (0,))
        e1, e2 = env.assume(yes), env.assume(no)
        t1 = self.anchor(e1, self.synth(e1, t.then, path + (1,)), t.then, path + (1,))
        t2 = self.anchor(e2, self.synth(e2, t.els, path + (2,)), t.els, path + (2,))
        return self.join(env, t1, t2, yes, no, t)

    def join(self, env: Env, t1, t2, yes, no, term):
        t1, t2 = self.resolve(t1), self.resolve(t2)
        if isinstance(t1, A.TTagged) or isinstance(t2, A.TTagged):
            c1, p1 = content(t1)
            c2, p2 = content(t2)
            if p1 == p2:
                pol = p1
            else:
                pol = F.conj([F.Implies(yes, p1) if p1 != F.TOP else F.TOP,
                              F.Implies(no, p2) if p2 != F.TOP else F.TOP])
            return A.TTagged(self.join(env, c1, c2, yes, no, term), pol)
        if isinstance(t1, A.TVar) or isinstance(t2, A.TVar):
            o = self.origin(term, (), "T-If")
            if isinstance(t1, A.TVar):
                self.subtype(env, t2, t1, o)
                return self.resolve(t1)
            self.subtype(env, t1, t2, o)
            return self.resolve(t2)
        if isinstance(t1, A.TBase) and isinstance(t2, A.TBase):
            if t1.name != t2.name or len(t1.args) != len(t2.args):
                raise self.error(f"branches have different types {shape(t1)} and {shape(t2)}", term, "T-If",
                                 t1, t2)
            args = tuple(self.join(env, a, b, yes, no, term) for a, b in zip(t1.args, t2.args))
            ref = F.disj([F.conj([yes, t1.ref]), F.conj([no, t2.ref])])
            return A.TBase(t1.name, args, F.simplify(ref))
        self.subtype(env, t2, t1, self.origin(term, (), "T-If"))
        return t1

    def synth_app(self, env: Env, t, path):
        fn, args = A.app_spine(t)
        fn_path, arg_paths = _spine_paths(t, path)
        fty = self.resolve(self.synth(env, fn, fn_path))
        params = []
        cur = fty
        for a in args:
            cur = self.resolve(cur)
            if isinstance(cur, A.TVar):
                fresh = A.TFun(self.fresh_name("x"), self.fresh_tvar(), self.fresh_tvar())
                self.tv[cur.name] = fresh
                cur = fresh
            if not isinstance(cur, A.TFun):
                raise self.error("function applied to too many arguments", t, "T-App", actual=fty)
            params.append(cur)
            cur = cur.ret
        m = {}
        for p, a in zip(params, args):
            e = self.embed(env, a)
            m[p.binder] = e if e is not None else F.Var(self.fresh_name("arg"))
        order = [i for i, a in enumerate(args) if not isinstance(a, A.Lambda)]
        order += [i for i, a in enumerate(args) if isinstance(a, A.Lambda)]
        elem_hint = None
        list_fns = ("mapM", "filterM", "sortByM")
        is_list_fn = isinstance(fn, A.Const) and fn.name in list_fns and len(args) == 2
        actual = {}
        for i in order:
            pty = ty_subst(params[i].arg, m)
            a = args[i]
            if isinstance(a, A.Lambda):
                if is_list_fn and i == 0 and elem_hint is not None:
                    pty = self.resolve(pty)
                    pty = self.narrow_params(pty, elem_hint)
                self.check(env, a, pty, arg_paths[i])
                actual[i] = pty
            else:
                aty = self.synth(env, a, arg_paths[i])
                actual[i] = aty
                if is_list_fn and i == 1:
                    lst, _ = content(self.resolve(aty))
                    if isinstance(lst, A.TBase) and lst.name == "List" and lst.args:
                        elem_hint = lst.args[0]
                self.subtype(env, aty, pty, self.origin(a, arg_paths[i], "T-App"))
        ret = self.resolve(ty_subst(cur, m))
        if isinstance(fn, A.Const) and fn.name == "filterM" and len(args) == 2:
            ret = self.filter_result(ret, self.resolve(actual[0]), elem_hint)
        return ret

    def narrow_params(self, fty, elem):
        """Give a list combinator's function argument the list's precise element type."""
        cur = fty
        out = []
        while isinstance(cur, A.TFun):
            out.append(cur)
            cur = cur.ret
        cur_ret = cur
        for f in reversed(out):
            cur_ret = A.TFun(f.binder, elem if self.erase(f.arg) == self.erase(elem) else f.arg, cur_ret)
        return cur_ret

    def filter_result(self, ret, fty, elem):
        """Elements kept by ``filterM`` satisfy the predicate's refinement."""
        if not isinstance(fty, A.TFun) or elem is None:
            return ret
        body, _ = content(self.resolve(fty.ret))
        if not isinstance(body, A.TBase) or body.ref == F.TOP:
            return ret
        cond = F.simplify(F.subst(body.ref, {F.NU: F.TRUE_C}))
        cond = F.subst(cond, {fty.binder: NU})
        if F.kvars(cond):
            return ret
        lst, pol = content(ret)
        if not (isinstance(lst, A.TBase) and lst.name == "List"):
            return ret
        el = strengthen(self.resolve(elem), cond)
        new = A.TBase("List", (el,), lst.ref)
        return A.TTagged(new, pol) if isinstance(ret, A.TTagged) else new

    # ---- checking under a known policy

    def synth_tagged(self, env: Env, t, pol, path):
        """Content type of ``t``, emitting clauses so that ``t`` may be tagged with ``pol``."""
        if isinstance(t, A.Bind):
            return self.bind_rule(env, t, pol, path)
        if isinstance(t, A.If):
            yes, no = self.cond_formulas(env, t.cond, path + (0,))
            e1, e2 = env.assume(yes), env.assume(no)
            c1 = self.synth_tagged(e1, t.then, pol, path + (1,))
            c2 = self.synth_tagged(e2, t.els, pol, path + (2,))
            return self.join(env, c1, c2, yes, no, t)
        if isinstance(t, A.Downgrade):
            o = self.origin(t, path, "T-downgrade")
            r = self.fresh_k(env, o, "downgrade")
            c = self.synth_tagged(env, t.inner, F.conj([pol, r]), path + (0,))
            want = A.TBase("Bool", (), F.Implies(F.truth(NU), r))
            self.subtype(env, c, want, o)
            return want
        ty = self.resolve(self.synth(env, t, path))
        c, p = content(ty)
        if p != F.TOP:
            o = self.origin(t, path, "T-<:")
            if not F.kvars(p):
                self.source(o, A.TTagged(self.template(env, c, o, keep_ref=True), pol), ty)
            self.clause(env, [pol], p, o)
        return c

    def bind_rule(self, env: Env, t: A.Bind, pol, path):
        e1_path, k_path = path + (0,), path + (1,)
        o = self.origin(t.tagged, e1_path, "T-bind")
        t1 = self.resolve(self.synth(env, t.tagged, e1_path))
        c1, _ = content(t1)
        sup_inner = self.template(env, c1, o, keep_ref=True)
        if isinstance(t1, A.TTagged):
            self.subtype(env, t1, A.TTagged(sup_inner, pol), o)
        else:
            self.subtype(env, c1, sup_inner, o)
        cont = t.cont
        if isinstance(cont, A.Lambda):
            x = cont.binder
            self.declare(x, sup_inner)
            env2 = env.bind(x, sup_inner)
            body = self.synth_tagged(env2, cont.body, pol, k_path + (0,))
            return self.eliminate(x, sup_inner, body)
        kt = self.resolve(self.synth(env, cont, k_path))
        if isinstance(kt, A.TVar):
            fresh = A.TFun(self.fresh_name("x"), self.fresh_tvar(), self.fresh_tvar())
            self.tv[kt.name] = fresh
            kt = fresh
        if not isinstance(kt, A.TFun):
            raise self.error("bind continuation is not a function", cont, "T-bind", actual=kt)
        self.subtype(env, sup_inner, kt.arg, o)
        arg = self.embed(env, t.tagged)
        ret = self.resolve(kt.ret)
        c, p = content(ret)
        if p != F.TOP:
            self.clause(env, [pol], p, self.origin(cont, k_path, "T-bind"))
        return c

    def eliminate(self, x: str, xty, body):
        """Drop a local binder from a result refinement using its defining equality."""
        body = self.resolve(body)
        if not isinstance(body, A.TBase) or x not in F.free_vars(body.ref):
            return body
        xty = self.resolve(xty)
        inner, _ = content(xty)
        if isinstance(inner, A.TBase):
            for c in F.conjuncts(inner.ref):
                if isinstance(c, F.Eq) and c.lhs == NU and F.NU not in F.free_vars(c.rhs):
                    return A.TBase(body.name, body.args, F.subst(body.ref, {x: c.rhs}))
        return body

    # ---- checking

    def check(self, env: Env, t, expected, path: tuple = ()):
        exp = self.resolve(expected)
        if isinstance(exp, A.TTagged) and isinstance(t, (A.Bind, A.If, A.Downgrade)):
            c = self.synth_tagged(env, t, exp.policy, path)
            self.subtype(env, c, exp.inner, self.origin(t, path, "T-<:"))
            return
        if isinstance(t, A.If):
            yes, no = self.cond_formulas(env, t.cond, path + (0,))
            self.check(env.assume(yes), t.then, expected, path + (1,))
            self.check(env.assume(no), t.els, expected, path + (2,))
            return
        if isinstance(t, A.Lambda) and isinstance(exp, A.TFun):
            x = t.binder
            ret = ty_subst(exp.ret, {exp.binder: F.Var(x)}) if exp.binder != x else exp.ret
            self.declare(x, exp.arg)
            self.check(env.bind(x, exp.arg), t.body, ret, path + (0,))
            return
        if isinstance(exp, A.TTagged) and not isinstance(t, A.Cast):
            c = self.synth_tagged(env, t, exp.policy, path)
            self.subtype(env, c, exp.inner, self.origin(t, path, "T-<:"))
            return
        self.subtype(env, self.synth(env, t, path), expected, self.origin(t, path, "T-<:"))

    # ---- statements

    def check_stmt(self, env: Env, s, path: tuple = ()):
        while not isinstance(s, A.Skip):
            if isinstance(s, A.Let):
                ty = self.synth(env, s.term, path + (0,))
                ty = self.anchor(env, ty, s.term, path + (0,))
                if isinstance(self.resolve(ty), A.TRef):
                    loc = self.embed(env, s.term)
                    if loc is not None:
                        self.aliases[s.binder] = loc
                self.declare(s.binder, ty)
                env = env.bind(s.binder, ty)
                s, path = s.rest, path + (1,)
            elif isinstance(s, (A.Print, A.PrintAll)):
                self.print_rule(env, s, path)
                s, path = s.rest, path + (0,)
            elif isinstance(s, A.Set):
                env = self.set_rule(env, s, path)
                s, path = s.rest, path + (0,)
            else:
                raise self.error(f"unknown statement {type(s).__name__}", s)

    def lookup(self, env: Env, name: str, s):
        ty = env.lookup(name)
        if ty is None:
            raise self.error(f"unbound variable {name}", s, "T-Var")
        return self.resolve(ty)

    def print_rule(self, env: Env, s, path):
        o = self.origin(s, path, "T-print")
        k = self.fresh_k(env, o)
        viewer = s.user if isinstance(s, A.Print) else s.users
        uty = self.lookup(env, viewer, s)
        inner, upol = content(uty)
        if isinstance(inner, A.TVar):
            self.tv[inner.name] = A.TBase("User") if isinstance(s, A.Print) else A.TBase("List", (A.TBase("User"),))
            inner = self.resolve(inner)
        if upol != F.TOP:
            self.clause(env, [k], upol, o)
        if isinstance(s, A.Print):
            if not (isinstance(inner, A.TBase) and inner.name == "User"):
                raise self.error("print to a non-user", s, "T-print", "User", uty)
            who = [F.Eq(U, self.aliases.get(viewer, F.Var(viewer))), F.subst(inner.ref, {F.NU: U})]
        else:
            if not (isinstance(inner, A.TBase) and inner.name == "List"):
                raise self.error("printAll to a non-list", s, "T-print", "[User]", uty)
            who = [F.truth(F.App("elem", (U, F.Var(viewer))))]
        self.clause(env, who + [F.Eq(S, F.Var(env.store))], k, o)
        mty = self.lookup(env, s.msg, s)
        minner, mpol = content(mty)
        if isinstance(minner, A.TVar):
            self.tv[minner.name] = prelude.STR
        elif not (isinstance(minner, A.TBase) and minner.name == "Str"):
            raise self.error("printed message is not a string", s, "T-print", "Str", mty)
        if mpol != F.TOP:
            mo = self.origin(s, path, "T-print")
            if not F.kvars(mpol):
                self.source(mo, A.TTagged(A.strip_refinements(minner), k), mty)
            self.clause(env, [k], mpol, mo)

    def set_rule(self, env: Env, s: A.Set, path) -> Env:
        o = self.origin(s, path, "T-set")
        rty = self.lookup(env, s.ref, s)
        if not isinstance(rty, A.TRef):
            raise self.error("set of a non-reference", s, "T-set", "Ref", rty)
        vty = self.lookup(env, s.val, s)
        self.subtype(env, self.selfify(vty, s.val), at_store(rty.inner, env.store), o)
        new = f"σ{len(env.stores)}"
        loc = self.aliases.get(s.ref, F.Var(s.ref))
        self.sys.facts.append(F.Eq(F.Var(new), F.Store(F.Var(env.store), loc, F.Var(s.val))))
        return env.with_store(new)

    # ---- whole function

    def run(self) -> HornSystem:
        env = Env()
        for p in self.fn.params:
            tv = self.fresh_tvar()
            self.declare(p, tv)
            env = env.bind(p, tv)
        if self.fn.is_statement:
            self.check_stmt(env, self.fn.body)
        else:
            self.synth(env, self.fn.body)
        return self.finish()

    def finish(self) -> HornSystem:
        from .fixpoint import qualifiers_from_policies

        for x, t in self.var_types.items():
            srt = base_sort(self.resolve(t))
            rt = self.resolve(t)
            if srt is not None and not isinstance(rt, (A.TFun, A.TRef)):
                self.sys.sorts[x] = srt
        stores = {STORE0}
        for f in self.sys.facts:
            for v in F.free_vars(f):
                if v.startswith("σ"):
                    stores.add(v)
        for v in stores:
            self.sys.sorts[v] = "Store"
        self.sys.stores = sorted(stores)
        self.sys.facts.extend(field_invariants(self.module, self.sys.stores, self.sys.sorts))
        self.sys.qualifiers = qualifiers_from_policies(self.module)
        self.sys.facts = [F.simplify(f) for f in self.sys.facts]
        self.sys.sources = {p: (o, self.resolve(sup), self.resolve(act))
                            for p, (o, sup, act) in self.sys.sources.items()}
        return self.sys


def field_invariants(module, stores, sorts: dict) -> list:
    """Ground instances of field content refinements, at every store and argument in scope."""
    out = []
    for name, sig in module.fields.items():
        t, params = sig.scheme.body, []
        while isinstance(t, A.TFun):
            params.append((t.binder, base_sort(t.arg)))
            t = t.ret
        inner, _ = content(t.inner if isinstance(t, A.TRef) else t)
        if not isinstance(inner, A.TBase) or inner.ref == F.TOP:
            continue
        choices = [[v for v, srt in sorts.items() if srt == ps and srt != "Store"] for _, ps in params]
        for st in stores:
            for args in itertools.product(*choices):
                m = {p: F.Var(a) for (p, _), a in zip(params, args)}
                cell = F.Select(F.Var(st), F.location(name, tuple(m[p] for p, _ in params)))
                m.update({F.NU: cell, F.POL_S: F.Var(st)})
                out.append(F.simplify(F.subst(inner.ref, m)))
    return out


def fork(checker: Checker) -> Checker:
    """A checker sharing ``checker``'s bindings but collecting a fresh system."""
    c = copy.copy(checker)
    c.sys = HornSystem(facts=list(checker.sys.facts), sorts=dict(checker.sys.sorts),
                       qualifiers=checker.sys.qualifiers, stores=list(checker.sys.stores))
    c.tv = dict(checker.tv)
    c.var_types = dict(checker.var_types)
    c.aliases = dict(checker.aliases)
    c.site_names = dict(checker.site_names)
    return c


def check_isolated(checker: Checker, env: Env, term, expected, path=(), assume=()) -> HornSystem:
    """Constraints for ``term`` against ``expected`` in ``env`` (may raise LiftyTypeError)."""
    c = fork(checker)
    for f in assume:
        env = env.assume(f)
    c.check(env, term, expected, path)
    c.sys.facts = [F.simplify(f) for f in c.sys.facts]
    for x, t in c.var_types.items():
        if x not in c.sys.sorts:
            srt = base_sort(c.resolve(t))
            if srt is not None and not isinstance(c.resolve(t), (A.TFun, A.TRef)):
                c.sys.sorts[x] = srt
    return c.sys


def constraints(module, program, fn) -> HornSystem:
    """Horn system of one function (raises LiftyTypeError on non-flow errors)."""
    return Checker(module, program, fn).run()


def checked(module, program, fn) -> Checker:
    """Run the checker on ``fn`` and return it (its ``sys`` holds the constraints)."""
    c = Checker(module, program, fn)
    c.run()
    return c


# ----------------------------------------------------------- whole programs


@dataclass
class WellTyped:
    systems: dict = field(default_factory=dict)  # function name -> HornSystem

    verdict = "well-typed"


@dataclass
class NeedsEnforcement:
    systems: dict = field(default_factory=dict)
    failing: dict = field(default_factory=dict)  # function name -> violated clauses

    verdict = "needs-enforcement"


@dataclass
class TypeErrorReport:
    errors: list = field(default_factory=list)  # LiftyTypeError per failing function

    verdict = "type-error"


def check_program(program, module, external=None):
    """Check each function on its own; leaks are reported for localization, not as errors."""
    from .fixpoint import Solver

    systems, failing, errors = {}, {}, []
    for fn in program.functions:
        try:
            system = constraints(module, program, fn)
        except LiftyTypeError as e:
            errors.append(e)
            continue
        systems[fn.name] = system
        sol = Solver(system, external).solve()
        if not sol.ok:
            bad = [c for c in sol.failing if c.kind != "flow"]
            if bad:
                c = bad[0]
                errors.append(LiftyTypeError(f"refinement violated: {c.show()}", c.origin.pos,
                                             c.origin.rule, function=fn.name))
            else:
                failing[fn.name] = sol.failing
    if errors:
        return TypeErrorReport(errors)
    if failing:
        return NeedsEnforcement(systems, failing)
    return WellTyped(systems)
