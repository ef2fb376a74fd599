"""Parsers for programs (``.lifty``) and policy modules (``.liftyp``).

Layout follows the offside rule: a do-block, a let-binding or a function
body extends over the following lines that are indented further than the
column where it started; a line starting exactly at a block's column begins
the next item of that block.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from . import ast as A
from . import formula as F
from .lexer import ParseError, TokenStream, tokenize
from .prelude import SCHEMES

BINOPS = {
    "||": (2, "right"),
    "&&": (3, "right"),
    "==": (4, "none"), "=": (4, "none"), "!=": (4, "none"), "<=": (4, "none"),
    "<": (4, "none"), ">=": (4, "none"), ">": (4, "none"), "in": (4, "none"),
    "==>": (1, "right"), "<==>": (1, "none"),
    "+": (6, "left"),
}

RESERVED = {"let", "in", "if", "then", "else", "do", "where", "data", "module", "redact", "inline"}

TYPE_ALIASES = {"String": "Str", "Boolean": "Bool"}

SELECT = "@select"


@dataclass
class RawPolicy:
    """Policy annotation before field names are known."""

    params: tuple  # (store name, user name) or () for any/none/var
    body: object  # surface term, or "any"/"none", or ("var", name)


@dataclass
class PolicyModule:
    name: str = ""
    datatypes: dict = field(default_factory=dict)  # type name -> [constructors]
    ctor_types: dict = field(default_factory=dict)  # constructor -> type name
    fields: dict = field(default_factory=dict)  # name -> ConstSig
    functions: dict = field(default_factory=dict)  # opaque functions -> ConstSig
    redactions: list = field(default_factory=list)
    inlines: dict = field(default_factory=dict)  # name -> (params, surface term)

    def signature(self, name: str) -> Optional[A.ConstSig]:
        return self.fields.get(name) or self.functions.get(name)

    def policies(self) -> list:
        """All policy formulas (with field parameters free), nested ones included."""
        out = []
        for sig in list(self.fields.values()) + list(self.functions.values()):
            out.extend(_type_policies(sig.scheme.body))
        return out


def _type_policies(t) -> list:
    if isinstance(t, A.TTagged):
        pol = [] if isinstance(t.policy, F.KApp) else [t.policy]
        return pol + _type_policies(t.inner)
    if isinstance(t, A.TBase):
        return [p for a in t.args for p in _type_policies(a)]
    if isinstance(t, A.TRef):
        return _type_policies(t.inner)
    if isinstance(t, A.TFun):
        return _type_policies(t.arg) + _type_policies(t.ret)
    return []


class Parser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text))
        self.allow = -1
        self.anf = itertools.count(1)
        self.formula_mode = False

    def formula_expr(self, no_gt: bool = False):
        saved = self.formula_mode
        self.formula_mode = True
        try:
            return self.expr(no_gt)
        finally:
            self.formula_mode = saved

    # -------------------------------------------------------- token helpers

    def peek(self):
        if self.ts.i == self.allow:
            return self.ts.raw
        return self.ts.peek()

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("op", "ident", "con") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.ts.i += 1
            return True
        return False

    def expect(self, text: str):
        t = self.peek()
        if not self.at(text):
            raise ParseError(f"expected {text!r}, found {t.text or 'end of block'!r}", t.line, t.col)
        self.ts.i += 1
        return t

    def next(self):
        t = self.peek()
        if t.kind == "eof":
            raise ParseError("unexpected end of block", t.line, t.col)
        self.ts.i += 1
        return t

    def ident(self) -> str:
        t = self.peek()
        if t.kind != "ident" or t.text in RESERVED:
            raise ParseError(f"expected identifier, found {t.text or 'end of block'!r}", t.line, t.col)
        self.ts.i += 1
        return t.text

    def block(self, item):
        """Parse one or more layout items starting at the current token's column."""
        first = self.peek()
        if first.kind == "eof":
            raise ParseError("empty block", first.line, first.col)
        col = first.col
        self.ts.push(col)
        items = []
        try:
            self.allow = self.ts.i
            items.append(item())
            while True:
                if self.peek().kind == "op" and self.peek().text == ";":
                    self.ts.i += 1
                    self.allow = self.ts.i
                    items.append(item())
                    continue
                raw = self.ts.raw
                if raw.kind != "eof" and raw.first and raw.col == col and not self.ts_offside_outer(raw):
                    self.allow = self.ts.i
                    items.append(item())
                    continue
                break
        finally:
            self.ts.pop()
        return items

    def ts_offside_outer(self, tok) -> bool:
        return tok.col <= self.ts.layout[-2] if len(self.ts.layout) > 1 else False

    def with_layout(self, col: int, fn):
        self.ts.push(col)
        try:
            return fn()
        finally:
            self.ts.pop()

    # ------------------------------------------------------------ terms

    def expr(self, no_gt: bool = False):
        t = self.peek()
        pos = (t.line, t.col)
        if self.at("\\"):
            self.next()
            params = []
            while not self.at("."):
                tok = self.next()
                if tok.kind != "ident":
                    raise ParseError("bad lambda binder", tok.line, tok.col)
                params.append(tok.text)
            self.expect(".")
            body = self.expr(no_gt)
            for p in reversed(params):
                body = A.Lambda(p, body, pos)
            return body
        if self.at("if"):
            self.next()
            c = self.expr()
            self.expect("then")
            a = self.expr()
            self.expect("else")
            b = self.expr(no_gt)
            return A.If(c, a, b, pos)
        if self.at("do"):
            self.next()
            items = self.block(self.do_item)
            if len(items) == 1 and items[0][0] is None:
                return items[0][1]
            return A.Do(tuple(items), pos)
        return self.opexpr(0, no_gt)

    def do_item(self):
        t = self.peek()
        if t.kind == "ident" and self.ts.peek(1).text == "<-":
            name = self.next().text
            self.next()
            return (name, self.expr())
        return (None, self.expr())

    def opexpr(self, min_prec: int, no_gt: bool):
        lhs = self.unary(no_gt)
        while True:
            t = self.peek()
            op = t.text if t.kind in ("op", "ident") else None
            if op not in BINOPS or (no_gt and op == ">") or (op == "in" and not self.formula_mode):
                return lhs
            prec, assoc = BINOPS[op]
            if prec < min_prec:
                return lhs
            self.next()
            nxt = prec + 1 if assoc in ("left", "none") else prec
            if self.at("\\") or self.at("if") or self.at("do"):
                rhs = self.expr(no_gt)
            else:
                rhs = self.opexpr(nxt, no_gt)
            fn = "==" if op == "=" else ("elem" if op == "in" else op)
            lhs = A.App(A.App(A.Const(fn, (t.line, t.col)), lhs), rhs, (t.line, t.col))

    def unary(self, no_gt: bool):
        t = self.peek()
        if self.at("!"):
            self.next()
            return A.App(A.Const("!", (t.line, t.col)), self.unary(no_gt), (t.line, t.col))
        return self.application(no_gt)

    def application(self, no_gt: bool):
        t = self.peek()
        pos = (t.line, t.col)
        if self.at("get"):
            self.next()
            return self.args_onto(A.Get(self.atom(), pos), no_gt)
        if self.at("return"):
            self.next()
            return self.application(no_gt)
        if self.at("bind"):
            self.next()
            e1 = self.atom()
            e2 = self.atom_or_block(no_gt)
            return A.Bind(e1, e2, pos)
        head = self.atom()
        return self.args_onto(head, no_gt)

    def args_onto(self, head, no_gt: bool):
        while True:
            if self.starts_atom():
                head = A.App(head, self.atom(), head.pos)
            elif self.at("\\") or self.at("do") or self.at("if"):
                head = A.App(head, self.expr(no_gt), head.pos)
            else:
                return head

    def atom_or_block(self, no_gt):
        if self.at("\\") or self.at("do") or self.at("if"):
            return self.expr(no_gt)
        return self.atom()

    def starts_atom(self) -> bool:
        t = self.peek()
        if t.kind in ("int", "str", "con"):
            return True
        if t.kind == "ident":
            return t.text not in RESERVED and t.text not in ("in",)
        return t.kind == "op" and t.text in ("(", "[", "|_")

    def atom(self):
        t = self.next()
        pos = (t.line, t.col)
        if t.kind == "int":
            node = A.Lit(int(t.text), pos)
        elif t.kind == "str":
            node = A.Lit(t.text, pos)
        elif t.kind == "con":
            node = A.Const(t.text, pos)
        elif t.kind == "ident" and t.text not in RESERVED:
            if t.text in ("true", "false"):
                node = A.Const("True" if t.text == "true" else "False", pos)
            else:
                node = A.Var(t.text, pos)
        elif t.text == "(":
            self.ts.push(0)
            try:
                if self.at(")"):
                    self.next()
                    return A.Const("()", pos)
                inner = self.expr()
                self.expect(")")
            finally:
                self.ts.pop()
            node = inner
        elif t.text == "[":
            self.ts.push(0)
            try:
                elems = []
                if not self.at("]"):
                    elems.append(self.expr())
                    while self.accept(","):
                        elems.append(self.expr())
                self.expect("]")
            finally:
                self.ts.pop()
            node = A.Const("[]", pos)
            for e in reversed(elems):
                node = A.App(A.App(A.Const("::", pos), e, pos), node, pos)
        elif t.text == "|_":
            self.ts.push(0)
            try:
                inner = self.expr()
                self.expect("_|")
            finally:
                self.ts.pop()
            node = A.Downgrade(inner, pos)
        else:
            raise ParseError(f"unexpected {t.text!r}", t.line, t.col)
        # store select: `s[e]` written without a space before the bracket
        while True:
            nxt = self.ts.raw
            if nxt.kind == "op" and nxt.text == "[" and nxt.start == self.ts.toks[self.ts.i - 1].end:
                self.next()
                self.ts.push(0)
                try:
                    idx = self.expr()
                    self.expect("]")
                finally:
                    self.ts.pop()
                node = A.App(A.App(A.Const(SELECT, pos), node, pos), idx, pos)
            else:
                return node

    # ------------------------------------------------------------ types

    def type_(self):
        t = self.peek()
        if t.kind == "ident" and self.ts.peek(1).text == ":" and self.ts.peek(1).kind == "op":
            binder = self.next().text
            self.next()
            arg = self.btype()
            self.expect("->")
            return A.TFun(binder, arg, self.type_())
        arg = self.btype()
        if self.accept("->"):
            return A.TFun("", arg, self.type_())
        return arg

    def btype(self):
        t = self.peek()
        if t.kind == "con" and t.text == "Ref":
            self.next()
            return A.TRef(self.atype())
        if t.kind == "con" and t.text == "Tagged":
            self.next()
            inner = self.atype()
            return A.TTagged(inner, self.policy())
        if t.kind == "con":
            self.next()
            args = []
            while self.starts_atype():
                args.append(self.atype())
            return A.TBase(TYPE_ALIASES.get(t.text, t.text), tuple(args))
        return self.atype()

    def starts_atype(self) -> bool:
        t = self.peek()
        return t.kind in ("con", "ident") and t.text not in RESERVED or (t.kind == "op" and t.text in ("(", "[", "{"))

    def atype(self):
        t = self.next()
        if t.kind == "con":
            if t.text in ("Ref", "Tagged"):
                self.ts.i -= 1
                return self.btype()
            return A.TBase(TYPE_ALIASES.get(t.text, t.text), ())
        if t.kind == "ident":
            return A.TVar(t.text)
        if t.text == "(":
            self.ts.push(0)
            try:
                inner = self.type_()
                self.expect(")")
            finally:
                self.ts.pop()
            return inner
        if t.text == "[":
            self.ts.push(0)
            try:
                inner = self.type_()
                self.expect("]")
            finally:
                self.ts.pop()
            return A.TBase("List", (inner,))
        if t.text == "{":
            self.ts.push(0)
            try:
                base = self.type_()
                self.expect("|")
                ref = self.formula_expr()
                self.expect("}")
            finally:
                self.ts.pop()
            return _refine(base, RawPolicy((), ref))
        raise ParseError(f"unexpected {t.text!r} in type", t.line, t.col)

    def policy(self) -> RawPolicy:
        self.expect("<")
        if self.accept("\\"):
            self.expect("(")
            s = self.ident()
            self.expect(",")
            u = self.ident()
            self.expect(")")
            self.expect(".")
            self.ts.push(0)
            try:
                body = self.formula_expr(no_gt=True)
            finally:
                self.ts.pop()
            self.expect(">")
            return RawPolicy((s, u), body)
        name = self.ident()
        self.expect(">")
        if name in ("any", "none"):
            return RawPolicy((), name)
        return RawPolicy((), ("var", name))


def _refine(base, raw: RawPolicy):
    if isinstance(base, A.TBase):
        return A.TBase(base.name, base.args, raw)  # resolved later
    raise ParseError("refinement on a non-base type")


# ------------------------------------------------------ formula conversion


class FormulaBuilder:
    """Converts surface expressions inside annotations into logic formulas."""

    def __init__(self, fields=(), inlines=None, ctors=()):
        self.fields = set(fields)
        self.inlines = inlines or {}
        self.ctors = set(ctors)

    def formula(self, e, env: dict):
        fn, args = A.app_spine(e)
        if isinstance(fn, A.Const):
            op = fn.name
            if op in ("==",) and len(args) == 2:
                return F.Eq(self.term(args[0], env), self.term(args[1], env))
            if op == "!=" and len(args) == 2:
                return F.Not(F.Eq(self.term(args[0], env), self.term(args[1], env)))
            if op == "&&" and len(args) == 2:
                return F.conj([self.formula(args[0], env), self.formula(args[1], env)])
            if op == "||" and len(args) == 2:
                return F.disj([self.formula(args[0], env), self.formula(args[1], env)])
            if op == "==>" and len(args) == 2:
                return F.Implies(self.formula(args[0], env), self.formula(args[1], env))
            if op == "<==>" and len(args) == 2:
                return F.Iff(self.formula(args[0], env), self.formula(args[1], env))
            if op == "!" and len(args) == 1:
                return F.neg(self.formula(args[0], env))
            if op == "True" and not args:
                return F.TOP
            if op == "False" and not args:
                return F.BOT
        if isinstance(fn, A.Var) and fn.name == "not" and len(args) == 1:
            return F.neg(self.formula(args[0], env))
        if isinstance(fn, A.Var) and fn.name in self.inlines and fn.name not in env:
            params, body = self.inlines[fn.name]
            if len(params) != len(args):
                raise ParseError(f"inline {fn.name} expects {len(params)} arguments")
            return self.formula(body, {**env, **{p: self.term(a, env) for p, a in zip(params, args)}})
        return F.truth(self.term(e, env))

    def term(self, e, env: dict):
        fn, args = A.app_spine(e)
        if isinstance(fn, A.Const) and fn.name == SELECT:
            return F.Select(self.term(args[0], env), self.location(args[1], env))
        if isinstance(fn, A.Const) and fn.name in ("==", "!=", "&&", "||", "!", "==>", "<==>"):
            raise ParseError(f"boolean connective {fn.name} used as a term")
        targs = tuple(self.term(a, env) for a in args)
        if isinstance(fn, A.Lit):
            return F.Lit(fn.value)
        if isinstance(fn, A.Const):
            if fn.name in ("True", "False") and not args:
                return F.TRUE_C if fn.name == "True" else F.FALSE_C
            if fn.name == "elem" or fn.name == "::" or args:
                return F.App(fn.name, targs)
            return F.Ctor(fn.name)
        if isinstance(fn, A.Var):
            if fn.name in env and not args:
                return env[fn.name]
            if fn.name == "_v" and not args:
                return F.Var(F.NU)
            if fn.name in self.fields:
                return F.location(fn.name, targs)
            if args:
                return F.App(fn.name, targs)
            return F.Var(fn.name)
        raise ParseError(f"unsupported construct in refinement: {e!r}")

    def location(self, e, env):
        fn, args = A.app_spine(e)
        if isinstance(fn, A.Var) and fn.name in self.fields and fn.name not in env:
            return F.location(fn.name, tuple(self.term(a, env) for a in args))
        return self.term(e, env)


# -------------------------------------------------------- policy modules


BUILTIN_DATA = {"Bool": ["True", "False"], "Maybe": ["Nothing", "Just"], "List": ["[]", "::"]}


def parse_policy_module(text: str) -> PolicyModule:
    p = Parser(text)
    mod = PolicyModule()
    for ty, cs in BUILTIN_DATA.items():
        for c in cs:
            mod.ctor_types[c] = ty
    raw_sigs = []
    seen = set()

    def decl():
        t = p.peek()
        if p.accept("module"):
            tok = p.next()
            mod.name = tok.text
            p.accept("where")
            return
        if p.accept("data"):
            tname = p.next().text
            while p.peek().kind == "ident":
                p.next()
            p.expect("=")
            ctors = [p.next().text]
            while p.peek().kind == "con" or p.at("|"):
                if p.accept("|"):
                    ctors.append(p.next().text)
                else:
                    p.next()  # constructor argument types are ignored
            if tname in mod.datatypes:
                raise ParseError(f"duplicate data type {tname}", t.line, t.col)
            mod.datatypes[tname] = ctors
            for c in ctors:
                mod.ctor_types[c] = tname
            return
        if p.accept("redact"):
            names = []
            if p.accept("{"):
                p.ts.push(0)
                names.append(p.next().text)
                while p.accept(","):
                    names.append(p.next().text)
                p.expect("}")
                p.ts.pop()
            else:
                names.append(p.next().text)
            mod.redactions.extend(names)
            return
        if p.accept("inline"):
            name = p.ident()
            params = []
            while not p.at("="):
                params.append(p.ident())
            p.expect("=")
            mod.inlines[name] = (tuple(params), p.formula_expr())
            return
        name = p.ident()
        p.expect("::")
        ty = p.type_()
        if name in seen:
            raise ParseError(f"duplicate field {name}", t.line, t.col)
        seen.add(name)
        raw_sigs.append((name, ty, t))

    while p.ts.raw.kind != "eof":
        p.block(decl)
        if p.ts.raw.kind != "eof":
            t = p.ts.raw
            raise ParseError(f"unexpected {t.text!r}", t.line, t.col)
    known_types = {"Str", "Bool", "Int", "User", "Maybe", "List", "PaperId", "MessageId",
                   "RecordId", "Password", "Phase", "World", "Unit"} | set(mod.datatypes)
    field_names = {n for n, ty, _ in raw_sigs if isinstance(_result(ty), A.TRef)}
    fb = FormulaBuilder(field_names, mod.inlines, mod.ctor_types)
    for name, ty, tok in raw_sigs:
        params = _params(ty)
        resolved = resolve_type(ty, fb, set(params), known_types, (tok.line, tok.col))
        sig = A.ConstSig(name, A.Scheme(tuple(sorted(_tvars(resolved))), (), resolved), params,
                         is_location=name in field_names, is_field=name in field_names,
                         is_redaction=name in mod.redactions)
        (mod.fields if name in field_names else mod.functions)[name] = sig
    for r in mod.redactions:
        if r not in mod.ctor_types and r not in mod.functions and r not in mod.fields and r not in SCHEMES:
            raise ParseError(f"redaction {r} is not a declared constant or function")
    return mod


def _result(ty):
    while isinstance(ty, A.TFun):
        ty = ty.ret
    return ty


def _params(ty) -> tuple:
    out = []
    k = 0
    while isinstance(ty, A.TFun):
        k += 1
        out.append(ty.binder or f"arg{k}")
        ty = ty.ret
    return tuple(out)


def _tvars(ty) -> set:
    if isinstance(ty, A.TVar):
        return {ty.name}
    if isinstance(ty, A.TBase):
        return set().union(*[_tvars(a) for a in ty.args]) if ty.args else set()
    if isinstance(ty, (A.TTagged, A.TRef)):
        return _tvars(ty.inner)
    if isinstance(ty, A.TFun):
        return _tvars(ty.arg) | _tvars(ty.ret)
    return set()


def resolve_type(ty, fb: FormulaBuilder, scope: set, known=None, pos=None, k=None):
    """Replace raw policies/refinements by formulas, naming anonymous binders."""
    counter = k if k is not None else itertools.count(1)
    if isinstance(ty, A.TFun):
        binder = ty.binder or f"arg{next(counter)}"
        return A.TFun(binder, resolve_type(ty.arg, fb, scope, known, pos, counter),
                      resolve_type(ty.ret, fb, scope | {binder}, known, pos, counter))
    if isinstance(ty, A.TRef):
        return A.TRef(resolve_type(ty.inner, fb, scope, known, pos, counter))
    if isinstance(ty, A.TTagged):
        inner = resolve_type(ty.inner, fb, scope, known, pos, counter)
        return A.TTagged(inner, _resolve_policy(ty.policy, fb, scope, pos))
    if isinstance(ty, A.TBase):
        if known is not None and ty.name not in known:
            raise ParseError(f"unknown type constructor {ty.name}", *(pos or (0, 0)))
        args = tuple(resolve_type(a, fb, scope, known, pos, counter) for a in ty.args)
        ref = ty.ref
        if isinstance(ref, RawPolicy):
            env = {v: F.Var(v) for v in scope}
            env["_s"] = F.Var(F.POL_S)  # the current store
            ref = fb.formula(ref.body, env)
            bad = F.free_vars(ref) - scope - {F.NU, F.POL_S}
            if bad:
                raise ParseError(f"refinement mentions out-of-scope variables {sorted(bad)}", *(pos or (0, 0)))
        return A.TBase(ty.name, args, ref)
    return ty


def _resolve_policy(raw, fb: FormulaBuilder, scope: set, pos):
    if not isinstance(raw, RawPolicy):
        return raw
    if raw.body == "any":
        return F.TOP
    if raw.body == "none":
        return F.BOT
    if isinstance(raw.body, tuple):
        return F.KApp(raw.body[1], ())
    s, u = raw.params
    env = {v: F.Var(v) for v in scope}
    env[s] = F.Var(F.POL_S)
    env[u] = F.Var(F.POL_U)
    f = fb.formula(raw.body, env)
    bad = F.free_vars(f) - scope - {F.POL_S, F.POL_U}
    if bad:
        raise ParseError(f"policy mentions out-of-scope variables {sorted(bad)}", *(pos or (0, 0)))
    return f


# ---------------------------------------------------------------- programs


def parse_program(text: str, module: Optional[PolicyModule] = None) -> A.Program:
    p = Parser(text)
    prog = A.Program()
    raw_defs = []

    def decl():
        t = p.peek()
        name = p.ident()
        if p.accept("::"):
            prog.signatures[name] = (p.type_(), (t.line, t.col))
            return
        params = []
        while not p.at("="):
            params.append(p.ident())
        p.expect("=")
        body = function_body(p)
        raw_defs.append(A.FunDef(name, tuple(params), body, None, (t.line, t.col)))

    while p.ts.raw.kind != "eof":
        p.block(decl)
        if p.ts.raw.kind != "eof":
            t = p.ts.raw
            raise ParseError(f"unexpected {t.text!r}", t.line, t.col)
    names = [d.name for d in raw_defs]
    if len(set(names)) != len(names):
        raise ParseError("duplicate function definition")
    consts = set(names)
    fb = FormulaBuilder(module.fields if module else (), module.inlines if module else {},
                        module.ctor_types if module else ())
    for name, (ty, pos) in list(prog.signatures.items()):
        if "World" in repr(ty):
            del prog.signatures[name]
            continue
        resolved = resolve_type(ty, fb, set(), None, pos)
        pvars = tuple(sorted(_pvars(resolved)))
        prog.signatures[name] = A.Scheme(tuple(sorted(_tvars(resolved))), pvars, resolved)
    for d in raw_defs:
        body = A.desugar_do(d.body)
        body = _close(body, set(d.params), consts)
        body = A.uniquify(body, set(d.params) | consts)
        d.body = body
        d.signature = prog.signatures.get(d.name)
        prog.functions.append(d)
    return prog


def _pvars(ty) -> set:
    if isinstance(ty, A.TTagged):
        own = {ty.policy.name} if isinstance(ty.policy, F.KApp) else set()
        return own | _pvars(ty.inner)
    if isinstance(ty, A.TBase):
        return set().union(*[_pvars(a) for a in ty.args]) if ty.args else set()
    if isinstance(ty, A.TRef):
        return _pvars(ty.inner)
    if isinstance(ty, A.TFun):
        return _pvars(ty.arg) | _pvars(ty.ret)
    return set()


def function_body(p: Parser):
    items = p.block(lambda: stmt_item(p))
    flat = [x for group in items for x in group]
    return _fold_stmts(flat)


def stmt_item(p: Parser) -> list:
    t = p.peek()
    pos = (t.line, t.col)
    if p.at("let"):
        let_tok = p.next()
        name = p.ident()
        params = []
        while not p.at("="):
            params.append(p.ident())
        p.expect("=")
        term = p.with_layout(let_tok.col, p.expr)
        for q in reversed(params):
            term = A.Lambda(q, term, pos)
        out = [("let", name, term, pos)]
        if p.accept("in"):
            nxt = p.ts.raw
            if nxt.kind != "eof" and not nxt.first:
                p.allow = p.ts.i
                out.extend(stmt_item(p))
        return out
    if p.at("set") or p.at("print") or p.at("printAll"):
        kw = p.next().text
        pre = []
        a = _stmt_arg(p, pre, pos)
        b = _stmt_arg(p, pre, pos)
        return pre + [(kw, a, b, pos)]
    if p.accept("skip"):
        return [("skip", pos)]
    return [("expr", p.expr(), pos)]


def _stmt_arg(p: Parser, pre: list, pos) -> str:
    e = p.atom()
    if isinstance(e, A.Var):
        return e.name
    name = f"tmp{next(p.anf)}"
    pre.append(("let", name, e, pos))
    return name


def _fold_stmts(items: list):
    if len(items) == 1 and items[0][0] == "expr":
        return items[0][1]
    result = A.Skip()
    for i, it in enumerate(reversed(items)):
        kind = it[0]
        if kind == "expr":
            raise ParseError("expression in statement position", *it[-1])
        if kind == "skip":
            result = A.Skip(it[-1]) if isinstance(result, A.Skip) else result
        elif kind == "let":
            result = A.Let(it[1], it[2], result, it[3])
        elif kind == "set":
            result = A.Set(it[1], it[2], result, it[3])
        elif kind == "print":
            result = A.Print(it[1], it[2], result, it[3])
        elif kind == "printAll":
            result = A.PrintAll(it[1], it[2], result, it[3])
    return result


def _close(t, bound: set, consts: set):
    """Turn free identifiers that are not bound variables into constants."""
    fv = A.free_vars(t) - bound
    if not fv:
        return t
    mapping = {}
    for n in fv:
        mapping[n] = A.Const("True" if n == "true" else "False" if n == "false" else n)
    return _subst_keep_pos(t, mapping)


def _subst_keep_pos(t, mapping):
    if isinstance(t, A.Var) and t.name in mapping:
        c = mapping[t.name]
        return A.Const(c.name, t.pos)
    if isinstance(t, A.Lambda):
        inner = {k: v for k, v in mapping.items() if k != t.binder}
        return A.Lambda(t.binder, _subst_keep_pos(t.body, inner), t.pos)
    if isinstance(t, A.Let):
        inner = {k: v for k, v in mapping.items() if k != t.binder}
        return A.Let(t.binder, _subst_keep_pos(t.term, mapping), _subst_keep_pos(t.rest, inner), t.pos)
    if isinstance(t, A.App):
        return A.App(_subst_keep_pos(t.fn, mapping), _subst_keep_pos(t.arg, mapping), t.pos)
    if isinstance(t, A.If):
        return A.If(*(_subst_keep_pos(c, mapping) for c in (t.cond, t.then, t.els)), t.pos)
    if isinstance(t, A.Get):
        return A.Get(_subst_keep_pos(t.ref, mapping), t.pos)
    if isinstance(t, A.Bind):
        return A.Bind(_subst_keep_pos(t.tagged, mapping), _subst_keep_pos(t.cont, mapping), t.pos)
    if isinstance(t, A.Downgrade):
        return A.Downgrade(_subst_keep_pos(t.inner, mapping), t.pos)
    if isinstance(t, (A.Set, A.Print, A.PrintAll)):
        for name in A._stmt_args(t):
            if name in mapping:
                raise ParseError(f"{name} is not a variable")
        from dataclasses import replace
        return replace(t, rest=_subst_keep_pos(t.rest, mapping))
    return t


def parse_term(text: str, bound=()) -> A.Term:
    """Parse a single expression (free identifiers other than ``bound`` become constants)."""
    p = Parser(text)
    e = p.block(p.expr)
    if len(e) != 1 or p.ts.raw.kind != "eof":
        raise ParseError("trailing input after expression")
    return A.uniquify(_close(A.desugar_do(e[0]), set(bound), set()), set(bound))


def parse_formula(text: str, module: Optional[PolicyModule] = None, params=("s", "u")) -> F.Formula:
    """Parse a refinement/policy body; ``s``/``u`` denote the policy parameters."""
    p = Parser(text)
    e = p.block(p.formula_expr)[0]
    fb = FormulaBuilder(module.fields if module else (), module.inlines if module else {},
                        module.ctor_types if module else ())
    env = {params[0]: F.Var(F.POL_S), params[1]: F.Var(F.POL_U)} if params else {}
    return fb.formula(e, env)
