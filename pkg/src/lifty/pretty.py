"""Concrete syntax for terms, statements, programs and types.

Terms print with layout (do-blocks, indented if/then/else), so the output
re-parses to an alpha-equivalent AST.
"""
from __future__ import annotations

from . import ast as A
from . import formula as F

INFIX = {"||": 2, "&&": 3, "==": 4, "!=": 4, "<=": 4, "<": 4, ">=": 4, ">": 4, "+": 6}


class CastInOutput(Exception):
    pass


def _indent(lines: list, k: int) -> list:
    return [lines[0]] + [" " * k + ln for ln in lines[1:]]


def _join(prefix: str, lines: list) -> list:
    """Place ``lines`` after ``prefix`` on the first line, keeping relative layout."""
    return _indent([prefix + lines[0]] + lines[1:], len(prefix))


class Printer:
    def __init__(self, allow_casts: bool = False):
        self.allow_casts = allow_casts

    # terms produce a list of lines; continuation lines are relative to the first

    def term(self, t) -> list:
        if isinstance(t, A.Bind) and isinstance(t.cont, A.Lambda):
            return self.do_block(t)
        if isinstance(t, A.Lambda):
            params = [t.binder]
            body = t.body
            while isinstance(body, A.Lambda):
                params.append(body.binder)
                body = body.body
            return _join("\\" + " ".join(params) + ". ", self.term(body))
        if isinstance(t, A.If):
            c = self.term(t.cond)
            a = self.term(t.then)
            b = self.term(t.els)
            if len(c) == len(a) == len(b) == 1 and len(c[0]) + len(a[0]) + len(b[0]) < 60:
                return [f"if {c[0]} then {a[0]} else {b[0]}"]
            lines = _join("if ", c)
            lines += ["  " + ln for ln in _join("then ", a)]
            lines += ["  " + ln for ln in _join("else ", b)]
            return lines
        if isinstance(t, A.Cast):
            if not self.allow_casts:
                raise CastInOutput("type cast in emitted program")
            return _join("<cast> ", self.atom(t.inner))
        return self.infix(t, 0)

    def do_block(self, t) -> list:
        items = []
        cur = t
        while isinstance(cur, A.Bind) and isinstance(cur.cont, A.Lambda):
            items.append((cur.cont.binder, cur.tagged))
            cur = cur.cont.body
        items.append((None, cur))
        lines = []
        for binder, e in items:
            body = self.term(e)
            if binder is not None:
                lines += _join(f"{binder} <- ", body)
            else:
                lines += body
        return _indent(["do " + lines[0]] + lines[1:], 3)

    def infix(self, t, ctx: int) -> list:
        fn, args = A.app_spine(t)
        if isinstance(fn, A.Const) and fn.name in INFIX and len(args) == 2:
            prec = INFIX[fn.name]
            left = self.infix(args[0], prec if fn.name in ("+",) else prec + 1)
            right = self.infix(args[1], prec if fn.name in ("&&", "||") else prec + 1)
            if len(left) == 1 and len(right) == 1:
                s = [f"{left[0]} {fn.name} {right[0]}"]
            else:
                s = self.paren_lines(left) if len(left) > 1 else left
                s = s[:-1] + _join(s[-1] + f" {fn.name} ", right)
            if prec < ctx:
                return self.paren_lines(s)
            return s
        if isinstance(fn, A.Const) and fn.name == "!" and len(args) == 1:
            return _join("!", self.atom(args[0]))
        return self.application(t)

    def application(self, t) -> list:
        if isinstance(t, A.Get):
            return _join("get ", self.atom(t.ref))
        if isinstance(t, A.Bind):
            first = self.atom(t.tagged)
            return _join("bind ", first[:-1] + _join(first[-1] + " ", self.atom(t.cont)))
        fn, args = A.app_spine(t)
        if not args or _is_list(t):
            return self.atom(t)
        lines = self.atom(fn)
        for a in args:
            al = self.atom(a)
            lines = lines[:-1] + _join(lines[-1] + " ", al)
        return lines

    def atom(self, t) -> list:
        if isinstance(t, A.Var):
            return [t.name]
        if isinstance(t, A.Const):
            if t.name in INFIX or t.name == "!":
                return [f"({t.name})"]
            return [{"True": "true", "False": "false"}.get(t.name, t.name)]
        if isinstance(t, A.Lit):
            if isinstance(t.value, str):
                return ['"' + t.value.replace("\\", "\\\\").replace('"', '\\"') + '"']
            return [str(t.value)]
        if isinstance(t, A.Downgrade):
            out = _join("|_", self.term(t.inner))
            out[-1] += "_|"
            return out
        if _is_list(t):
            elems = _list_elems(t)
            parts = [self.term(e) for e in elems]
            if all(len(p) == 1 for p in parts):
                return ["[" + ", ".join(p[0] for p in parts) + "]"]
            lines = ["["]
            for i, p in enumerate(parts):
                lines += _join("  ", p[:-1] + [p[-1] + ("," if i < len(parts) - 1 else "")])
            return lines + ["]"]
        return self.paren_lines(self.term(t))

    @staticmethod
    def paren_lines(lines: list) -> list:
        out = _indent(["(" + lines[0]] + lines[1:], 1)
        out[-1] += ")"
        return out

    # ------------------------------------------------------------ statements

    def stmt(self, s) -> list:
        lines: list = []
        while not isinstance(s, A.Skip):
            if isinstance(s, A.Let):
                lhs, body = s.binder, s.term
                params = []
                while isinstance(body, A.Lambda) and _is_local_function(s):
                    params.append(body.binder)
                    body = body.body
                head = "let " + " ".join([lhs] + params) + " = "
                tl = self.term(body)
                if len(tl) > 1:
                    tl = ["  " + ln for ln in ["", *tl]][1:]
                    lines += [head.rstrip()] + tl[:-1] + [tl[-1] + " in"]
                else:
                    lines.append(head + tl[0] + " in")
            elif isinstance(s, A.Set):
                lines.append(f"set {s.ref} {s.val}")
            elif isinstance(s, A.Print):
                lines.append(f"print {s.user} {s.msg}")
            elif isinstance(s, A.PrintAll):
                lines.append(f"printAll {s.users} {s.msg}")
            else:
                raise TypeError(s)
            s = s.rest
        return lines or ["skip"]


def _is_local_function(s: A.Let) -> bool:
    return isinstance(s.term, A.Lambda)


def _is_list(t) -> bool:
    while True:
        if isinstance(t, A.Const) and t.name == "[]":
            return True
        fn, args = A.app_spine(t)
        if isinstance(fn, A.Const) and fn.name == "::" and len(args) == 2:
            t = args[1]
            continue
        return False


def _list_elems(t) -> list:
    out = []
    while not (isinstance(t, A.Const) and t.name == "[]"):
        _, args = A.app_spine(t)
        out.append(args[0])
        t = args[1]
    return out


def pretty_term(t, allow_casts: bool = False) -> str:
    return "\n".join(Printer(allow_casts).term(t))


def pretty_stmt(s, allow_casts: bool = False) -> str:
    return "\n".join(Printer(allow_casts).stmt(s))


def pretty(x, allow_casts: bool = False) -> str:
    """Render a term, statement, type or program."""
    if isinstance(x, A.Program):
        return pretty_program(x, allow_casts)
    if isinstance(x, A.STMT_NODES):
        return pretty_stmt(x, allow_casts)
    if isinstance(x, (A.TBase, A.TTagged, A.TRef, A.TFun, A.TVar)):
        return pretty_type(x)
    return pretty_term(x, allow_casts)


def pretty_function(f: A.FunDef, allow_casts: bool = False) -> str:
    head = " ".join([f.name, *f.params]) + " ="
    p = Printer(allow_casts)
    body = p.stmt(f.body) if f.is_statement else p.term(f.body)
    return "\n".join([head] + ["  " + ln for ln in body])


def pretty_program(prog: A.Program, allow_casts: bool = False) -> str:
    chunks = []
    for name, sch in prog.signatures.items():
        chunks.append(f"{name} :: {pretty_type(sch.body)}")
    for f in prog.functions:
        chunks.append(pretty_function(f, allow_casts))
    return "\n\n".join(chunks) + "\n"


def pretty_policy(p) -> str:
    if p == F.TOP:
        return "<any>"
    if p == F.BOT:
        return "<none>"
    if isinstance(p, F.KApp):
        return f"<{F.show(p)}>"
    return "<\\(s,u). " + F.show(p) + ">"


def pretty_type(t, top: bool = True) -> str:
    if isinstance(t, A.TFun):
        arg = pretty_type(t.arg, False)
        if isinstance(t.arg, A.TFun):
            arg = f"({arg})"
        binder = f"{t.binder}: " if t.binder and not t.binder.startswith("arg") else ""
        s = f"{binder}{arg} -> {pretty_type(t.ret)}"
        return s if top else f"({s})"
    if isinstance(t, A.TRef):
        return f"Ref {_tatom(t.inner)}"
    if isinstance(t, A.TTagged):
        return f"Tagged {_tatom(t.inner)} {pretty_policy(t.policy)}"
    if isinstance(t, A.TVar):
        return t.name
    if isinstance(t, A.TBase):
        name = "String" if t.name == "Str" else t.name
        if t.name == "List" and len(t.args) == 1:
            s = f"[{pretty_type(t.args[0])}]"
        else:
            s = " ".join([name] + [_tatom(a) for a in t.args])
        if t.ref != F.TOP:
            return "{" + s + " | " + F.show(t.ref) + "}"
        return s
    raise TypeError(t)


def _tatom(t) -> str:
    s = pretty_type(t, False)
    if isinstance(t, (A.TRef, A.TTagged)) or (isinstance(t, A.TBase) and t.args and t.name != "List" and t.ref == F.TOP):
        return f"({s})"
    return s
