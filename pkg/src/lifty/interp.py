"""Reference interpreter: call-by-value evaluation of terms against a store,
and execution of statements that read/update the store and append outputs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import ast as A


class EvalError(Exception):
    pass


# --------------------------------------------------------------- values


@dataclass(frozen=True)
class BoolV:
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class StrV:
    value: str

    def __str__(self):
        return '"' + self.value + '"'


@dataclass(frozen=True)
class IntV:
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class UserV:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class IdV:
    """Identifier of a non-user entity (paper, message, record)."""

    sort: str
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class LocV:
    field: str
    args: tuple = ()

    def __str__(self):
        return " ".join([self.field] + [_arg_str(a) for a in self.args])


@dataclass(frozen=True)
class DataV:
    ctor: str
    args: tuple = ()

    def __str__(self):
        if self.ctor == "[]" or self.ctor == "::":
            return "[" + ", ".join(str(x) for x in list_items(self)) + "]"
        return " ".join([self.ctor] + [_arg_str(a) for a in self.args])


@dataclass(frozen=True)
class ClosureV:
    binder: str
    body: object
    env: tuple  # ((name, value), ...)

    def __str__(self):
        return "<closure>"


@dataclass(frozen=True)
class PrimV:
    name: str
    arity: int
    args: tuple = ()

    def __str__(self):
        return f"<{self.name}>"


Value = Union[BoolV, StrV, IntV, UserV, IdV, LocV, DataV, ClosureV, PrimV]


def _arg_str(v) -> str:
    s = str(v)
    return f"({s})" if " " in s and not s.startswith("[") and not s.startswith('"') else s


TRUE, FALSE = BoolV(True), BoolV(False)
NIL = DataV("[]")
NOTHING = DataV("Nothing")


def mk_list(items) -> DataV:
    out = NIL
    for x in reversed(list(items)):
        out = DataV("::", (x, out))
    return out


def list_items(v) -> list:
    out = []
    while isinstance(v, DataV) and v.ctor == "::":
        out.append(v.args[0])
        v = v.args[1]
    if not (isinstance(v, DataV) and v.ctor == "[]"):
        raise EvalError(f"not a list: {v}")
    return out


# ---------------------------------------------------------------- store


@dataclass
class Store:
    locs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def copy(self) -> "Store":
        return Store(dict(self.locs), {k: list(v) for k, v in self.outputs.items()})

    def read(self, loc):
        if loc not in self.locs:
            raise EvalError(f"unbound location {loc}")
        return self.locs[loc]

    def output(self, user) -> list:
        return list(self.outputs.get(user, []))

    def __eq__(self, other):
        return isinstance(other, Store) and self.locs == other.locs and _norm(self.outputs) == _norm(other.outputs)

    def to_text(self) -> str:
        lines = [f"{loc} = {val}" for loc, val in sorted(self.locs.items(), key=lambda kv: str(kv[0]))]
        for u, vs in sorted(self.outputs.items(), key=lambda kv: str(kv[0])):
            lines.append(f"out[{u}] = [" + ", ".join(str(v) for v in vs) + "]")
        return "\n".join(lines) + ("\n" if lines else "")


def _norm(outputs: dict) -> dict:
    return {k: list(v) for k, v in outputs.items() if v}


# -------------------------------------------------------------- universe


@dataclass
class Universe:
    users: tuple = ("alice", "bob", "carol")
    entities: dict = field(default_factory=lambda: {
        "PaperId": ("p1", "p2", "p3"),
        "MessageId": ("m1", "m2", "m3"),
        "RecordId": ("r1", "r2", "r3"),
    })

    def values_of(self, sort: str) -> list:
        if sort == "User":
            return [UserV(u) for u in self.users]
        if sort in self.entities:
            return [IdV(sort, n) for n in self.entities[sort]]
        raise KeyError(sort)


# ------------------------------------------------------------- evaluator


def _truthy(v) -> bool:
    if not isinstance(v, BoolV):
        raise EvalError(f"condition is not a boolean: {v}")
    return v.value


def _show(v) -> str:
    if isinstance(v, StrV):
        return v.value
    return str(v)


class Interpreter:
    """Evaluates terms of one program against a policy module's constants."""

    def __init__(self, module=None, program: Optional[A.Program] = None, universe: Optional[Universe] = None):
        self.module = module
        self.program = program
        self.universe = universe or Universe()
        self.globals: dict = {}
        if program is not None:
            for f in program.functions:
                if not f.is_statement:
                    body = f.body
                    for p in reversed(f.params):
                        body = A.Lambda(p, body)
                    self.globals[f.name] = body

    # ---- constants

    def const(self, name: str, store: Store):
        if name == "True":
            return TRUE
        if name == "False":
            return FALSE
        if name == "[]":
            return NIL
        if name in PRIM_ARITY:
            return self.prim(PrimV(name, PRIM_ARITY[name]), store)
        if name == "allPaperIDs":
            return mk_list(self.universe.values_of("PaperId"))
        if name in ("allUsers", "allParticipants"):
            return mk_list(self.universe.values_of("User"))
        if name == "allMessageIDs":
            return mk_list(self.universe.values_of("MessageId"))
        if name in self.globals:
            return self.eval(self.globals[name], {}, store)
        m = self.module
        if m is not None:
            if name in m.fields:
                sig = m.fields[name]
                if not sig.params:
                    return LocV(name)
                return PrimV("@loc:" + name, len(sig.params))
            if name in m.functions:
                sig = m.functions[name]
                return PrimV("@opaque:" + name, max(1, len(_param_types(sig.scheme.body))))
            if name in m.ctor_types:
                return DataV(name)
        if name[:1].isupper():
            return DataV(name)
        if name in self.universe.users:
            return UserV(name)
        raise EvalError(f"unknown constant {name}")

    # ---- expressions

    def eval(self, t, env: dict, store: Store):
        if isinstance(t, A.Var):
            if t.name not in env:
                raise EvalError(f"unbound variable {t.name}")
            return env[t.name]
        if isinstance(t, A.Const):
            return self.const(t.name, store)
        if isinstance(t, A.Lit):
            return IntV(t.value) if isinstance(t.value, int) else StrV(t.value)
        if isinstance(t, A.Lambda):
            return ClosureV(t.binder, t.body, tuple(env.items()))
        if isinstance(t, A.App):
            f = self.eval(t.fn, env, store)
            a = self.eval(t.arg, env, store)
            return self.apply(f, a, store)
        if isinstance(t, A.If):
            c = self.eval(t.cond, env, store)
            return self.eval(t.then if _truthy(c) else t.els, env, store)
        if isinstance(t, A.Get):
            loc = self.eval(t.ref, env, store)
            if not isinstance(loc, LocV):
                raise EvalError(f"get of a non-location {loc}")
            return store.read(loc)
        if isinstance(t, A.Bind):
            v = self.eval(t.tagged, env, store)
            k = self.eval(t.cont, env, store)
            return self.apply(k, v, store)
        if isinstance(t, A.Downgrade):
            return self.eval(t.inner, env, store)
        if isinstance(t, A.Cast):
            raise EvalError("cannot evaluate a type cast")
        raise EvalError(f"cannot evaluate {t!r}")

    def apply(self, f, a, store: Store):
        if isinstance(f, ClosureV):
            env = dict(f.env)
            env[f.binder] = a
            return self.eval(f.body, env, store)
        if isinstance(f, PrimV):
            return self.prim(PrimV(f.name, f.arity, f.args + (a,)), store)
        if isinstance(f, DataV) and f.ctor in ("Just",):
            return DataV(f.ctor, f.args + (a,))
        if isinstance(f, DataV):
            return DataV(f.ctor, f.args + (a,))
        raise EvalError(f"application of a non-function {f}")

    def prim(self, p: PrimV, store: Store):
        if len(p.args) < p.arity:
            return p
        name, args = p.name, p.args
        if name.startswith("@loc:"):
            return LocV(name[5:], args)
        if name.startswith("@opaque:"):
            return self.opaque(name[8:], args)
        fn = PRIMS[name]
        return fn(self, store, *args)

    def opaque(self, name: str, args):
        sig = self.module.functions[name]
        ret = sig.scheme.body
        while isinstance(ret, A.TFun):
            ret = ret.ret
        return default_value(ret, self.module)

    # ---- statements

    def exec(self, s, env: dict, store: Store) -> Store:
        store = store.copy()
        env = dict(env)
        while not isinstance(s, A.Skip):
            s = self.step(s, env, store)
        return store

    def step(self, s, env: dict, store: Store):
        """Execute the first statement of ``s`` in place; return the rest."""
        if isinstance(s, A.Let):
            env[s.binder] = self.eval(s.term, env, store)
        elif isinstance(s, A.Set):
            loc = env[s.ref]
            if not isinstance(loc, LocV):
                raise EvalError(f"set of a non-location {loc}")
            store.locs[loc] = env[s.val]
        elif isinstance(s, A.Print):
            self._print(store, env[s.user], env[s.msg])
        elif isinstance(s, A.PrintAll):
            for u in list_items(env[s.users]):
                self._print(store, u, env[s.msg])
        else:
            raise EvalError(f"unknown statement {s!r}")
        return s.rest

    @staticmethod
    def _print(store: Store, user, msg):
        if not isinstance(user, UserV):
            raise EvalError(f"print to a non-user {user}")
        store.outputs.setdefault(user, []).append(msg)


def _param_types(ty) -> list:
    out = []
    while isinstance(ty, A.TFun):
        out.append(ty.arg)
        ty = ty.ret
    return out


def default_value(ty, module=None):
    """A fixed inhabitant of a type (used for opaque functions and fresh stores)."""
    if isinstance(ty, (A.TTagged, A.TRef)):
        return default_value(ty.inner, module)
    if isinstance(ty, A.TBase):
        n = ty.name
        if n == "Bool":
            return FALSE
        if n == "Int":
            return IntV(0)
        if n in ("Str", "Password"):
            return StrV("")
        if n == "List":
            return NIL
        if n == "Maybe":
            return NOTHING
        if n == "User":
            return UserV(Universe().users[0])
        if module is not None and n in module.datatypes:
            return DataV(module.datatypes[n][0])
        if n in Universe().entities:
            return IdV(n, Universe().entities[n][0])
    raise EvalError(f"no default value for {ty!r}")


# ------------------------------------------------------------ primitives


def _eq(it, st, a, b):
    return BoolV(a == b)


def _plus(it, st, a, b):
    if isinstance(a, IntV) and isinstance(b, IntV):
        return IntV(a.value + b.value)
    return StrV(_show(a) + _show(b))


def _map_m(it, st, f, xs):
    return mk_list(it.apply(f, x, st) for x in list_items(xs))


def _filter_m(it, st, f, xs):
    return mk_list(x for x in list_items(xs) if _truthy(it.apply(f, x, st)))


def _sort_by_m(it, st, cmp, xs):
    items = list_items(xs)
    # stable insertion sort using the monadic comparison `cmp a b` = a <= b
    out: list = []
    for x in items:
        i = len(out)
        while i > 0 and not _truthy(it.apply(it.apply(cmp, out[i - 1], st), x, st)):
            i -= 1
        out.insert(i, x)
    return mk_list(out)


def _maybe(it, st, d, f, m):
    if isinstance(m, DataV) and m.ctor == "Nothing":
        return d
    if isinstance(m, DataV) and m.ctor == "Just":
        return it.apply(f, m.args[0], st)
    raise EvalError(f"maybe of non-Maybe {m}")


def _mb_map(it, st, f, m):
    if isinstance(m, DataV) and m.ctor == "Just":
        return DataV("Just", (it.apply(f, m.args[0], st),))
    return m


def _le(it, st, a, b):
    if isinstance(a, IntV) and isinstance(b, IntV):
        return BoolV(a.value <= b.value)
    return BoolV(_show(a) <= _show(b))


def _lt(it, st, a, b):
    if isinstance(a, IntV) and isinstance(b, IntV):
        return BoolV(a.value < b.value)
    return BoolV(_show(a) < _show(b))


PRIMS = {
    "==": _eq,
    "!=": lambda it, st, a, b: BoolV(a != b),
    "&&": lambda it, st, a, b: BoolV(_truthy(a) and _truthy(b)),
    "||": lambda it, st, a, b: BoolV(_truthy(a) or _truthy(b)),
    "!": lambda it, st, a: BoolV(not _truthy(a)),
    "not": lambda it, st, a: BoolV(not _truthy(a)),
    "<=": _le,
    "<": _lt,
    ">=": lambda it, st, a, b: _le(it, st, b, a),
    ">": lambda it, st, a, b: _lt(it, st, b, a),
    "+": _plus,
    "elem": lambda it, st, x, xs: BoolV(x in list_items(xs)),
    "isJust": lambda it, st, m: BoolV(isinstance(m, DataV) and m.ctor == "Just"),
    "unwords": lambda it, st, xs: StrV(" ".join(_show(x) for x in list_items(xs))),
    "unlines": lambda it, st, xs: StrV("".join(_show(x) + "\n" for x in list_items(xs))),
    "show": lambda it, st, x: StrV(_show(x)),
    "liftM": lambda it, st, f, x: it.apply(f, x, st),
    "mapM": _map_m,
    "filterM": _filter_m,
    "sortByM": _sort_by_m,
    "maybe": _maybe,
    "mbMap": _mb_map,
    "::": lambda it, st, x, xs: DataV("::", (x, xs)),
    "return": lambda it, st, x: x,
    "id": lambda it, st, x: x,
}

PRIM_ARITY = {
    "==": 2, "!=": 2, "&&": 2, "||": 2, "!": 1, "not": 1, "<=": 2, "<": 2, ">=": 2, ">": 2,
    "+": 2, "elem": 2, "isJust": 1, "unwords": 1, "unlines": 1, "show": 1, "liftM": 2,
    "mapM": 2, "filterM": 2, "sortByM": 2, "maybe": 3, "mbMap": 2, "::": 2, "return": 1, "id": 1,
}


# ----------------------------------------------------------- entry points


def eval_expr(store: Store, term, env: Optional[dict] = None, module=None, program=None, universe=None):
    return Interpreter(module, program, universe).eval(term, dict(env or {}), store)


def exec_stmt(store: Store, stmt, env: Optional[dict] = None, module=None, program=None, universe=None) -> Store:
    return Interpreter(module, program, universe).exec(stmt, dict(env or {}), store)
