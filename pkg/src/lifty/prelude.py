"""Type schemes of built-in constants and combinators."""
from __future__ import annotations

from . import ast as A
from . import formula as F
from .ast import Scheme, TBase, TFun, TTagged, TVar

NU = F.Var(F.NU)
PI = F.KApp("pi", ())

a, b = TVar("a"), TVar("b")
BOOL = TBase("Bool")
STR = TBase("Str")
INT = TBase("Int")


def _bool(f):
    """Boolean refinement ``ν <=> f``."""
    return TBase("Bool", (), F.Iff(F.truth(NU), f))


def _fun(*parts):
    """``_fun(("x", T1), ("y", T2), R)`` builds ``x:T1 -> y:T2 -> R``."""
    *args, ret = parts
    for binder, ty in reversed(args):
        ret = TFun(binder, ty, ret)
    return ret


def _x(name):
    return F.Var(name)


def _lst(t):
    return TBase("List", (t,))


def _maybe(t):
    return TBase("Maybe", (t,))


SCHEMES = {
    "==": Scheme(("a",), (), _fun(("x", a), ("y", a), _bool(F.Eq(_x("x"), _x("y"))))),
    "!=": Scheme(("a",), (), _fun(("x", a), ("y", a), _bool(F.Not(F.Eq(_x("x"), _x("y")))))),
    "&&": Scheme((), (), _fun(("x", BOOL), ("y", BOOL), _bool(F.conj([F.truth(_x("x")), F.truth(_x("y"))])))),
    "||": Scheme((), (), _fun(("x", BOOL), ("y", BOOL), _bool(F.disj([F.truth(_x("x")), F.truth(_x("y"))])))),
    "!": Scheme((), (), _fun(("x", BOOL), _bool(F.Not(F.truth(_x("x")))))),
    "not": Scheme((), (), _fun(("x", BOOL), _bool(F.Not(F.truth(_x("x")))))),
    "<=": Scheme(("a",), (), _fun(("x", a), ("y", a), BOOL)),
    "<": Scheme(("a",), (), _fun(("x", a), ("y", a), BOOL)),
    ">=": Scheme(("a",), (), _fun(("x", a), ("y", a), BOOL)),
    ">": Scheme(("a",), (), _fun(("x", a), ("y", a), BOOL)),
    "+": Scheme(("a",), (), _fun(("x", a), ("y", a), a)),
    "elem": Scheme(("a",), (), _fun(("x", a), ("xs", _lst(a)),
                                    _bool(F.truth(F.App("elem", (_x("x"), _x("xs"))))))),
    "isJust": Scheme(("a",), (), _fun(("m", _maybe(a)), _bool(F.truth(F.App("isJust", (_x("m"),)))))),
    "unwords": Scheme((), (), _fun(("xs", _lst(STR)), STR)),
    "unlines": Scheme((), (), _fun(("xs", _lst(STR)), STR)),
    "show": Scheme(("a",), (), _fun(("x", a), STR)),
    "id": Scheme(("a",), (), _fun(("x", a), a)),
    "liftM": Scheme(("a", "b"), ("pi",), _fun(("f", _fun(("x", a), b)), ("m", TTagged(a, PI)), TTagged(b, PI))),
    "mapM": Scheme(("a", "b"), ("pi",), _fun(("f", _fun(("x", a), TTagged(b, PI))), ("xs", _lst(a)),
                                          TTagged(_lst(b), PI))),
    "filterM": Scheme(("a",), ("pi",), _fun(("f", _fun(("x", a), TTagged(BOOL, PI))), ("xs", _lst(a)),
                                         TTagged(_lst(a), PI))),
    "sortByM": Scheme(("a",), ("pi",), _fun(("f", _fun(("x", a), ("y", a), TTagged(BOOL, PI))), ("xs", _lst(a)),
                                         TTagged(_lst(a), PI))),
    "mbMap": Scheme(("a", "b"), (), _fun(("f", _fun(("x", a), b)), ("m", _maybe(a)), _maybe(b))),
    "maybe": Scheme(("a", "b"), (), _fun(("d", b), ("f", _fun(("x", a), b)), ("m", _maybe(a)), b)),
    "Just": Scheme(("a",), (), _fun(("x", a), TBase("Maybe", (a,), F.Eq(NU, F.App("Just", (_x("x"),)))))),
    "Nothing": Scheme(("a",), (), TBase("Maybe", (a,), F.Eq(NU, F.NOTHING))),
    "[]": Scheme(("a",), (), TBase("List", (a,), F.Eq(NU, F.NIL))),
    "::": Scheme(("a",), (), _fun(("x", a), ("xs", _lst(a)),
                                  TBase("List", (a,), F.Eq(NU, F.App("::", (_x("x"), _x("xs"))))))),
    "True": Scheme((), (), TBase("Bool", (), F.truth(NU))),
    "False": Scheme((), (), TBase("Bool", (), F.Not(F.truth(NU)))),
    "()": Scheme((), (), TBase("Unit")),
    "allPaperIDs": Scheme((), (), _lst(TBase("PaperId"))),
    "allUsers": Scheme((), (), _lst(TBase("User"))),
    "allParticipants": Scheme((), (), _lst(TBase("User"))),
    "allMessageIDs": Scheme((), (), _lst(TBase("MessageId"))),
}

# Constants usable in refinements as measures (their results are interpreted by the prover).
MEASURES = {"elem", "isJust"}

# Components always available to patch branches.
DEFAULT_REDACTIONS = ("False", "0", "[]", '""', "Nothing", "mbMap")


def literal_type(value) -> TBase:
    if isinstance(value, int):
        return TBase("Int", (), F.Eq(NU, F.Lit(value)))
    return TBase("Str", (), F.Eq(NU, F.Lit(value)))
