"""Randomized noninterference testing over small concrete stores.

An observer ``o`` may see a location when its policy holds for ``o`` in at
least one of two stores; two stores are o-equivalent when they agree on o's
output and on every location o may see.  A program passes when runs from
o-equivalent stores stay o-equivalent.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Optional

from . import ast as A
from . import formula as F
from .interp import (FALSE, NIL, NOTHING, TRUE, BoolV, DataV, EvalError, IdV, IntV, Interpreter, LocV, StrV,
                     Store, Universe, UserV, list_items, mk_list)

STRINGS = ("", "a", "b")
INTS = (0, 1, 2)


# ------------------------------------------------------------ policies


class PolicyError(Exception):
    """A policy could not be evaluated over the finite universe."""


def _value_of_ctor(name: str):
    if name == "True":
        return TRUE
    if name == "False":
        return FALSE
    if name == "[]":
        return NIL
    return DataV(name)


def eval_term(t, store: Store, env: dict):
    if isinstance(t, F.Var):
        if t.name not in env:
            raise PolicyError(f"unbound {t.name}")
        return env[t.name]
    if isinstance(t, F.Ctor):
        return _value_of_ctor(t.name)
    if isinstance(t, F.Lit):
        return IntV(t.value) if isinstance(t.value, int) else StrV(t.value)
    if isinstance(t, F.Select):
        st = eval_term(t.arr, store, env)
        loc = eval_term(t.idx, store, env)
        try:
            return st.read(loc)
        except EvalError as e:
            raise PolicyError(str(e)) from e
    if isinstance(t, F.App):
        args = [eval_term(a, store, env) for a in t.args]
        if t.fn.startswith("#"):
            return LocV(t.fn[1:], tuple(args))
        if t.fn == "elem":
            return BoolV(args[0] in list_items(args[1]))
        if t.fn == "isJust":
            return BoolV(isinstance(args[0], DataV) and args[0].ctor == "Just")
        if t.fn in ("Just", "::") or t.fn[:1].isupper():
            return DataV(t.fn, tuple(args))
        if t.fn == "len":
            return IntV(len(list_items(args[0])))
        raise PolicyError(f"cannot evaluate {t.fn}")
    raise PolicyError(f"cannot evaluate {t!r}")


def holds(f, store: Store, env: dict) -> bool:
    """Concrete truth of a formula; ``@s`` names the store itself."""
    env = {F.POL_S: store, **env}
    if isinstance(f, F.BoolConst):
        return f.value
    if isinstance(f, F.Eq):
        return eval_term(f.lhs, store, env) == eval_term(f.rhs, store, env)
    if isinstance(f, F.Not):
        return not holds(f.arg, store, env)
    if isinstance(f, F.And):
        return all(holds(a, store, env) for a in f.args)
    if isinstance(f, F.Or):
        return any(holds(a, store, env) for a in f.args)
    if isinstance(f, F.Implies):
        return not holds(f.lhs, store, env) or holds(f.rhs, store, env)
    if isinstance(f, F.Iff):
        return holds(f.lhs, store, env) == holds(f.rhs, store, env)
    raise PolicyError(f"cannot evaluate {F.show(f)}")


# ------------------------------------------------------------ fields and stores


@dataclass
class FieldInfo:
    name: str
    params: tuple  # ((name, sort), ...)
    content: object  # type of the stored value (tags included)

    @property
    def policy(self):
        return self.content.policy if isinstance(self.content, A.TTagged) else F.TOP


def _sort(t) -> str:
    while isinstance(t, A.TTagged):
        t = t.inner
    return {"String": "Str", "Password": "Str"}.get(t.name, t.name) if isinstance(t, A.TBase) else "?"


def field_table(module) -> dict:
    out = {}
    for name, sig in module.fields.items():
        t, params = sig.scheme.body, []
        while isinstance(t, A.TFun):
            params.append((t.binder, _sort(t.arg)))
            t = t.ret
        out[name] = FieldInfo(name, tuple(params), t.inner if isinstance(t, A.TRef) else t)
    return out


def values_of_sort(sort: str, module, universe: Universe) -> list:
    if sort == "Bool":
        return [FALSE, TRUE]
    if sort == "Int":
        return [IntV(i) for i in INTS]
    if sort == "Str":
        return [StrV(s) for s in STRINGS]
    if module is not None and sort in module.datatypes:
        return [DataV(c) for c in module.datatypes[sort]]
    return universe.values_of(sort)


def locations(module, universe: Universe) -> list:
    out = []
    for info in field_table(module).values():
        doms = [values_of_sort(s, module, universe) for _, s in info.params]
        for args in itertools.product(*doms):
            out.append((LocV(info.name, tuple(args)), info))
    return out


def random_value(t, module, universe: Universe, rng: random.Random):
    while isinstance(t, (A.TTagged, A.TRef)):
        t = t.inner
    if not isinstance(t, A.TBase):
        raise PolicyError(f"cannot generate a value of {t!r}")
    if t.name == "Maybe":
        if rng.random() < 0.5:
            return NOTHING
        return DataV("Just", (random_value(t.args[0], module, universe, rng),))
    if t.name == "List":
        pool = values_of_sort(_sort(t.args[0]), module, universe)
        k = rng.randint(0, min(2, len(pool)))
        return mk_list(sorted(rng.sample(pool, k), key=str))
    return rng.choice(values_of_sort(_sort(t), module, universe))


def _loc_env(loc: LocV, info: FieldInfo) -> dict:
    return {p: a for (p, _), a in zip(info.params, loc.args)}


def _content_refinements(t) -> list:
    out = []
    while isinstance(t, A.TTagged):
        t = t.inner
    if isinstance(t, A.TBase) and t.ref != F.TOP:
        out.append(t.ref)
    return out


def respects_invariants(store: Store, locs: list) -> bool:
    for loc, info in locs:
        for r in _content_refinements(info.content):
            env = {**_loc_env(loc, info), F.NU: store.locs[loc]}
            if not holds(r, store, env):
                return False
    return True


def random_store(module, universe: Universe, rng: random.Random, locs=None, tries: int = 200) -> Store:
    """A store with every location filled, satisfying the fields' content refinements."""
    locs = locs if locs is not None else locations(module, universe)
    for _ in range(tries):
        st = Store({loc: random_value(info.content, module, universe, rng) for loc, info in locs})
        if respects_invariants(st, locs):
            return st
    raise PolicyError("could not generate a store satisfying the field refinements")


# ------------------------------------------------------------ equivalence


def visible(policy, o, s1: Store, s2: Store, env: dict) -> bool:
    """A policy admits ``o`` in at least one of the two stores."""
    env = {**env, F.POL_U: o}
    return holds(policy, s1, env) or holds(policy, s2, env)


def observable(o, s1: Store, s2: Store, loc: LocV, info: FieldInfo) -> bool:
    return visible(info.policy, o, s1, s2, _loc_env(loc, info))


def _agree(t, v1, v2, vis) -> bool:
    """Values agree on every part visible to the observer."""
    if isinstance(t, A.TTagged):
        return (not vis(t.policy)) or _agree(t.inner, v1, v2, vis)
    if isinstance(t, A.TBase) and t.args and isinstance(v1, DataV) and isinstance(v2, DataV):
        if t.name == "Maybe":
            if v1.ctor != v2.ctor:
                return False
            return v1.ctor == "Nothing" or _agree(t.args[0], v1.args[0], v2.args[0], vis)
        if t.name == "List":
            a, b = list_items(v1), list_items(v2)
            return len(a) == len(b) and all(_agree(t.args[0], x, y, vis) for x, y in zip(a, b))
    return v1 == v2


def location_agrees(o, s1: Store, s2: Store, loc: LocV, info: FieldInfo, a=None, b=None) -> bool:
    env = _loc_env(loc, info)
    a = s1.locs[loc] if a is None else a
    b = s2.locs[loc] if b is None else b
    return _agree(info.content, a, b, lambda p: visible(p, o, s1, s2, env))


def equivalent(o, s1: Store, s2: Store, locs: list) -> bool:
    """o-equivalence: same output to ``o`` and agreement on every location ``o`` may see."""
    if s1.output(o) != s2.output(o):
        return False
    return all(location_agrees(o, s1, s2, loc, info) for loc, info in locs)


def _has_inner_tags(t) -> bool:
    if isinstance(t, A.TTagged):
        return True
    if isinstance(t, A.TBase):
        return any(_has_inner_tags(a) for a in t.args)
    return False


def equivalent_pair(module, universe: Universe, rng: random.Random, o, locs=None, tries: int = 50):
    """Random σ₁ and a σ₂ that differs from it only where ``o`` cannot look.

    Hidden locations are re-randomized; any location that then becomes
    distinguishable (policies may read other locations) is reset to σ₁'s value.
    """
    locs = locs if locs is not None else locations(module, universe)
    for _ in range(tries):
        s1 = random_store(module, universe, rng, locs)
        s2 = s1.copy()
        for loc, info in locs:
            nested = isinstance(info.content, A.TTagged) and _has_inner_tags(info.content.inner)
            if nested or not observable(o, s1, s1, loc, info):
                s2.locs[loc] = random_value(info.content, module, universe, rng)
        for _ in range(len(locs) + 1):
            bad = [loc for loc, info in locs if not location_agrees(o, s1, s2, loc, info)]
            if not bad:
                break
            for loc in bad:
                s2.locs[loc] = s1.locs[loc]
        if respects_invariants(s2, locs) and equivalent(o, s1, s2, locs):
            return s1, s2
    s1 = random_store(module, universe, rng, locs)
    return s1, s1.copy()


# ------------------------------------------------------------ the tester


@dataclass
class Violation:
    function: str
    observer: object
    params: dict
    before: tuple  # (σ₁, σ₂)
    after: tuple  # (σ₁', σ₂')
    reason: str

    def describe(self) -> str:
        args = ", ".join(f"{k} = {v}" for k, v in self.params.items())
        lines = [f"{self.function}: observer {self.observer} ({args}): {self.reason}"]
        for tag, st in (("store 1", self.before[0]), ("store 2", self.before[1])):
            lines.append(f"-- {tag}")
            lines.append(st.to_text().rstrip())
        for tag, st in (("output 1", self.after[0]), ("output 2", self.after[1])):
            lines.append(f"-- {tag}: " + " | ".join(str(v) for v in st.output(self.observer)))
        return "\n".join(lines)


@dataclass
class NIResult:
    trials: int = 0
    violations: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # evaluation failures (harness problems)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.errors

    @property
    def verdict(self) -> str:
        if self.violations:
            return "violation"
        return "error" if self.errors else "pass"


def param_sorts(module, program, fn) -> list:
    """Sorts of a function's parameters as inferred by the checker."""
    from .typecheck import Checker, LiftyTypeError, base_sort

    c = Checker(module, program, fn)
    try:
        c.run()
    except LiftyTypeError:
        pass
    return [base_sort(c.resolve(c.var_types.get(p, A.TBase("User")))) or "User" for p in fn.params]


def compare_runs(o, pre: tuple, post: tuple, locs: list) -> Optional[str]:
    """Why two runs are distinguishable by ``o``, or None."""
    s1, s2 = pre
    t1, t2 = post
    if t1.output(o) != t2.output(o):
        return "different output"
    for loc, info in locs:
        env = _loc_env(loc, info)
        vis = lambda p, env=env: visible(p, o, s1, s2, env)  # noqa: E731
        if not _agree(info.content, t1.locs[loc], t2.locs[loc], vis):
            return f"location {loc} differs"
    return None


def run_pair(interp: Interpreter, fn, params: dict, o, s1: Store, s2: Store, locs: list) -> Optional[Violation]:
    """Run both stores in lock step, checking every statement whose pre-stores are o-equivalent."""
    t1, t2 = s1.copy(), s2.copy()
    e1, e2 = dict(params), dict(params)
    stmt = fn.body
    while not isinstance(stmt, A.Skip):
        if not isinstance(stmt, A.Let) and not equivalent(o, t1, t2, locs):
            return None  # the program itself made the stores distinguishable
        pre = (t1.copy(), t2.copy())
        interp.step(stmt, e1, t1)
        nxt = interp.step(stmt, e2, t2)
        if not isinstance(stmt, A.Let):
            why = compare_runs(o, pre, (t1, t2), locs)
            if why is not None:
                return Violation(fn.name, o, params, (s1, s2), (t1, t2), why)
        stmt = nxt
    return None


def check_noninterference(module, program, fn, trials: int = 1000, seed: int = 0,
                          universe: Optional[Universe] = None, stop_at_first: bool = True) -> NIResult:
    """Run ``fn`` on random o-equivalent store pairs and compare what ``o`` can see."""
    universe = universe or Universe()
    rng = random.Random(seed)
    locs = locations(module, universe)
    sorts = param_sorts(module, program, fn)
    interp = Interpreter(module, program, universe)
    res = NIResult()
    if not fn.is_statement:
        return res
    for _ in range(trials):
        res.trials += 1
        o = rng.choice(universe.values_of("User"))
        params = {p: rng.choice(values_of_sort(srt, module, universe)) for p, srt in zip(fn.params, sorts)}
        s1, s2 = equivalent_pair(module, universe, rng, o, locs)
        try:
            v = run_pair(interp, fn, params, o, s1, s2, locs)
        except (EvalError, PolicyError, KeyError) as e:
            res.errors.append(f"{fn.name}: {e}")
            break
        if v is not None:
            res.violations.append(v)
            if stop_at_first:
                break
    return res


def check_program_noninterference(module, program, trials: int = 1000, seed: int = 0,
                                  universe: Optional[Universe] = None) -> NIResult:
    out = NIResult()
    for fn in program.functions:
        r = check_noninterference(module, program, fn, trials, seed, universe)
        out.trials += r.trials
        out.violations += r.violations
        out.errors += r.errors
    return out
