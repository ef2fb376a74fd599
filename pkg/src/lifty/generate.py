"""Patch generation: redaction branches, abduced guards and the enforce driver."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

from . import ast as A
from . import formula as F
from . import prelude
from .fixpoint import Solver, _relevant_facts, instances
from .horn import HornClause, HornSystem
from .localize import CastSite, Localization, localize
from .logic import ValidityQuery, check_validity
from .pretty import pretty_term
from .typecheck import Checker, LiftyTypeError, check_isolated, checked, content

HOLE = "?abduce"
X0 = "⟪x0⟫"  # placeholder for the original term while enumerating
XC = "⟪xc⟫"  # placeholder for the original term's content


class MissingDefault(LiftyTypeError):
    """No branch is safe unconditionally; a redaction value must be declared."""


class UnenforceablePolicy(LiftyTypeError):
    """No guard can decide a branch condition without leaking."""


class AbductionFailure(LiftyTypeError):
    """No qualifier combination explains why a branch is safe."""


@dataclass
class Branch:
    term: object
    template: object = None  # the term with the original still a placeholder
    cond: Optional[F.Formula] = None

    @property
    def size(self) -> int:
        return A.size(self.template if self.template is not None else self.term)


@dataclass
class Patch:
    term: object
    cast: CastSite
    branches: list = field(default_factory=list)  # (Branch, condition) outermost first
    guards: list = field(default_factory=list)  # (guard variable, Term)
    default: object = None

    def to_json(self) -> dict:
        return {
            "span": self.cast.span(),
            "branches": [{"term": pretty_term(b.term), "condition": F.show(c)} for b, c in self.branches],
            "guards": [{"var": v, "term": pretty_term(g)} for v, g in self.guards],
            "default": pretty_term(self.default) if self.default is not None else None,
        }


# ------------------------------------------------------------ components

DEFAULT_VALUES = ("False", "0", '""', "[]", "Nothing")


def _leaf(name: str):
    if name == "0":
        return A.Lit(0)
    if name == '""':
        return A.Lit("")
    return A.Const(name)


def _arity(ty) -> int:
    n = 0
    while isinstance(ty, A.TFun):
        n += 1
        ty = ty.ret
    return n


def component_arity(module, name: str) -> int:
    sig = module.signature(name) if module is not None else None
    if sig is not None and not sig.is_field:
        return _arity(sig.scheme.body)
    if name in prelude.SCHEMES:
        return _arity(prelude.SCHEMES[name].body)
    return 0


def redaction_set(module, defaults: bool = True) -> list:
    """Names usable in branches: declared redactions, plus default values if asked."""
    names = list(module.redactions) if module is not None else []
    if defaults:
        names += [d for d in DEFAULT_VALUES if d not in names]
    return names


# ------------------------------------------------------------ enumeration


def _mentions(t, name: str) -> bool:
    return name in A.free_vars(t)


def _terms_by_size(leaves: list, lambdas: list, funcs: list, bound: int) -> dict:
    """Bottom-up enumeration; entries are (term, remaining arity)."""
    by_size: dict = {1: [(t, 0) for t in leaves] + [(f, k) for f, k in funcs]}
    if lambdas:
        by_size.setdefault(2, []).extend((lam, 1) for lam in lambdas)
    for n in range(2, bound + 1):
        out = by_size.setdefault(n, [])
        for fs in range(1, n - 1):
            asz = n - 1 - fs
            for f, k in by_size.get(fs, []):
                if k < 1 or isinstance(f, A.Lambda):
                    continue
                for a, ak in by_size.get(asz, []):
                    if ak and not isinstance(a, A.Lambda):
                        continue
                    out.append((A.App(f, a), k - 1))
    return by_size


def candidate_terms(x0, scope_vars, module, components, bound: int = 6) -> list:
    """Branch-shaped terms over the original term and ``components`` (sizes count x0 as one node)."""
    consts, funcs = [], []
    for name in components:
        k = component_arity(module, name)
        (funcs if k else consts).append((name, k))
    leaves = [A.Var(X0), A.Var(XC)] + [_leaf(n) for n, _ in consts] + [A.Var(v) for v in scope_vars]
    lambdas = [A.Lambda("_", _leaf(n)) for n, _ in consts]
    fterms = [(A.Const(n), k) for n, k in funcs]
    by_size = _terms_by_size(leaves, lambdas, fterms, bound)
    out = [A.Var(X0)] + [_leaf(n) for n, _ in consts]
    for n in sorted(by_size):
        for t, k in by_size[n]:
            if k or not isinstance(t, A.App):
                continue
            if _mentions(t, X0) == _mentions(t, XC):
                continue  # must use the original exactly one way
            out.append(t)
    return out


def instantiate_branch(t, x0):
    """Replace placeholders: ``x0`` directly, or bind it when its content is used."""
    if _mentions(t, XC):
        xc = A.fresh_name("x", A.free_vars(x0) | {b for b in A.binders(x0)})
        body = A.substitute(t, {XC: A.Var(xc)})
        return A.Bind(x0, A.Lambda(xc, body))
    return A.substitute(t, {X0: x0})


def _bot_type(t):
    """``t`` with every policy made maximally restrictive, so only shape and refinements matter."""
    from .typecheck import map_policies
    return map_policies(t, lambda _: F.BOT)


@dataclass
class Site:
    """Everything needed to explore replacements for one cast."""

    cast: CastSite
    checker: Checker
    env: object
    parent: dict  # solution of the enclosing system's unknowns
    external: Optional[str] = None

    @property
    def x0(self):
        return self.cast.term

    @property
    def expected(self):
        return self.cast.expected


def site_of(loc: Localization, cast: CastSite, external=None) -> Site:
    env = loc.checker.cast_envs[cast.path]
    return Site(cast, loc.checker, env, loc.cast_solution.assignment, external)


def enumerate_branches(site: Site, components, bound: int = 6) -> list:
    """Well-shaped candidate replacements for the cast term, original first."""
    x0 = site.x0
    scope = [v for v in sorted(A.free_vars(x0)) if site.env.lookup(v) is not None]
    shape = _bot_type(site.expected)
    out: list = []
    for t in candidate_terms(x0, scope, site.checker.module, components, bound):
        term = instantiate_branch(t, x0)
        if any(A.alpha_equiv(term, b.term) for b in out):
            continue
        if t != A.Var(X0):
            try:
                check_isolated(site.checker, site.env, term, shape, site.cast.path)
            except LiftyTypeError:
                continue
        out.append(Branch(term, t))
    return out


# ------------------------------------------------------------ abduction


def _plug(f, hole, parent: dict, own):
    """Fill the hypothesis placeholder and fix the enclosing system's unknowns to their solution."""
    def leaf(g):
        if isinstance(g, F.KApp):
            if g.name == HOLE:
                return hole
            if g.name not in own and g.name in parent:
                return F.subst(F.conj(parent[g.name]), g.mapping)
        return g
    return F.map_formula(f, leaf)


def _canon(f):
    """Orient equalities so that ``a == b`` and ``b == a`` coincide."""
    def leaf(g):
        if isinstance(g, F.Eq) and F.show(g.rhs) < F.show(g.lhs) and g.rhs not in (F.TRUE_C, F.FALSE_C):
            return F.Eq(g.rhs, g.lhs)
        return g
    return F.map_formula(f, leaf)


class TermSystem:
    """Constraints of a term checked at the cast site, under a pluggable hypothesis."""

    def __init__(self, site: Site, term, expected):
        self.site = site
        self.sys = check_isolated(site.checker, site.env, term, expected,
                                  site.cast.path, assume=[F.KApp(HOLE)])
        self.solver = Solver(self.sys, site.external)
        self.own = set(self.sys.kvars)
        self.clauses = self.sys.nontrivial()
        self.memo: dict = {}

    def solves(self, hyp) -> bool:
        if hyp in self.memo:
            return self.memo[hyp]
        cl = []
        for c in self.clauses:
            hyps = tuple(x for h in c.hyps for x in F.conjuncts(_plug(h, hyp, self.site.parent, self.own)))
            head = _plug(c.head, hyp, self.site.parent, self.own)
            if head == F.TOP or F.BOT in hyps:
                continue
            cl.append(HornClause(hyps, head, c.origin, c.kind))
        ok = self.solver.solve(cl).ok
        self.memo[hyp] = ok
        return ok


class BranchSystem(TermSystem):
    def __init__(self, site: Site, branch: Branch):
        super().__init__(site, branch.term, site.expected)
        self.branch = branch


class Logic:
    """Implication and consistency checks at the cast site."""

    def __init__(self, site: Site, sys: HornSystem):
        self.site = site
        self.facts = sys.facts
        self.paths = [_plug(p, F.TOP, site.parent, ()) for p in site.env.paths if p != F.KApp(HOLE)]

    def valid(self, hyps, goal) -> bool:
        hyps = [h for h in list(self.paths) + list(hyps) if h != F.TOP]
        facts = _relevant_facts(self.facts, hyps + [goal])
        allh = tuple(c for h in hyps + facts for c in F.conjuncts(h))
        if goal == F.TOP or goal in allh:
            return True
        return check_validity(ValidityQuery.of(allh, goal), self.site.external).valid

    def implies(self, a, b, ctx=()) -> bool:
        return self.valid(list(ctx) + [a], b)

    def consistent(self, a, ctx=()) -> bool:
        return not self.valid(list(ctx) + [a], F.BOT)


def field_policy(module, name: str):
    """Outer policy of a field's content."""
    sig = module.fields.get(name) if module is not None else None
    if sig is None:
        return F.TOP
    t = sig.scheme.body
    while isinstance(t, A.TFun):
        t = t.ret
    while isinstance(t, A.TRef):
        t = t.inner
    return t.policy if isinstance(t, A.TTagged) else F.TOP


def store_reads(f) -> list:
    """Distinct ``σ[loc]`` terms of a formula, in first-occurrence order."""
    out: list = []

    def term(t):
        if isinstance(t, F.Select):
            if t not in out:
                out.append(t)
            term(t.idx)
        elif isinstance(t, F.App):
            for a in t.args:
                term(a)

    for a in F.atoms(f):
        if isinstance(a, F.Eq):
            term(a.lhs)
            term(a.rhs)
    return out


def _field_of(sel) -> str:
    return sel.idx.fn[1:] if isinstance(sel.idx, F.App) and sel.idx.fn.startswith("#") else ""


def read_rank(module, f) -> int:
    """0 for pure conditions, 1 when they read only public fields, 2 when a read needs a downgrade."""
    reads = store_reads(f)
    if not reads:
        return 0
    return 2 if any(field_policy(module, _field_of(r)) != F.TOP for r in reads) else 1


def protected_locations(site: Site) -> set:
    out = set()
    for t in A.subterms(site.x0):
        if isinstance(t, A.Get):
            loc = site.checker.embed(site.env, t.ref)
            if loc is not None:
                out.add(loc)
    return out


def abduction_candidates(site: Site, sys: HornSystem) -> list:
    scope = list(site.env.names()) + [site.env.store]
    out: list = []
    for f in instances(sys.qualifiers, scope, sys.sorts, kind="abduce"):
        f = _canon(f)
        if len(F.atoms(f)) == 1 and f not in out:
            out.append(f)
    return out


def abduce_condition(site: Site, bs: BranchSystem, ctx=(), logic: Optional[Logic] = None):
    """Weakest qualifier condition under which the branch is safe (⊤, a formula, or None)."""
    logic = logic or Logic(site, bs.sys)
    base = list(ctx)
    if bs.solves(F.conj(base)):
        return F.TOP
    cands = [c for c in abduction_candidates(site, bs.sys) if logic.consistent(c, base)]
    good = [c for c in cands if bs.solves(F.conj(base + [c]))]
    if not good:
        for a, b in itertools.combinations(cands, 2):
            pair = F.conj([a, b])
            if logic.consistent(pair, base) and bs.solves(F.conj(base + [pair])):
                good.append(pair)
        if not good:
            return None
    good = weakest(good, logic, base)
    module = site.checker.module
    ranks = {g: read_rank(module, g) for g in good}
    if any(r < 2 for r in ranks.values()):
        protected = protected_locations(site)
        good = [g for g in good if ranks[g] < 2 or any(r.idx in protected for r in store_reads(g))]
    good.sort(key=lambda g: (ranks[g], F.show(g)))
    cond = F.disj(good)
    if len(good) > 1 and not bs.solves(F.conj(base + [cond])):
        cond = good[0]
    return cond


def weakest(conds: list, logic: Logic, ctx=()) -> list:
    """Drop conditions strictly stronger than another one, and duplicates up to equivalence."""
    out: list = []
    for i, a in enumerate(conds):
        dominated = False
        for j, b in enumerate(conds):
            if i == j:
                continue
            ab, ba = logic.implies(a, b, ctx), logic.implies(b, a, ctx)
            if ab and (not ba or j < i):
                dominated = True
                break
        if not dominated:
            out.append(a)
    return out


# ------------------------------------------------------------ assembly


def _pick(site: Site, conds: list, logic: Logic, ctx):
    """Strongest condition; ties prefer the original, then declared redactions, then smaller terms."""
    def stronger(a, b):
        return logic.implies(a, b, ctx) and not logic.implies(b, a, ctx)

    top = [bc for bc in conds if bc[1] != F.TOP]
    if not top:
        return min(conds, key=lambda bc: _tie(site, bc))
    maximal = [bc for bc in top if not any(stronger(o[1], bc[1]) for o in top if o is not bc)]
    return min(maximal, key=lambda bc: _tie(site, bc))


def _tie(site, bc):
    b, c = bc
    declared = set(site.checker.module.redactions)
    uses = any(isinstance(n, A.Const) and n.name in declared for n in A.subterms(b.term))
    return (b.template != A.Var(X0), not uses, b.size, F.show(c), pretty_term(b.term))


def choose_branches(site: Site, branches: list):
    """Ordered (branch, condition) pairs and the default branch."""
    systems = {}
    for b in branches:
        try:
            systems[id(b)] = BranchSystem(site, b)
        except LiftyTypeError:
            continue
    if not systems:
        raise MissingDefault("no replacement term has the required type", site.cast.pos)
    logic = Logic(site, next(iter(systems.values())).sys)
    remaining = [b for b in branches if id(b) in systems]
    ctx: list = []
    chosen: list = []
    while remaining:
        conds = []
        for b in remaining:
            c = abduce_condition(site, systems[id(b)], ctx, logic)
            if c is not None:
                conds.append((b, c))
        x0 = [bc for bc in conds if bc[0].template == A.Var(X0)]
        if x0 and x0[0][1] != F.TOP:
            # a replacement needing at least the original's condition is never preferable
            conds = [bc for bc in conds if bc in x0 or not logic.implies(bc[1], x0[0][1], ctx)]
        if not conds:
            break
        b, c = _pick(site, conds, logic, ctx)
        if c == F.TOP:
            return chosen, b
        chosen.append((b, c))
        ctx.append(F.neg(c))
        remaining = [r for r in remaining if r is not b]
    raise MissingDefault(
        f"no branch is safe for every viewer at {site.cast.span()}; declare a redaction value",
        site.cast.pos)


# ------------------------------------------------------------ guards


class Names:
    """Fresh guard and read variable names for one function."""

    def __init__(self, avoid):
        self.avoid = set(avoid)
        self.k = 0

    def next(self) -> int:
        self.k += 1
        while f"c{self.k}" in self.avoid or f"x{self.k}" in self.avoid:
            self.k += 1
        return self.k

    def fresh(self, base: str) -> str:
        k = self.next()
        return f"{base}{k}"


def location_term(loc):
    """Program term denoting a field location ``#f a1 .. an``."""
    return A.apps(A.Const(loc.fn[1:]), *[logic_to_term(a, {}) for a in loc.args])


def logic_to_term(t, reads: dict):
    if t in reads:
        return A.Var(reads[t])
    if isinstance(t, F.Var):
        return A.Var(t.name)
    if isinstance(t, F.Ctor):
        return A.Const(t.name)
    if isinstance(t, F.Lit):
        return A.Lit(t.value)
    if isinstance(t, F.App):
        return A.apps(A.Const(t.fn), *[logic_to_term(a, reads) for a in t.args])
    raise UnenforceablePolicy(f"cannot compute {F.show_term(t)} in a guard")


def formula_to_term(f, reads: dict):
    """Boolean program expression computing ``f`` (store reads already bound)."""
    if isinstance(f, F.Not):
        return A.App(A.Const("!"), formula_to_term(f.arg, reads))
    if isinstance(f, (F.And, F.Or)):
        op = "&&" if isinstance(f, F.And) else "||"
        parts = [formula_to_term(a, reads) for a in f.args]
        out = parts[-1]
        for p in reversed(parts[:-1]):
            out = A.apps(A.Const(op), p, out)
        return out
    if isinstance(f, F.Eq):
        if f.rhs == F.TRUE_C:
            return logic_to_term(f.lhs, reads)
        if f.rhs == F.FALSE_C:
            return A.App(A.Const("!"), logic_to_term(f.lhs, reads))
        lhs, rhs = f.lhs, f.rhs
        if store_reads(F.Eq(rhs, rhs)) and not store_reads(F.Eq(lhs, lhs)):
            lhs, rhs = rhs, lhs
        return A.apps(A.Const("=="), logic_to_term(lhs, reads), logic_to_term(rhs, reads))
    if f == F.TOP:
        return A.Const("True")
    if f == F.BOT:
        return A.Const("False")
    raise UnenforceablePolicy(f"cannot compute {F.show(f)} in a guard")


def guard_term(cond, module, names: Names):
    """Monadic term computing ``cond``: one bind per store read, downgraded when a read is protected."""
    reads = store_reads(cond)
    binders = {r: (f"x{names.k}" if i == 0 and names.k else names.fresh("x")) for i, r in enumerate(reads)}
    body = formula_to_term(cond, binders)
    for r in reversed(reads):
        body = A.Bind(A.Get(location_term(r.idx)), A.Lambda(binders[r], body))
    if any(field_policy(module, _field_of(r)) != F.TOP for r in reads):
        body = A.Downgrade(body)
    return body


def _bool_at(site: Site):
    exp = site.expected
    pol = exp.policy if isinstance(exp, A.TTagged) else F.TOP
    return A.TTagged(A.TBase("Bool"), pol)


def synthesize_guard(site: Site, cond, names: Names):
    """A guard for ``cond`` that is itself visible wherever the patched value is."""
    module = site.checker.module
    var = names.fresh("c")
    term = guard_term(cond, module, names)
    fields = sorted({_field_of(r) for r in store_reads(cond)})
    try:
        ok = TermSystem(site, term, _bool_at(site)).solves(F.TOP)
    except LiftyTypeError:
        ok = False
    if not ok:
        what = ", ".join(fields) if fields else F.show(cond)
        raise UnenforceablePolicy(
            f"checking {F.show(cond)} would leak {what} to the viewer; the policy cannot be enforced "
            f"without revealing {what}", site.cast.pos, "T-⌊·⌋")
    return var, term


def guard_units(cond) -> list:
    """Atomic conditions of a (disjunctive or conjunctive) guard, one guard variable each."""
    if isinstance(cond, (F.And, F.Or)):
        return [u for a in cond.args for u in guard_units(a)]
    return [cond]


def _combine(cond, var_of: dict):
    if isinstance(cond, (F.And, F.Or)):
        op = "&&" if isinstance(cond, F.And) else "||"
        parts = [_combine(a, var_of) for a in cond.args]
        out = parts[-1]
        for p in reversed(parts[:-1]):
            out = A.apps(A.Const(op), p, out)
        return out
    return A.Var(var_of[cond])


# ------------------------------------------------------------ patches


def _branch_term(b: Branch, x0, names: Names):
    if b.template is not None and _mentions(b.template, XC):
        xc = names.fresh("x")
        return A.Bind(x0, A.Lambda(xc, A.substitute(b.template, {XC: A.Var(xc)})))
    return b.term


def assemble_patch(site: Site, chosen: list, default: Branch, names: Names) -> Patch:
    """Nest guarded branches, strongest condition outermost, around the default."""
    layers = []
    guards = []
    for b, cond in chosen:
        var_of, binds = {}, []
        for unit in guard_units(cond):
            var, term = synthesize_guard(site, unit, names)
            var_of[unit] = var
            binds.append((var, term))
        guards.extend(binds)
        layers.append((binds, _combine(cond, var_of), _branch_term(b, site.x0, names)))
    rest = _branch_term(default, site.x0, names)
    dflt = rest
    for binds, test, then in reversed(layers):
        rest = A.If(test, then, rest)
        for var, g in reversed(binds):
            rest = A.Bind(g, A.Lambda(var, rest))
    return Patch(rest, site.cast, list(chosen), guards, dflt)


def generate_patch(loc: Localization, cast: CastSite, components, names: Names,
                   bound: int = 6, external=None) -> Patch:
    """Replacement for one cast, built independently of every other cast."""
    site = site_of(loc, cast, external)
    branches = enumerate_branches(site, components, bound)
    chosen, default = choose_branches(site, branches)
    return assemble_patch(site, chosen, default, names)


def substitute_patches(fn, patches: list):
    body = fn.body
    for p in sorted(patches, key=lambda p: len(p.cast.path), reverse=True):
        body = A.replace_at(body, p.cast.path, p.term)
    return replace(fn, body=body)


@dataclass
class FunctionReport:
    name: str
    localization: Optional[Localization] = None
    patches: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "function": self.name,
            "casts": [c.to_json() for c in self.localization.casts] if self.localization else [],
            "patches": [p.to_json() for p in self.patches],
        }


@dataclass
class Enforced:
    program: A.Program
    reports: list = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return any(r.patches for r in self.reports)

    def to_json(self) -> dict:
        return {"changed": self.changed, "functions": [r.to_json() for r in self.reports]}


def _names_in(fn) -> set:
    out = set(fn.params) | A.free_vars(fn.body) | set(A.binders(fn.body))
    return out


def enforce_function(module, program, fn, components=None, bound: int = 6, external=None, order=None):
    """Patched copy of ``fn`` plus its report; ``fn`` itself when it is already safe."""
    from .typecheck import constraints
    system = constraints(module, program, fn)
    loc = localize(module, program, fn, system, external)
    report = FunctionReport(fn.name, loc)
    if not loc.casts:
        return fn, report
    comps = redaction_set(module) if components is None else components
    names = Names(_names_in(fn))
    casts = loc.casts if order is None else [loc.casts[i] for i in order]
    patches = [generate_patch(loc, c, comps, names, bound, external) for c in casts]
    patched = substitute_patches(fn, patches)
    report.patches = sorted(patches, key=lambda p: p.cast.path)
    sol = Solver(constraints(module, program, patched), external).solve()
    if not sol.ok:
        raise LiftyTypeError("the patched function does not typecheck: " + sol.failing[0].show(),
                             fn.pos, sol.failing[0].origin.rule, function=fn.name)
    return patched, report


def enforce(module, program, components=None, bound: int = 6, external=None) -> Enforced:
    """Check every function, and repair the leaky ones."""
    out = A.Program(list(program.functions), dict(program.signatures))
    reports = []
    for i, fn in enumerate(program.functions):
        new, rep = enforce_function(module, out, fn, components, bound, external)
        out.functions[i] = new
        reports.append(rep)
    return Enforced(out, reports)
