"""Horn constraints over unknown policy predicates, with provenance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import ast as A
from . import formula as F


@dataclass(frozen=True)
class Origin:
    """Where a clause or unknown came from: a subterm of a function body."""

    path: tuple  # child indices from the function body down to the term
    term: object = field(compare=False)
    rule: str = ""
    pos: Optional[tuple] = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return A.size(self.term)

    def span(self) -> str:
        return f"{self.pos[0]}:{self.pos[1]}" if self.pos else "?"


@dataclass(frozen=True)
class HornClause:
    hyps: tuple
    head: F.Formula
    origin: Origin
    kind: str = "flow"  # "flow" for policy clauses, "refine" for functional refinements

    @property
    def is_source(self) -> bool:
        """A policy clause whose conclusion is a concrete policy (not an unknown)."""
        return self.kind == "flow" and not F.kvars(self.head)

    def is_trivial(self) -> bool:
        return self.head == F.TOP or self.head in self.hyps or F.BOT in self.hyps

    def show(self) -> str:
        lhs = F.show(F.conj(self.hyps)) if self.hyps else "true"
        return f"{lhs} => {F.show(self.head)}"


@dataclass
class PolicyVar:
    name: str
    scope: tuple  # program variables (and symbolic stores) the solution may mention
    origin: Origin
    kind: str = "policy"  # "policy" (over s, u) or "downgrade" (program variables only)


@dataclass(frozen=True)
class Qualifier:
    """Atom template; ``params`` maps placeholder variables to the sort they range over."""

    body: F.Formula
    params: tuple = ()  # ((name, sort), ...)


@dataclass
class HornSystem:
    clauses: list = field(default_factory=list)
    kvars: dict = field(default_factory=dict)  # name -> PolicyVar
    facts: list = field(default_factory=list)  # refinements of every binder, true throughout
    sorts: dict = field(default_factory=dict)  # program variable -> sort name
    qualifiers: list = field(default_factory=list)
    stores: list = field(default_factory=list)  # symbolic store names
    sources: dict = field(default_factory=dict)  # origin path -> (Origin, expected template, actual type)

    def nontrivial(self) -> list:
        return [c for c in self.clauses if not c.is_trivial()]

    def without(self, drop) -> "HornSystem":
        keep = [c for c in self.clauses if c not in drop]
        return HornSystem(keep, self.kvars, self.facts, self.sorts, self.qualifiers, self.stores, self.sources)
