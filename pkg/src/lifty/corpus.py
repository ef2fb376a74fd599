"""Built-in programs: the synthetic N-reads stress test and fixture loading."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .parser import parse_policy_module, parse_program

CONF_POLICY = """module ConfPolicy where

data Phase = Submission | Review | Done
data Status = Accept | Reject | NoDecision

redact NoDecision

phase :: Ref (Tagged Phase <any>)
status :: PaperId -> Ref (Tagged Status <\\(s,u). s[phase] = Done>)
"""


def n_reads_source(n: int) -> str:
    """A function that reads the same protected field ``n`` times and prints the results."""
    if n < 1:
        raise ValueError("need at least one read")
    lines = ["stress client p =", "  let msg ="]
    for i in range(1, n + 1):
        lead = "do " if i == 1 else "   "
        lines.append(f"    {lead}x{i} <- get (status p)")
    shows = ", ".join(f"show x{i}" for i in range(1, n + 1))
    lines.append(f"       unwords [{shows}] in")
    lines.append("  print client msg")
    return "\n".join(lines) + "\n"


def n_reads(n: int):
    """(policy module, program) of the stress test."""
    module = parse_policy_module(CONF_POLICY)
    return module, parse_program(n_reads_source(n), module)


@dataclass
class Fixture:
    name: str
    policy: Path
    leaky: Path
    golden: Optional[Path]

    def load(self, which: str = "leaky"):
        module = parse_policy_module(self.policy.read_text())
        path = self.leaky if which == "leaky" else self.golden
        return module, parse_program(path.read_text(), module)


def fixtures(root) -> list:
    """Benchmark fixtures under ``root``: directories holding policy.liftyp and leaky.lifty."""
    out = []
    for d in sorted(Path(root).iterdir()):
        if (d / "policy.liftyp").exists() and (d / "leaky.lifty").exists():
            g = d / "golden.lifty"
            out.append(Fixture(d.name, d / "policy.liftyp", d / "leaky.lifty", g if g.exists() else None))
    return out
