"""Command-line driver: ``lifty check|enforce|ni-test|bench``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import generate as G
from . import logic
from .corpus import n_reads
from .localize import FunctionalDependency, localize
from .nioracle import check_program_noninterference
from .parser import ParseError, parse_policy_module, parse_program
from .pretty import pretty_program
from .typecheck import LiftyTypeError, NeedsEnforcement, TypeErrorReport, WellTyped, check_program

SCHEMA = 1

EXIT_OK, EXIT_FLAGGED, EXIT_ERROR, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    program: Optional[Path] = None
    policy: Optional[Path] = None
    json: bool = False
    seed: int = 0
    branch_bound: int = 6
    trials: int = 1000
    sizes: tuple = (1, 2, 4, 8, 16)
    out: Optional[Path] = None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lifty", description="Check and repair information-flow leaks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("check", "typecheck against the policies"),
                        ("enforce", "insert guards that remove leaks"),
                        ("ni-test", "randomized noninterference test"),
                        ("bench", "scalability run on the synthetic N-reads program")):
        p = sub.add_parser(name, help=help_)
        need = name != "bench"
        p.add_argument("--program", type=Path, required=need)
        p.add_argument("--policy", type=Path, required=need)
        p.add_argument("--json", action="store_true", help="machine-readable report")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--branch-bound", type=int, default=6, help="largest branch size, in AST nodes")
        p.add_argument("--trials", type=int, default=1000)
        if name == "enforce":
            p.add_argument("--out", type=Path, help="where to write the patched program")
        if name == "bench":
            p.add_argument("--sizes", default="1,2,4,8,16", help="comma-separated read counts")
    return ap


def config_from(args) -> RunConfig:
    cfg = RunConfig(args.command, args.program, args.policy, args.json, args.seed,
                    args.branch_bound, args.trials, out=getattr(args, "out", None))
    if getattr(args, "sizes", None):
        cfg.sizes = tuple(int(x) for x in args.sizes.split(","))
    if cfg.branch_bound < 1:
        raise ValueError("--branch-bound must be at least 1")
    return cfg


def emit(cfg: RunConfig, payload: dict, text: str) -> None:
    if cfg.json:
        print(json.dumps({"schema": SCHEMA, **payload}, indent=2, sort_keys=True, ensure_ascii=False))
    elif text:
        print(text)


def load(cfg: RunConfig):
    module = parse_policy_module(cfg.policy.read_text())
    source = cfg.program.read_text()
    return module, parse_program(source, module), source


def _error_payload(e) -> dict:
    if isinstance(e, LiftyTypeError):
        return {"category": type(e).__name__, **e.to_json()}
    return {"category": type(e).__name__, "message": str(e)}


# ------------------------------------------------------------ commands


def cmd_check(cfg: RunConfig) -> int:
    module, program, _ = load(cfg)
    res = check_program(program, module)
    if isinstance(res, WellTyped):
        emit(cfg, {"verdict": res.verdict}, "well-typed")
        return EXIT_OK
    if isinstance(res, TypeErrorReport):
        emit(cfg, {"verdict": res.verdict, "errors": [_error_payload(e) for e in res.errors]},
             "\n".join(f"type error: {e}" for e in res.errors))
        return EXIT_ERROR
    funcs, lines = [], []
    for fn in program.functions:
        if fn.name not in res.failing:
            continue
        try:
            loc = localize(module, program, fn, res.systems[fn.name])
        except LiftyTypeError as e:
            funcs.append({"function": fn.name, "error": _error_payload(e)})
            lines.append(f"{fn.name}: {type(e).__name__}: {e}")
            continue
        funcs.append(loc.to_json())
        for c in loc.casts:
            lines.append(f"{fn.name}: leak at {c.span()}: {c.to_json()['term']}")
            lines.append(f"    actual policy:   {c.to_json()['actual_policy']}")
            lines.append(f"    expected policy: {c.to_json()['expected_policy']}")
    emit(cfg, {"verdict": res.verdict, "functions": funcs}, "needs enforcement\n" + "\n".join(lines))
    return EXIT_FLAGGED


def patched_path(cfg: RunConfig) -> Path:
    if cfg.out is not None:
        return cfg.out
    p = cfg.program
    return p.with_name(p.name[: -len(p.suffix)] + ".patched.lifty" if p.suffix else p.name + ".patched.lifty")


def cmd_enforce(cfg: RunConfig) -> int:
    module, program, source = load(cfg)
    try:
        res = G.enforce(module, program, bound=cfg.branch_bound)
    except (G.MissingDefault, G.UnenforceablePolicy, FunctionalDependency) as e:
        emit(cfg, {"verdict": "failed", "error": _error_payload(e)}, f"{type(e).__name__}: {e}")
        return EXIT_FLAGGED
    text = pretty_program(res.program) + "\n" if res.changed else source
    out = patched_path(cfg)
    out.write_text(text)
    payload = {"verdict": "patched" if res.changed else "unchanged", "output": str(out), **res.to_json()}
    emit(cfg, payload, text.rstrip("\n") + f"\n-- written to {out}")
    return EXIT_OK


def cmd_ni_test(cfg: RunConfig) -> int:
    module, program, _ = load(cfg)
    res = check_program_noninterference(module, program, cfg.trials, cfg.seed)
    payload = {"verdict": res.verdict, "trials": res.trials, "errors": res.errors,
               "violations": [{"function": v.function, "observer": str(v.observer), "reason": v.reason,
                               "params": {k: str(x) for k, x in v.params.items()},
                               "store1": v.before[0].to_text(), "store2": v.before[1].to_text()}
                              for v in res.violations]}
    if res.violations:
        text = "violation\n" + res.violations[0].describe()
    elif res.errors:
        text = "harness error\n" + "\n".join(res.errors)
    else:
        text = f"pass ({res.trials} trials)"
    emit(cfg, payload, text)
    if res.violations:
        return EXIT_FLAGGED
    return EXIT_ERROR if res.errors else EXIT_OK


def time_n_reads(n: int, bound: int = 6) -> dict:
    """Localize / Generate / Total seconds for the N-reads program, from a cold prover cache."""
    from .fixpoint import Solver
    from .typecheck import constraints

    logic.clear_cache()
    module, program = n_reads(n)
    fn = program.functions[0]
    t0 = time.perf_counter()
    loc = localize(module, program, fn)
    t1 = time.perf_counter()
    names = G.Names(G._names_in(fn))
    comps = G.redaction_set(module)
    patches = [G.generate_patch(loc, c, comps, names, bound) for c in loc.casts]
    t2 = time.perf_counter()
    patched = G.substitute_patches(fn, patches)
    ok = Solver(constraints(module, program, patched)).solve().ok
    t3 = time.perf_counter()
    return {"n": n, "patches": len(patches), "localize": t1 - t0, "generate": t2 - t1,
            "total": t3 - t0, "well_typed": ok}


def cmd_bench(cfg: RunConfig) -> int:
    rows = [time_n_reads(n, cfg.branch_bound) for n in cfg.sizes]
    lines = [f"{'N':>4} {'patches':>8} {'localize':>10} {'generate':>10} {'total':>10}"]
    for r in rows:
        lines.append(f"{r['n']:>4} {r['patches']:>8} {r['localize']:>10.3f} {r['generate']:>10.3f} {r['total']:>10.3f}")
    by_n = {r["n"]: r for r in rows}
    payload = {"rows": rows}
    if 4 in by_n and 16 in by_n and by_n[4]["generate"] > 0:
        ratio = by_n[16]["generate"] / by_n[4]["generate"]
        payload["generate_ratio_16_4"] = ratio
        lines.append(f"generate time(16)/time(4) = {ratio:.2f} (linear: 4, limit 6) "
                     + ("linear" if ratio <= 6 else "superlinear"))
    emit(cfg, payload, "\n".join(lines))
    return EXIT_OK if all(r["well_typed"] for r in rows) else EXIT_ERROR


COMMANDS = {"check": cmd_check, "enforce": cmd_enforce, "ni-test": cmd_ni_test, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from(args)
        return COMMANDS[cfg.command](cfg)
    except OSError as e:
        print(f"lifty: {e}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, LiftyTypeError, ValueError) as e:
        if getattr(args, "json", False):
            print(json.dumps({"schema": SCHEMA, "verdict": "type-error", "error": _error_payload(e)}, indent=2))
        else:
            print(f"lifty: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
