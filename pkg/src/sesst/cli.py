"""Command line front end.

Every verb reads its arguments as literals in the type, process or
environment syntax; ``-`` stands for a line of standard input.
"""

from __future__ import annotations

import argparse
import json
import sys

from .calculus import ProcessSyntaxError, parse_process, phi, show_process
from .characteristic import char_proc, counterexample, outcome_json, preciseness_check
from .core_types import TypeSyntaxError, dual, parse_type, show, unfold_once
from .semantics import (
    BudgetExhausted, ErrorReached, ModeError, NoErrorProven, reach_error,
    DEFAULT_DEPTH, DEFAULT_STATES,
)
from .subtyping import ASYNC, SYNC, Budget, classify, subtype
from .typing import EnvSyntaxError, parse_env, typecheck

SCHEMA = "sesst/1"
EX_USAGE = 64
EX_DATAERR = 65


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sesst", description="Session type subtyping, typing and counterexamples.")
    p.add_argument("verb", choices=["dual", "unfold", "sub", "negate", "charproc", "typecheck",
                                    "run", "counterexample", "preciseness", "phi"])
    p.add_argument("args", nargs="*")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--sync", dest="asynchronous", action="store_false")
    mode.add_argument("--async", dest="asynchronous", action="store_true")
    p.add_argument("--ext", action="store_true", help="extended calculus with sorts")
    p.add_argument("--depth", type=int, default=DEFAULT_DEPTH)
    p.add_argument("--states", type=int, default=DEFAULT_STATES)
    p.add_argument("--unfold", type=int, default=Budget.unfold)
    p.add_argument("--pairs", type=int, default=Budget.pairs)
    p.add_argument("--nesting", type=int, default=Budget.nesting)
    p.add_argument("--name", default="a", help="channel for charproc")
    p.add_argument("--seed", type=int, default=None, help="unused by the current verbs")
    out = p.add_mutually_exclusive_group()
    out.add_argument("--json", dest="json", action="store_true")
    out.add_argument("--text", dest="json", action="store_false")
    p.set_defaults(asynchronous=False, json=False)
    return p


ARITY = {"dual": 1, "unfold": 1, "sub": 2, "negate": 2, "charproc": 1, "typecheck": 2,
         "run": 1, "counterexample": 2, "preciseness": 2, "phi": 1}


def _read(arg: str, stdin) -> str:
    return stdin.readline().strip() if arg == "-" else arg


def _emit(opts, data: dict, text: str, out):
    if opts.json:
        out.write(json.dumps({"schema": SCHEMA, **data}, indent=2) + "\n")
    else:
        out.write(text.rstrip("\n") + "\n")


def _tree(d, indent: int = 0) -> str:
    wit = ", ".join(f"{k}={v}" for k, v in d.to_json()["witnesses"].items())
    line = " " * indent + f"{d.rule}: {d.to_json()['lhs']}  vs  {d.to_json()['rhs']}"
    if wit:
        line += f"  [{wit}]"
    return "\n".join([line] + [_tree(p, indent + 2) for p in d.premises])


def _outcome_text(o) -> str:
    js = outcome_json(o)
    if isinstance(o, ErrorReached):
        lines = [f"error reached ({', '.join(js['error_rules'])})"]
        lines += [f"  {s['rule']}: {s['state']}" for s in js["trace"]]
        return "\n".join(lines)
    if isinstance(o, NoErrorProven):
        cut = " (depth bound reached)" if o.depth_limited else ""
        return f"no error within bounds, {o.states} states{cut}"
    return f"budget exhausted after {o.states} states, frontier {o.frontier}"


def _outcome_code(o) -> int:
    return {NoErrorProven: 0, ErrorReached: 1, BudgetExhausted: 2}[type(o)]


def run(argv, stdin=sys.stdin, out=sys.stdout, err=sys.stderr) -> int:
    try:
        opts = _parser().parse_intermixed_args(argv)
        if len(opts.args) != ARITY[opts.verb]:
            raise _Usage(f"{opts.verb} takes {ARITY[opts.verb]} argument(s)")
    except _Usage as exc:
        err.write(f"sesst: {exc}\n")
        return EX_USAGE
    mode = ("ext-" if opts.ext else "") + ("async" if opts.asynchronous else "sync")
    sub_mode = ASYNC if opts.asynchronous else SYNC
    budget = Budget(opts.pairs, opts.unfold, opts.nesting)
    args = [_read(a, stdin) for a in opts.args]
    try:
        return _dispatch(opts, args, mode, sub_mode, budget, out)
    except (TypeSyntaxError, ProcessSyntaxError, EnvSyntaxError) as exc:
        err.write(f"sesst: parse error: {exc}\n")
        return EX_DATAERR
    except (ModeError, ValueError) as exc:
        err.write(f"sesst: {exc}\n")
        return EX_USAGE


def _dispatch(opts, args, mode, sub_mode, budget, out) -> int:
    match opts.verb:
        case "dual":
            t = dual(parse_type(args[0]))
            _emit(opts, {"type": show(t)}, show(t), out)
            return 0
        case "unfold":
            t = unfold_once(parse_type(args[0]))
            _emit(opts, {"type": show(t)}, show(t), out)
            return 0
        case "sub":
            t, s = parse_type(args[0]), parse_type(args[1])
            res, d = subtype(t, s, sub_mode, budget)
            data = {"mode": sub_mode, "verdict": res.verdict}
            if res.unknown:
                data["reason"] = res.reason
            if d is not None:
                data["derivation"] = d.to_json()
            if not opts.asynchronous:
                data["classification"] = str(classify(t, s, budget))
            _emit(opts, data, str(res), out)
            return 0 if res.yes else 1 if res.no else 2
        case "negate":
            t, s = parse_type(args[0]), parse_type(args[1])
            res, d = subtype(t, s, sub_mode, budget)
            data = {"mode": sub_mode, "verdict": res.verdict,
                    "derivation": d.to_json() if d else None}
            text = _tree(d) if d else f"no negation derivation: {res}"
            _emit(opts, data, text, out)
            return 0 if res.no else 1 if res.yes else 2
        case "charproc":
            p = char_proc(opts.name, parse_type(args[0]), mode)
            _emit(opts, {"mode": mode, "process": show_process(p)}, show_process(p), out)
            return 0
        case "typecheck":
            p = parse_process(args[0])
            gamma, delta = parse_env(args[1])
            r = typecheck(gamma, p, delta, mode, budget)
            data = {"mode": mode, "ok": r.ok, "rule": r.rule, "message": r.message}
            _emit(opts, data, "ok" if r.ok else f"fail [{r.rule}] {r.message}", out)
            return 0 if r.ok else 1
        case "run":
            o = reach_error(parse_process(args[0]), mode, opts.depth, opts.states)
            _emit(opts, {"mode": mode, "outcome": outcome_json(o)}, _outcome_text(o), out)
            return _outcome_code(o)
        case "counterexample":
            t, s = parse_type(args[0]), parse_type(args[1])
            rep = counterexample(t, s, mode, budget, opts.depth, opts.states)
            lines = [f"verdict: {rep.verdict}"]
            if rep.reason:
                lines.append(rep.reason)
            if rep.derivation is not None and not rep.reason:
                lines.append(_tree(rep.derivation))
            if rep.adjusted is not None:
                t2, s2, side = rep.adjusted
                lines += [f"T' = {show(t2)}", f"S' = {show(s2)}  (changed: {side})",
                          f"process: {show_process(rep.composed)}", _outcome_text(rep.outcome)]
            data = rep.to_json()
            data.pop("schema")
            _emit(opts, data, "\n".join(lines), out)
            if rep.found:
                return 0
            if isinstance(rep.outcome, BudgetExhausted) or rep.verdict == "unknown":
                return 2
            return 1
        case "preciseness":
            t, s = parse_type(args[0]), parse_type(args[1])
            rep = preciseness_check(t, s, mode, budget, opts.depth, opts.states)
            data = rep.to_json()
            data.pop("schema")
            text = f"subtype: {rep.subtype}; {rep.leg} leg {'passed' if rep.passed else 'failed'}"
            if rep.outcome is not None:
                text += "\n" + _outcome_text(rep.outcome)
            _emit(opts, data, text, out)
            return 0 if rep.passed else 1
        case "phi":
            names = sorted(phi(parse_process(args[0])))
            _emit(opts, {"phi": names}, "{" + ", ".join(names) + "}", out)
            return 0
    raise AssertionError(opts.verb)


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
