"""Characteristic processes and counterexamples to subtyping.

A characteristic process offers on one channel exactly the interaction a
type describes.  Composing the characteristic processes of T and of the
dual of S exposes an error whenever T is not a subtype of S, possibly
after shrinking one side to a subtype first.  The shrinking is driven by
the negation derivation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .calculus import (
    NIL, Accept, BoolV, Cond, Def, EVar, Gt, Input, IntV, Invoke, Neg,
    NewLinear, NewShared, Not, Output, Queue, Request, Succ, Val, choice, par,
    show_process, show_state,
)
from .core_types import (
    Branch, BoolSort, End, Ground, IntSort, Mu, NatSort, Select, Shared, Var,
    CtxBranch, CtxSelect, Hole, decompose_context, dual, dual_context,
    fill_context, show, type_equal, unfold,
)
from .semantics import (
    ASYNC as SEM_ASYNC, EXT_ASYNC, EXT_SYNC, SYNC as SEM_SYNC,
    BudgetExhausted, ErrorReached, NoErrorProven, reach_error,
    DEFAULT_DEPTH, DEFAULT_STATES,
)
from .subtyping import ASYNC, SYNC, DEFAULT_BUDGET, Budget, prune_branchless, subtype

MODES = ("sync", "async", "ext-sync", "ext-async")


def _is_async(mode):
    return mode in ("async", "ext-async")


def subtyping_mode(mode: str) -> str:
    return ASYNC if _is_async(mode) else SYNC


class _Supply:
    """Fresh names for one generation run."""

    def __init__(self, avoid=()):
        self.avoid = set(avoid)
        self.n = 0

    def __call__(self, base: str) -> str:
        while True:
            self.n += 1
            name = f"{base}{self.n}"
            if name not in self.avoid:
                self.avoid.add(name)
                return name


class _Gen:
    def __init__(self, mode: str, supply: _Supply):
        self.mode = mode
        self.fresh = supply

    def proc(self, u, t, env):
        """``env`` maps recursion variables to process variables."""
        match t:
            case End():
                return NIL
            case Var(name):
                if name not in env:
                    raise ValueError(f"free recursion variable {name}")
                return Invoke(env[name], (u,))
            case Mu(name, body):
                x = self.fresh("X_" + name + "_")
                p = self.fresh("x")
                env2 = {**env, name: x}
                return Def(x, (p,), self.proc(p, body, env2), Invoke(x, (u,)))
            case Branch(entries):
                branches = []
                for l, s, c in entries:
                    y = self.fresh("y")
                    branches.append((l, y, self.receive(u, y, s, c, env)))
                return Input(u, tuple(branches))
            case Select(entries):
                return choice(*(self.send(u, l, s, c, env) for l, s, c in entries))
        raise TypeError(t)

    def receive(self, u, y, s, cont, env):
        rest = self.proc(u, cont, env)
        match s:
            case BoolSort():
                return Cond(Not(EVar(y)), rest, rest)
            case NatSort():
                return Cond(Gt(Succ(EVar(y)), Val(IntV(0))), rest, rest)
            case IntSort():
                return Cond(Gt(Neg(EVar(y)), Val(IntV(0))), rest, rest)
            case Shared(carried):
                return par(rest, self.shared_pair(y, carried))
            case Ground(name):
                raise ValueError(f"no characteristic values for sort {name}")
        return par(rest, self.proc(y, s, {}))

    def shared_pair(self, s, carried):
        y, z = self.fresh("y"), self.fresh("z")
        return par(Accept(s, y, self.proc(y, carried, {})),
                   Request(s, z, self.proc(z, dual(carried), {})))

    def send(self, u, l, s, cont, env):
        rest = self.proc(u, cont, env)
        match s:
            case BoolSort():
                return Output(u, l, Val(BoolV(True)), rest)
            case NatSort():
                return Output(u, l, Val(IntV(5)), rest)
            case IntSort():
                return Output(u, l, Val(IntV(-5)), rest)
            case Shared(carried):
                name = self.fresh("s")
                return NewShared(name, Output(u, l, name, par(rest, self.shared_pair(name, carried))))
            case Ground(name):
                raise ValueError(f"no characteristic values for sort {name}")
        a, b = self.fresh("c"), self.fresh("d")
        body = par(Output(u, l, a, rest), self.proc(b, dual(s), {}))
        if _is_async(self.mode):
            body = par(body, Queue(b, a, ()), Queue(a, b, ()))
        return NewLinear(a, b, body)


def char_proc(u: str, t, mode: str = "sync", avoid=()):
    """The characteristic process of ``t`` on ``u`` for the given mode."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    supply = _Supply(set(avoid) | {u})
    return _Gen(mode, supply).proc(u, t, {})


def char_proc_sync(u, t):
    return char_proc(u, t, "sync")


def char_proc_async(u, t):
    return char_proc(u, t, "async")


def char_proc_ext(u, t, asynchronous: bool = False):
    return char_proc(u, t, "ext-async" if asynchronous else "ext-sync")


def compose(t, s_dual, mode: str = "sync"):
    """(new a b)(P(a, t) | P(b, s_dual)) with the two queues when asynchronous."""
    supply = _Supply({"a", "b"})
    gen = _Gen(mode, supply)
    body = par(gen.proc("a", t, {}), gen.proc("b", s_dual, {}))
    if _is_async(mode):
        body = par(body, Queue("b", "a", ()), Queue("a", "b", ()))
    return NewLinear("a", "b", body)


# ---------------------------------------------------------------- adjustment

def _replace(t, label, payload=None, cont=None):
    """The choice ``t`` with the entry for ``label`` changed."""
    t = unfold(t)
    out = []
    for l, u, c in t.entries:
        if l == label:
            u = u if payload is None else payload
            c = c if cont is None else cont
        out.append((l, u, c))
    return type(t)(tuple(out))


def _payload_adjust(d):
    """Adjusted (left payload, right payload) for a payload-level premise."""
    if d.rule in ("n-sort", "n-payload"):
        return d.lhs, d.rhs
    t2, s2 = adjust(d)
    return t2, dual(s2)


def _graft(x, ctx, holes, label):
    """Put back the input on ``label`` in front of every hole of ``x``.

    ``ctx`` is the dual of an asynchronous context; ``x`` follows it
    selection by selection (possibly with fewer labels) down to the holes.
    """
    match ctx:
        case Hole(n):
            b = dual(holes[n])
            return _replace(b, label, cont=x)
        case CtxSelect(entries):
            xs = unfold(x)
            if not isinstance(xs, Select):
                return x
            sub = {l: c for l, _, c in entries}
            out = []
            for l, u, c in xs.entries:
                out.append((l, u, _graft(c, sub[l], holes, label) if l in sub else c))
            return Select(tuple(out))
        case CtxBranch(entries):
            xs = unfold(x)
            if not isinstance(xs, Branch):
                return x
            sub = {l: c for l, _, c in entries}
            return Branch(tuple((l, u, _graft(c, sub[l], holes, label) if l in sub else c)
                                for l, u, c in xs.entries))
    return x


def adjust(d):
    """(T', S') with T' a synchronous subtype of the left type and S' one of
    the dual of the right type, chosen so that composing their
    characteristic processes reaches an error."""
    t, s = d.lhs, d.rhs
    w = d.witnesses
    match d.rule:
        case "n-bra-async":
            return prune_branchless(t), dual(s)
        case "n-sel-async":
            return t, prune_branchless(dual(s))
        case "n-exch-bra":
            u2, v2 = _payload_adjust(d.premises[0])
            return _replace(t, w["label"], payload=u2), _replace(dual(s), w["label"], payload=v2)
        case "n-cont-bra":
            t2, s2 = adjust(d.premises[0])
            return _replace(t, w["label"], cont=t2), _replace(dual(s), w["label"], cont=s2)
        case "n-exch-sel":
            # the premise compares the right payload with the left one
            u2, v2 = _payload_adjust(d.premises[0])
            return _replace(t, w["label"], payload=v2), _replace(dual(s), w["label"], payload=u2)
        case "n-cont-sel":
            t2, s2 = adjust(d.premises[0])
            return _replace(t, w["label"], cont=t2), _replace(dual(s), w["label"], cont=s2)
        case "n-exch-async":
            u2, v2 = _payload_adjust(d.premises[0])
            ctx, holes = decompose_context(s, 10**6)
            n0 = w["hole"]
            filled = {n: dual(h) for n, h in holes.items()}
            filled[n0] = _replace(filled[n0], w["label"], payload=u2)
            return _replace(t, w["label"], payload=v2), _fill_dual(ctx, filled)
        case "n-cont-async":
            t2, s2 = adjust(d.premises[0])
            ctx, holes = decompose_context(s, 10**6)
            return _replace(t, w["label"], cont=t2), _graft(s2, dual_context(ctx), holes, w["label"])
    return t, dual(s)


def _fill_dual(ctx, filled):
    return fill_context(dual_context(ctx), filled)


# ---------------------------------------------------------------- reports

@dataclass
class CounterexampleReport:
    mode: str
    lhs: object
    rhs: object
    verdict: str  # "no", "yes", "unknown"
    derivation: object = None
    adjusted: tuple = None  # (T', S', side)
    composed: object = None
    outcome: object = None
    reason: str = ""

    @property
    def found(self) -> bool:
        return isinstance(self.outcome, ErrorReached)

    def to_json(self) -> dict:
        out = {
            "schema": "sesst/1",
            "mode": self.mode,
            "lhs": show(self.lhs),
            "rhs": show(self.rhs),
            "verdict": self.verdict,
        }
        if self.reason:
            out["reason"] = self.reason
        if self.derivation is not None:
            out["derivation"] = self.derivation.to_json()
        if self.adjusted is not None:
            t2, s2, side = self.adjusted
            out["adjusted"] = {"lhs": show(t2), "dual_rhs": show(s2), "changed": side}
        if self.composed is not None:
            out["process"] = show_process(self.composed)
        if self.outcome is not None:
            out["outcome"] = outcome_json(self.outcome)
        return out


def outcome_json(o) -> dict:
    match o:
        case ErrorReached(trace, rules):
            return {"kind": "ErrorReached", "error_rules": sorted(rules),
                    "trace": [{"rule": r, "state": show_state(st)} for r, st in trace]}
        case NoErrorProven(states, limited):
            return {"kind": "NoErrorProven", "states": states, "depth_limited": limited}
        case BudgetExhausted(frontier, states):
            return {"kind": "BudgetExhausted", "frontier": frontier, "states": states}
    raise TypeError(o)


def semantics_mode(mode: str) -> str:
    return {"sync": SEM_SYNC, "async": SEM_ASYNC, "ext-sync": EXT_SYNC, "ext-async": EXT_ASYNC}[mode]


def _side(t, t2, sd, s2):
    left = not type_equal(t, t2)
    right = not type_equal(sd, s2)
    if left and right:
        return "both"
    return "left" if left else "right" if right else "none"


def counterexample(t, s, mode: str = "sync", budget: Budget = DEFAULT_BUDGET,
                   max_depth: int = DEFAULT_DEPTH, max_states: int = DEFAULT_STATES,
                   adjust_types: bool = True) -> CounterexampleReport:
    """Build and run the composition witnessing that ``t`` is not a subtype of ``s``."""
    verdict, d = subtype(t, s, subtyping_mode(mode), budget)
    rep = CounterexampleReport(mode, t, s, verdict.verdict, d)
    if verdict.yes:
        rep.reason = "the types are in the subtyping relation"
        return rep
    if verdict.unknown:
        rep.reason = verdict.reason
        return rep
    if adjust_types:
        t2, s2 = adjust(d)
    else:
        t2, s2 = t, dual(s)
    rep.adjusted = (t2, s2, _side(t, t2, dual(s), s2))
    rep.composed = compose(t2, s2, mode)
    rep.outcome = reach_error(rep.composed, semantics_mode(mode), max_depth, max_states)
    return rep


@dataclass
class PrecisenessReport:
    mode: str
    subtype: str
    leg: str  # "soundness" or "completeness"
    passed: bool
    outcome: object = None
    counterexample: CounterexampleReport | None = None
    reason: str = ""

    def to_json(self) -> dict:
        out = {"schema": "sesst/1", "mode": self.mode, "subtype": self.subtype,
               "leg": self.leg, "passed": self.passed}
        if self.reason:
            out["reason"] = self.reason
        if self.outcome is not None:
            out["outcome"] = outcome_json(self.outcome)
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample.to_json()
        return out


def preciseness_check(t, s, mode: str = "sync", budget: Budget = DEFAULT_BUDGET,
                      max_depth: int = DEFAULT_DEPTH,
                      max_states: int = DEFAULT_STATES) -> PrecisenessReport:
    """Check the leg of preciseness that applies to the pair."""
    verdict, _ = subtype(t, s, subtyping_mode(mode), budget)
    if verdict.unknown:
        return PrecisenessReport(mode, "unknown", "none", False, reason=verdict.reason)
    if verdict.yes:
        outcome = reach_error(compose(t, dual(s), mode), semantics_mode(mode), max_depth, max_states)
        return PrecisenessReport(mode, "yes", "soundness", isinstance(outcome, NoErrorProven), outcome)
    rep = counterexample(t, s, mode, budget, max_depth, max_states)
    return PrecisenessReport(mode, "no", "completeness", rep.found, rep.outcome, rep)
