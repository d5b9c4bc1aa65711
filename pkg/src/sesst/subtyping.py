"""Synchronous and asynchronous subtyping, with negation derivations.

One depth-first engine serves both relations.  It explores pairs of
unfolded types under a global set of assumed pairs, so a run without any
failing pair proves the subtyping coinductively.  The first failing pair
aborts the search, and the derivation is assembled on the way back up,
which gives a finite inductive proof of non-subtyping.

The asynchronous relation is not known to be decidable, so that search is
bounded.  Hitting a bound marks the answer unknown but the search keeps
going, since a genuine failure elsewhere still settles the question.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

from .core_types import (
    Branch, End, IntSort, Mu, NatSort, Select, Shared, Var, SessionType, Sort,
    CtxBranch, CtxSelect, Hole,
    decompose_context_reason, fill_context, is_session,
    is_sort, no_branching, no_selection, show, show_context, show_payload,
    type_equal, unfold,
)

SYNC = "sync"
ASYNC = "async"


@dataclass(frozen=True)
class Budget:
    pairs: int = 4096
    unfold: int = 16
    nesting: int = 32


DEFAULT_BUDGET = Budget()


@dataclass(frozen=True)
class TriBool:
    verdict: str  # "yes", "no" or "unknown"
    reason: str = ""

    @property
    def yes(self) -> bool:
        return self.verdict == "yes"

    @property
    def no(self) -> bool:
        return self.verdict == "no"

    @property
    def unknown(self) -> bool:
        return self.verdict == "unknown"

    def __str__(self) -> str:
        return f"unknown ({self.reason})" if self.unknown else self.verdict


YES = TriBool("yes")
NO = TriBool("no")


def Unknown(reason: str) -> TriBool:
    return TriBool("unknown", reason)


@dataclass(frozen=True)
class Derivation:
    rule: str
    lhs: object
    rhs: object
    witnesses: dict = field(default_factory=dict, compare=False, hash=False)
    premises: tuple = ()

    def to_json(self) -> dict:
        wit = {}
        for k, v in self.witnesses.items():
            if isinstance(v, (Hole, CtxBranch, CtxSelect)):
                wit[k] = show_context(v)
            elif isinstance(v, (SessionType, Sort)):
                wit[k] = show_payload(v)
            else:
                wit[k] = v
        return {
            "rule": self.rule,
            "lhs": show_payload(self.lhs),
            "rhs": show_payload(self.rhs),
            "witnesses": wit,
            "premises": [p.to_json() for p in self.premises],
        }

    def rules(self) -> list[str]:
        out = [self.rule]
        for p in self.premises:
            out.extend(p.rules())
        return out

    def size(self) -> int:
        return 1 + sum(p.size() for p in self.premises)

    def depth(self) -> int:
        return 1 + max((p.depth() for p in self.premises), default=0)


# ---------------------------------------------------------------- sorts

def subsort(b, b2) -> bool:
    """b <: b2 on sorts: reflexive, nat below int, shared sorts invariant."""
    match b, b2:
        case Shared(t), Shared(t2):
            return type_equal(t, t2)
        case _:
            if b == b2:
                return True
            return isinstance(b, NatSort) and isinstance(b2, IntSort)


# ---------------------------------------------------------------- engine

class _Search:
    def __init__(self, mode: str, budget: Budget):
        self.mode = mode
        self.budget = budget
        self.visited: set = set()
        self.unknown: str | None = None

    def give_up(self, reason: str):
        if self.unknown is None:
            self.unknown = reason

    def payload(self, u, v, nest):
        """U <= U' for payloads; None means no failure was found."""
        if is_session(u) and is_session(v):
            return self.check(u, v, nest)
        if is_sort(u) and is_sort(v):
            if subsort(v, u):
                return None
            return Derivation("n-sort", u, v)
        if is_sort(u) and is_session(v) and isinstance(unfold(v), End):
            return None
        return Derivation("n-payload", u, v)

    def check(self, T, S, nest: int = 0):
        t, s = unfold(T), unfold(S)
        key = (t, s)
        if key in self.visited:
            return None
        if len(self.visited) >= self.budget.pairs:
            self.give_up(f"visited-pair budget {self.budget.pairs} exhausted")
            return None
        self.visited.add(key)
        match t, s:
            case End(), End():
                return None
            case End(), _:
                return Derivation("n-end r", t, s)
            case _, End():
                return Derivation("n-end l", t, s)
            case (Var(), _) | (_, Var()):
                # open types are outside the relation; treat like end
                if t == s:
                    return None
                return Derivation("n-end r" if isinstance(t, Var) else "n-end l", t, s)
            case Branch(), Select():
                return Derivation("n-brasel", t, s)
            case Select(), Branch():
                if self.mode == SYNC:
                    return Derivation("n-selbra-sync", t, s)
                return self.perm(t, s, nest)
            case Branch(), Branch():
                return self.bra(t, s, nest)
            case Select(), Select():
                return self.sel(t, s, nest)
        raise TypeError(f"unexpected pair {t!r}, {s!r}")

    def bra(self, t: Branch, s: Branch, nest):
        for l in s.labels:
            if t.entry(l) is None:
                return Derivation("n-label-bra", t, s, {"label": l})
        for l, u2, c2 in s.entries:
            _, u, c = t.entry(l)
            d = self.payload(u, u2, nest)
            if d is not None:
                return Derivation("n-exch-bra", t, s, {"label": l}, (d,))
            d = self.check(c, c2, nest)
            if d is not None:
                return Derivation("n-cont-bra", t, s, {"label": l}, (d,))
        return None

    def sel(self, t: Select, s: Select, nest):
        async_ = self.mode == ASYNC
        names = ("n-label-async", "n-exch-async", "n-cont-async") if async_ else \
            ("n-label-sel", "n-exch-sel", "n-cont-sel")
        wit = {"hole": 1, "context": Hole(1)} if async_ else {}
        for l in t.labels:
            if s.entry(l) is None:
                return Derivation(names[0], t, s, {"label": l, **wit})
        for l, u, c in t.entries:
            _, u2, c2 = s.entry(l)
            d = self.payload(u2, u, nest)
            if d is not None:
                return Derivation(names[1], t, s, {"label": l, **wit}, (d,))
            d = self.check(c, c2, nest)
            if d is not None:
                return Derivation(names[2], t, s, {"label": l, **wit}, (d,))
        return None

    def perm(self, t: Select, s: Branch, nest):
        if no_branching(t):
            return Derivation("n-bra-async", t, s)
        if no_selection(s):
            return Derivation("n-sel-async", t, s)
        dec, reason = decompose_context_reason(s, self.budget.unfold)
        if dec is None:
            self.give_up(f"context decomposition failed ({reason})")
            return None
        ctx, holes = dec
        for n, h in holes.items():
            for l in t.labels:
                if h.entry(l) is None:
                    return Derivation("n-label-async", t, s,
                                      {"label": l, "hole": n, "context": ctx})
        if nest >= self.budget.nesting:
            self.give_up(f"nesting budget {self.budget.nesting} exhausted")
            return None
        for l, u, c in t.entries:
            for n, h in holes.items():
                d = self.payload(h.entry(l)[1], u, nest)
                if d is not None:
                    return Derivation("n-exch-async", t, s,
                                      {"label": l, "hole": n, "context": ctx}, (d,))
            filled = fill_context(ctx, lambda n: holes[n].entry(l)[2])
            d = self.check(c, filled, nest + 1)
            if d is not None:
                return Derivation("n-cont-async", t, s,
                                  {"label": l, "context": ctx}, (d,))
        return None


def _run(T, S, mode, budget):
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 50000))
    try:
        search = _Search(mode, budget)
        d = search.check(T, S, 0)
    finally:
        sys.setrecursionlimit(old)
    return d, search.unknown


def subtype(T, S, mode: str = SYNC, budget: Budget = DEFAULT_BUDGET):
    """Return (TriBool, derivation or None) for T <= S in the given mode."""
    d, unknown = _run(T, S, mode, budget)
    if d is not None:
        return NO, d
    if unknown is not None and mode == ASYNC:
        return Unknown(unknown), None
    return YES, None


def sync_negation(T, S):
    d, _ = _run(T, S, SYNC, Budget(pairs=10**9))
    return d


def async_subtype(T, S, budget: Budget = DEFAULT_BUDGET) -> TriBool:
    return subtype(T, S, ASYNC, budget)[0]


def async_negation(T, S, budget: Budget = DEFAULT_BUDGET):
    return subtype(T, S, ASYNC, budget)[1]


def payload_sub(u, v, mode: str = SYNC, budget: Budget = DEFAULT_BUDGET) -> TriBool:
    search = _Search(mode, budget if mode == ASYNC else Budget(pairs=10**9))
    d = search.payload(u, v, 0)
    if d is not None:
        return NO
    if search.unknown is not None:
        return Unknown(search.unknown)
    return YES


# ---------------------------------------------------------------- plain checker

def sync_subtype(T, S) -> bool:
    """A direct coinductive check of the synchronous relation.

    Deliberately separate from the engine above so the two can be tested
    against each other.
    """
    assumed: set = set()
    stack = [(T, S)]
    while stack:
        a, b = stack.pop()
        if is_sort(a) or is_sort(b):
            if is_sort(a) and is_sort(b):
                if not subsort(b, a):
                    return False
            elif not (is_sort(a) and isinstance(unfold(b), End)):
                return False
            continue
        a, b = unfold(a), unfold(b)
        if (a, b) in assumed:
            continue
        assumed.add((a, b))
        if isinstance(a, End) or isinstance(b, End):
            if not (isinstance(a, End) and isinstance(b, End)):
                return False
        elif isinstance(a, Branch) and isinstance(b, Branch):
            if not set(b.labels) <= set(a.labels):
                return False
            for l, u2, c2 in b.entries:
                _, u, c = a.entry(l)
                stack.append((u, u2))
                stack.append((c, c2))
        elif isinstance(a, Select) and isinstance(b, Select):
            if not set(a.labels) <= set(b.labels):
                return False
            for l, u, c in a.entries:
                _, u2, c2 = b.entry(l)
                stack.append((u2, u))
                stack.append((c, c2))
        elif a != b:
            return False
    return True


# ---------------------------------------------------------------- checking proofs

class InvalidDerivation(ValueError):
    pass


def verify_derivation(d: Derivation, mode: str = SYNC) -> bool:
    """Check that every node of ``d`` is an instance of its rule.

    Raises InvalidDerivation naming the offending rule.
    """
    def bad(msg):
        raise InvalidDerivation(f"{d.rule}: {msg}")

    prem = d.premises
    if d.rule in ("n-sort", "n-payload"):
        u, v = d.lhs, d.rhs
        if d.rule == "n-sort":
            if not (is_sort(u) and is_sort(v)) or subsort(v, u):
                bad("sorts are related")
        else:
            if is_session(u) and is_session(v):
                bad("session payloads need a session rule")
            if is_sort(u) and is_sort(v):
                bad("sort payloads need n-sort")
            if is_sort(u) and isinstance(unfold(v), End):
                bad("a sort may be passed where end is expected")
        return True
    t, s = unfold(d.lhs), unfold(d.rhs)
    lab = d.witnesses.get("label")

    def need(n):
        if len(prem) != n:
            bad(f"expected {n} premises, got {len(prem)}")

    def prem_is(p, lhs, rhs):
        ok = (payload_same(p.lhs, lhs) and payload_same(p.rhs, rhs))
        if not ok:
            bad("premise does not match")
        verify_derivation(p, mode)

    match d.rule:
        case "n-end r":
            need(0)
            if not isinstance(t, End) or isinstance(s, End):
                bad("shape")
        case "n-end l":
            need(0)
            if not isinstance(s, End) or isinstance(t, End):
                bad("shape")
        case "n-brasel":
            need(0)
            if not (isinstance(t, Branch) and isinstance(s, Select)):
                bad("shape")
        case "n-selbra-sync":
            need(0)
            if mode != SYNC or not (isinstance(t, Select) and isinstance(s, Branch)):
                bad("shape or mode")
        case "n-label-bra":
            need(0)
            if not (isinstance(t, Branch) and isinstance(s, Branch)):
                bad("shape")
            if s.entry(lab) is None or t.entry(lab) is not None:
                bad("label witness")
        case "n-label-sel":
            need(0)
            if not (isinstance(t, Select) and isinstance(s, Select)):
                bad("shape")
            if t.entry(lab) is None or s.entry(lab) is not None:
                bad("label witness")
        case "n-exch-bra" | "n-cont-bra":
            need(1)
            if not (isinstance(t, Branch) and isinstance(s, Branch)):
                bad("shape")
            if t.entry(lab) is None or s.entry(lab) is None:
                bad("label witness")
            k = 1 if d.rule == "n-exch-bra" else 2
            prem_is(prem[0], t.entry(lab)[k], s.entry(lab)[k])
        case "n-exch-sel" | "n-cont-sel":
            need(1)
            if not (isinstance(t, Select) and isinstance(s, Select)):
                bad("shape")
            if t.entry(lab) is None or s.entry(lab) is None:
                bad("label witness")
            if d.rule == "n-exch-sel":
                prem_is(prem[0], s.entry(lab)[1], t.entry(lab)[1])
            else:
                prem_is(prem[0], t.entry(lab)[2], s.entry(lab)[2])
        case "n-bra-async":
            need(0)
            if mode != ASYNC or not isinstance(s, Branch) or not no_branching(t):
                bad("shape or premise")
        case "n-sel-async":
            need(0)
            if mode != ASYNC or not isinstance(t, Select) or not no_selection(s):
                bad("shape or premise")
        case "n-label-async" | "n-exch-async" | "n-cont-async":
            if mode != ASYNC or not isinstance(t, Select):
                bad("shape or mode")
            dec, _ = decompose_context_reason(s, 10**6)
            if dec is None:
                bad("right side has no context")
            ctx, holes = dec
            if t.entry(lab) is None:
                bad("label witness")
            if d.rule == "n-label-async":
                need(0)
                n = d.witnesses.get("hole")
                if n not in holes or holes[n].entry(lab) is not None:
                    bad("hole witness")
            elif d.rule == "n-exch-async":
                need(1)
                n = d.witnesses.get("hole")
                if n not in holes or holes[n].entry(lab) is None:
                    bad("hole witness")
                prem_is(prem[0], holes[n].entry(lab)[1], t.entry(lab)[1])
            else:
                need(1)
                for h in holes.values():
                    for l in t.labels:
                        if h.entry(l) is None:
                            bad("labels missing from a hole")
                filled = fill_context(ctx, lambda n: holes[n].entry(lab)[2])
                prem_is(prem[0], t.entry(lab)[2], filled)
        case _:
            bad("unknown rule")
    return True


def payload_same(u, v) -> bool:
    if is_session(u) and is_session(v):
        return type_equal(u, v)
    if isinstance(u, Shared) and isinstance(v, Shared):
        return type_equal(u.carried, v.carried)
    return u == v


# ---------------------------------------------------------------- pruning

class PreconditionError(ValueError):
    pass


def prune_branchless(T: SessionType) -> SessionType:
    """Keep, at each selection, only continuations that can avoid branching.

    The result is a synchronous subtype of ``T`` none of whose continuation
    paths meets a branching.
    """
    if not no_branching(T):
        raise PreconditionError(f"every path of {show(T)} meets a branching")

    def go(t):
        match t:
            case End() | Var():
                return t
            case Mu(n, body):
                return Mu(n, go(body))
            case Select(entries):
                kept = tuple((l, u, go(c)) for l, u, c in entries if no_branching(c))
                return Select(kept)
            case Branch():
                raise PreconditionError("branching reached while pruning")
        raise TypeError(t)

    return go(T)


# ---------------------------------------------------------------- verdicts

@dataclass(frozen=True)
class Verdict:
    kind: str  # SyncSub, AsyncOnlySub, NotSub, Unknown
    mode: str = ""
    derivation: Derivation | None = None
    reason: str = ""

    def __str__(self) -> str:
        if self.kind == "NotSub":
            return f"NotSub({self.mode}, {self.derivation.rule})"
        if self.kind == "Unknown":
            return f"Unknown({self.reason})"
        return self.kind


def classify(T, S, budget: Budget = DEFAULT_BUDGET) -> Verdict:
    if sync_subtype(T, S):
        return Verdict("SyncSub", SYNC)
    res, d = subtype(T, S, ASYNC, budget)
    if res.yes:
        return Verdict("AsyncOnlySub", ASYNC)
    if res.no:
        return Verdict("NotSub", ASYNC, d)
    return Verdict("Unknown", ASYNC, reason=res.reason)
