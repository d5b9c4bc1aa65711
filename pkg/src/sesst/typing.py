"""Session environments, queue types and the typecheckers.

The checker is syntax directed.  Subsumption happens at the leaves: an
input may offer more branches than its type, an output may pick any label
of its selection, and an invocation or nil only needs its environment to
be a subtype of the given one.

Types of restricted channels are not annotated, so they are recovered in
three ways, tried in order: from an anchor (the channel is the object of
an output on a typed channel, or sits in a typed queue), from the partner
endpoint by duality, or by synthesizing the least type the owning thread
needs.  Synthesis also gives types to process-variable parameters the
first time a variable is called.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .calculus import (
    Accept, BoolV, Choice, Cond, Def, EVar, Error, Gt, Input, IntV, Invoke,
    Neg, NewLinear, NewShared, Nil, NormalForm, Not, Output, Par, Queue,
    Request, Succ, Val, free_names, fresh_name, freshen, is_expr, substitute,
)
from .core_types import (
    BOOL, END, INT, NAT, Branch, End, Mu, Select, Shared, SessionType, Var,
    decompose_context, dual, fill_context, free_vars, is_session, is_sort,
    parse_payload, payload_equal, show, show_payload, type_equal,
    unfold,
)
from .subtyping import ASYNC, SYNC, DEFAULT_BUDGET, Budget, payload_sub, subsort, subtype, sync_subtype

MODES = ("sync", "async", "ext-sync", "ext-async")


def _sub_mode(mode: str) -> str:
    return ASYNC if mode in ("async", "ext-async") else SYNC


# ---------------------------------------------------------------- environments

@dataclass(frozen=True)
class QueueType:
    items: tuple = ()  # (label, payload)

    def __add__(self, other: "QueueType") -> "QueueType":
        return QueueType(self.items + other.items)

    def __str__(self) -> str:
        if not self.items:
            return "[]"
        return "[" + ", ".join(f"{l}<{show_payload(u)}>" for l, u in self.items) + "]"


EPSILON = QueueType()


@dataclass(frozen=True)
class SessionEnv:
    linear: dict = field(default_factory=dict)
    queues: dict = field(default_factory=dict)  # (src, dst) -> QueueType

    def __str__(self) -> str:
        parts = [f"{n}: {show(t)}" for n, t in sorted(self.linear.items())]
        parts += [f"queue {a} {b} : {q}" for (a, b), q in sorted(self.queues.items())]
        return ", ".join(parts)

    def key(self):
        return (tuple(sorted((n, show(t)) for n, t in self.linear.items())),
                tuple(sorted((k, str(q)) for k, q in self.queues.items())))


@dataclass(frozen=True)
class SharedEnv:
    sorts: dict = field(default_factory=dict)
    procvars: dict = field(default_factory=dict)


class EnvSyntaxError(ValueError):
    pass


def _split_top(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "{(<[":
            depth += 1
        elif ch in "})>]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur))
    return [s.strip() for s in out if s.strip()]


_QUEUE_ENTRY = re.compile(r"queue\s+(\w+)\s+(\w+)\s*:\s*\[(.*)\]\s*$", re.S)
_MSG = re.compile(r"\s*([A-Za-z_][\w']*)\s*<(.*)>\s*$", re.S)


def parse_env(text: str):
    """Parse ``a: T, s: <T>, n: nat, queue a b : [l<S>]``.

    Returns (SharedEnv, SessionEnv): sorts go to the shared environment,
    session types to the linear part.
    """
    sorts, linear, queues = {}, {}, {}
    for part in _split_top(text):
        m = _QUEUE_ENTRY.match(part)
        if m:
            items = []
            for msg in _split_top(m.group(3)):
                mm = _MSG.match(msg)
                if not mm:
                    raise EnvSyntaxError(f"bad queue message {msg!r}")
                items.append((mm.group(1), parse_payload(mm.group(2))))
            queues[(m.group(1), m.group(2))] = QueueType(tuple(items))
            continue
        name, sep, ty = part.partition(":")
        if not sep or not name.strip().isidentifier():
            raise EnvSyntaxError(f"bad environment entry {part!r}")
        u = parse_payload(ty.strip())
        if is_sort(u):
            sorts[name.strip()] = u
        else:
            linear[name.strip()] = u
    return SharedEnv(sorts), SessionEnv(linear, queues)


def _is_end(t) -> bool:
    return is_session(t) and isinstance(unfold(t), End)


def _sub(t, s, mode: str, budget: Budget = DEFAULT_BUDGET) -> bool:
    if is_sort(t) or is_sort(s):
        return payload_sub(t, s, _sub_mode(mode), budget).yes
    if _sub_mode(mode) == SYNC:
        return sync_subtype(t, s)
    return subtype(t, s, ASYNC, budget)[0].yes


def _psub(u, v, mode: str, budget: Budget = DEFAULT_BUDGET) -> bool:
    return payload_sub(u, v, _sub_mode(mode), budget).yes


def env_sub(d1: SessionEnv, d2: SessionEnv, mode: str = "sync") -> bool:
    """The pointwise preorder on environments, missing entries being end."""
    for u in set(d1.linear) | set(d2.linear):
        if u in d1.linear and u in d2.linear:
            if not _sub(d1.linear[u], d2.linear[u], mode):
                return False
        elif u in d1.linear:
            if not _is_end(d1.linear[u]):
                return False
        elif not _is_end(d2.linear[u]):
            return False
    if set(d1.queues) != set(d2.queues):
        return False
    for k, q in d1.queues.items():
        q2 = d2.queues[k]
        if len(q.items) != len(q2.items):
            return False
        for (l, u), (l2, u2) in zip(q.items, q2.items):
            if l != l2 or not payload_equal(u, u2):
                return False
    return True


def remainder(t: SessionType, tau, mode: str = "async"):
    """Erase from ``t`` the branchings answered by the messages in ``tau``.

    Returns None when undefined.  Selections are distributed over, so a
    recursive selection loop gives back a recursive type.
    """
    items = tuple(tau.items if isinstance(tau, QueueType) else tau)
    seen: dict = {}
    used: set = set()
    counter = [0]

    def go(t, k):
        if k == len(items):
            return t
        key = (t, k)
        if key in seen:
            used.add(seen[key])
            return Var(seen[key])
        t = unfold(t)
        match t:
            case Branch():
                l, s = items[k]
                e = t.entry(l)
                if e is None or not _psub(e[1], s, mode):
                    return None
                return go(e[2], k + 1)
            case Select(entries):
                counter[0] += 1
                name = f"r{counter[0]}"
                seen[key] = name
                out = []
                for l, u, c in entries:
                    r = go(c, k)
                    if r is None:
                        return None
                    out.append((l, u, r))
                del seen[key]
                res = Select(tuple(out))
                return Mu(name, res) if name in used else res
        return None

    return go(t, 0)


def _bowtie(t1, t2) -> bool:
    return type_equal(t1, dual(t2))


def balanced(env: SessionEnv, mode: str = "async") -> bool:
    for (b, a), tau in env.queues.items():
        if a in env.linear and remainder(env.linear[a], tau, mode) is None:
            return False
    for (b, a), tau in env.queues.items():
        if a in env.linear and b in env.linear and (a, b) in env.queues:
            r1 = remainder(env.linear[a], tau, mode)
            r2 = remainder(env.linear[b], env.queues[(a, b)], mode)
            if r1 is None or r2 is None or not _bowtie(r1, r2):
                return False
    return True


def env_reduce(env: SessionEnv, mode: str = "async", budget: Budget = DEFAULT_BUDGET) -> list:
    """All one-step reducts of an asynchronous environment."""
    out = []
    for (a, b), tau in env.queues.items():
        # a message waiting for b
        if tau.items and b in env.linear:
            t = unfold(env.linear[b])
            l, s = tau.items[0]
            if isinstance(t, Branch):
                e = t.entry(l)
                if e is not None and _psub(e[1], s, mode, budget):
                    lin = dict(env.linear)
                    lin[b] = e[2]
                    qs = dict(env.queues)
                    qs[(a, b)] = QueueType(tau.items[1:])
                    out.append(SessionEnv(lin, qs))
        # an output on a going into the queue
        if a in env.linear:
            dec = decompose_context(env.linear[a], budget.unfold)
            if dec is None:
                continue
            ctx, holes = dec
            sels = [unfold(holes[n]) for n in sorted(holes)]
            common = set(sels[0].labels)
            for s in sels[1:]:
                common &= set(s.labels)
            for l in sorted(common):
                pays = [s.entry(l)[1] for s in sels]
                chosen = next((p for p in pays if all(_psub(q, p, mode, budget) for q in pays)), None)
                if chosen is None:
                    continue
                filled = fill_context(ctx, {n: unfold(holes[n]).entry(l)[2] for n in holes})
                lin = dict(env.linear)
                lin[a] = filled
                qs = dict(env.queues)
                qs[(a, b)] = QueueType(tau.items + ((l, chosen),))
                out.append(SessionEnv(lin, qs))
    return out


def env_reduce_closure(env: SessionEnv, depth: int, mode: str = "async") -> list:
    seen = {env.key(): env}
    frontier = [env]
    for _ in range(depth):
        nxt = []
        for e in frontier:
            for e2 in env_reduce(e, mode):
                k = e2.key()
                if k not in seen:
                    seen[k] = e2
                    nxt.append(e2)
        frontier = nxt
    return list(seen.values())


# ---------------------------------------------------------------- the checker

class _Unknown:
    def __repr__(self):
        return "?"


UNKNOWN = _Unknown()


class _Fail(Exception):
    def __init__(self, rule: str, msg: str):
        super().__init__(f"{rule}: {msg}")
        self.rule = rule
        self.msg = msg


class _NeedMore(_Fail):
    pass


@dataclass
class TypeResult:
    ok: bool
    rule: str = ""
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "ok" if self.ok else f"{self.rule}: {self.message}"


@dataclass
class _ProcInfo:
    params: tuple
    body: object
    gamma: dict
    types: tuple | None = None
    state: str = "pending"  # pending, synth, fixed


def _value_sort(v, gamma):
    match v:
        case BoolV():
            return BOOL
        case IntV(n):
            return NAT if n >= 0 else INT
        case str():
            s = gamma.get(v)
            return s if is_sort(s) else None
    return None


def _sort_meet(a, b):
    if a == b or (isinstance(a, Shared) and isinstance(b, Shared) and payload_equal(a, b)):
        return a
    if {type(a), type(b)} == {type(NAT), type(INT)}:
        return NAT
    return None


def _uses_as_sort(p, x) -> bool:
    """Whether ``x`` occurs where only a sort makes sense."""
    found = [False]

    def ex(e):
        match e:
            case Val(v):
                return v == x
            case EVar(n):
                return n == x
            case Not(a) | Succ(a) | Neg(a):
                return ex(a)
            case Gt(a, b):
                return ex(a) or ex(b)
        return False

    def go(q):
        if found[0]:
            return
        match q:
            case Accept(u, y, body) | Request(u, y, body):
                if u == x:
                    found[0] = True
                elif y != x:
                    go(body)
            case Input(_, branches):
                for _, y, c in branches:
                    if y != x:
                        go(c)
            case Output(_, _, o, c):
                if is_expr(o) and ex(o):
                    found[0] = True
                go(c)
            case Invoke(_, args):
                if any(is_expr(a) and ex(a) for a in args):
                    found[0] = True
            case Cond(e, a, b):
                if ex(e):
                    found[0] = True
                go(a)
                go(b)
            case Par(a, b) | Choice(a, b):
                go(a)
                go(b)
            case NewLinear(a, b, s):
                if x not in (a, b):
                    go(s)
            case NewShared(s, sc):
                if s != x:
                    go(sc)
            case Def(_, _, _, scope):
                go(scope)

    go(p)
    return found[0]


def _join(t1, t2):
    """A common supertype of two synthesized types, or None."""
    if t1 is None or t2 is None:
        return None
    if is_sort(t1) or is_sort(t2):
        return t1 if payload_equal(t1, t2) else _sort_meet(t1, t2)
    if type_equal(t1, t2):
        return t1
    a, b = unfold(t1), unfold(t2)
    if isinstance(a, Select) and isinstance(b, Select):
        entries = {l: (u, c) for l, u, c in a.entries}
        for l, u, c in b.entries:
            if l in entries:
                u0, c0 = entries[l]
                if not payload_equal(u0, u):
                    return None
                j = _join(c0, c)
                if j is None:
                    return None
                entries[l] = (u0, j)
            else:
                entries[l] = (u, c)
        return Select(tuple((l, u, c) for l, (u, c) in entries.items()))
    if isinstance(a, Branch) and isinstance(b, Branch):
        if set(a.labels) != set(b.labels):
            return None
        out = []
        for l, u, c in a.entries:
            _, u2, c2 = b.entry(l)
            if not payload_equal(u, u2):
                return None
            j = _join(c, c2)
            if j is None:
                return None
            out.append((l, u, j))
        return Branch(tuple(out))
    return None


class _Checker:
    def __init__(self, mode: str, budget: Budget, procvars: dict):
        self.mode = mode
        self.budget = budget
        self.ext = mode.startswith("ext")
        self.asy = mode in ("async", "ext-async")
        self.procs: dict[str, _ProcInfo] = {}
        for x, ts in procvars.items():
            self.procs[x] = _ProcInfo((), None, {}, tuple(ts), "fixed")
        self.counter = 0

    def sub(self, t, s) -> bool:
        return _sub(t, s, self.mode, self.budget)

    def psub(self, u, v) -> bool:
        return _psub(u, v, self.mode, self.budget)

    # -- merging synthesized facts

    def merge(self, acc: dict, new: dict, joining: bool):
        for k, v in new.items():
            if k not in acc:
                acc[k] = v
                continue
            if joining:
                j = _join(acc[k], v)
            else:
                j = acc[k] if (is_sort(v) and payload_equal(acc[k], v)) else None
            if j is None:
                raise _Fail("t-par" if not joining else "t-choice",
                            f"incompatible uses of {k}")
            acc[k] = j

    # -- expressions

    def expr_sort(self, e, gamma):
        match e:
            case Val(v):
                s = _value_sort(v, gamma)
                if s is None:
                    raise _Fail("t-expr", f"untyped value {v!r}")
                return s
            case EVar(n):
                s = gamma.get(n)
                if s is UNKNOWN:
                    raise _NeedMore("t-expr", f"sort of {n} unknown")
                if s is None:
                    raise _Fail("t-expr", f"unbound variable {n}")
                return s
            case Not(a):
                self.check_expr(a, BOOL, gamma, {})
                return BOOL
            case Succ(a):
                self.check_expr(a, NAT, gamma, {})
                return NAT
            case Neg(a):
                self.check_expr(a, INT, gamma, {})
                return INT
            case Gt(a, b):
                self.check_expr(a, INT, gamma, {})
                self.check_expr(b, INT, gamma, {})
                return BOOL
        raise _Fail("t-expr", f"not an expression: {e!r}")

    def check_expr(self, e, want, gamma, syn):
        match e:
            case Val(v) if isinstance(v, str) and gamma.get(v) is UNKNOWN:
                return self._record_sort(v, want, syn)
            case EVar(n) if gamma.get(n) is UNKNOWN:
                return self._record_sort(n, want, syn)
            case Not(a):
                self._want(BOOL, want)
                return self.check_expr(a, BOOL, gamma, syn)
            case Succ(a):
                self._want(NAT, want)
                return self.check_expr(a, NAT, gamma, syn)
            case Neg(a):
                self._want(INT, want)
                return self.check_expr(a, INT, gamma, syn)
            case Gt(a, b):
                self._want(BOOL, want)
                self.check_expr(a, INT, gamma, syn)
                return self.check_expr(b, INT, gamma, syn)
        s = self.expr_sort(e, gamma)
        self._want(s, want)

    def _want(self, have, want):
        if not (is_sort(want) and subsort(have, want)):
            raise _Fail("t-expr", f"expected {show_payload(want)}, got {show_payload(have)}")

    def _record_sort(self, n, want, syn):
        if n in syn:
            m = _sort_meet(syn[n], want)
            if m is None:
                raise _Fail("t-expr", f"conflicting sorts for {n}")
            syn[n] = m
        else:
            syn[n] = want

    # -- processes

    def chk(self, p, gamma: dict, lin: dict, qs: dict) -> dict:
        """Check ``p`` and return synthesized types for UNKNOWN entries."""
        match p:
            case Par() | NewLinear() | NewShared():
                return self.block(p, gamma, lin, qs)
            case Nil():
                return self.nil(lin, qs, "t-idle")
            case Error():
                raise _Fail("t-error", "error has no type")
            case Queue():
                return self.queue(p, gamma, lin, qs)
            case Input():
                return self.input(p, gamma, lin, qs)
            case Output():
                return self.output(p, gamma, lin, qs)
            case Choice(a, b):
                syn = {}
                self.merge(syn, self.chk(a, gamma, lin, qs), True)
                self.merge(syn, self.chk(b, gamma, lin, qs), True)
                return syn
            case Cond(e, a, b):
                if not self.ext:
                    raise _Fail("t-cond", "conditionals need an extended mode")
                syn = {}
                self.check_expr(e, BOOL, gamma, syn)
                self.merge(syn, self.chk(a, gamma, lin, qs), True)
                self.merge(syn, self.chk(b, gamma, lin, qs), True)
                return syn
            case Invoke():
                return self.invoke(p, gamma, lin, qs)
            case Def(name, params, body, scope):
                self.procs[name] = _ProcInfo(tuple(params), body, dict(gamma))
                return self.chk(scope, gamma, lin, qs)
            case Accept() | Request():
                return self.session_init(p, gamma, lin, qs)
        raise _Fail("t-?", f"unexpected term {p!r}")

    def nil(self, lin, qs, rule):
        if qs:
            raise _Fail(rule, f"queue {sorted(qs)[0]} has no queue process")
        syn = {}
        for n, t in lin.items():
            if t is UNKNOWN:
                syn[n] = END
            elif not _is_end(t):
                raise _Fail(rule, f"{n} has type {show(t)}, expected end")
        return syn

    def queue(self, q, gamma, lin, qs):
        if not self.asy:
            raise _Fail("t-empty-q", "queues need an asynchronous mode")
        key = (q.src, q.dst)
        if set(qs) != {key}:
            raise _Fail("t-message-q", f"no queue type for {q.src} {q.dst}")
        tau = qs[key]
        syn = {}
        content = [c for _, c in q.items if isinstance(c, str) and c in lin]
        rest = {n: t for n, t in lin.items() if n not in content}
        if len(set(content)) != len(content):
            raise _Fail("t-message-q", "a channel is queued twice")
        if tau is UNKNOWN:
            items = []
            for l, c in q.items:
                if isinstance(c, str) and c in lin:
                    if lin[c] is UNKNOWN:
                        raise _NeedMore("t-message-q", f"type of {c} unknown")
                    items.append((l, lin[c]))
                else:
                    s = _value_sort(c, gamma)
                    if s is None or s is UNKNOWN:
                        raise _NeedMore("t-message-q", f"sort of {c!r} unknown")
                    items.append((l, s))
            syn[key] = QueueType(tuple(items))
        else:
            if len(tau.items) != len(q.items):
                raise _Fail("t-message-q", f"queue {q.src} {q.dst} length differs from its type")
            for (l, c), (l2, u) in zip(q.items, tau.items):
                if l != l2:
                    raise _Fail("t-message-q", f"label {l} against {l2}")
                if isinstance(c, str) and c in lin:
                    if lin[c] is UNKNOWN:
                        syn[c] = u
                    elif not self.sub(u, lin[c]):
                        raise _Fail("t-message-q", f"{c} is not of type {show_payload(u)}")
                else:
                    s = _value_sort(c, gamma)
                    if s is UNKNOWN:
                        syn[c] = u
                    elif s is None or not is_sort(u) or not self.psub(u, s):
                        raise _Fail("t-message-q", f"message {c!r} does not have sort {show_payload(u)}")
        self.merge(syn, self.nil(rest, {}, "t-message-q"), False)
        return syn

    def _linear_subject(self, u, lin, gamma, rule):
        if not isinstance(u, str):
            raise _Fail(rule, f"value {u!r} used as a channel")
        if u not in lin:
            if u in gamma:
                raise _Fail(rule, f"shared channel {u} used as a session channel")
            raise _Fail(rule, f"channel {u} is not in the environment")
        return lin[u]

    def input(self, p, gamma, lin, qs):
        if qs:
            raise _Fail("t-input", "unexpected queue type")
        t = self._linear_subject(p.subject, lin, gamma, "t-input")
        u = p.subject
        rest = {n: v for n, v in lin.items() if n != u}
        syn: dict = {}
        if t is UNKNOWN:
            entries = []
            for l, x, c in p.branches:
                g2, l2 = gamma, {**rest, u: UNKNOWN}
                if _uses_as_sort(c, x):
                    g2 = {**gamma, x: UNKNOWN}
                else:
                    l2[x] = UNKNOWN
                s = self.chk(c, g2, l2, {})
                pay = s.pop(x, END)
                cont = s.pop(u, END)
                entries.append((l, pay, cont))
                self.merge(syn, s, True)
            syn[u] = Branch(tuple(entries))
            return syn
        tu = unfold(t)
        if not isinstance(tu, Branch):
            raise _Fail("t-input", f"{u} has type {show(t)}, not a branching")
        missing = set(tu.labels) - {l for l, _, _ in p.branches}
        if missing:
            raise _Fail("t-input", f"{u} lacks branch {sorted(missing)[0]}")
        for l, x, c in p.branches:
            e = tu.entry(l)
            if e is None:
                # an extra branch, typed with whatever it needs
                g2, l2 = gamma, {**rest, u: UNKNOWN}
                if _uses_as_sort(c, x):
                    g2 = {**gamma, x: UNKNOWN}
                else:
                    l2[x] = UNKNOWN
                s = self.chk(c, g2, l2, {})
                s.pop(x, None)
                s.pop(u, None)
            else:
                _, pay, cont = e
                if is_sort(pay):
                    g2, l2 = {**gamma, x: pay}, {**rest, u: cont}
                else:
                    g2, l2 = gamma, {**rest, u: cont, x: pay}
                s = self.chk(c, g2, l2, {})
            self.merge(syn, s, True)
        return syn

    def _object(self, o, gamma, lin):
        """Classify an output object: ("lin", name) or ("sort", sort-or-UNKNOWN, name)."""
        if isinstance(o, str):
            if o in lin:
                return "lin", o
            if o in gamma:
                return "sort", gamma[o], o
            raise _Fail("t-output", f"{o} is not in the environment")
        if isinstance(o, Val) and isinstance(o.value, str):
            return self._object(o.value, gamma, lin)
        if isinstance(o, EVar):
            if o.name in lin:
                return "lin", o.name
            return "sort", gamma.get(o.name), o.name
        return "expr", o

    def output(self, p, gamma, lin, qs):
        if qs:
            raise _Fail("t-output", "unexpected queue type")
        u = p.subject
        t = self._linear_subject(u, lin, gamma, "t-output")
        kind = self._object(p.obj, gamma, lin)
        if kind[0] == "expr" and not self.ext:
            raise _Fail("t-out-ext", "value outputs need an extended mode")
        syn: dict = {}
        consumed = kind[1] if kind[0] == "lin" else None
        rest = {n: v for n, v in lin.items() if n not in (u, consumed)}
        if t is UNKNOWN:
            if kind[0] == "lin":
                pay = lin[consumed]
                if pay is UNKNOWN:
                    raise _NeedMore("t-output", f"type of {consumed} unknown")
            elif kind[0] == "sort":
                pay = kind[1]
                if pay is None or pay is UNKNOWN:
                    raise _NeedMore("t-output", f"sort of {kind[2]} unknown")
            else:
                pay = self.expr_sort(kind[1], gamma)
            s = self.chk(p.cont, gamma, {**rest, u: UNKNOWN}, {})
            cont = s.pop(u, END)
            self.merge(syn, s, False)
            syn[u] = Select(((p.label, pay, cont),))
            return syn
        tu = unfold(t)
        if not isinstance(tu, Select) or tu.entry(p.label) is None:
            raise _Fail("t-output", f"{u} has type {show(t)}, which cannot send {p.label}")
        _, pay, cont = tu.entry(p.label)
        if kind[0] == "lin":
            have = lin[consumed]
            if have is UNKNOWN:
                syn[consumed] = pay
            elif is_sort(pay) or not self.sub(pay, have):
                raise _Fail("t-output", f"{consumed}: {show(have)} cannot be sent as {show_payload(pay)}")
        elif kind[0] == "sort":
            have = kind[1]
            if have is UNKNOWN:
                if not is_sort(pay):
                    raise _Fail("t-output", f"{kind[2]} sent where a session is expected")
                syn[kind[2]] = pay
            elif have is None or not is_sort(pay) or not self.psub(pay, have):
                raise _Fail("t-out-ext", f"{kind[2]} does not have sort {show_payload(pay)}")
        else:
            if not is_sort(pay):
                raise _Fail("t-out-ext", f"expression sent where {show_payload(pay)} is expected")
            self.check_expr(kind[1], pay, gamma, syn)
        s = self.chk(p.cont, gamma, {**rest, u: cont}, {})
        self.merge(syn, s, False)
        return syn

    def session_init(self, p, gamma, lin, qs):
        rule = "t-acc" if isinstance(p, Accept) else "t-req"
        if not self.ext:
            raise _Fail(rule, "shared channels need an extended mode")
        u, y, body = p.subject, p.var, p.body
        if not isinstance(u, str) or u not in gamma:
            raise _Fail(rule, f"{u!r} is not a shared channel")
        srt = gamma[u]
        syn: dict = {}
        if srt is UNKNOWN:
            s = self.chk(body, gamma, {**lin, y: UNKNOWN}, qs)
            ty = s.pop(y, END)
            syn[u] = Shared(ty if rule == "t-acc" else dual(ty))
            self.merge(syn, s, False)
            return syn
        if not isinstance(srt, Shared):
            raise _Fail(rule, f"{u} has sort {show_payload(srt)}")
        ty = srt.carried if rule == "t-acc" else dual(srt.carried)
        return self.chk(body, gamma, {**lin, y: ty}, qs)

    def invoke(self, p, gamma, lin, qs):
        if qs:
            raise _Fail("t-var", "unexpected queue type")
        info = self.procs.get(p.var)
        if info is None:
            raise _Fail("t-var", f"undefined process variable {p.var}")
        if len(p.args) != (len(info.types) if info.types is not None else len(info.params)):
            raise _Fail("t-var", f"{p.var} called with the wrong number of arguments")
        if info.state == "pending":
            self.fix_def(p, info, gamma, lin)
        syn: dict = {}
        used = []
        for a, ty in zip(p.args, info.types):
            if is_sort(ty):
                if isinstance(a, str) and a in lin:
                    if lin[a] is UNKNOWN:
                        syn[a] = ty
                        used.append(a)
                        continue
                    raise _Fail("t-var", f"session channel {a} passed for a sort")
                e = Val(a) if isinstance(a, str) else a
                self.check_expr(e, ty, gamma, syn)
            else:
                if not isinstance(a, str) or a not in lin:
                    raise _Fail("t-var", f"argument {a!r} is not a session channel")
                if a in used:
                    raise _Fail("t-var", f"{a} passed twice")
                used.append(a)
                have = lin[a]
                if have is UNKNOWN:
                    syn[a] = ty
                elif isinstance(ty, Var):
                    raise _Fail("t-var", f"recursive parameter of {p.var} meets a typed channel")
                elif not self.sub(ty, have):
                    raise _Fail("t-var", f"{a}: {show(ty)} is not a subtype of {show(have)}")
        rest = {n: v for n, v in lin.items() if n not in used}
        self.merge(syn, self.nil(rest, {}, "t-var"), False)
        return syn

    def fix_def(self, call, info, gamma, lin):
        """Give types to a definition's parameters from its first call."""
        types = []
        unknown = []
        for i, a in enumerate(call.args):
            if isinstance(a, str) and a in lin:
                if lin[a] is UNKNOWN:
                    self.counter += 1
                    ph = f"%X{self.counter}"
                    types.append(Var(ph))
                    unknown.append(i)
                else:
                    types.append(lin[a])
            else:
                e = Val(a) if isinstance(a, str) else a
                types.append(self.expr_sort(e, gamma))
        g = dict(info.gamma)
        lbody = {}
        for i, (x, ty) in enumerate(zip(info.params, types)):
            if is_sort(ty):
                g[x] = ty
            else:
                lbody[x] = UNKNOWN if i in unknown else ty
        info.types = tuple(types)
        if unknown:
            info.state = "synth"
            try:
                s = self.chk(info.body, g, lbody, {})
            except _Fail:
                info.state, info.types = "pending", None
                raise
            final = list(types)
            for i in unknown:
                got = s.get(info.params[i], END)
                ph = types[i].name
                final[i] = Mu(ph, got) if ph in free_vars(got) else got
            info.types = tuple(final)
            # a type that still mentions an enclosing definition's placeholder
            # is only valid for this call
            open_ = any(not is_sort(t) and free_vars(t) for t in final)
            info.state = "pending" if open_ else "fixed"
            return
        info.state = "fixed"
        try:
            self.chk(info.body, g, lbody, {})
        except _NeedMore:
            info.state, info.types = "pending", None
            raise

    # -- parallel blocks

    def split(self, p, avoid: set):
        restr, threads, defs = [], [], []

        def go(q):
            match q:
                case Nil():
                    return
                case Par(a, b):
                    go(a)
                    go(b)
                case NewLinear(a, b, s):
                    ren = {}
                    for x in (a, b):
                        if x in avoid:
                            ren[x] = fresh_name(x, avoid)
                        avoid.add(ren.get(x, x))
                    if ren:
                        s = substitute(s, ren)
                    restr.append(("lin", ren.get(a, a), ren.get(b, b)))
                    go(s)
                case NewShared(x, s):
                    if x in avoid:
                        y = fresh_name(x, avoid)
                        s = substitute(s, {x: y})
                        x = y
                    avoid.add(x)
                    restr.append(("shared", x))
                    go(s)
                case Def(name, params, body, s):
                    defs.append((name, params, body))
                    go(s)
                case _:
                    threads.append(q)

        go(p)
        return restr, threads, defs

    def block(self, p, gamma, lin, qs):
        avoid = set(gamma) | set(lin) | {n for k in qs for n in k} | set(free_names(p))
        restr, threads, defs = self.split(p, avoid)
        gamma = dict(gamma)
        lin = dict(lin)
        qs = dict(qs)
        pairs = []
        rlin, rshared = set(), set()
        for r in restr:
            if r[0] == "lin":
                _, a, b = r
                pairs.append((a, b))
                lin[a] = lin[b] = UNKNOWN
                rlin |= {a, b}
                if self.asy:
                    qs[(a, b)] = qs[(b, a)] = UNKNOWN
            else:
                if not self.ext:
                    raise _Fail("t-res", "shared restrictions need an extended mode")
                gamma[r[1]] = UNKNOWN
                rshared.add(r[1])
        # gamma is shared so that sorts resolved below reach the bodies
        for name, params, body in defs:
            self.procs[name] = _ProcInfo(tuple(params), body, gamma)
        owners = self.owners(threads, lin, qs)
        self.resolve(threads, owners, pairs, rlin, rshared, gamma, lin, qs)
        syn: dict = {}
        for k, t in enumerate(threads):
            mine_l = {n: lin[n] for n, o in owners["lin"].items() if o == k}
            mine_q = {q: qs[q] for q, o in owners["q"].items() if o == k}
            s = self.chk(t, gamma, mine_l, mine_q)
            for n, v in s.items():
                if n in rlin or n in rshared or isinstance(n, tuple):
                    continue
                self.merge(syn, {n: v}, False)
        for n, o in owners["lin"].items():
            if o is None:
                if lin[n] is UNKNOWN:
                    if n not in rlin:
                        syn[n] = END
                elif not _is_end(lin[n]):
                    raise _Fail("t-par", f"{n} has type {show(lin[n])} but is never used")
        for q, o in owners["q"].items():
            if o is None:
                raise _Fail("t-empty-q", f"no queue process for {q}")
        for a, b in pairs:
            self.pair_ok(a, b, lin, qs)
        return {n: v for n, v in syn.items() if n not in rlin and n not in rshared}

    def owners(self, threads, lin, qs):
        own_l = {n: None for n in lin}
        own_q = {q: None for q in qs}
        for k, t in enumerate(threads):
            if isinstance(t, Queue):
                names = {c for _, c in t.items if isinstance(c, str) and c in lin}
                key = (t.src, t.dst)
                if key not in own_q:
                    raise _Fail("t-message-q", f"queue {t.src} {t.dst} has no queue type")
                if own_q[key] is not None:
                    raise _Fail("t-par", f"two queues {t.src} {t.dst}")
                own_q[key] = k
            else:
                names = set(free_names(t)) & set(lin)
            for n in names:
                if own_l[n] is not None:
                    raise _Fail("t-par", f"{n} is used by two parallel processes")
                own_l[n] = k
        return {"lin": own_l, "q": own_q}

    def resolve(self, threads, owners, pairs, rlin, rshared, gamma, lin, qs):
        done = set()
        while True:
            changed = self.propagate(threads, pairs, rlin, rshared, gamma, lin, qs)
            if changed:
                continue
            pending = {n for n in rlin if lin[n] is UNKNOWN} | {s for s in rshared if gamma[s] is UNKNOWN}
            pending |= {q for q in qs if qs[q] is UNKNOWN}
            if not pending:
                return
            progress = False
            for k, t in enumerate(threads):
                if k in done:
                    continue
                mine_l = {n: lin[n] for n, o in owners["lin"].items() if o == k}
                mine_q = {q: qs[q] for q, o in owners["q"].items() if o == k}
                wants = {n for n in mine_l if n in pending} | {q for q in mine_q if q in pending}
                wants |= {s for s in pending if s in rshared and s in free_names(t)}
                if not wants:
                    continue
                try:
                    s = self.chk(t, gamma, mine_l, mine_q)
                except _NeedMore:
                    continue
                done.add(k)
                for n, v in s.items():
                    if n in rlin and lin[n] is UNKNOWN:
                        if is_sort(v):
                            del lin[n]
                            gamma[n] = v
                        else:
                            lin[n] = v
                    elif n in rshared and gamma[n] is UNKNOWN:
                        gamma[n] = v
                    elif isinstance(n, tuple) and qs.get(n) is UNKNOWN:
                        qs[n] = v
                progress = True
                break
            if not progress:
                for n in list(rlin):
                    if n in lin and lin[n] is UNKNOWN and owners["lin"].get(n) is None:
                        lin[n] = END
                        progress = True
                if not progress:
                    left = sorted(str(x) for x in pending)
                    raise _Fail("t-new", f"cannot infer the type of {left[0]}")

    def propagate(self, threads, pairs, rlin, rshared, gamma, lin, qs) -> bool:
        changed = False
        for t in threads:
            if isinstance(t, Output) and isinstance(t.subject, str) and lin.get(t.subject) not in (None, UNKNOWN):
                tu = unfold(lin[t.subject])
                e = tu.entry(t.label) if isinstance(tu, Select) else None
                o = t.obj
                if e is not None and isinstance(o, str):
                    if o in rlin and lin.get(o) is UNKNOWN:
                        if is_sort(e[1]):
                            del lin[o]
                            gamma[o] = e[1]
                        else:
                            lin[o] = e[1]
                        changed = True
                    elif o in rshared and gamma[o] is UNKNOWN and is_sort(e[1]):
                        gamma[o] = e[1]
                        changed = True
            if isinstance(t, Queue) and qs.get((t.src, t.dst)) not in (None, UNKNOWN):
                tau = qs[(t.src, t.dst)]
                for (l, c), (l2, u) in zip(t.items, tau.items):
                    if isinstance(c, str) and c in rlin and lin.get(c) is UNKNOWN:
                        lin[c] = u
                        changed = True
        for q in qs:
            if qs[q] is UNKNOWN:
                qt = next((t for t in threads if isinstance(t, Queue) and (t.src, t.dst) == q), None)
                if qt is None:
                    continue
                items = []
                for l, c in qt.items:
                    if isinstance(c, str) and c in lin:
                        if lin[c] is UNKNOWN:
                            break
                        items.append((l, lin[c]))
                    else:
                        s = _value_sort(c, gamma)
                        if s is None or s is UNKNOWN:
                            break
                        items.append((l, s))
                else:
                    qs[q] = QueueType(tuple(items))
                    changed = True
        for a, b in pairs:
            for x, y in ((a, b), (b, a)):
                if lin.get(x) in (None, UNKNOWN) or lin.get(y) is not UNKNOWN:
                    continue
                if not self.asy:
                    lin[y] = dual(lin[x])
                    changed = True
                else:
                    into_y, into_x = qs.get((x, y)), qs.get((y, x))
                    if into_y is UNKNOWN or into_x is UNKNOWN:
                        continue
                    if into_y.items:
                        continue
                    r = remainder(lin[x], into_x, self.mode)
                    if r is None:
                        raise _Fail("t-new-async", f"remainder of {x} undefined")
                    lin[y] = dual(r)
                    changed = True
        return changed

    def pair_ok(self, a, b, lin, qs):
        ta, tb = lin.get(a, END), lin.get(b, END)
        if not self.asy:
            if not (self.sub(tb, dual(ta)) or self.sub(ta, dual(tb))):
                raise _Fail("t-new-sync", f"{a}: {show(ta)} and {b}: {show(tb)} are not dual")
            return
        ra = remainder(ta, qs[(b, a)], self.mode)
        rb = remainder(tb, qs[(a, b)], self.mode)
        if ra is None or rb is None:
            raise _Fail("t-new-async", f"remainder undefined for {a} {b}")
        if not (self.sub(rb, dual(ra)) or self.sub(ra, dual(rb))):
            raise _Fail("t-new-async", f"remainders of {a} and {b} are not dual")


def _wrap_defs(defs, body):
    for name, params, d in reversed(defs):
        body = Def(name, params, d, body)
    return body


def typecheck(gamma: SharedEnv | None, p, delta: SessionEnv | dict, mode: str = "sync",
              budget: Budget = DEFAULT_BUDGET) -> TypeResult:
    """Check that ``p`` has environment ``delta`` in the given mode."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    gamma = gamma or SharedEnv()
    if isinstance(delta, dict):
        delta = SessionEnv(delta)
    if isinstance(p, NormalForm):
        # lifted definitions may refer to each other, so only the body is
        # freshened; binders under a choice can repeat a hoisted name
        p = _wrap_defs(p.defs, freshen(NormalForm(p.restrictions, p.threads, ()).to_process()))
    else:
        p = freshen(p)
    if delta.queues and mode not in ("async", "ext-async"):
        return TypeResult(False, "t-queue", "queue types need an asynchronous mode")
    ck = _Checker(mode, budget, gamma.procvars)
    qs = dict(delta.queues)
    try:
        ck.block(p, dict(gamma.sorts), dict(delta.linear), qs)
    except _Fail as exc:
        return TypeResult(False, exc.rule, exc.msg)
    except RecursionError:
        return TypeResult(False, "t-?", "process too deep")
    return TypeResult(True)
