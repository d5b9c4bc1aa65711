"""Reduction, error detection and bounded search for ``error``.

States are normal forms: hoisted restrictions plus a multiset of threads,
with definitions lifted into a global table.  A restriction only matters
through the threads that mention its names, so each rule looks at the
minimal scope of a restricted pair, i.e. the threads mentioning a or b.

The search splits a state into components that share no names.  Such
components never interact, so error reachability is the union over the
components, and exploring them separately keeps the state space finite
when a recursive process keeps spawning independent sub-sessions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .calculus import (
    Accept, BoolV, Choice, Cond, EVar, Error, Gt, Input, IntV, Invoke, Neg,
    NormalForm, Not, Output, Queue, Request, Succ, Val, DeltaLimitError,
    _invoked, delta, flatten, free_names, fresh_name, garbage_collect, is_expr, normalize,
    show_value, subject_channels, substitute,
)

SYNC = "sync"
ASYNC = "async"
EXT_SYNC = "ext-sync"
EXT_ASYNC = "ext-async"
MODES = (SYNC, ASYNC, EXT_SYNC, EXT_ASYNC)


def is_async(mode: str) -> bool:
    return mode in (ASYNC, EXT_ASYNC)


def is_ext(mode: str) -> bool:
    return mode in (EXT_SYNC, EXT_ASYNC)


class ModeError(ValueError):
    pass


# ---------------------------------------------------------------- expressions

def eval_expr(e, shared=frozenset()):
    """Value of a closed expression, or None when evaluation is stuck.

    Shared channel names evaluate to themselves.
    """
    match e:
        case Val(v):
            return v
        case EVar(n):
            return n if n in shared else None
        case Not(a):
            v = eval_expr(a, shared)
            return BoolV(not v.value) if isinstance(v, BoolV) else None
        case Succ(a):
            v = eval_expr(a, shared)
            if isinstance(v, IntV) and v.value >= 0:
                return IntV(v.value + 1)
            return None
        case Neg(a):
            v = eval_expr(a, shared)
            return IntV(-v.value) if isinstance(v, IntV) else None
        case Gt(a, b):
            v, w = eval_expr(a, shared), eval_expr(b, shared)
            if isinstance(v, IntV) and isinstance(w, IntV):
                return BoolV(v.value > w.value)
            return None
    return None


# ---------------------------------------------------------------- program

@dataclass
class Program:
    """The static part of a run: lifted definitions, mode and the free
    names used as shared channels."""
    defs: dict
    mode: str
    shared_free: frozenset = frozenset()
    reserved: set = field(default_factory=set)


def _shared_subjects(p, acc):
    match p:
        case Accept(u, _, body) | Request(u, _, body):
            if isinstance(u, str):
                acc.add(u)
            _shared_subjects(body, acc)
        case Input(_, branches):
            for _, _, c in branches:
                _shared_subjects(c, acc)
        case Output(_, _, _, c):
            _shared_subjects(c, acc)
        case Choice(a, b) | Cond(_, a, b):
            _shared_subjects(a, acc)
            _shared_subjects(b, acc)
        case _:
            for attr in ("left", "right", "scope", "then", "other"):
                if hasattr(p, attr):
                    _shared_subjects(getattr(p, attr), acc)


def program_of(nf: NormalForm, mode: str) -> Program:
    defs = nf.defs_map()
    free = set()
    for t in nf.threads:
        free |= free_names(t)
    restricted = {n for r in nf.restrictions for n in r[1:]}
    subj: set = set()
    for t in nf.threads:
        _shared_subjects(t, subj)
    for ps, b in defs.values():
        _shared_subjects(b, subj)
    shared_free = frozenset((subj & free) - restricted)
    reserved = set(free) | restricted
    for ps, b in defs.values():
        reserved |= set(ps) | free_names(b)
    return Program(defs, mode, shared_free, reserved)


def validate(nf: NormalForm, mode: str) -> None:
    """Raise ModeError when the state uses constructs outside the mode."""
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    procs = list(nf.threads) + [b for _, _, b in nf.defs]

    def walk(p):
        match p:
            case Queue():
                if not is_async(mode):
                    raise ModeError("queues need an asynchronous mode")
            case Accept() | Request() | Cond():
                if not is_ext(mode):
                    raise ModeError("shared channels and conditionals need an extended mode")
            case Output(_, _, o, _) if not isinstance(o, str) and not is_ext(mode):
                raise ModeError("value outputs need an extended mode")
        for attr in ("left", "right", "scope", "then", "other", "cont", "body"):
            if hasattr(p, attr):
                walk(getattr(p, attr))
        if isinstance(p, Input):
            for _, _, c in p.branches:
                walk(c)

    for p in procs:
        walk(p)
    if not is_ext(mode) and any(r[0] == "shared" for r in nf.restrictions):
        raise ModeError("shared restrictions need an extended mode")


# ---------------------------------------------------------------- one step

@dataclass(frozen=True)
class StepResult:
    successors: tuple  # (rule, NormalForm)
    error_rules: frozenset


def _names_of(threads):
    out = set()
    for t in threads:
        out |= free_names(t)
    return out


def _flatten_into(procs, restr, used, prog):
    """Hoist restrictions out of ``procs`` and return (restrictions, threads)."""
    new_r = list(restr)
    out = []
    for p in procs:
        r, ts = flatten(p, used)
        new_r.extend(r)
        out.extend(ts)
    return new_r, out


class _Stepper:
    def __init__(self, prog: Program):
        self.prog = prog
        self.mode = prog.mode

    def shared(self, restr):
        return self.prog.shared_free | {r[1] for r in restr if r[0] == "shared"}

    def step(self, restr, threads):
        """Return (successors, errors); successors are (rule, restr, threads)."""
        restr = tuple(restr)
        threads = tuple(threads)
        mode = self.mode
        ext = is_ext(mode)
        shared = self.shared(restr)
        linear = {n for r in restr if r[0] == "lin" for n in r[1:]}
        succ = []
        errors = set()
        base_used = None

        def used():
            nonlocal base_used
            if base_used is None:
                base_used = _names_of(threads) | {n for r in restr for n in r[1:]} | self.prog.reserved
            return set(base_used)

        def emit(rule, drop, add, extra_restr=()):
            rest = [t for k, t in enumerate(threads) if k not in drop]
            u = used()
            r2, new = _flatten_into(add, list(restr) + list(extra_restr), u, self.prog)
            r2, ts = garbage_collect(r2, rest + new)
            succ.append((rule, tuple(r2), tuple(ts)))

        mentions: dict[str, list[int]] = {}
        for k, t in enumerate(threads):
            for n in free_names(t):
                mentions.setdefault(n, []).append(k)

        for k, t in enumerate(threads):
            match t:
                case Error():
                    errors.add("error")
                case Choice(a, b):
                    emit("r-choice", {k}, [a])
                    emit("r-choice", {k}, [b])
                case Invoke(var, args):
                    if var not in self.prog.defs:
                        continue
                    params, body = self.prog.defs[var]
                    vals = []
                    stuck = False
                    for a in args:
                        if isinstance(a, str):
                            vals.append(a)
                        else:
                            v = eval_expr(a, shared)
                            if v is None:
                                stuck = True
                            vals.append(v)
                    if stuck:
                        errors.add("err-def")
                        continue
                    if len(vals) != len(params):
                        continue
                    rule = "r-def-ext" if ext and any(not isinstance(a, str) for a in args) else "r-def"
                    emit(rule, {k}, [substitute(body, dict(zip(params, vals)))])
                case Cond(e, a, b):
                    v = eval_expr(e, shared)
                    if v == BoolV(True):
                        emit("r-t-cond", {k}, [a])
                    elif v == BoolV(False):
                        emit("r-f-cond", {k}, [b])
                    else:
                        errors.add("err-cond")
                case Input(u, _):
                    if ext and (not isinstance(u, str) or u in shared):
                        errors.add("err-chan-in")
                case Output(u, _, o, _):
                    if ext and (not isinstance(u, str) or u in shared):
                        errors.add("err-chan-out")
                    if is_expr(o) and eval_expr(o, shared) is None:
                        errors.add("err-com-ext")
                case Accept(u, _, _):
                    if not isinstance(u, str) or u in linear:
                        errors.add("err-acc")
                case Request(u, _, _):
                    if not isinstance(u, str) or u in linear:
                        errors.add("err-req")

        if ext:
            self.init(threads, shared, emit)
        if is_async(mode):
            self.async_rules(restr, threads, mentions, shared, emit, errors)
        else:
            self.sync_rules(restr, threads, mentions, shared, emit, errors)
        return succ, errors

    def init(self, threads, shared, emit):
        accs = [(k, t) for k, t in enumerate(threads) if isinstance(t, Accept) and t.subject in shared]
        reqs = [(k, t) for k, t in enumerate(threads) if isinstance(t, Request) and t.subject in shared]
        for ka, acc in accs:
            for kr, req in reqs:
                if acc.subject != req.subject:
                    continue
                u = self.prog.reserved | _names_of(threads)
                a = fresh_name("a", u)
                b = fresh_name("b", u | {a})
                procs = [substitute(acc.body, {acc.var: a}), substitute(req.body, {req.var: b})]
                if is_async(self.mode):
                    procs += [Queue(b, a, ()), Queue(a, b, ())]
                    rule = "r-init-async"
                else:
                    rule = "r-init-sync"
                emit(rule, {ka, kr}, procs, [("lin", a, b)])

    def _users(self, mentions, a, b):
        return sorted(set(mentions.get(a, ())) | set(mentions.get(b, ())))

    def sync_rules(self, restr, threads, mentions, shared, emit, errors):
        for r in restr:
            if r[0] != "lin":
                continue
            _, a, b = r
            users = self._users(mentions, a, b)
            ts = [threads[k] for k in users]
            sc = set()
            fc = set()
            for t in ts:
                sc |= subject_channels(t)
                fc |= free_names(t)
            if (a in sc and b not in fc) or (b in sc and a not in fc):
                errors.add("err-new-sync")
            if len(users) != 2:
                continue
            t1, t2 = ts
            k1, k2 = users
            subs = {t1.subject if isinstance(t1, (Input, Output)) else None,
                    t2.subject if isinstance(t2, (Input, Output)) else None}
            if subs != {a, b}:
                continue
            if isinstance(t1, Output) and isinstance(t2, Output):
                errors.add("err-out-out-sync")
            elif isinstance(t1, Input) and isinstance(t2, Input):
                errors.add("err-in-in-sync")
            else:
                (ko, out), (ki, inp) = ((k1, t1), (k2, t2)) if isinstance(t1, Output) else ((k2, t2), (k1, t1))
                br = inp.branch(out.label)
                if br is None:
                    errors.add("err-mism-sync")
                    continue
                if isinstance(out.obj, str):
                    v, rule = out.obj, "r-com-sync"
                else:
                    v = eval_expr(out.obj, shared)
                    rule = "r-com-sync-ext"
                    if v is None:
                        continue
                emit(rule, {ko, ki}, [out.cont, substitute(br[2], {br[1]: v})])

    def async_rules(self, restr, threads, mentions, shared, emit, errors):
        ext = is_ext(self.mode)
        queues = [(k, t) for k, t in enumerate(threads) if isinstance(t, Queue)]
        for k, t in enumerate(threads):
            if isinstance(t, Output) and isinstance(t.subject, str):
                if isinstance(t.obj, str):
                    v, rule = t.obj, "r-send-async"
                else:
                    v = eval_expr(t.obj, shared)
                    rule = "r-send-async-ext"
                    if v is None:
                        continue
                for kq, q in queues:
                    if q.src == t.subject:
                        emit(rule, {k, kq}, [t.cont, Queue(q.src, q.dst, q.items + ((t.label, v),))])
        for kq, q in queues:
            if not q.items:
                continue
            label, c = q.items[0]
            for k, t in enumerate(threads):
                if isinstance(t, Input) and t.subject == q.dst:
                    br = t.branch(label)
                    valued = not isinstance(c, str) or c in shared
                    if br is None:
                        errors.add("err-mism-async-ext" if ext and valued else "err-mism-async")
                        continue
                    rule = "r-receive-async-ext" if ext and valued else "r-receive-async"
                    emit(rule, {k, kq}, [Queue(q.src, q.dst, q.items[1:]),
                                         substitute(br[2], {br[1]: c})])
        for r in restr:
            if r[0] != "lin":
                continue
            _, a, b = r
            users = self._users(mentions, a, b)
            ts = [threads[k] for k in users]
            self.async_pair_errors(a, b, ts, errors)
            self.async_pair_errors(b, a, ts, errors, both=False)

    def async_pair_errors(self, a, b, ts, errors, both=True):
        def inp(t, x):
            return isinstance(t, Input) and t.subject == x

        def q(t, x, y, empty=None):
            if not (isinstance(t, Queue) and t.src == x and t.dst == y):
                return False
            return empty is None or (not t.items) == empty

        if both and len(ts) == 4:
            if (sum(inp(t, a) for t in ts) == 1 and sum(inp(t, b) for t in ts) == 1
                    and sum(q(t, b, a, True) for t in ts) == 1 and sum(q(t, a, b, True) for t in ts) == 1):
                errors.add("err-in-in-async")
        if len(ts) == 3:
            if (sum(inp(t, a) for t in ts) == 1 and sum(q(t, b, a, True) for t in ts) == 1
                    and sum(q(t, a, b) for t in ts) == 1):
                errors.add("err-in-async")
        for t in ts:
            if q(t, b, a, False):
                rest = [s for s in ts if s is not t]
                if self.fpv_free(rest):
                    try:
                        seen = self.phi_threads(rest)
                    except DeltaLimitError:
                        continue
                    if a not in seen:
                        errors.add("err-orph-mess-async")

    def fpv_free(self, ts) -> bool:
        todo = list(ts)
        seen = set()
        while todo:
            p = todo.pop()
            for x in _invoked_vars(p):
                if x not in self.prog.defs:
                    return False
                if x not in seen:
                    seen.add(x)
                    todo.append(self.prog.defs[x][1])
        return True

    def phi_threads(self, ts):
        out = set()
        memo: dict = {}
        for t in ts:
            out |= delta(t, self.prog.defs, frozenset(), memo)
        return out


def _invoked_vars(p) -> set:
    return _invoked(p)


def step(nf, mode: str = SYNC) -> StepResult:
    """All one-step reducts of a state and the error rules enabled in it."""
    nf = normalize(nf)
    validate(nf, mode)
    prog = program_of(nf, mode)
    succ, errors = _Stepper(prog).step(nf.restrictions, nf.threads)
    out = tuple((rule, NormalForm(r, t, nf.defs)) for rule, r, t in succ)
    return StepResult(out, frozenset(errors))


# ---------------------------------------------------------------- canonical keys

_HOLE = "\x00"


class _Recorder(dict):
    def __init__(self, restricted):
        super().__init__()
        self.restricted = restricted
        self.seq: list[str] = []

    def name(self, n):
        if n in self.restricted:
            self.seq.append(n)
            return _HOLE
        return n


def _canon(p, rec: _Recorder, bound: dict, depth: list) -> str:
    def nm(n):
        if not isinstance(n, str):
            return show_value(n)
        if n in bound:
            return bound[n]
        return rec.name(n)

    def bind(x):
        depth[0] += 1
        return {**bound, x: f"%{depth[0]}"}

    def ex(e):
        match e:
            case Val(v):
                return nm(v) if isinstance(v, str) else show_value(v)
            case EVar(n):
                return nm(n)
            case Not(a):
                return f"not({ex(a)})"
            case Succ(a):
                return f"succ({ex(a)})"
            case Neg(a):
                return f"neg({ex(a)})"
            case Gt(a, b):
                return f"({ex(a)}>{ex(b)})"
        raise TypeError(e)

    def ob(o):
        return nm(o) if isinstance(o, str) else (ex(o) if is_expr(o) else show_value(o))

    match p:
        case Input(u, branches):
            parts = []
            for l, x, c in branches:
                b2 = bind(x)
                parts.append(f"{l}({b2[x]}).{_canon(c, rec, b2, depth)}")
            return f"{ob(u)}?{{{','.join(parts)}}}"
        case Output(u, l, o, c):
            return f"{ob(u)}!{l}<{ob(o)}>.{_canon(c, rec, bound, depth)}"
        case Invoke(var, args):
            return f"{var}<{','.join(ob(a) for a in args)}>"
        case Queue(a, b, items):
            return f"Q[{nm(a)},{nm(b)}:{','.join(l + '<' + ob(c) + '>' for l, c in items)}]"
        case Choice(a, b):
            return f"({_canon(a, rec, bound, depth)} + {_canon(b, rec, bound, depth)})"
        case Cond(e, a, b):
            return f"if({ex(e)},{_canon(a, rec, bound, depth)},{_canon(b, rec, bound, depth)})"
        case Accept(u, x, body):
            b2 = bind(x)
            return f"acc {ob(u)}({b2[x]}).{_canon(body, rec, b2, depth)}"
        case Request(u, x, body):
            b2 = bind(x)
            return f"req {ob(u)}({b2[x]}).{_canon(body, rec, b2, depth)}"
        case Error():
            return "error"
        case _:
            from .calculus import Nil, Par, NewLinear, NewShared
            match p:
                case Nil():
                    return "0"
                case Par(a, b):
                    return f"({_canon(a, rec, bound, depth)} | {_canon(b, rec, bound, depth)})"
                case NewLinear(a, b, s):
                    b2 = bind(a)
                    b2 = {**b2, b: f"%{depth[0]}'"}
                    return f"(new {b2[a]} {b2[b]}){_canon(s, rec, b2, depth)}"
                case NewShared(s, sc):
                    b2 = bind(s)
                    return f"(news {b2[s]}){_canon(sc, rec, b2, depth)}"
    raise TypeError(p)


def canonical_key(restr, threads):
    """A hashable key invariant under renaming of restricted and bound names
    and under reordering of threads (up to ties between equal skeletons)."""
    restricted = {n for r in restr for n in r[1:]}
    items = []
    for t in threads:
        rec = _Recorder(restricted)
        s = _canon(t, rec, {}, [0])
        items.append((s, rec.seq))
    items.sort(key=lambda x: x[0])
    index: dict[str, int] = {}
    out = []
    for s, seq in items:
        for n in seq:
            if n not in index:
                index[n] = len(index)
        if seq:
            pieces = s.split(_HOLE)
            buf = [pieces[0]]
            for n, piece in zip(seq, pieces[1:]):
                buf.append(f"#{index[n]}")
                buf.append(piece)
            s = "".join(buf)
        out.append(s)
    rs = []
    for r in restr:
        idx = [index.get(n, -1) for n in r[1:]]
        rs.append((r[0],) + tuple(sorted(idx)))
    return (tuple(sorted(rs)), tuple(out))


def components(restr, threads):
    """Split a state into groups of threads that share no names."""
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry

    anchors = []
    for k, t in enumerate(threads):
        names = list(free_names(t))
        if not names:
            anchors.append(("thread", k))
            continue
        for n in names[1:]:
            union(names[0], n)
        anchors.append(names[0])
    for r in restr:
        if r[0] == "lin":
            union(r[1], r[2])
    groups: dict = {}
    for k, t in enumerate(threads):
        a = anchors[k]
        root = a if isinstance(a, tuple) else ("name", find(a))
        groups.setdefault(root, ([], []))[1].append(t)
    for r in restr:
        root = ("name", find(r[1]))
        if root in groups:
            groups[root][0].append(r)
    return [(tuple(rs), tuple(ts)) for rs, ts in groups.values()]


# ---------------------------------------------------------------- search

@dataclass(frozen=True)
class ErrorReached:
    trace: tuple  # (rule, NormalForm); the last entry names the error rule
    error_rules: frozenset = frozenset()

    def rules(self) -> list[str]:
        return [r for r, _ in self.trace]


@dataclass(frozen=True)
class NoErrorProven:
    states: int
    depth_limited: bool = False


@dataclass(frozen=True)
class BudgetExhausted:
    frontier: int
    states: int = 0


DEFAULT_DEPTH = 512
DEFAULT_STATES = 100_000


def _split_global(nf):
    return [c for c in components(nf.restrictions, nf.threads)]


def reach_error(p, mode: str = SYNC, max_depth: int = DEFAULT_DEPTH,
                max_states: int = DEFAULT_STATES):
    """Breadth-first search for a reachable error.

    NoErrorProven means every state within ``max_depth`` steps was explored
    without finding an error; ``depth_limited`` tells whether the bound cut
    off any state.  Hitting ``max_states`` gives BudgetExhausted.
    """
    nf = normalize(p)
    validate(nf, mode)
    prog = program_of(nf, mode)
    stepper = _Stepper(prog)
    start = _split_global(nf)
    # key -> (restr, threads, depth, parent key, rule, sibling components)
    info: dict = {}
    todo = deque()
    for c in start:
        k = canonical_key(*c)
        if k not in info:
            info[k] = (c, 0, None, None, None)
            todo.append(k)
    depth_limited = False
    while todo:
        k = todo.popleft()
        (restr, threads), depth, _, _, _ = info[k]
        succ, errors = stepper.step(restr, threads)
        if errors:
            return _build_trace(nf, info, k, sorted(errors), start)
        if depth >= max_depth:
            if succ:
                depth_limited = True
            continue
        for rule, r2, t2 in succ:
            comps = components(r2, t2)
            for i, c in enumerate(comps):
                ck = canonical_key(*c)
                if ck in info:
                    continue
                if len(info) >= max_states:
                    return BudgetExhausted(len(todo) + 1, len(info))
                info[ck] = (c, depth + 1, k, rule, (comps, i))
                todo.append(ck)
    return NoErrorProven(len(info), depth_limited)


def _build_trace(nf, info, k, errors, start):
    chain = []
    while k is not None:
        chain.append(k)
        k = info[k][2]
    chain.reverse()
    comps = list(start)
    trace = [("start", _assemble(nf, comps))]
    cur = info[chain[0]][0]
    for ck in chain[1:]:
        c, _, _, rule, (siblings, i) = info[ck]
        idx = next(j for j, x in enumerate(comps) if x is cur or x == cur)
        comps = comps[:idx] + list(siblings) + comps[idx + 1:]
        trace.append((rule, _assemble(nf, comps)))
        cur = siblings[i]
    trace.append((errors[0], trace[-1][1]))
    return ErrorReached(tuple(trace), frozenset(errors))


def _assemble(nf, comps):
    restr = []
    threads = []
    for r, t in comps:
        restr.extend(r)
        threads.extend(t)
    return NormalForm(tuple(restr), tuple(threads), nf.defs)


def same_state(nf1: NormalForm, nf2: NormalForm) -> bool:
    """Equality of states up to renaming, compared component by component."""
    def key(nf):
        return sorted(repr(canonical_key(*c)) for c in components(nf.restrictions, nf.threads))
    return key(nf1) == key(nf2)
