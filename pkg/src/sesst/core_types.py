"""Session types: syntax, duality, unfolding, equality and path predicates.

Types are equi-recursive: a ``Mu`` and its unfolding denote the same regular
tree.  All values are immutable and hashable so they can key memo tables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union


class SessionType:
    __slots__ = ()

    def __str__(self) -> str:
        return show(self)


class Sort:
    __slots__ = ()

    def __str__(self) -> str:
        return show_payload(self)


@dataclass(frozen=True)
class End(SessionType):
    pass


@dataclass(frozen=True)
class Var(SessionType):
    name: str


@dataclass(frozen=True)
class Mu(SessionType):
    name: str
    body: SessionType


@dataclass(frozen=True)
class Branch(SessionType):
    # each entry is (label, payload, continuation)
    entries: tuple

    @property
    def labels(self) -> list[str]:
        return [e[0] for e in self.entries]

    def entry(self, label: str):
        for e in self.entries:
            if e[0] == label:
                return e
        return None


@dataclass(frozen=True)
class Select(SessionType):
    entries: tuple

    @property
    def labels(self) -> list[str]:
        return [e[0] for e in self.entries]

    def entry(self, label: str):
        for e in self.entries:
            if e[0] == label:
                return e
        return None


@dataclass(frozen=True)
class BoolSort(Sort):
    pass


@dataclass(frozen=True)
class NatSort(Sort):
    pass


@dataclass(frozen=True)
class IntSort(Sort):
    pass


@dataclass(frozen=True)
class Shared(Sort):
    carried: SessionType


@dataclass(frozen=True)
class Ground(Sort):
    """An atomic sort such as ``string`` or ``date``; related only to itself."""
    name: str


Payload = Union[SessionType, Sort]

END = End()
BOOL = BoolSort()
NAT = NatSort()
INT = IntSort()

GROUND_SORTS = ("string", "char", "date", "real", "unit")


def is_session(u) -> bool:
    return isinstance(u, SessionType)


def is_sort(u) -> bool:
    return isinstance(u, Sort)


def branch(*entries) -> Branch:
    return Branch(tuple(entries))


def select(*entries) -> Select:
    return Select(tuple(entries))


# ---------------------------------------------------------------- errors

class TypeSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int = -1):
        super().__init__(f"{msg} (at {pos})" if pos >= 0 else msg)
        self.pos = pos


# ---------------------------------------------------------------- printing

def show_payload(u) -> str:
    match u:
        case BoolSort():
            return "bool"
        case NatSort():
            return "nat"
        case IntSort():
            return "int"
        case Ground(name):
            return name
        case Shared(t):
            return f"<{show(t)}>"
        case _:
            return show(u)


def _show_entry(e, kind: str) -> str:
    label, payload, cont = e
    if kind == "?":
        return f"{label}?({show_payload(payload)}).{show(cont)}"
    return f"{label}!<{show_payload(payload)}>.{show(cont)}"


def show(t: SessionType) -> str:
    match t:
        case End():
            return "end"
        case Var(name):
            return name
        case Mu(name, body):
            return f"rec {name}. {show(body)}"
        case Branch(entries):
            if len(entries) == 1:
                return _show_entry(entries[0], "?")
            return "&{ " + ", ".join(_show_entry(e, "?") for e in entries) + " }"
        case Select(entries):
            if len(entries) == 1:
                return _show_entry(entries[0], "!")
            return "+{ " + ", ".join(_show_entry(e, "!") for e in entries) + " }"
    raise TypeError(f"not a session type: {t!r}")


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(&\{|\+\{)|([A-Za-z_][A-Za-z0-9_']*)|(.))", re.S)


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        if m.group(1):
            toks.append((m.group(1), m.start(1)))
        elif m.group(2):
            toks.append((m.group(2), m.start(2)))
        elif m.group(3):
            toks.append((m.group(3), m.start(3)))
        pos = m.end()
    toks.append(("<eof>", len(text)))
    return toks


class _TypeParser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k: int = 0) -> str:
        return self.toks[min(self.i + k, len(self.toks) - 1)][0]

    def pos(self) -> int:
        return self.toks[self.i][1]

    def next(self) -> str:
        tok = self.toks[self.i][0]
        self.i += 1
        return tok

    def expect(self, tok: str):
        if self.peek() != tok:
            raise TypeSyntaxError(f"expected {tok!r}, found {self.peek()!r}", self.pos())
        self.next()

    def ident(self) -> str:
        tok = self.peek()
        if not re.match(r"[A-Za-z_]", tok) or tok == "<eof>":
            raise TypeSyntaxError(f"expected identifier, found {tok!r}", self.pos())
        return self.next()

    def type_(self) -> SessionType:
        tok = self.peek()
        if tok == "(":
            self.next()
            t = self.type_()
            self.expect(")")
            return t
        if tok == "end":
            self.next()
            return END
        if tok == "rec":
            self.next()
            name = self.ident()
            self.expect(".")
            return Mu(name, self.type_())
        if tok in ("&{", "+{"):
            return self.braced()
        if tok in ("?", "!"):
            return self.prefix("")
        if re.match(r"[A-Za-z_]", tok) and tok != "<eof>":
            name = self.next()
            if self.peek() in ("?", "!"):
                return self.prefix(name)
            return Var(name)
        raise TypeSyntaxError(f"unexpected {tok!r}", self.pos())

    def braced(self) -> SessionType:
        kind = self.next()
        entries = []
        want = "?" if kind == "&{" else "!"
        while True:
            label = ""
            if self.peek() not in ("?", "!"):
                label = self.ident()
            entries.append(self.entry(label, want))
            if self.peek() == ",":
                self.next()
                continue
            self.expect("}")
            break
        return self.build(want, entries)

    def prefix(self, label: str) -> SessionType:
        want = self.peek()
        return self.build(want, [self.entry(label, want)])

    def entry(self, label: str, want: str):
        start = self.pos()
        if self.peek() != want:
            raise TypeSyntaxError(f"expected {want!r} after label {label!r}", start)
        self.next()
        if self.peek() == ".":
            # a bare prefix such as quit!.end carries nothing
            self.next()
            return (label, END, self.type_(), start)
        if want == "?":
            self.expect("(")
            u = self.payload()
            self.expect(")")
        else:
            self.expect("<")
            u = self.payload()
            self.expect(">")
        self.expect(".")
        return (label, u, self.type_(), start)

    def build(self, want: str, entries) -> SessionType:
        seen = set()
        for label, _, _, p in entries:
            if label in seen:
                raise TypeSyntaxError(f"duplicate label {label!r}", p)
            seen.add(label)
        clean = tuple((l, u, c) for l, u, c, _ in entries)
        return Branch(clean) if want == "?" else Select(clean)

    def payload(self):
        tok = self.peek()
        if tok == "bool":
            self.next()
            return BOOL
        if tok == "nat":
            self.next()
            return NAT
        if tok == "int":
            self.next()
            return INT
        if tok in GROUND_SORTS and self.peek(1) not in ("?", "!"):
            self.next()
            return Ground(tok)
        if tok == "<":
            self.next()
            t = self.type_()
            self.expect(">")
            return Shared(t)
        return self.type_()


def parse_type(text: str) -> SessionType:
    p = _TypeParser(text)
    t = p.type_()
    if p.peek() != "<eof>":
        raise TypeSyntaxError(f"trailing input {p.peek()!r}", p.pos())
    check_well_formed(t)
    return t


def parse_payload(text: str):
    p = _TypeParser(text)
    u = p.payload()
    if p.peek() != "<eof>":
        raise TypeSyntaxError(f"trailing input {p.peek()!r}", p.pos())
    if is_session(u):
        check_well_formed(u)
        if free_vars(u):
            raise TypeSyntaxError("payload must be closed")
    return u


# ---------------------------------------------------------------- structure

def free_vars(t) -> frozenset:
    match t:
        case End():
            return frozenset()
        case Var(name):
            return frozenset([name])
        case Mu(name, body):
            return free_vars(body) - {name}
        case Branch(entries) | Select(entries):
            out = frozenset()
            for _, u, c in entries:
                out |= free_vars(u) | free_vars(c)
            return out
        case Shared(c):
            return free_vars(c)
        case _:
            return frozenset()


def check_well_formed(t) -> None:
    """Raise TypeSyntaxError on a non-contractive binder chain, an open
    payload, or repeated labels."""
    match t:
        case Mu():
            chain = []
            cur = t
            while isinstance(cur, Mu):
                chain.append(cur.name)
                cur = cur.body
            if isinstance(cur, Var) and cur.name in chain:
                raise TypeSyntaxError(f"non-contractive recursion on {cur.name!r}")
            check_well_formed(cur)
        case Branch(entries) | Select(entries):
            if not entries:
                raise TypeSyntaxError("empty choice")
            labels = [e[0] for e in entries]
            if len(set(labels)) != len(labels):
                raise TypeSyntaxError("duplicate label")
            for _, u, c in entries:
                if is_session(u) or isinstance(u, Shared):
                    if free_vars(u):
                        raise TypeSyntaxError("payload must be closed")
                    check_well_formed(u.carried if isinstance(u, Shared) else u)
                check_well_formed(c)


def subst(t: SessionType, name: str, r: SessionType) -> SessionType:
    """Replace free occurrences of ``name`` in continuations of ``t``.
    Payloads are closed, so they are left alone."""
    match t:
        case Var(n):
            return r if n == name else t
        case Mu(n, body):
            if n == name:
                return t
            return Mu(n, subst(body, name, r))
        case Branch(entries):
            return Branch(tuple((l, u, subst(c, name, r)) for l, u, c in entries))
        case Select(entries):
            return Select(tuple((l, u, subst(c, name, r)) for l, u, c in entries))
        case _:
            return t


def unfold_once(t: SessionType) -> SessionType:
    if isinstance(t, Mu):
        return subst(t.body, t.name, t)
    return t


def unfold(t: SessionType) -> SessionType:
    while isinstance(t, Mu):
        t = subst(t.body, t.name, t)
    return t


def dual(t: SessionType) -> SessionType:
    match t:
        case Branch(entries):
            return Select(tuple((l, u, dual(c)) for l, u, c in entries))
        case Select(entries):
            return Branch(tuple((l, u, dual(c)) for l, u, c in entries))
        case Mu(n, body):
            return Mu(n, dual(body))
        case _:
            return t


def size(t) -> int:
    match t:
        case Mu(_, body):
            return 1 + size(body)
        case Branch(entries) | Select(entries):
            return 1 + sum(size(u) + size(c) for _, u, c in entries)
        case Shared(c):
            return 1 + size(c)
        case _:
            return 1


# ---------------------------------------------------------------- equality

def type_equal(t: SessionType, s: SessionType) -> bool:
    """Regular-tree equality, by a bisimulation over unfoldings."""
    seen: set = set()
    todo = [(t, s)]
    while todo:
        a, b = todo.pop()
        if is_sort(a) or is_sort(b):
            if not _sort_equal(a, b, todo):
                return False
            continue
        a, b = unfold(a), unfold(b)
        if (a, b) in seen:
            continue
        seen.add((a, b))
        match a, b:
            case End(), End():
                pass
            case Var(x), Var(y):
                if x != y:
                    return False
            case (Branch(), Branch()) | (Select(), Select()):
                if type(a) is not type(b) or set(a.labels) != set(b.labels):
                    return False
                for l, u, c in a.entries:
                    _, u2, c2 = b.entry(l)
                    todo.append((u, u2))
                    todo.append((c, c2))
            case _:
                return False
    return True


def _sort_equal(a, b, todo) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Shared):
        todo.append((a.carried, b.carried))
        return True
    return a == b


def payload_equal(u, v) -> bool:
    if is_session(u) and is_session(v):
        return type_equal(u, v)
    if is_sort(u) and is_sort(v):
        if isinstance(u, Shared) and isinstance(v, Shared):
            return type_equal(u.carried, v.carried)
        return u == v
    return False


# ---------------------------------------------------------------- predicates
# Structural recursion on syntax: Var falls to the axiom side of the
# negative predicates and fails the positive ones.

def has_branching(t: SessionType) -> bool:
    """& in T: every continuation path meets a branching."""
    match t:
        case Branch():
            return True
        case Select(entries):
            return all(has_branching(c) for _, _, c in entries)
        case Mu(_, body):
            return has_branching(body)
        case _:
            return False


def no_branching(t: SessionType) -> bool:
    """& not in T: some continuation path avoids branchings."""
    match t:
        case End() | Var():
            return True
        case Select(entries):
            return any(no_branching(c) for _, _, c in entries)
        case Mu(_, body):
            return no_branching(body)
        case _:
            return False


def has_selection(t: SessionType) -> bool:
    match t:
        case Select():
            return True
        case Branch(entries):
            return all(has_selection(c) for _, _, c in entries)
        case Mu(_, body):
            return has_selection(body)
        case _:
            return False


def no_selection(t: SessionType) -> bool:
    match t:
        case End() | Var():
            return True
        case Branch(entries):
            return any(no_selection(c) for _, _, c in entries)
        case Mu(_, body):
            return no_selection(body)
        case _:
            return False


def branch_free_paths(t: SessionType) -> bool:
    """True when no continuation path of the tree of ``t`` meets a branching."""
    seen = set()
    todo = [t]
    while todo:
        cur = unfold(todo.pop())
        if cur in seen:
            continue
        seen.add(cur)
        if isinstance(cur, Branch):
            return False
        if isinstance(cur, Select):
            todo.extend(c for _, _, c in cur.entries)
    return True


# ---------------------------------------------------------------- contexts

@dataclass(frozen=True)
class Hole:
    index: int


@dataclass(frozen=True)
class CtxBranch:
    """Branching node of an asynchronous context; entries hold sub-contexts."""
    entries: tuple


@dataclass(frozen=True)
class CtxSelect:
    """Selection node of a dual context."""
    entries: tuple


def context_holes(ctx) -> list[int]:
    match ctx:
        case Hole(n):
            return [n]
        case CtxBranch(entries) | CtxSelect(entries):
            out = []
            for _, _, c in entries:
                out.extend(context_holes(c))
            return out
    raise TypeError(ctx)


def fill_context(ctx, fill) -> SessionType:
    """Plug ``fill[n]`` into hole ``n``; ``fill`` is a mapping or a callable."""
    match ctx:
        case Hole(n):
            return fill(n) if callable(fill) else fill[n]
        case CtxBranch(entries):
            return Branch(tuple((l, u, fill_context(c, fill)) for l, u, c in entries))
        case CtxSelect(entries):
            return Select(tuple((l, u, fill_context(c, fill)) for l, u, c in entries))
    raise TypeError(ctx)


def dual_context(ctx):
    match ctx:
        case Hole():
            return ctx
        case CtxBranch(entries):
            return CtxSelect(tuple((l, u, dual_context(c)) for l, u, c in entries))
        case CtxSelect(entries):
            return CtxBranch(tuple((l, u, dual_context(c)) for l, u, c in entries))
    raise TypeError(ctx)


def show_context(ctx) -> str:
    match ctx:
        case Hole(n):
            return f"[]{n}"
        case CtxBranch(entries) | CtxSelect(entries):
            kind = "?" if isinstance(ctx, CtxBranch) else "!"
            parts = []
            for l, u, c in entries:
                if kind == "?":
                    parts.append(f"{l}?({show_payload(u)}).{show_context(c)}")
                else:
                    parts.append(f"{l}!<{show_payload(u)}>.{show_context(c)}")
            if len(parts) == 1:
                return parts[0]
            return ("&{ " if kind == "?" else "+{ ") + ", ".join(parts) + " }"
    raise TypeError(ctx)


class _NoContext(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def decompose_context_reason(s: SessionType, unfold_budget: int = 16):
    """Split ``s`` into a maximal branching prefix and the selections below it.

    Returns ``((ctx, holes), "ok")`` or ``(None, reason)`` where reason is
    ``"end"`` (a path stops at end or a free variable), ``"loop"`` (a path
    branches forever) or ``"budget"`` (too many unfoldings on one path).
    """
    holes: dict[int, SessionType] = {}

    def go(t, used, path):
        while isinstance(t, Mu):
            t = unfold_once(t)
            used += 1
            if used > unfold_budget:
                raise _NoContext("budget")
        if isinstance(t, Select):
            n = len(holes) + 1
            holes[n] = t
            return Hole(n)
        if isinstance(t, Branch):
            if t in path:
                raise _NoContext("loop")
            path = path | {t}
            return CtxBranch(tuple((l, u, go(c, used, path)) for l, u, c in t.entries))
        raise _NoContext("end")

    try:
        ctx = go(s, 0, frozenset())
    except _NoContext as exc:
        return None, exc.reason
    return (ctx, holes), "ok"


def decompose_context(s: SessionType, unfold_budget: int = 16):
    result, _ = decompose_context_reason(s, unfold_budget)
    return result
