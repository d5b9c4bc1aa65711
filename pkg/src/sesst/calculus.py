"""Processes of the session calculus: syntax, names, substitution, normal
forms and the analysis of channels that may become input subjects.

One AST covers the synchronous, asynchronous and extended calculi; the
semantics decides which constructs a given mode accepts.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Union


# ---------------------------------------------------------------- values

@dataclass(frozen=True)
class BoolV:
    value: bool


@dataclass(frozen=True)
class IntV:
    value: int


Value = Union[BoolV, IntV]


def show_value(v) -> str:
    match v:
        case BoolV(b):
            return "true" if b else "false"
        case IntV(n):
            return str(n)
        case str():
            return v
    raise TypeError(v)


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Val:
    value: object


@dataclass(frozen=True)
class EVar:
    name: str


@dataclass(frozen=True)
class Not:
    arg: object


@dataclass(frozen=True)
class Succ:
    arg: object


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Gt:
    left: object
    right: object


EXPR_TYPES = (Val, EVar, Not, Succ, Neg, Gt)


def is_expr(x) -> bool:
    return isinstance(x, EXPR_TYPES)


def show_expr(e, top: bool = True) -> str:
    """Print an expression; a comparison not at the top gets parentheses."""
    match e:
        case Val(v):
            return show_value(v)
        case EVar(n):
            return n
        case Not(a):
            return f"not {show_expr(a, False)}"
        case Succ(a):
            return f"succ {show_expr(a, False)}"
        case Neg(a):
            return f"neg {show_expr(a, False)}"
        case Gt(a, b):
            s = f"{show_expr(a, False)} > {show_expr(b, False)}"
            return s if top else f"({s})"
    raise TypeError(e)


def expr_names(e) -> frozenset:
    match e:
        case EVar(n):
            return frozenset([n])
        case Val(v):
            return frozenset([v]) if isinstance(v, str) else frozenset()
        case Not(a) | Succ(a) | Neg(a):
            return expr_names(a)
        case Gt(a, b):
            return expr_names(a) | expr_names(b)
    return frozenset()


# ---------------------------------------------------------------- processes

@dataclass(frozen=True)
class Nil:
    pass


@dataclass(frozen=True)
class Invoke:
    var: str
    args: tuple  # names (str) or expressions


@dataclass(frozen=True)
class Input:
    subject: object  # name, or a value after a bad substitution
    branches: tuple  # (label, bound name, continuation)

    def branch(self, label):
        for b in self.branches:
            if b[0] == label:
                return b
        return None


@dataclass(frozen=True)
class Output:
    subject: object
    label: str
    obj: object  # a name, or an expression
    cont: object


@dataclass(frozen=True)
class Par:
    left: object
    right: object


@dataclass(frozen=True)
class Choice:
    left: object
    right: object


@dataclass(frozen=True)
class Def:
    name: str
    params: tuple
    body: object
    scope: object


@dataclass(frozen=True)
class NewLinear:
    a: str
    b: str
    scope: object


@dataclass(frozen=True)
class NewShared:
    s: str
    scope: object


@dataclass(frozen=True)
class Accept:
    subject: object
    var: str
    body: object


@dataclass(frozen=True)
class Request:
    subject: object
    var: str
    body: object


@dataclass(frozen=True)
class Cond:
    expr: object
    then: object
    other: object


@dataclass(frozen=True)
class Queue:
    src: str
    dst: str
    items: tuple  # (label, content) with content a name or a value


@dataclass(frozen=True)
class Error:
    pass


NIL = Nil()


def par(*ps):
    """Parallel composition of the non-nil arguments, folded left."""
    ps = [p for p in ps if not isinstance(p, Nil)]
    if not ps:
        return NIL
    out = ps[0]
    for p in ps[1:]:
        out = Par(out, p)
    return out


def choice(*ps):
    out = ps[-1]
    for p in reversed(ps[:-1]):
        out = Choice(p, out)
    return out


# ---------------------------------------------------------------- printing

def _obj(o) -> str:
    return o if isinstance(o, str) else show_value(o)


def _arg(a) -> str:
    return a if isinstance(a, str) else show_expr(a, False)


def show_process(p, level: int = 0) -> str:
    """Print ``p``; level 0 is a choice position, 1 a parallel operand and
    2 a prefix continuation."""
    def wrap(s, need):
        return f"({s})" if need else s

    match p:
        case Nil():
            return "0"
        case Error():
            return "error"
        case Invoke(var, args):
            return f"{var}<{', '.join(_arg(a) for a in args)}>"
        case Input(subj, branches):
            if len(branches) == 1:
                l, x, c = branches[0]
                return f"{_obj(subj)}?{l}({x}){_cont(c)}"
            inner = ", ".join(f"{l}({x}){_cont(c, 0)}" for l, x, c in branches)
            return f"{_obj(subj)}?{{{inner}}}"
        case Output(subj, l, o, c):
            if isinstance(o, str):
                return f"{_obj(subj)}!{l}<{o}>{_cont(c)}"
            return f"{_obj(subj)}!{l}[{show_expr(o)}]{_cont(c)}"
        case Par(a, b):
            return wrap(f"{show_process(a, 1)} | {show_process(b, 2)}", level >= 2)
        case Choice(a, b):
            return wrap(f"{show_process(a, 1)} (+) {show_process(b, 0)}", level >= 1)
        case Def(name, params, body, scope):
            s = f"def {name}({', '.join(params)}) = {show_process(body)} in {show_process(scope)}"
            return wrap(s, level >= 1)
        case NewLinear(a, b, scope):
            return f"(new {a} {b}){show_process(scope, 2)}"
        case NewShared(s, scope):
            return f"(news {s}){show_process(scope, 2)}"
        case Accept(u, x, body):
            return f"accept {_obj(u)}({x}){_cont(body)}"
        case Request(u, x, body):
            return f"request {_obj(u)}({x}){_cont(body)}"
        case Cond(e, a, b):
            return f"if {show_expr(e)} then {show_process(a)} else {show_process(b, 2)}"
        case Queue(a, b, items):
            inner = ", ".join(f"{l}<{_obj(c)}>" for l, c in items)
            return f"queue {a} {b} [{inner}]"
    raise TypeError(f"not a process: {p!r}")


def _cont(c, level: int = 2) -> str:
    if isinstance(c, Nil):
        return ""
    return "." + show_process(c, level)


# ---------------------------------------------------------------- parsing

class ProcessSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int = -1):
        super().__init__(f"{msg} (at {pos})" if pos >= 0 else msg)
        self.pos = pos


_PTOK = re.compile(r"\s*(?:(\(\+\))|(-?\d+)|([A-Za-z_][A-Za-z0-9_']*)|(\S))")

KEYWORDS = {"new", "news", "def", "in", "accept", "request", "if", "then",
            "else", "queue", "error", "true", "false", "not", "succ", "neg"}


def _ptokenize(text: str):
    toks = []
    pos = 0
    while True:
        m = _PTOK.match(text, pos)
        if m is None or m.end() == pos or m.lastindex is None:
            break
        k = m.lastindex
        kind = {1: "sym", 2: "int", 3: "id", 4: "sym"}[k]
        toks.append((kind, m.group(k), m.start(k)))
        pos = m.end()
    rest = text[pos:].strip()
    if rest:
        raise ProcessSyntaxError(f"unexpected input {rest[:10]!r}", pos)
    toks.append(("eof", "<eof>", len(text)))
    return toks


class _ProcParser:
    def __init__(self, text: str):
        self.toks = _ptokenize(text)
        self.i = 0

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def val(self, k=0):
        return self.peek(k)[1]

    def pos(self):
        return self.peek()[2]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, v):
        if self.val() != v:
            raise ProcessSyntaxError(f"expected {v!r}, found {self.val()!r}", self.pos())
        self.next()

    def ident(self):
        kind, v, p = self.peek()
        if kind != "id" or v in KEYWORDS:
            raise ProcessSyntaxError(f"expected a name, found {v!r}", p)
        self.next()
        return v

    def is_ident(self, k=0):
        kind, v, _ = self.peek(k)
        return kind == "id" and v not in KEYWORDS

    # P ::= par ((+) par)*
    def proc(self):
        ps = [self.par()]
        while self.val() == "(+)":
            self.next()
            ps.append(self.par())
        return choice(*ps)

    def par(self):
        p = self.prefix()
        while self.val() == "|":
            self.next()
            p = Par(p, self.prefix())
        return p

    def cont(self, full=False):
        if self.val() == ".":
            self.next()
            return self.proc() if full else self.prefix()
        return NIL

    def prefix(self):
        kind, v, p = self.peek()
        if kind == "int" and v == "0" and self.val(1) not in ("?", "!"):
            self.next()
            return NIL
        if v == "(":
            if self.val(1) == "new":
                self.next()
                self.next()
                a = self.ident()
                b = self.ident()
                self.expect(")")
                return NewLinear(a, b, self.prefix())
            if self.val(1) == "news":
                self.next()
                self.next()
                s = self.ident()
                self.expect(")")
                return NewShared(s, self.prefix())
            self.next()
            q = self.proc()
            self.expect(")")
            return q
        if v == "error":
            self.next()
            return Error()
        if v == "def":
            self.next()
            name = self.ident()
            self.expect("(")
            params = self.names(")")
            self.expect("=")
            body = self.proc()
            self.expect("in")
            return Def(name, tuple(params), body, self.proc())
        if v in ("accept", "request"):
            self.next()
            u = self.subject()
            self.expect("(")
            x = self.ident()
            self.expect(")")
            body = self.cont()
            return (Accept if v == "accept" else Request)(u, x, body)
        if v == "if":
            self.next()
            e = self.expr()
            self.expect("then")
            a = self.proc()
            self.expect("else")
            return Cond(e, a, self.prefix())
        if v == "queue":
            self.next()
            a = self.ident()
            b = self.ident()
            self.expect("[")
            items = []
            while self.val() != "]":
                label = self.ident() if self.is_ident() else ""
                self.expect("<")
                items.append((label, self.content()))
                self.expect(">")
                if self.val() == ",":
                    self.next()
                elif self.val() != "]":
                    raise ProcessSyntaxError("expected ',' or ']'", self.pos())
            self.next()
            return Queue(a, b, tuple(items))
        if kind in ("id", "int") or v in ("true", "false"):
            if kind == "id" and v not in KEYWORDS and self.val(1) == "<":
                self.next()
                self.next()
                args = []
                while self.val() != ">":
                    args.append(self.arg())
                    if self.val() == ",":
                        self.next()
                    elif self.val() != ">":
                        raise ProcessSyntaxError("expected ',' or '>'", self.pos())
                self.next()
                return Invoke(v, tuple(args))
            u = self.subject()
            if self.val() == "?":
                return self.input(u)
            if self.val() == "!":
                return self.output(u)
            raise ProcessSyntaxError(f"expected '?' or '!' after {v!r}", self.pos())
        raise ProcessSyntaxError(f"unexpected {v!r}", p)

    def subject(self):
        kind, v, p = self.peek()
        if kind == "int":
            self.next()
            return IntV(int(v))
        if v in ("true", "false"):
            self.next()
            return BoolV(v == "true")
        return self.ident()

    def content(self):
        kind, v, _ = self.peek()
        if kind == "int" or v in ("true", "false"):
            return self.subject()
        return self.ident()

    def names(self, close):
        out = []
        while self.val() != close:
            out.append(self.ident())
            if self.val() == ",":
                self.next()
            elif self.val() != close:
                raise ProcessSyntaxError(f"expected ',' or {close!r}", self.pos())
        self.next()
        return out

    def input(self, u):
        start = self.pos()
        self.expect("?")
        if self.val() == "{":
            self.next()
            branches = []
            while True:
                label = self.ident() if self.is_ident() else ""
                self.expect("(")
                x = self.ident()
                self.expect(")")
                branches.append((label, x, self.cont(full=True)))
                if self.val() == ",":
                    self.next()
                    continue
                self.expect("}")
                break
        else:
            label = self.ident() if self.is_ident() else ""
            self.expect("(")
            x = self.ident()
            self.expect(")")
            branches = [(label, x, self.cont())]
        labels = [b[0] for b in branches]
        if len(set(labels)) != len(labels):
            raise ProcessSyntaxError("duplicate input label", start)
        return Input(u, tuple(branches))

    def output(self, u):
        self.expect("!")
        label = self.ident() if self.is_ident() else ""
        if self.val() == "<":
            self.next()
            o = self.ident()
            self.expect(">")
        else:
            self.expect("[")
            o = self.expr()
            self.expect("]")
        return Output(u, label, o, self.cont())

    def arg(self):
        if self.is_ident() and self.val(1) in (",", ">"):
            return self.next()[1]
        return self.unary()

    def expr(self):
        a = self.unary()
        if self.val() == ">":
            self.next()
            return Gt(a, self.unary())
        return a

    def unary(self):
        kind, v, p = self.peek()
        if v in ("not", "¬"):
            self.next()
            return Not(self.unary())
        if v == "succ":
            self.next()
            return Succ(self.unary())
        if v == "neg":
            self.next()
            return Neg(self.unary())
        if kind == "int":
            self.next()
            return Val(IntV(int(v)))
        if v in ("true", "false"):
            self.next()
            return Val(BoolV(v == "true"))
        if v == "(":
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        return EVar(self.ident())


def parse_process(text: str, freshen_names: bool = True):
    """Parse a process, freshen bound names apart and check guardedness."""
    p = _ProcParser(text)
    proc = p.proc()
    if p.val() != "<eof>":
        raise ProcessSyntaxError(f"trailing input {p.val()!r}", p.pos())
    if freshen_names:
        proc = freshen(proc)
    check_guarded(proc)
    return proc


# ---------------------------------------------------------------- names

def _fn_obj(o) -> frozenset:
    if isinstance(o, str):
        return frozenset([o])
    if is_expr(o):
        return expr_names(o)
    return frozenset()


def free_names(p) -> frozenset:
    """All free identifiers, channels and variables alike."""
    match p:
        case Nil() | Error():
            return frozenset()
        case Invoke(_, args):
            out = frozenset()
            for a in args:
                out |= _fn_obj(a)
            return out
        case Input(u, branches):
            out = _fn_obj(u)
            for _, x, c in branches:
                out |= free_names(c) - {x}
            return out
        case Output(u, _, o, c):
            return _fn_obj(u) | _fn_obj(o) | free_names(c)
        case Par(a, b) | Choice(a, b):
            return free_names(a) | free_names(b)
        case Def(_, params, body, scope):
            return (free_names(body) - set(params)) | free_names(scope)
        case NewLinear(a, b, scope):
            return free_names(scope) - {a, b}
        case NewShared(s, scope):
            return free_names(scope) - {s}
        case Accept(u, x, body) | Request(u, x, body):
            return _fn_obj(u) | (free_names(body) - {x})
        case Cond(e, a, b):
            return expr_names(e) | free_names(a) | free_names(b)
        case Queue(a, b, items):
            out = frozenset([a, b])
            for _, c in items:
                out |= _fn_obj(c)
            return out
    raise TypeError(p)


def free_channels(p, variables=frozenset()) -> frozenset:
    """fc(P): free identifiers other than the given variables."""
    return free_names(p) - frozenset(variables)


def free_process_vars(p) -> frozenset:
    match p:
        case Invoke(var, _):
            return frozenset([var])
        case Input(_, branches):
            out = frozenset()
            for _, _, c in branches:
                out |= free_process_vars(c)
            return out
        case Output(_, _, _, c) | NewLinear(_, _, c) | NewShared(_, c) | \
                Accept(_, _, c) | Request(_, _, c):
            return free_process_vars(c)
        case Par(a, b) | Choice(a, b) | Cond(_, a, b):
            return free_process_vars(a) | free_process_vars(b)
        case Def(name, _, body, scope):
            return (free_process_vars(body) | free_process_vars(scope)) - {name}
    return frozenset()


def subject_channels(p, variables=frozenset()) -> frozenset:
    """sc(P): free channels in subject position.  Bound names and the given
    variables count as variables, whose fc is empty."""
    variables = frozenset(variables)

    def fc(u, bound):
        return frozenset([u]) if isinstance(u, str) and u not in bound else frozenset()

    def go(q, bound):
        match q:
            case Output(u, _, _, c):
                return fc(u, bound) | go(c, bound)
            case Input(u, branches):
                out = fc(u, bound)
                for _, x, c in branches:
                    out |= go(c, bound | {x})
                return out
            case Def(_, _, _, scope):
                return go(scope, bound)
            case Par(a, b) | Choice(a, b) | Cond(_, a, b):
                return go(a, bound) | go(b, bound)
            case NewLinear(a, b, scope):
                return go(scope, bound) - {a, b}
            case NewShared(s, scope):
                return go(scope, bound) - {s}
            case Accept(_, x, body) | Request(_, x, body):
                return go(body, bound | {x})
        return frozenset()

    return go(p, variables)


def bound_names(p) -> frozenset:
    match p:
        case Input(_, branches):
            out = frozenset()
            for _, x, c in branches:
                out |= {x} | bound_names(c)
            return out
        case Output(_, _, _, c):
            return bound_names(c)
        case Par(a, b) | Choice(a, b) | Cond(_, a, b):
            return bound_names(a) | bound_names(b)
        case Def(_, params, body, scope):
            return frozenset(params) | bound_names(body) | bound_names(scope)
        case NewLinear(a, b, scope):
            return frozenset([a, b]) | bound_names(scope)
        case NewShared(s, scope):
            return frozenset([s]) | bound_names(scope)
        case Accept(_, x, body) | Request(_, x, body):
            return frozenset([x]) | bound_names(body)
    return frozenset()


def all_names(p) -> frozenset:
    return free_names(p) | bound_names(p)


# ---------------------------------------------------------------- substitution

_counter = itertools.count(1)


def fresh_name(base: str, avoid) -> str:
    base = base.rstrip("0123456789") or base
    while True:
        cand = f"{base}{next(_counter)}"
        if cand not in avoid:
            return cand


def _sub_obj(o, m):
    if isinstance(o, str):
        return m.get(o, o)
    if is_expr(o):
        return _sub_expr(o, m)
    return o


def _sub_expr(e, m):
    match e:
        case EVar(n):
            if n in m:
                r = m[n]
                return EVar(r) if isinstance(r, str) else Val(r)
            return e
        case Not(a):
            return Not(_sub_expr(a, m))
        case Succ(a):
            return Succ(_sub_expr(a, m))
        case Neg(a):
            return Neg(_sub_expr(a, m))
        case Gt(a, b):
            return Gt(_sub_expr(a, m), _sub_expr(b, m))
    return e


def _sub_arg(a, m):
    if isinstance(a, str):
        r = m.get(a, a)
        return r if isinstance(r, str) else Val(r)
    return _sub_expr(a, m)


def _sub_out(o, m):
    # an output object that becomes a value turns into an expression
    if isinstance(o, str):
        r = m.get(o, o)
        return r if isinstance(r, str) else Val(r)
    return _sub_expr(o, m)


def substitute(p, mapping: dict):
    """Capture-avoiding substitution of names by names or values."""
    if not mapping:
        return p
    rng = frozenset(v for v in mapping.values() if isinstance(v, str))

    def binder(x, m, body_names):
        """Return (new binder name, mapping for the scope)."""
        m = {k: v for k, v in m.items() if k != x}
        if x in rng and m:
            y = fresh_name(x, rng | body_names | set(m))
            m[x] = y
            return y, m
        return x, m

    def go(q, m):
        if not m:
            return q
        match q:
            case Nil() | Error():
                return q
            case Invoke(var, args):
                return Invoke(var, tuple(_sub_arg(a, m) for a in args))
            case Input(u, branches):
                out = []
                for l, x, c in branches:
                    y, m2 = binder(x, m, all_names(c))
                    out.append((l, y, go(c, m2)))
                return Input(_sub_obj(u, m), tuple(out))
            case Output(u, l, o, c):
                return Output(_sub_obj(u, m), l, _sub_out(o, m), go(c, m))
            case Par(a, b):
                return Par(go(a, m), go(b, m))
            case Choice(a, b):
                return Choice(go(a, m), go(b, m))
            case Def(name, params, body, scope):
                m2 = dict(m)
                ps = []
                for x in params:
                    y, m2 = binder(x, m2, all_names(body))
                    ps.append(y)
                return Def(name, tuple(ps), go(body, m2), go(scope, m))
            case NewLinear(a, b, scope):
                names = all_names(scope)
                a2, m2 = binder(a, m, names)
                b2, m2 = binder(b, m2, names)
                return NewLinear(a2, b2, go(scope, m2))
            case NewShared(s, scope):
                s2, m2 = binder(s, m, all_names(scope))
                return NewShared(s2, go(scope, m2))
            case Accept(u, x, body):
                y, m2 = binder(x, m, all_names(body))
                return Accept(_sub_obj(u, m), y, go(body, m2))
            case Request(u, x, body):
                y, m2 = binder(x, m, all_names(body))
                return Request(_sub_obj(u, m), y, go(body, m2))
            case Cond(e, a, b):
                return Cond(_sub_expr(e, m), go(a, m), go(b, m))
            case Queue(a, b, items):
                return Queue(m.get(a, a), m.get(b, b),
                             tuple((l, _sub_obj(c, m)) for l, c in items))
        raise TypeError(q)

    return go(p, dict(mapping))


def freshen(p):
    """Rename binders so that no name is bound twice or both bound and free.

    The first binder of a name keeps it; later ones get numeric suffixes.
    Process variables are freshened the same way.
    """
    used = set(free_names(p))
    used_vars = set(free_process_vars(p))

    def pick(x, pool):
        if x not in pool:
            pool.add(x)
            return x
        y = fresh_name(x, pool)
        pool.add(y)
        return y

    def go(q, env, venv):
        def r(o):
            if isinstance(o, str):
                return env.get(o, o)
            if is_expr(o):
                return _sub_expr(o, env)
            return o

        match q:
            case Nil() | Error():
                return q
            case Invoke(var, args):
                return Invoke(venv.get(var, var), tuple(
                    env.get(a, a) if isinstance(a, str) else _sub_expr(a, env) for a in args))
            case Input(u, branches):
                out = []
                for l, x, c in branches:
                    y = pick(x, used)
                    out.append((l, y, go(c, {**env, x: y}, venv)))
                return Input(r(u), tuple(out))
            case Output(u, l, o, c):
                return Output(r(u), l, r(o), go(c, env, venv))
            case Par(a, b):
                return Par(go(a, env, venv), go(b, env, venv))
            case Choice(a, b):
                return Choice(go(a, env, venv), go(b, env, venv))
            case Def(name, params, body, scope):
                n2 = pick(name, used_vars)
                venv2 = {**venv, name: n2}
                env2 = dict(env)
                ps = []
                for x in params:
                    y = pick(x, used)
                    env2[x] = y
                    ps.append(y)
                return Def(n2, tuple(ps), go(body, env2, venv2), go(scope, env, venv2))
            case NewLinear(a, b, scope):
                a2, b2 = pick(a, used), pick(b, used)
                return NewLinear(a2, b2, go(scope, {**env, a: a2, b: b2}, venv))
            case NewShared(s, scope):
                s2 = pick(s, used)
                return NewShared(s2, go(scope, {**env, s: s2}, venv))
            case Accept(u, x, body):
                y = pick(x, used)
                return Accept(r(u), y, go(body, {**env, x: y}, venv))
            case Request(u, x, body):
                y = pick(x, used)
                return Request(r(u), y, go(body, {**env, x: y}, venv))
            case Cond(e, a, b):
                return Cond(_sub_expr(e, env), go(a, env, venv), go(b, env, venv))
            case Queue(a, b, items):
                return Queue(r(a), r(b), tuple((l, r(c)) for l, c in items))
        raise TypeError(q)

    return go(p, {}, {})


class GuardednessError(ProcessSyntaxError):
    pass


def check_guarded(p) -> None:
    """Reject definitions that can call themselves without a prefix first."""
    unguarded: dict[str, set] = {}

    def calls(q, acc):
        # invocations reachable without passing a communication prefix
        match q:
            case Invoke(var, _):
                acc.add(var)
            case Par(a, b) | Choice(a, b) | Cond(_, a, b):
                calls(a, acc)
                calls(b, acc)
            case NewLinear(_, _, s) | NewShared(_, s):
                calls(s, acc)
            case Def(_, _, _, scope):
                calls(scope, acc)

    def collect(q):
        match q:
            case Def(name, _, body, scope):
                acc = set()
                calls(body, acc)
                unguarded[name] = acc
                collect(body)
                collect(scope)
            case Input(_, branches):
                for _, _, c in branches:
                    collect(c)
            case Output(_, _, _, c) | NewLinear(_, _, c) | NewShared(_, c) | \
                    Accept(_, _, c) | Request(_, _, c):
                collect(c)
            case Par(a, b) | Choice(a, b) | Cond(_, a, b):
                collect(a)
                collect(b)

    collect(p)
    state: dict[str, int] = {}

    def visit(x):
        state[x] = 1
        for y in unguarded.get(x, ()):
            if y not in unguarded:
                continue
            if state.get(y) == 1:
                raise GuardednessError(f"unguarded recursive call of {y}")
            if y not in state:
                visit(y)
        state[x] = 2

    for x in unguarded:
        if x not in state:
            visit(x)


# ---------------------------------------------------------------- definitions

def lambda_lift(p):
    """Hoist every definition to a global table.

    Each definition gains its free names as extra leading parameters, and
    each call passes them along.  Returns (defs, process) where ``defs``
    maps a name to (params, body) and the process has no Def nodes.
    """
    info: dict[str, tuple] = {}

    def scan(q):
        match q:
            case Def(name, params, body, scope):
                raw = free_names(body) - set(params)
                info[name] = (params, raw, _invoked(body), bound_names(body))
                scan(body)
                scan(scope)
            case Input(_, branches):
                for _, _, c in branches:
                    scan(c)
            case Output(_, _, _, c) | NewLinear(_, _, c) | NewShared(_, c) | \
                    Accept(_, _, c) | Request(_, _, c):
                scan(c)
            case Par(a, b) | Choice(a, b) | Cond(_, a, b):
                scan(a)
                scan(b)

    scan(p)
    extras = {n: set(v[1]) for n, v in info.items()}
    changed = True
    while changed:
        changed = False
        for n, (params, raw, inv, bound) in info.items():
            new = set(raw)
            for e in inv:
                if e in extras and e != n:
                    new |= extras[e]
            new -= set(params) | set(bound)
            if new != extras[n]:
                extras[n] = new
                changed = True
    order = {n: tuple(sorted(v)) for n, v in extras.items()}
    defs: dict[str, tuple] = {}

    def lift(q):
        match q:
            case Def(name, params, body, scope):
                defs[name] = (order[name] + tuple(params), lift(body))
                return lift(scope)
            case Invoke(var, args):
                if var in order:
                    return Invoke(var, order[var] + tuple(args))
                return q
            case Input(u, branches):
                return Input(u, tuple((l, x, lift(c)) for l, x, c in branches))
            case Output(u, l, o, c):
                return Output(u, l, o, lift(c))
            case Par(a, b):
                return Par(lift(a), lift(b))
            case Choice(a, b):
                return Choice(lift(a), lift(b))
            case NewLinear(a, b, s):
                return NewLinear(a, b, lift(s))
            case NewShared(s, sc):
                return NewShared(s, lift(sc))
            case Accept(u, x, body):
                return Accept(u, x, lift(body))
            case Request(u, x, body):
                return Request(u, x, lift(body))
            case Cond(e, a, b):
                return Cond(e, lift(a), lift(b))
        return q

    body = lift(p)
    return defs, body


def _invoked(q) -> set:
    match q:
        case Invoke(var, _):
            return {var}
        case Input(_, branches):
            out = set()
            for _, _, c in branches:
                out |= _invoked(c)
            return out
        case Output(_, _, _, c) | NewLinear(_, _, c) | NewShared(_, c) | \
                Accept(_, _, c) | Request(_, _, c):
            return _invoked(c)
        case Par(a, b) | Choice(a, b) | Cond(_, a, b):
            return _invoked(a) | _invoked(b)
        case Def(_, _, body, scope):
            return _invoked(body) | _invoked(scope)
    return set()


# ---------------------------------------------------------------- normal form

@dataclass(frozen=True)
class NormalForm:
    """Restrictions, lifted definitions and a multiset of threads.

    Restrictions are ("lin", a, b) or ("shared", s).  Threads are
    prefix-headed processes, choices, conditionals, invocations, queues or
    error; there is no nil thread and no pair of empty queues left alone
    under its restriction.
    """
    restrictions: tuple
    threads: tuple
    defs: tuple = ()

    def defs_map(self) -> dict:
        return {n: (ps, b) for n, ps, b in self.defs}

    def to_process(self):
        body = par(*self.threads)
        for r in reversed(self.restrictions):
            body = NewLinear(r[1], r[2], body) if r[0] == "lin" else NewShared(r[1], body)
        for n, ps, b in reversed(self.defs):
            body = Def(n, ps, b, body)
        return body

    def __str__(self) -> str:
        return show_state(self)


def show_state(nf: NormalForm) -> str:
    parts = []
    for r in nf.restrictions:
        parts.append(f"(new {r[1]} {r[2]})" if r[0] == "lin" else f"(news {r[1]})")
    body = " | ".join(show_process(t, 2) for t in nf.threads) or "0"
    return "".join(parts) + (f"({body})" if parts else body)


def thread_names(t) -> frozenset:
    return free_names(t)


def flatten(p, used: set):
    """Split ``p`` into hoisted restrictions and threads.

    Restricted names clashing with ``used`` are renamed; ``used`` is
    updated in place.
    """
    restr = []
    threads = []

    def go(q):
        match q:
            case Nil():
                return
            case Par(a, b):
                go(a)
                go(b)
            case NewLinear(a, b, scope):
                ren = {}
                for x in (a, b):
                    if x in used:
                        ren[x] = fresh_name(x, used | all_names(scope))
                    used.add(ren.get(x, x))
                if ren:
                    scope = substitute(scope, ren)
                restr.append(("lin", ren.get(a, a), ren.get(b, b)))
                go(scope)
            case NewShared(s, scope):
                if s in used:
                    s2 = fresh_name(s, used | all_names(scope))
                    scope = substitute(scope, {s: s2})
                    s = s2
                used.add(s)
                restr.append(("shared", s))
                go(scope)
            case Queue():
                threads.append(q)
            case Def():
                raise ValueError("definitions must be lifted before flattening")
            case _:
                threads.append(q)

    go(p)
    return restr, threads


def garbage_collect(restrictions, threads):
    """Drop unused restrictions and restricted pairs of empty queues."""
    threads = list(threads)
    changed = True
    restrictions = list(restrictions)
    while changed:
        changed = False
        for r in list(restrictions):
            names = set(r[1:])
            users = [t for t in threads if thread_names(t) & names]
            if not users:
                restrictions.remove(r)
                changed = True
            elif r[0] == "lin" and len(users) == 2 and all(
                    isinstance(t, Queue) and not t.items and {t.src, t.dst} == names
                    for t in users):
                restrictions.remove(r)
                for t in users:
                    threads.remove(t)
                changed = True
    return restrictions, threads


def normalize(p) -> NormalForm:
    """Congruence normal form: lifted definitions sorted by name, hoisted
    restrictions, flattened parallel composition without nil threads."""
    if isinstance(p, NormalForm):
        return p
    # separately built terms may reuse a binder name in parallel scopes
    defs, body = lambda_lift(freshen(p))
    used = set(free_names(body))
    restr, threads = flatten(body, used)
    restr, threads = garbage_collect(restr, threads)
    return NormalForm(tuple(sorted(restr)), tuple(sorted(threads, key=show_process)),
                      tuple(sorted((n, ps, b) for n, (ps, b) in defs.items())))


# ---------------------------------------------------------------- gamma / delta / phi

def gamma(items) -> frozenset:
    return frozenset(c for _, c in items if isinstance(c, str))


class DeltaLimitError(RuntimeError):
    pass


DELTA_MEMO_CAP = 1024


def delta(p, decls: dict | None = None, chi: frozenset = frozenset(), memo: dict | None = None):
    """Channels that may become input subjects along reductions of ``p``.

    ``decls`` maps process variables to (params, body); ``chi`` holds the
    invocations already unfolded on the current path.  Results are cached
    per (invocation, chi); more than DELTA_MEMO_CAP entries is an error.
    """
    decls = dict(decls or {})
    memo = {} if memo is None else memo

    def key_args(args):
        return tuple(a if isinstance(a, str) else None for a in args)

    def go(q, D, chi):
        match q:
            case Nil() | Error():
                return frozenset()
            case Invoke(var, args):
                k = (var, key_args(args))
                if k in chi or var not in D:
                    return frozenset()
                mk = (k, chi)
                if mk in memo:
                    return memo[mk]
                if len(memo) >= DELTA_MEMO_CAP:
                    raise DeltaLimitError("too many distinct invocations while computing phi")
                params, body = D[var]
                m = {x: (a if isinstance(a, str) else IntV(0)) for x, a in zip(params, args)}
                res = go(substitute(body, m), D, chi | {k})
                memo[mk] = res
                return res
            case Input(u, branches):
                out = frozenset([u]) if isinstance(u, str) else frozenset()
                for _, x, c in branches:
                    out |= go(c, D, chi) - {x}
                return out
            case Output(_, _, o, c):
                out = frozenset([o]) if isinstance(o, str) else frozenset()
                return out | go(c, D, chi)
            case Par(a, b) | Choice(a, b) | Cond(_, a, b):
                return go(a, D, chi) | go(b, D, chi)
            case Queue(_, _, items):
                return gamma(items)
            case NewLinear(a, b, scope):
                return go(scope, D, chi) - {a, b}
            case NewShared(s, scope):
                return go(scope, D, chi) - {s}
            case Def(name, params, body, scope):
                return go(scope, {**D, name: (params, body)}, chi)
            case Accept(_, x, body) | Request(_, x, body):
                return go(body, D, chi) - {x}
        raise TypeError(q)

    return go(p, decls, frozenset(chi))


class FreeProcessVariableError(ValueError):
    pass


def phi(p) -> frozenset:
    if isinstance(p, NormalForm):
        p = p.to_process()
    fpv = free_process_vars(p)
    if fpv:
        raise FreeProcessVariableError(f"free process variables {sorted(fpv)}")
    return delta(p)
