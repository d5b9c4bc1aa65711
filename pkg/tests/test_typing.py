import random

from hypothesis import given, settings, strategies as st

from gen import pairs, rand_type
from sesst.calculus import parse_process as PP
from sesst.characteristic import char_proc
from sesst.core_types import BOOL, NAT, parse_type as P, show
from sesst.subtyping import sync_subtype
from sesst.typing import (
    EPSILON, QueueType, SessionEnv, balanced, env_reduce, env_sub, parse_env, remainder, typecheck,
)


def env(text):
    return parse_env(text)[1]


def test_queue_type_monoid():
    a = QueueType((("l", BOOL),))
    assert a + EPSILON == EPSILON + a == a


def test_env_sub():
    assert env_sub(env("a: end"), SessionEnv({}))
    assert env_sub(env("a: +{ l!<end>.end }"), env("a: +{ l!<end>.end, m!<end>.end }"))
    assert not env_sub(env("a: end, queue a b : []"), env("a: end"), "async")


def test_remainder():
    t = P("l?(int).k!<int>.end")
    assert remainder(t, EPSILON) == t
    assert remainder(t, QueueType((("l", BOOL),))) is None
    assert remainder(t, QueueType((("l", NAT),))) == P("k!<int>.end")


def test_balanced():
    assert balanced(SessionEnv({}))
    t = P("l!<end>.k?(end).end")
    assert balanced(SessionEnv({"a": t, "b": P("l?(end).k!<end>.end")},
                               {("a", "b"): EPSILON, ("b", "a"): EPSILON}))
    assert not balanced(env("b: l?(int).k!<int>.end, queue a b : [l<bool>]"))


def test_env_reduce():
    got = env_reduce(env("b: l?(end).k!<end>.end, queue a b : [l<end>]"))
    assert [str(e) for e in got] == ["b: k!<end>.end, queue a b : []"]
    a = ("a: &{ r?(end).+{ m!<end>.end, p!<x?(end).end>.end }, "
         "s?(end).+{ m!<end>.x!<end>.end, p!<x!<end>.end>.end, q!<end>.end } }, queue a b : []")
    got = env_reduce(env(a))
    assert len(got) == 1
    assert got[0].queues[("a", "b")].items[0][0] == "m"
    assert env_reduce(env("a: end")) == []


def test_typecheck_examples():
    assert not typecheck(None, PP("0"), env("a: l?(end).end"))
    g, d = parse_env("c: m?(end).end, queue b a : [l<m?(end).end>]")
    assert typecheck(g, PP("queue b a [l<c>]"), d, "async")
    assert typecheck(None, PP("a!l<b>.0"), env("a: l!<end>.end, b: end"))
    assert not typecheck(None, PP("a!l<b>.0 | error"), env("a: l!<end>.end, b: end"))


def test_typecheck_restriction():
    p = PP("(new a b)(a!l<c>.0 | b?l(x).0)")
    assert typecheck(None, p, env("c: end"))
    assert not typecheck(None, PP("(new a b)(a!l<c>.0 | b?m(x).0)"), env("c: end"))
    q = PP("(new a b)(a!l<c>.a!l<c>.0 | b?l(x).0 | queue a b [] | queue b a [])")
    assert not typecheck(None, q, env("c: end"), "async")


def test_typecheck_extended():
    assert typecheck(None, PP("a?l(x).if succ x > 0 then 0 else 0"), env("a: l?(nat).end"), "ext-sync")
    assert not typecheck(None, PP("a!l[true].0"), env("a: l!<nat>.end"), "ext-sync")


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["sync", "async", "ext-sync", "ext-async"]))
def test_characteristic_typability(seed, mode):
    t = rand_type(random.Random(seed), ext=mode.startswith("ext"))
    r = typecheck(None, char_proc("a", t, mode), {"a": t}, mode)
    assert r, (show(t), r.rule, r.message)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_denotational_key_property(seed):
    for t, s in pairs(seed, 2, depth=3):
        if typecheck(None, char_proc("a", t), {"a": s}):
            assert sync_subtype(t, s)
