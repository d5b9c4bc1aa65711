import random

import pytest
from hypothesis import assume, given, settings, strategies as st

from gen import pairs, rand_type
from sesst.calculus import (
    Accept, Choice, Cond, Def, Invoke, Nil, Request, normalize, phi, show_process,
)
from sesst.characteristic import (
    char_proc, char_proc_async, char_proc_ext, char_proc_sync, compose, counterexample,
    preciseness_check,
)
from sesst.core_types import END, dual, parse_type as P
from sesst.semantics import ErrorReached, NoErrorProven, reach_error, step
from sesst.subtyping import ASYNC, no_branching, prune_branchless, subtype, sync_subtype

seeds = st.integers(0, 2**32 - 1)
ORPHAN_PAIR = ("rec t. l!<m?(end).end>.t", "rec t. l!<m?(end).end>.k?(m!<end>.end).t")
PRUNE_LEFT = ("rec t. +{ l1!<end>.t, l2!<end>.l3?(end).end }",
         "l3?(end).rec t. +{ l1!<end>.t, l2!<end>.end }")
PRUNE_RIGHT = ("rec t. l1!<end>.&{ l2?(end).t, l3?(end).t }",
          "rec t. &{ l2?(end).t, l3?(end).l1!<end>.t }")
# the ok/quit protocol with string read as bool and date as nat
SEL_OK_BOOL = "!<bool>.?(int).ok!<bool>.?(nat).end"
SEL_OK_QUIT_BOOL = "!<bool>.?(int).+{ ok!<bool>.?(nat).end, quit!.end }"


def walk(p):
    yield p
    for v in vars(p).values():
        if isinstance(v, tuple):
            for x in v:
                if isinstance(x, tuple):
                    yield from (w for y in x if hasattr(y, "__dataclass_fields__") for w in walk(y))
                elif hasattr(x, "__dataclass_fields__"):
                    yield from walk(x)
        elif hasattr(v, "__dataclass_fields__"):
            yield from walk(v)


def test_end_is_nil():
    for mode in ("sync", "async", "ext-sync", "ext-async"):
        assert char_proc("a", END, mode) == Nil()


def test_recursive_select_example():
    t = P("rec t. +{ l1!<end>.t, l2!<l3!<end>.end>.end }")
    p = char_proc_sync("a", t)
    assert isinstance(p, Def) and p.scope == Invoke(p.name, ("a",))
    succ = step(normalize(p)).successors
    assert [r for r, _ in succ] == ["r-def"]
    (body,) = succ[0][1].threads
    assert isinstance(body, Choice)
    text = show_process(body)
    assert "a!l1<" in text and "a!l2<" in text and "?l3(" in text


def test_async_output_adds_queues():
    p = char_proc_async("a", P("+{ l1!<end>.end, l2!<l3!<end>.end>.end }"))
    assert show_process(p).count("queue") == 4


def test_ext_probes():
    p = char_proc_ext("a", P("l!<nat>.l?(int).l!<<end>>.end"))
    text = show_process(p)
    assert "a!l[5]" in text
    assert "neg" in text
    nodes = list(walk(p))
    assert any(isinstance(n, Accept) for n in nodes)
    assert any(isinstance(n, Request) for n in nodes)
    q = char_proc_ext("a", P("l?(bool).l!<int>.end"))
    assert any(isinstance(n, Cond) for n in walk(q))
    assert "a!l[-5]" in show_process(q)


def test_ground_sorts_have_no_probe():
    with pytest.raises(ValueError):
        char_proc_ext("a", P("l?(string).end"))


def test_end_vs_input_sync():
    rep = counterexample(END, P("l?(end).end"), "sync")
    assert rep.found and rep.derivation.rule == "n-end r"
    assert "err-new-sync" in rep.outcome.error_rules
    assert len(rep.outcome.trace) <= 2


def test_orphan_pair_counterexample():
    rep = counterexample(P(ORPHAN_PAIR[0]), P(ORPHAN_PAIR[1]), "async")
    assert rep.found
    assert rep.outcome.trace[-1][0] == "err-orph-mess-async"
    js = rep.to_json()
    assert js["outcome"]["kind"] == "ErrorReached"
    assert js["lhs"] and js["rhs"]


@pytest.mark.parametrize("pair,rule,side", [(PRUNE_LEFT, "n-bra-async", "left"),
                                            (PRUNE_RIGHT, "n-sel-async", "right")])
def test_pruned_adjustment(pair, rule, side):
    t, s = map(P, pair)
    raw = counterexample(t, s, "async", adjust_types=False, max_depth=24)
    assert raw.derivation.rule == rule
    assert isinstance(raw.outcome, NoErrorProven)
    rep = counterexample(t, s, "async", max_depth=24)
    assert rep.adjusted[2] == side
    assert rep.found and "err-orph-mess-async" in rep.outcome.error_rules
    if side == "left":
        assert sync_subtype(rep.adjusted[0], P("rec t. l1!<end>.t"))
        assert sync_subtype(P("rec t. l1!<end>.t"), rep.adjusted[0])


def test_preciseness_trivial_and_ok_quit():
    rep = preciseness_check(END, END, "sync")
    assert rep.leg == "soundness" and rep.passed
    rep = preciseness_check(P(SEL_OK_BOOL), P(SEL_OK_QUIT_BOOL), "ext-sync")
    assert rep.subtype == "yes" and rep.passed
    rep = preciseness_check(P(SEL_OK_QUIT_BOOL), P(SEL_OK_BOOL), "ext-sync")
    assert rep.leg == "completeness" and rep.passed


def test_yes_pair_has_no_counterexample():
    rep = counterexample(END, END, "sync")
    assert rep.verdict == "yes" and not rep.found and rep.composed is None


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_adjusted_types_stay_below(seed):
    for t, s in pairs(seed, 2, depth=3):
        res, _ = subtype(t, s, ASYNC)
        if not res.no:
            continue
        rep = counterexample(t, s, "async", max_depth=40, max_states=5000)
        t2, s2, side = rep.adjusted
        assert sync_subtype(t2, t)
        assert sync_subtype(s2, dual(s))
        assert side != "both"


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_branch_free_phi(seed):
    t = rand_type(random.Random(seed))
    assume(no_branching(t))
    t = prune_branchless(t)
    assert "a" not in phi(char_proc_async("a", t))


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_sync_soundness_small(seed):
    for t, s in pairs(seed, 3, depth=3):
        if sync_subtype(t, s):
            o = reach_error(compose(t, dual(s)), "sync", 256, 20000)
            assert isinstance(o, NoErrorProven)
        else:
            assert isinstance(counterexample(t, s).outcome, ErrorReached)
