import random

from hypothesis import given, settings, strategies as st

from gen import pairs, rand_type, widen
from sesst.core_types import BOOL, INT, NAT, END, Shared, dual, parse_type as P, type_equal
from sesst.subtyping import (
    ASYNC, SYNC, Budget, classify, payload_sub, prune_branchless, subsort, subtype,
    sync_negation, sync_subtype, verify_derivation,
)

SEL_OK_QUIT = "!<string>.?(int).+{ ok!<string>.?(date).end, quit!.end }"
BRA_OK_QUIT = "?(string).!<int>.&{ ok?(string).!<date>.end, quit?.end }"
SEL_OK = "!<string>.?(int).ok!<string>.?(date).end"
BRA_OK_QUIT_LATER = "?(string).!<int>.&{ ok?(string).!<date>.end, quit?.end, later?.end }"
T1 = "rec t. l!<end>.k?(end).t"
S1 = "rec t. k?(end).l!<end>.t"
ORPHAN_PAIR = ("rec t. l!<m?(end).end>.t", "rec t. l!<m?(end).end>.k?(m!<end>.end).t")

seeds = st.integers(0, 2**32 - 1)


def test_subsort():
    assert subsort(NAT, INT)
    assert not subsort(INT, NAT)
    assert subsort(Shared(P("l!<end>.end")), Shared(P("rec t. l!<end>.end")))


def test_payload_sub():
    assert payload_sub(INT, NAT).yes
    assert payload_sub(BOOL, END).yes
    assert payload_sub(BOOL, P("l?(end).end")).no


def test_ok_quit_fixtures():
    assert sync_subtype(P(SEL_OK), P(SEL_OK_QUIT))
    assert sync_subtype(P(BRA_OK_QUIT_LATER), P(BRA_OK_QUIT))
    assert not sync_subtype(P("l!<end>.k?(end).end"), P("k?(end).l!<end>.end"))


def test_negation_leaves():
    assert sync_negation(END, P("l!<end>.end")).rule == "n-end r"
    assert sync_negation(P("&{ l?(end).end }"), P("+{ l!<end>.end }")).rule == "n-brasel"
    d = sync_negation(P("+{ l!<end>.end }"), P("+{ m!<end>.end }"))
    assert d.rule == "n-label-sel" and d.witnesses["label"] == "l"
    assert sync_negation(P("l!<end>.k?(end).end"), P("k?(end).l!<end>.end")).rule == "n-selbra-sync"


def test_output_past_input():
    assert subtype(P(T1), P(S1), ASYNC)[0].yes
    assert subtype(P("l!<end>." + T1), P("k?(end)." + S1), ASYNC)[0].yes
    assert not sync_subtype(P(T1), P(S1))


def test_orphan_pair_rejected():
    res, d = subtype(P(ORPHAN_PAIR[0]), P(ORPHAN_PAIR[1]), ASYNC)
    assert res.no
    assert "n-bra-async" in d.rules()
    assert verify_derivation(d, ASYNC)


def test_cont_async_example():
    t = P("m!<end>.&{ r?(end).end, s?(end).end }")
    s = P("&{ r?(end).m!<end>.end, s?(end).m!<end>.p!<end>.end }")
    res, d = subtype(t, s, ASYNC)
    assert res.no and d.rule == "n-cont-async"
    assert verify_derivation(d, ASYNC)


def test_classify():
    assert classify(P(SEL_OK), P(SEL_OK_QUIT)).kind == "SyncSub"
    assert classify(END, END).kind == "SyncSub"
    ta = P("!<int>.!<char>.?(string).?(nat).end")
    assert classify(ta, P("?(string).?(nat).!<int>.!<char>.end")).kind == "AsyncOnlySub"
    assert classify(P(ORPHAN_PAIR[0]), P(ORPHAN_PAIR[1])).kind == "NotSub"


def test_prune_branchless():
    t = P("rec t. +{ l1!<end>.t, l2!<end>.l3?(end).end }")
    assert type_equal(prune_branchless(t), P("rec t. l1!<end>.t"))
    assert prune_branchless(END) == END
    loop = P("rec t. +{ a!<end>.t, b!<end>.t }")
    assert type_equal(prune_branchless(loop), loop)


def test_budget_unknown():
    # a tiny pair budget cannot settle a recursive permutation
    res, _ = subtype(P(T1), P(S1), ASYNC, Budget(pairs=1))
    assert res.unknown


@settings(max_examples=400, deadline=None)
@given(seeds)
def test_engine_matches_independent_checker(seed):
    for t, s in pairs(seed, 3):
        res, d = subtype(t, s, SYNC)
        assert res.yes == sync_subtype(t, s)
        assert (d is None) == res.yes
        if d is not None:
            assert verify_derivation(d, SYNC)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_reflexive_and_widening(seed):
    rng = random.Random(seed)
    t = rand_type(rng)
    assert sync_subtype(t, t)
    assert sync_subtype(t, widen(rng, t))
    assert sync_subtype(widen(rng, t, up=False), t)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_dual_antitone(seed):
    for t, s in pairs(seed, 2):
        assert sync_subtype(t, s) == sync_subtype(dual(s), dual(t))


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_async_extends_sync(seed):
    for t, s in pairs(seed, 2, depth=3):
        res, d = subtype(t, s, ASYNC)
        if sync_subtype(t, s):
            assert res.yes
        if res.no:
            assert verify_derivation(d, ASYNC)
