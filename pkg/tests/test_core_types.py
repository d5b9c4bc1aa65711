import random

import pytest
from hypothesis import given, settings, strategies as st

from gen import rand_type
from sesst.core_types import (
    END, Branch, CtxBranch, Hole, Mu, Select, TypeSyntaxError, Var,
    decompose_context, dual, dual_context, fill_context, has_branching,
    has_selection, no_branching, no_selection, parse_type, show, type_equal,
    unfold, unfold_once,
)

SEL_OK_QUIT = "!<string>.?(int).+{ ok!<string>.?(date).end, quit!.end }"
BRA_OK_QUIT = "?(string).!<int>.&{ ok?(string).!<date>.end, quit?.end }"

seeds = st.integers(0, 2**32 - 1)


def rtype(seed, **kw):
    return rand_type(random.Random(seed), **kw)


def test_parse_end():
    assert parse_type("end") == END


def test_parse_recursive_select():
    t = parse_type("rec t . +{ l1!<end>.t , l2!<end>.end }")
    assert isinstance(t, Mu) and isinstance(t.body, Select)
    assert list(t.body.labels) == ["l1", "l2"]
    assert t.body.entry("l1")[2] == Var("t")


def test_duplicate_label_rejected():
    with pytest.raises(TypeSyntaxError):
        parse_type("&{ ok?(end).end, ok?(end).end }")


def test_non_contractive_rejected():
    from sesst.core_types import check_well_formed
    with pytest.raises(TypeSyntaxError):
        check_well_formed(Mu("t", Mu("s", Var("t"))))


def test_dual_examples():
    assert dual(END) == END
    assert type_equal(dual(parse_type(SEL_OK_QUIT)), parse_type(BRA_OK_QUIT))
    t = Mu("t", Select((("l", END, Var("t")),)))
    assert dual(t) == Mu("t", Branch((("l", END, Var("t")),)))


def test_unfold_examples():
    t = parse_type("rec t. +{ l1!<end>.t, l2!<end>.end }")
    u = unfold(t)
    assert isinstance(u, Select) and u.entry("l1")[2] == t
    t2 = parse_type("rec t. rec s. l!<end>.s")
    u2 = unfold(t2)
    assert isinstance(u2, Select)
    assert type_equal(u2.entry("l")[2], parse_type("rec s. l!<end>.s"))


def test_type_equal_examples():
    assert type_equal(parse_type("rec t. l!<end>.t"), parse_type("l!<end>.rec t. l!<end>.t"))
    assert not type_equal(END, parse_type("rec t. l!<end>.t"))
    assert type_equal(parse_type("rec t. l!<end>.l!<end>.t"), parse_type("rec t. l!<end>.t"))


def test_branching_predicates():
    t = parse_type("l!<end>.k?(end).end")
    loop = parse_type("rec t. +{ l!<end>.k?(end).t, m!<end>.t }")
    assert has_branching(t) and not no_branching(t)
    assert not has_branching(loop) and no_branching(loop)
    assert not has_branching(END) and no_branching(END)


def test_context_example():
    t1 = "+{ m!<end>.end, p!<end>.end }"
    t2 = "+{ m!<end>.end, p!<end>.end, q!<end>.end }"
    s = parse_type(f"&{{ r?(end).{t1}, s?(end).{t2} }}")
    ctx, holes = decompose_context(s)
    assert isinstance(ctx, CtxBranch)
    assert [l for l, _, _ in ctx.entries] == ["r", "s"]
    assert holes == {1: parse_type(t1), 2: parse_type(t2)}
    assert fill_context(ctx, holes) == s


def test_context_trivial_and_absent():
    s = parse_type("+{ a!<end>.end }")
    assert decompose_context(s) == (Hole(1), {1: s})
    assert decompose_context(parse_type("l?(end).end")) is None


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_show_parse_round_trip(seed):
    t = rtype(seed)
    assert parse_type(show(t)) == t


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_dual_involution(seed):
    t = rtype(seed)
    assert dual(dual(t)) == t


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_predicates_complement_and_unfolding(seed):
    t = rtype(seed)
    assert has_branching(t) != no_branching(t)
    assert has_selection(t) != no_selection(t)
    assert has_branching(unfold_once(t)) == has_branching(t)
    assert has_selection(unfold_once(t)) == has_selection(t)
    assert has_branching(t) == has_selection(dual(t))
    assert type_equal(unfold(t), t)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_dual_context_fill_commutes(seed):
    t = rtype(seed)
    dec = decompose_context(t)
    if dec is None:
        return
    ctx, holes = dec
    assert type_equal(fill_context(dual_context(ctx), {n: dual(h) for n, h in holes.items()}), dual(t))
