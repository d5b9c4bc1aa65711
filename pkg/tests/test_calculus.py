import random

import pytest
from hypothesis import given, settings, strategies as st

from gen import rand_type
from sesst.calculus import (
    Cond, GuardednessError, IntV, NewLinear, Nil, Par, gamma, normalize,
    parse_process as PP, phi, show_process, subject_channels, free_channels, substitute,
)
from sesst.characteristic import char_proc
from sesst.core_types import parse_type


def test_parse_basics():
    assert PP("0") == Nil()
    p = PP("(new a b)( a!l<c>.0 | b?l(x).0 )")
    assert isinstance(p, NewLinear) and isinstance(p.scope, Par)
    with pytest.raises(GuardednessError):
        PP("def X(x) = X<x> in X<a>")


def test_substitute():
    assert substitute(PP("x?l(y).0"), {"x": "c"}) == PP("c?l(y).0")
    p = substitute(PP("if succ x > 0 then 0 else 0"), {"x": IntV(5)})
    assert isinstance(p, Cond) and "5" in show_process(p)
    q = substitute(PP("def Y(y) = y!l<x>.0 in Y<x>"), {"x": "c"})
    assert "x" not in show_process(q) and show_process(q).count("c") == 2


def test_subject_and_free_channels():
    assert subject_channels(PP("a!l<c>.0")) == {"a"}
    assert free_channels(PP("queue c b []")) == {"c", "b"}
    assert subject_channels(PP("x!l<c>.a?l(y).0"), {"x"}) == {"a"}


def test_normal_form_examples():
    assert normalize(PP("0 | a!l<c>.0")) == normalize(PP("a!l<c>.0"))
    assert normalize(PP("(new a b)(queue a b [] | queue b a [])")).threads == ()
    nf = normalize(PP("def Y(y) = y!l<c>.0 in def X(x) = x?l(z).0 in (X<a> | Y<b>)"))
    assert [n for n, _, _ in nf.defs] == sorted(n for n, _, _ in nf.defs)


def test_normalize_keeps_reused_binders_apart():
    t = parse_type("rec t. l!<end>.t")
    nf = normalize(Par(char_proc("a", t), char_proc("b", t)))
    assert len(nf.defs) == 2


def test_phi_fixtures():
    assert phi(PP("b?l0(x).x?l1(y).0 | c!l0<a>.0 | queue c b []")) == {"a", "b"}
    p = PP("def X(x) = a!l<x>.X<x> in (X<c> | b?l(y).y?l(z).0 | queue a b [] | queue b a [])")
    assert phi(p) == {"c", "b"}
    assert gamma(()) == frozenset()


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["sync", "async", "ext-sync", "ext-async"]))
def test_process_round_trip(seed, mode):
    t = rand_type(random.Random(seed), ext=mode.startswith("ext"))
    p = char_proc("a", t, mode)
    assert PP(show_process(p), freshen_names=False) == p
