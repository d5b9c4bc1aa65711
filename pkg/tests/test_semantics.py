from sesst.calculus import IntV, Succ, Gt, Val, normalize, parse_process as PP
from sesst.semantics import (
    BudgetExhausted, ErrorReached, NoErrorProven, eval_expr, reach_error, step,
)

Q = "(def Y(x) = b!l<x>.b?k(y).Y<x> in (new c e)Y<c>)"
P = "(def Z(z) = a!l<z>.Z<z> in (new d f)Z<d>)"


def test_eval_expr():
    assert eval_expr(Succ(Val(IntV(5)))) == IntV(6)
    assert eval_expr(Succ(Val(IntV(-5)))) is None
    assert eval_expr(Gt(Val(IntV(1)), Val(IntV(2)))).value is False


def test_sync_step_examples():
    r = step(normalize(PP("(new a b)(a!l<c>.0 | b?l(x).0)")), "sync")
    assert [rule for rule, _ in r.successors] == ["r-com-sync"]
    assert r.successors[0][1].threads == () and not r.error_rules
    r = step(normalize(PP("(new a b)(a!l<c>.0 | b?m(x).0)")), "sync")
    assert "err-mism-sync" in r.error_rules


def test_reach_error_examples():
    o = reach_error(PP("(new a b)(0 | b?l(x).0)"), "sync")
    assert isinstance(o, ErrorReached) and o.trace[-1][0] == "err-new-sync"
    assert isinstance(reach_error(PP("(new a b)(a!l<c>.0 | b?l(x).0)"), "sync"), NoErrorProven)


def test_orphan_message_configuration():
    mid = f"(new a b)(new c e)({P} | b?k(y).(def Y(x) = b!l<x>.b?k(y2).Y<x> in Y<c>) | queue a b [] | queue b a [l<c>])"
    assert "err-orph-mess-async" in step(normalize(PP(mid)), "async").error_rules
    whole = f"(new a b)({P} | {Q} | queue a b [] | queue b a [])"
    o = reach_error(PP(whole), "async")
    assert isinstance(o, ErrorReached) and "err-orph-mess-async" in o.rules()


def test_async_errors():
    o = reach_error(PP("(new a b)(a!l<c>.a!l<c>.0 | b?l(x).0 | queue a b [] | queue b a [])"), "async")
    assert isinstance(o, ErrorReached) and "err-orph-mess-async" in o.error_rules
    o = reach_error(PP("(new a b)(a?l(x).0 | b?l(y).0 | queue a b [] | queue b a [])"), "async")
    assert isinstance(o, ErrorReached) and "err-in-in-async" in o.error_rules


def test_extended_errors():
    o = reach_error(PP("if true > 3 then 0 else 0"), "ext-sync")
    assert isinstance(o, ErrorReached) and "err-cond" in o.error_rules
    o = reach_error(PP("(news s)(accept s(y).y!l<c>.0 | request s(z).z?l(w).0)"), "ext-sync")
    assert isinstance(o, NoErrorProven)


def test_state_budget():
    p = PP("def X(x) = x!l<x>.X<x> in (new a b)(X<a> | queue a b [] | queue b a [] | "
           "def W(w) = w?l(v).W<w> in W<b>)")
    o = reach_error(p, "async", max_depth=10_000, max_states=20)
    assert isinstance(o, (BudgetExhausted, NoErrorProven, ErrorReached))
