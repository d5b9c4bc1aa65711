import io
import json

from sesst.cli import run

ORPHAN_PAIR = ("rec t. l!<m?(end).end>.t", "rec t. l!<m?(end).end>.k?(m!<end>.end).t")


def call(*argv, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), io.StringIO(stdin), out, err)
    return code, out.getvalue(), err.getvalue()


def test_sub_exit_codes():
    assert call("sub", "--sync", "end", "end")[0] == 0
    assert call("sub", "end", "l!<end>.end")[0] == 1
    assert call("sub", "--async", "rec t. l!<end>.l2?(end).t", "rec t. l2?(end).l!<end>.t")[0] == 0
    assert call("sub", "--async", "--pairs", "1",
                "rec t. l!<end>.l2?(end).t", "rec t. l2?(end).l!<end>.t")[0] == 2


def test_json_schema_and_stdin():
    code, out, _ = call("dual", "-", "--json", stdin="l!<end>.end\n")
    assert code == 0
    data = json.loads(out)
    assert data["schema"] == "sesst/1" and data["type"] == "l?(end).end"


def test_usage_and_parse_errors():
    assert call("sub", "end")[0] == 64
    assert call("frobnicate")[0] == 64
    assert call("sub", "--sync", "--async", "end", "end")[0] == 64
    assert call("dual", "l!<end")[0] == 65
    assert call("run", "a!l<")[0] == 65


def test_negate_and_unfold():
    code, out, _ = call("negate", "end", "l?(end).end")
    assert code == 0 and "n-end r" in out
    assert call("negate", "end", "end")[0] == 1
    code, out, _ = call("unfold", "rec t. l!<end>.t")
    assert code == 0 and out.startswith("l!<end>.")


def test_charproc_typecheck_run():
    code, out, _ = call("charproc", "l!<end>.end", "--name", "c")
    assert code == 0 and "c!l<" in out
    assert call("typecheck", "a?l(x).0", "a: l?(end).end")[0] == 0
    assert call("typecheck", "a?l(x).0", "a: l!<end>.end")[0] == 1
    assert call("run", "(new a b)(a!l<c>.0 | b?l(x).0)")[0] == 0
    code, out, _ = call("run", "(new a b)(a!l<c>.0 | b?m(x).0)", "--json")
    assert code == 1 and json.loads(out)["outcome"]["kind"] == "ErrorReached"


def test_counterexample_orphan_pair():
    code, out, _ = call("counterexample", "--async", *ORPHAN_PAIR, "--json")
    assert code == 0
    trace = json.loads(out)["outcome"]["trace"]
    assert trace[-1]["rule"] == "err-orph-mess-async"
    assert call("counterexample", "end", "end")[0] == 1


def test_preciseness_and_phi():
    assert call("preciseness", "end", "end")[0] == 0
    code, out, _ = call("phi", "b?l0(x).x?l1(y).0 | c!l0<a>.0 | queue c b []")
    assert code == 0 and out.strip() == "{a, b}"


def test_ext_mode():
    code, out, _ = call("counterexample", "--ext", "l?(nat).end", "l?(int).end")
    assert code == 0 and "err-cond" in out
