import pytest

from tct.vcgen import axiom_library
from tct.z3check import BplError, check_text, main

PRELUDE = axiom_library()


def proc(body: str, decls: str = "") -> str:
    return PRELUDE + decls + "\nprocedure p ()\n{\n" + body + "\n}\n"


def outcome(text: str):
    [(name, out)] = check_text(text, timeout_s=30)
    return out


def test_valid_and_invalid_asserts():
    assert outcome(proc("  var x: int;\n  assume(x > 2);\n  assert(x > 1);")).verified
    text = proc("  var x: int;\n  assume(x > 2);\n  assert(x > 1);\n  assert(x > 3);")
    out = outcome(text)
    assert not out.verified
    assert [st.line for st in out.failures] == [text.splitlines().index("  assert(x > 3);") + 1]


def test_where_clause_bounds_variable():
    decls = "var g: uint256 where Zero <= g && g < TwoE256;\n"
    assert outcome(proc("  assert(g >= 0);", decls)).verified
    assert not outcome(proc("  assert(g < TwoE255);", decls)).verified


def test_nested_map_update():
    decls = "var m: [address] [address] uint256;\n"
    body = "  var a: address;\n  m[a][a] := 5;\n  assert(m[a][a] == 5);"
    assert outcome(proc(body, decls)).verified


def test_guarded_evmadd_axioms_are_consistent():
    # the unguarded clauses would make this assert provable from a contradiction
    assert not outcome(proc("  assert(false);")).verified


def test_evmadd_wraps():
    body = ("  var a: uint256 where Zero <= a && a < TwoE256;\n  var r: uint256;\n"
            "  assume(a == TwoE255 + 1);\n  r := evmadd(a, TwoE255);\n  assert(r == 1);")
    assert outcome(proc(body)).verified


def test_sum_update_axiom():
    decls = "var b: [address] uint256;\n"
    body = ("  var a: address;\n  var s: uint256;\n  s := sum(b);\n  b[a] := b[a] + 3;\n"
            "  assert(sum(b) == s + 3);")
    assert outcome(proc(body, decls)).verified


def test_parse_errors():
    with pytest.raises(BplError):
        check_text("procedure p () { assert(; }")


def test_cli_summary(tmp_path, capsys):
    ok, bad = tmp_path / "ok.bpl", tmp_path / "bad.bpl"
    ok.write_text(proc("  assert(1 == 1);"))
    bad.write_text(proc("  var x: int;\n  assert(x == 1);"))
    assert main([str(ok)]) == 0
    assert "finished with 1 verified, 0 errors" in capsys.readouterr().out
    assert main([str(bad)]) == 1
    out = capsys.readouterr().out
    assert "Error: this assertion could not be proved" in out and "0 verified, 1 error" in out
    (tmp_path / "junk.bpl").write_text("procedure {")
    assert main([str(tmp_path / "junk.bpl")]) == 2
