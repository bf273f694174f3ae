import re
import sys
from importlib import resources
from pathlib import Path

import pytest

from tct.concolic import StraightLine, replay
from tct.vcgen import (BRIDGE_ERROR, INVALID, OUT_OF_GAS, VALID, UnqualifiedVariable, Verdict, VerifierConfig,
                       assert_count, axiom_library, emit_text, parse_boogie_output, post_declaration_lines,
                       record_verdict, vc_digest, verify, weave)
from tct.z3check import check_text

from conftest import HARMLESS_HYP, NONREENTRANT_HYP, PROXY_HYP

GOLDEN = Path(__file__).parent / "golden" / "trfrproxy_reference.bpl"
_ZERO_BOUND = re.compile(r"^assume\(Zero<=\w+\);$")


def vc_for(runs, label, hypothesis):
    tx, pre, post, receipt = runs[label]
    fn = pre.manifests[tx.to].function(tx.selector)
    line = replay(receipt.trace, pre.manifests, tx)
    return emit_text(weave(line, pre.manifests, fn, hypothesis, dict(zip(fn.param_names, tx.args))))


def normalize(text: str) -> list[tuple[str, str]]:
    """Procedure statements as (section, statement) with declarations, comments and spacing removed.

    Zero lower bounds on hypothesis names are dropped (the generator states them as
    ``where`` clauses) and hypothesis assumes are sorted.
    """
    body = text[text.index("procedure straightline_code"):]
    section, out, hyp, hyp_at = "body", [], [], 0
    for raw in body.splitlines()[1:]:
        line = raw.strip()
        if line.startswith("//"):
            section = re.sub(r"\s+", " ", line[2:].strip())
            continue
        if not line or line in "{}" or line.startswith(("var ", "modifies")):
            continue
        stmt = re.sub(r"\s+", "", line)
        if section == "hypothesis":
            hyp_at = len(out)
            if not _ZERO_BOUND.match(stmt):
                hyp.append((section, stmt))
        else:
            out.append((section, stmt))
    out[hyp_at:hyp_at] = sorted(hyp)
    return out


def kind(stmt: str) -> str:
    if stmt.startswith(("assume(", "assert(")):
        return stmt[:6]
    lhs, rhs = stmt.split(":=", 1)
    if "[" in lhs:
        return "store"
    if re.match(r"^\w+(\.\w+)?\[", rhs):
        return "load"
    return "op"


def test_transfer_proxy_matches_golden(runs):
    ours, ref = normalize(vc_for(runs, "benign-proxy", PROXY_HYP)), normalize(GOLDEN.read_text())
    assert [(s, kind(t)) for s, t in ours] == [(s, kind(t)) for s, t in ref]
    assert ours == ref


def test_transfer_proxy_line_count(runs):
    assert abs(post_declaration_lines(vc_for(runs, "benign-proxy", PROXY_HYP)) - 47) <= 3


def test_emit_is_deterministic(runs):
    assert vc_for(runs, "attack2", NONREENTRANT_HYP) == vc_for(runs, "attack2", NONREENTRANT_HYP)


def test_preamble_is_canonical_axiom_file(runs):
    canonical = (resources.files("tct") / "data" / "axioms.bpl").read_text()
    assert axiom_library() == canonical
    assert vc_for(runs, "benign-proxy", PROXY_HYP).startswith(canonical.rstrip("\n") + "\n")


def test_reentrant_vc_repeats_the_credit_ten_times(runs):
    text = vc_for(runs, "attack2", HARMLESS_HYP)
    sums = set(re.findall(r"(tmp\d+) := evmadd\(", text))
    credits = [t for t in re.findall(r"MultiVulnToken\.balances\[entry_contract\]\[\w+\] := (tmp\d+);", text)
               if t in sums]
    assert len(credits) == 10


def test_section_order(runs):
    text = vc_for(runs, "attack2", NONREENTRANT_HYP)
    marks = [text.index(m) for m in ("// def-vars", "// hypothesis", "// insert invariant of entry contract",
                                     "// (post) insert invariant of entry contract")]
    assert marks == sorted(marks)
    assert assert_count(text) == 2


def test_only_referenced_globals_are_declared(runs):
    text = vc_for(runs, "benign-proxy", PROXY_HYP)
    assert "ReentrancyAttack." not in text
    assert "var MultiVulnToken.balances: [address] [address] uint256 where" in text


def test_hypothesis_constants_use_named_powers(runs):
    assert "assume(totalSupply < TwoE255);" in vc_for(runs, "benign-proxy", PROXY_HYP)


def test_unknown_class_is_rejected(runs):
    tx, pre, post, receipt = runs["benign-proxy"]
    fn = pre.manifests[tx.to].function(tx.selector)
    with pytest.raises(UnqualifiedVariable):
        weave(StraightLine(entry_class="Nope"), pre.manifests, fn, "1 == 1")


def test_identity_transaction_verifies(runs):
    tx, pre, post, receipt = runs["benign-proxy"]
    fn = pre.manifests[tx.to].function(tx.selector)
    text = emit_text(weave(StraightLine(entry_class="MultiVulnToken"), pre.manifests, fn, "0 <= _value"))
    assert all(outcome.verified for _, outcome in check_text(text, timeout_s=30))


# ----------------------------------------------------------------- bridge

def test_recorded_lookup_and_missing_entry(tmp_path, runs):
    text = vc_for(runs, "benign-proxy", PROXY_HYP)
    assert verify(text, VerifierConfig("recorded")).outcome == VALID
    assert verify(text + "\n", VerifierConfig("recorded")).outcome == BRIDGE_ERROR
    fixtures = tmp_path / "v.json"
    record_verdict(fixtures, "x", Verdict(INVALID, 1))
    assert verify("x", VerifierConfig("recorded", fixtures=str(fixtures))) == Verdict(INVALID, 1)


def test_missing_executable_is_bridge_error():
    v = verify("anything", VerifierConfig("command", command="/nonexistent/boogie"))
    assert v.outcome == BRIDGE_ERROR and "not found" in v.detail


def test_external_timeout_is_out_of_prover_gas():
    v = verify("x", VerifierConfig("command", command=f"{sys.executable} -c 'import time; time.sleep(5)'", timeout=0.5))
    assert v.outcome == OUT_OF_GAS


def test_parse_boogie_output():
    vc = "a\n  assert(x);\n  assert(y);\n"
    assert parse_boogie_output("Boogie program verifier finished with 1 verified, 0 errors", vc).outcome == VALID
    v = parse_boogie_output("vc.bpl(3,3): Error: this assertion could not be proved\n"
                            "Boogie program verifier finished with 0 verified, 1 error", vc)
    assert v == Verdict(INVALID, failing_assert=2)
    assert parse_boogie_output("segfault", vc).outcome == BRIDGE_ERROR
    assert parse_boogie_output("... timed out ...", vc).outcome == OUT_OF_GAS


def test_digest_is_keccak_of_text():
    assert vc_digest("") == "0xc5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
