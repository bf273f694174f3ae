import copy

import pytest

from tct.concolic import ReplayError, StackMismatch, UnsupportedOpcode, check_against_concrete, replay
from tct.vm import TraceEvent


def line_of(runs, label):
    tx, pre, post, receipt = runs[label]
    return replay(receipt.trace, pre.manifests, tx)


def committed_labels(scenario):
    return [item["label"] for item in scenario.script]


def test_every_fixture_trace_passes_oracle(scenario, runs):
    for label in committed_labels(scenario):
        tx, pre, post, receipt = runs[label]
        assert receipt.committed, label
        report = check_against_concrete(replay(receipt.trace, pre.manifests, tx), pre, tx)
        assert report.ok, (label, report.mismatches)
        assert report.checked_temps > 0


def test_transfer_proxy_shape(runs):
    line = line_of(runs, "benign-proxy")
    kinds = "".join({"load": "L", "temp": "T", "store": "S", "assume": "A"}[s.kind] for s in line.statements)
    assert kinds == "LTTTA" "LLTTTA" "LLTTTA" "LTS" "LTS" "LTTS"
    assert [t for t, _ in line.temps] == [f"tmp{i}" for i in range(1, 22)]
    assert line.entry_class == "MultiVulnToken"
    assert "evmadd(_fee,_value)" in line.text()


def test_attack1_line_equals_benign_line(runs):
    # same path, different arguments: the symbolic program must not depend on the values
    assert line_of(runs, "attack1").text() == line_of(runs, "benign-proxy").text()


def test_reentrant_line_mentions_attacker_class(runs):
    line = line_of(runs, "attack2")
    assert [c for c, _, _ in line.classes] == ["MultiVulnToken", "ReentrancyAttack"]
    stores = [s for s in line.statements if s.kind == "store"]
    assert len(stores) > 10  # ten rounds of balance updates plus the attacker counter


def test_replay_is_deterministic(runs):
    assert line_of(runs, "attack2").text() == line_of(runs, "attack2").text()


def test_oracle_catches_tampered_store(runs):
    tx, pre, post, receipt = runs["benign-transfer"]
    line = replay(receipt.trace, pre.manifests, tx)
    bad = copy.deepcopy(line)
    store = next(s for s in bad.statements if s.kind == "store")
    store.value += 1
    assert not check_against_concrete(bad, pre, tx).ok


def test_oracle_catches_wrong_prestate(runs):
    tx, pre, post, receipt = runs["benign-transfer"]
    line = replay(receipt.trace, pre.manifests, tx)
    assert not check_against_concrete(line, post, tx).ok


def test_unsupported_opcode_in_trace(runs):
    tx, pre, post, receipt = runs["benign-transfer"]
    trace = list(receipt.trace)
    trace.insert(3, TraceEvent(0, "BALANCE", tx.to, trace[3].depth, (1,), (0,), None))
    with pytest.raises(UnsupportedOpcode):
        replay(trace, pre.manifests, tx)


def test_truncated_trace_is_rejected(runs):
    tx, pre, post, receipt = runs["benign-transfer"]
    with pytest.raises(ReplayError):
        replay(receipt.trace[5:], pre.manifests, tx)


def test_tampered_stack_value(runs):
    tx, pre, post, receipt = runs["benign-transfer"]
    trace = copy.deepcopy(receipt.trace)
    ev = next(e for e in trace if e.op == "ADD")
    ev.pushed = (ev.pushed[0] + 1,)
    with pytest.raises(StackMismatch):
        replay(trace, pre.manifests, tx)
