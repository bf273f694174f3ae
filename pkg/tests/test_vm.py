import pytest

from tct.asm import assemble
from tct.vm import (Transaction, WorldState, dump_trace, execute_transaction, load_trace, path_hash_of, record_path,
                    TraceEvent)
from tct.words import keccak256, pad32

TOKEN = 0xaa


def balance(world, who):
    return world.read(TOKEN, "balances", (who,))


def holders(world):
    return {k: v for (a, k), v in world.storage_items().items() if a == TOKEN and k > 2}


def run_code(src: str, gas_limit: int = 1_000_000):
    world = WorldState()
    world.deploy(0x10, assemble(src))
    world.sstore(0x10, 0, 7)
    return world, *execute_transaction(world, Transaction(0x01, 0x10, b"\x00\x00\x00\x00"), gas_limit)


def test_benign_transfer_moves_tokens(runs):
    tx, pre, post, receipt = runs["benign-transfer"]
    assert receipt.committed
    assert balance(post, 0xc2) == balance(pre, 0xc2) - 7
    assert balance(post, 0xc3) == balance(pre, 0xc3) + 7
    assert sum(holders(post).values()) == post.read(TOKEN, "totalSupply")


def test_execution_is_deterministic(scenario):
    tx = scenario.transaction(scenario.step("attack2"))
    a_post, a = execute_transaction(scenario.world(), tx)
    b_post, b = execute_transaction(scenario.world(), tx)
    assert a.trace == b.trace and a.path_hash == b.path_hash and a.gas_used == b.gas_used
    assert a_post == b_post


def test_attack1_overflows_two_balances(runs):
    tx, pre, post, receipt = runs["attack1"]
    assert receipt.committed
    assert balance(post, 0xa1) >= 2**255 and balance(post, 0xa2) >= 2**255


def test_attack2_drains_through_reentrancy(runs):
    tx, pre, post, receipt = runs["attack2"]
    assert receipt.committed
    assert balance(post, 0xb1) == 0
    assert balance(post, 0xa2) == balance(pre, 0xb1) * 10
    assert max(ev.depth for ev in receipt.trace) > 1


def test_path_hash_recomputes_from_trace(runs):
    for tx, pre, post, receipt in runs.values():
        assert path_hash_of(receipt.trace) == receipt.path_hash == keccak256(receipt.path_buffer)


def test_path_buffer_layout(runs):
    receipt = runs["benign-proxy"][3]
    jumpis = [ev for ev in receipt.trace if ev.op == "JUMPI"]
    assert receipt.path_buffer == b"".join(pad32(ev.aux["next"]) for ev in jumpis)


def test_path_hash_separates_paths(runs):
    hashes = {label: r[3].path_hash for label, r in runs.items()}
    assert hashes["benign-clear"] != hashes["attack2"]
    assert hashes["attack2"] != hashes["attack2-empty"]  # callee address differs
    assert hashes["benign-transfer"] != hashes["zero-transfer"]  # zero value skips the update branch
    assert hashes["benign-proxy"] == hashes["attack1"]


def test_callee_address_enters_path():
    buf = bytearray()
    record_path(buf, TraceEvent(0, "CALL", 1, 1, (), (), {"callee": 0xb1, "args": (0, 0), "ret": (0, 0)}))
    assert bytes(buf) == b"\x00" * 19 + b"\xb1"
    with pytest.raises(ValueError):
        record_path(buf, TraceEvent(0, "ADD", 1, 1, (), (), None))


def test_revert_leaves_state_untouched():
    world, post, receipt = run_code("PUSH1 0x05\nPUSH1 0x00\nSSTORE\nPUSH1 0x00\nDUP1\nREVERT")
    assert receipt.status == "reverted" and receipt.reason == "Revert"
    assert post is world and world.sload(0x10, 0) == 7


@pytest.mark.parametrize("src, reason", [
    ("ADD", "StackUnderflow"),
    ("PUSH1 0x03\nJUMP", "InvalidJump"),
    ("PUSH1 0x00\nDUP1\nDUP1\nDUP1\nDUP1\nDUP1\nDELEGATECALL", "UnsupportedOpcode"),
])
def test_traps_revert(src, reason):
    world, post, receipt = run_code(src)
    assert receipt.status == "reverted"
    assert reason in receipt.reason
    assert receipt.trace[-1].op == "TRAP"
    assert post is world


def test_out_of_gas():
    world, post, receipt = run_code("loop: JUMPDEST\nPUSH2 loop\nJUMP", gas_limit=500)
    assert receipt.status == "reverted" and "OutOfGas" in receipt.reason


def test_inner_revert_is_isolated():
    # a call into a contract that reverts returns 0 without undoing the caller's writes
    world = WorldState()
    world.deploy(0x20, assemble("PUSH1 0x00\nDUP1\nREVERT"))
    world.deploy(0x10, assemble("""
        PUSH1 0x09
        PUSH1 0x01
        SSTORE
        PUSH1 0x00
        DUP1
        DUP1
        DUP1
        DUP1
        PUSH1 0x20
        PUSH2 0xffff
        CALL
        PUSH1 0x02
        SSTORE
        STOP
    """))
    post, receipt = execute_transaction(world, Transaction(0x01, 0x10, b"\x00" * 4))
    assert receipt.committed
    assert post.sload(0x10, 1) == 9 and post.sload(0x10, 2) == 0


def test_trace_dump_round_trip(runs):
    trace = runs["attack2"][3].trace
    assert load_trace(dump_trace(trace)) == trace


def test_world_json_round_trip(runs):
    post = runs["benign-proxy"][2]
    back = WorldState.from_json(post.to_json(), post.manifests)
    assert back == post
    assert back.storage_items() == post.storage_items()


def test_zero_writes_are_pruned(runs):
    post = runs["attack2"][2]
    assert all(v != 0 for v in post.storage_items().values())
