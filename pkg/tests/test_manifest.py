import json

import pytest
from Crypto.Hash import keccak as ref_keccak
from hypothesis import given, strategies as st

from tct.manifest import (BadSpecExpr, DuplicateSelector, DuplicateSlot, IndexArityMismatch, ParseError, StorageVar,
                          load_manifest, manifest_from_dict, parse_type, storage_key)


def ref_slot(key: int, slot: int) -> int:
    data = key.to_bytes(32, "big") + slot.to_bytes(32, "big")
    return int.from_bytes(ref_keccak.new(digest_bits=256, data=data).digest(), "big")


def test_inherited_layout(scenario):
    tok = scenario.contract("MultiVulnToken")
    assert [(v.name, v.slot) for v in tok.storage_layout] == [("owner", 0), ("totalSupply", 1), ("balances", 2)]
    assert [f.name for f in tok.functions] == ["balanceOf", "transfer", "transferProxy", "clear"]
    assert len(tok.invariants) == 2
    assert tok.function("transfer").selector.hex() == "a9059cbb"
    assert tok.function(tok.function("clear").selector).name == "clear"


def test_bytecode_resolves_relative_to_manifest(scenario):
    assert scenario.contract("MultiVulnToken").bytecode()[:1] == b"\x60"


@given(st.integers(0, 2**160 - 1), st.integers(0, 2**16))
def test_mapping_key_matches_reference(addr, slot):
    var = StorageVar("m", slot, ("address",))
    assert storage_key(var, addr) == ref_slot(addr, slot)


def test_nested_mapping_key():
    var = StorageVar("allowed", 3, ("address", "address"))
    assert storage_key(var, 0xa1, 0xa2) == ref_slot(0xa2, ref_slot(0xa1, 3))


def test_scalar_key_is_slot():
    assert storage_key(StorageVar("totalSupply", 1)) == 1


def test_index_arity():
    with pytest.raises(IndexArityMismatch):
        storage_key(StorageVar("m", 2, ("address",)))
    with pytest.raises(IndexArityMismatch):
        storage_key(StorageVar("s", 2), 5)


def test_parse_type():
    assert parse_type("uint256") == ((), "uint256")
    assert parse_type("mapping(address => mapping(address=>uint256))") == (("address", "address"), "uint256")


def base(**extra):
    raw = {"name": "T", "storage": [{"name": "a", "slot": 0, "type": "uint256"}],
           "functions": [{"name": "f", "params": [{"name": "x", "type": "uint256"}]}],
           "invariants": ["a >= 0"]}
    raw.update(extra)
    return raw


def test_minimal_manifest():
    m = manifest_from_dict(base())
    assert m.var("a").slot == 0 and m.var_at_slot(0).name == "a"
    assert m.function("f").signature == "f(uint256)"


@pytest.mark.parametrize("raw, err", [
    (base(storage=[{"name": "a", "slot": 0, "type": "uint256"}, {"name": "b", "slot": 0, "type": "uint256"}]),
     DuplicateSlot),
    # f8491() and f130736() share selector 0x62018627
    (base(functions=[{"name": "f8491"}, {"name": "f130736"}]), DuplicateSelector),
    (base(invariants=["a >=="]), BadSpecExpr),
    (base(functions=[{"name": "f", "params": [{"name": "x", "type": "string"}]}]), ParseError),
    (base(storage=[{"name": "a", "slot": 0}]), ParseError),
    ({"storage": []}, ParseError),
])
def test_rejects_bad_manifests(raw, err):
    with pytest.raises(err):
        manifest_from_dict(raw)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_manifest(p)


def test_extends_from_file(tmp_path):
    (tmp_path / "base.json").write_text(json.dumps(base()))
    (tmp_path / "child.json").write_text(json.dumps({
        "name": "C", "extends": "base.json", "storage": [{"name": "b", "slot": 1, "type": "address"}]}))
    m = load_manifest(tmp_path / "child.json")
    assert [v.name for v in m.storage_layout] == ["a", "b"]
    assert m.invariants == ["a >= 0"]
