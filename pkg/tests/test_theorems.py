import json
import threading

import pytest

from tct.speclang import EvalContext
from tct.theorems import (HASH_SIZE, MAGIC, CorruptRepository, Repository, RepositoryError, Theorem,
                          load_theorem_file, theorem_hash)
from tct.words import keccak256

ENTRY = (0xaa, bytes.fromhex("cf053d9d"))
OTHER = (0xaa, bytes.fromhex("3d0a4061"))
HYP = "0 <= _value && _value < 2^255"


def ph(i: int) -> bytes:
    return keccak256(i.to_bytes(4, "big"))


def test_hash_layout():
    hyp = b"a == 1"
    expected = keccak256(ENTRY[0].to_bytes(20, "big") + ENTRY[1] + len(hyp).to_bytes(4, "big") + hyp
                         + b"".join(sorted([ph(2), ph(1)])))
    assert theorem_hash(ENTRY, "a == 1", [ph(2), ph(1)]) == expected


def test_hash_ignores_path_order():
    assert theorem_hash(ENTRY, HYP, [ph(1), ph(2)]) == theorem_hash(ENTRY, HYP, [ph(2), ph(1)])


def test_add_is_idempotent():
    repo = Repository()
    h1 = repo.add_theorem(ENTRY, HYP, ph(1))
    assert repo.add_theorem(ENTRY, HYP, ph(1)) == h1
    assert len(repo) == 1 and repo.get(h1).path_hashes == (ph(1),)


def test_merge_keeps_old_hash_as_alias():
    repo = Repository()
    h1 = repo.add_theorem(ENTRY, HYP, ph(1))
    h2 = repo.add_theorem(ENTRY, "0 <= _value  &&  _value < 2^255", ph(2))  # same after canonicalization
    h3 = repo.add_theorem(ENTRY, HYP, ph(3))
    assert len({h1, h2, h3}) == 3 and len(repo) == 1
    assert repo.resolve(h1) == repo.resolve(h2) == h3
    assert repo.get(h1).path_hashes == (ph(1), ph(2), ph(3))
    assert repo.for_entry(ENTRY) == [h3]


def test_distinct_hypothesis_is_distinct_theorem():
    repo = Repository()
    a = repo.add_theorem(ENTRY, HYP, ph(1))
    b = repo.add_theorem(ENTRY, "_value == 0", ph(1))
    c = repo.add_theorem(OTHER, HYP, ph(1))
    assert len({a, b, c}) == 3
    assert repo.for_entry(ENTRY) == sorted([a, b])


def test_theorem_validation():
    with pytest.raises(ValueError):
        Theorem(1, b"\x00" * 3, HYP, (ph(1),))
    with pytest.raises(ValueError):
        Theorem(1, b"\x00" * 4, HYP, (ph(1), ph(1)))
    with pytest.raises(ValueError):
        Theorem(1, b"\x00" * 4, HYP, (b"short",))
    with pytest.raises(RepositoryError):
        Repository().add(Theorem(1, b"\x00" * 4, HYP, ()))


class Reader:
    def var_arity(self, contract, name):
        return None

    def read(self, contract, name, indices):
        raise KeyError(name)


def test_find_applicable():
    repo = Repository()
    ok = repo.add_theorem(ENTRY, HYP, ph(1))
    repo.add_theorem(ENTRY, "_value == 0", ph(1))
    repo.add_theorem(ENTRY, "nosuchname == 0", ph(1))  # skipped with a warning
    ctx = EvalContext({"_value": 5}, Reader(), 0xaa, 0xc1, 0xc1)
    assert repo.find_applicable(ENTRY, ctx) == [ok]
    assert repo.find_applicable(OTHER, ctx) == []
    assert Repository().find_applicable(ENTRY, ctx) == []
    big = EvalContext({"_value": 2**255}, Reader(), 0xaa, 0xc1, 0xc1)
    assert repo.find_applicable(ENTRY, big) == []


def sample_repo() -> Repository:
    repo = Repository()
    repo.add_theorem(ENTRY, HYP, ph(1))
    repo.add_theorem(ENTRY, HYP, ph(2))
    repo.add_theorem(ENTRY, "_value == 0", ph(3))
    repo.add_theorem(OTHER, "_to != msg.sender", ph(4))
    return repo


def test_persist_round_trip(tmp_path):
    repo = sample_repo()
    path = repo.persist(tmp_path / "repo.bin")
    back = Repository.load(path)
    assert back.theorems == repo.theorems
    assert back.index == repo.index
    assert back.aliases == repo.aliases
    for digest, th in back:
        assert th.digest == digest


def test_file_layout():
    data = sample_repo().to_bytes()
    assert data.startswith(MAGIC)
    header_end = data.index(b"\n", len(MAGIC)) + 1
    assert len(data) - header_end == 4 * HASH_SIZE
    assert len(json.loads(data[len(MAGIC):header_end])["theorems"]) == 3


def test_tampered_path_hash_is_detected():
    data = bytearray(sample_repo().to_bytes())
    data[-1] ^= 1
    with pytest.raises(CorruptRepository):
        Repository.from_bytes(bytes(data))


@pytest.mark.parametrize("data", [b"junk", MAGIC + b"{}", MAGIC + b'{"theorems": []}\n' + b"x"])
def test_malformed_files(data):
    with pytest.raises(CorruptRepository):
        Repository.from_bytes(data)


def test_empty_and_missing_files(tmp_path):
    (tmp_path / "empty").write_bytes(b"")
    assert len(Repository.load(tmp_path / "empty")) == 0
    assert len(Repository.load(tmp_path / "absent")) == 0


def test_growth_is_one_hash_per_path():
    repo = Repository()
    repo.add_theorem(ENTRY, HYP, ph(0))
    before = len(repo.to_bytes())
    for i in range(1, 101):
        repo.add_theorem(ENTRY, HYP, ph(i))
    grown = len(repo.to_bytes()) - before
    assert len(repo) == 1
    assert 100 * HASH_SIZE <= grown <= 100 * HASH_SIZE + 10  # the path count in the header may gain digits


def test_exchange_file(tmp_path):
    th = Theorem(0xaa, ENTRY[1], HYP, (ph(1),))
    p = tmp_path / "t.json"
    p.write_text(json.dumps(th.to_json()))
    assert load_theorem_file(p) == th
    p.write_text("{}")
    with pytest.raises(RepositoryError):
        load_theorem_file(p)


def test_concurrent_writers_merge_consistently():
    repo = Repository()
    threads = [threading.Thread(target=lambda k=k: [repo.add_theorem(ENTRY, HYP, ph(k * 100 + i))
                                                    for i in range(25)]) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    [(digest, th)] = list(repo)
    assert len(th.path_hashes) == 100 and th.digest == digest
