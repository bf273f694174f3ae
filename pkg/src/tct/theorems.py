"""Theorems, theorem hashes and the theorem repository.

A theorem is ``(entry, hypothesis, path hashes)``.  Its hash is::

    keccak256( address[20] ++ selector[4] ++ len(hyp)[4, big-endian]
               ++ utf8(canonical hypothesis) ++ sorted(path hashes)[32 each] )

The repository file is a short header, one JSON metadata line and then the
raw path hashes of every theorem in insertion order::

    TCTREPO1\\n
    {"theorems": [{"address": ..., "selector": ..., "hypothesis": ...,
                   "paths": n, "digest": ...}, ...]}\\n
    <32-byte path hash> * sum(n)

Digests that a theorem had before later path hashes were merged into it are
kept as aliases.  They are not stored: every prefix of a theorem's path list
determines one of them, so they are recomputed on load.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from . import speclang
from .words import fmt_address, hex_to_int, keccak256

log = logging.getLogger(__name__)

MAGIC = b"TCTREPO1\n"
HASH_SIZE = 32


class RepositoryError(Exception):
    pass


class CorruptRepository(RepositoryError):
    pass


Entry = tuple[int, bytes]  # (contract address, 4-byte selector)


def canonical_hypothesis(text: str) -> str:
    return speclang.canonical(text)


def theorem_hash(entry: Entry, hypothesis: str, path_hashes) -> bytes:
    address, selector = entry
    hyp = hypothesis.encode()
    parts = [address.to_bytes(20, "big"), bytes(selector), len(hyp).to_bytes(4, "big"), hyp]
    parts += sorted(bytes(p) for p in path_hashes)
    return keccak256(b"".join(parts))


@dataclass(frozen=True)
class Theorem:
    address: int
    selector: bytes
    hypothesis: str
    path_hashes: tuple[bytes, ...]  # insertion order; the hash sorts them

    def __post_init__(self) -> None:
        if len(self.selector) != 4:
            raise ValueError("selector must be 4 bytes")
        if len(set(self.path_hashes)) != len(self.path_hashes):
            raise ValueError("duplicate path hash")
        if any(len(p) != HASH_SIZE for p in self.path_hashes):
            raise ValueError("path hashes must be 32 bytes")

    @property
    def entry(self) -> Entry:
        return (self.address, self.selector)

    @property
    def digest(self) -> bytes:
        return theorem_hash(self.entry, self.hypothesis, self.path_hashes)

    def to_json(self) -> dict:
        return {
            "address": fmt_address(self.address),
            "selector": "0x" + self.selector.hex(),
            "hypothesis": self.hypothesis,
            "path_hashes": ["0x" + p.hex() for p in self.path_hashes],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Theorem":
        return cls(
            hex_to_int(d["address"]),
            bytes.fromhex(d["selector"].removeprefix("0x")),
            canonical_hypothesis(d["hypothesis"]),
            tuple(bytes.fromhex(p.removeprefix("0x")) for p in d.get("path_hashes", [])),
        )


class Repository:
    """Theorems keyed by hash, indexed by entry function.

    Readers may run concurrently; mutations take a lock and ``persist``
    replaces the backing file atomically.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.theorems: dict[bytes, Theorem] = {}
        self.aliases: dict[bytes, bytes] = {}
        self.index: dict[Entry, set[bytes]] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self.theorems)

    def __iter__(self):
        return iter(sorted(self.theorems.items()))

    def resolve(self, digest: bytes) -> bytes | None:
        if digest in self.theorems:
            return digest
        return self.aliases.get(digest)

    def get(self, digest: bytes) -> Theorem | None:
        current = self.resolve(digest)
        return self.theorems.get(current) if current else None

    def _find(self, entry: Entry, hypothesis: str) -> bytes | None:
        for h in self.index.get(entry, ()):
            if self.theorems[h].hypothesis == hypothesis:
                return h
        return None

    def _insert(self, th: Theorem, old: bytes | None) -> bytes:
        new = th.digest
        if old is not None and old != new:
            del self.theorems[old]
            self.index[th.entry].discard(old)
            self.aliases[old] = new
            for k, v in self.aliases.items():
                if v == old:
                    self.aliases[k] = new
        self.theorems[new] = th
        self.index.setdefault(th.entry, set()).add(new)
        return new

    def add_theorem(self, entry: Entry, hypothesis: str, path_hash: bytes) -> bytes:
        """Merge ``path_hash`` into the theorem for (entry, hypothesis); return its hash."""
        hyp = canonical_hypothesis(hypothesis)
        path_hash = bytes(path_hash)
        with self._lock:
            old = self._find(entry, hyp)
            if old is None:
                return self._insert(Theorem(entry[0], bytes(entry[1]), hyp, (path_hash,)), None)
            th = self.theorems[old]
            if path_hash in th.path_hashes:
                return old
            return self._insert(Theorem(th.address, th.selector, hyp, th.path_hashes + (path_hash,)), old)

    def add(self, th: Theorem) -> bytes:
        digest = None
        for p in th.path_hashes:
            digest = self.add_theorem(th.entry, th.hypothesis, p)
        if digest is None:
            raise RepositoryError("a theorem needs at least one path hash")
        return digest

    def for_entry(self, entry: Entry) -> list[bytes]:
        return sorted(self.index.get(entry, ()))

    def find_applicable(self, entry: Entry, ctx: speclang.EvalContext) -> list[bytes]:
        """Hashes of theorems for ``entry`` whose hypothesis holds under ``ctx``."""
        out = []
        for h in self.for_entry(entry):
            th = self.theorems[h]
            try:
                ok = speclang.eval_hypothesis(th.hypothesis, ctx)
            except (speclang.NotConcretelyEvaluable, speclang.UnboundName) as exc:
                log.warning("skipping theorem 0x%s: %s", h.hex(), exc)
                continue
            if ok:
                out.append(h)
        return out

    # -- persistence

    def to_bytes(self) -> bytes:
        meta = []
        payload = []
        for digest, th in self:
            meta.append({
                "address": fmt_address(th.address),
                "selector": "0x" + th.selector.hex(),
                "hypothesis": th.hypothesis,
                "paths": len(th.path_hashes),
                "digest": "0x" + digest.hex(),
            })
            payload.extend(th.path_hashes)
        line = json.dumps({"theorems": meta}, separators=(",", ":")).encode()
        return MAGIC + line + b"\n" + b"".join(payload)

    def persist(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise RepositoryError("repository has no backing file")
        with self._lock:
            data = self.to_bytes()
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        self.path = target
        return target

    @classmethod
    def from_bytes(cls, data: bytes, path: Path | None = None) -> "Repository":
        repo = cls(path)
        if not data:
            return repo
        if not data.startswith(MAGIC):
            raise CorruptRepository("missing repository header")
        nl = data.find(b"\n", len(MAGIC))
        if nl < 0:
            raise CorruptRepository("truncated metadata line")
        try:
            meta = json.loads(data[len(MAGIC):nl])["theorems"]
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRepository(f"bad metadata: {exc}") from exc
        payload = data[nl + 1:]
        if len(payload) != HASH_SIZE * sum(int(m["paths"]) for m in meta):
            raise CorruptRepository("path hash payload size does not match metadata")
        pos = 0
        for m in meta:
            n = int(m["paths"])
            paths = tuple(payload[pos + i * HASH_SIZE: pos + (i + 1) * HASH_SIZE] for i in range(n))
            pos += n * HASH_SIZE
            try:
                th = Theorem(hex_to_int(m["address"]), bytes.fromhex(m["selector"].removeprefix("0x")),
                             m["hypothesis"], paths)
            except (ValueError, KeyError) as exc:
                raise CorruptRepository(f"bad theorem entry: {exc}") from exc
            if "0x" + th.digest.hex() != m["digest"]:
                raise CorruptRepository(f"digest mismatch for theorem {m['digest']}")
            repo.theorems[th.digest] = th
            repo.index.setdefault(th.entry, set()).add(th.digest)
            for k in range(1, n):
                repo.aliases[theorem_hash(th.entry, th.hypothesis, paths[:k])] = th.digest
        return repo

    @classmethod
    def load(cls, path: str | Path) -> "Repository":
        path = Path(path)
        if not path.exists():
            return cls(path)
        return cls.from_bytes(path.read_bytes(), path)


def load_theorem_file(path: str | Path) -> Theorem:
    """Read one theorem in exchange format (the JSON of ``Theorem.to_json``)."""
    try:
        return Theorem.from_json(json.loads(Path(path).read_text()))
    except (ValueError, KeyError) as exc:
        raise RepositoryError(f"{path}: {exc}") from exc
