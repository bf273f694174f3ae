"""Contract manifests: ABI, storage layout and annotated properties.

A manifest is one JSON file per contract (schema in ``docs/formats.md``).  It
may name a base manifest through ``extends``; the base's storage variables,
functions and invariants are inherited, and entries in the derived file win
on name clashes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from . import speclang
from .asm import assemble
from .words import MOD, function_selector, hex_to_int, keccak_word, pad32

PARAM_TYPES = ("uint256", "address")


class ManifestError(Exception):
    pass


class ParseError(ManifestError):
    pass


class DuplicateSelector(ManifestError):
    pass


class DuplicateSlot(ManifestError):
    pass


class BadSpecExpr(ManifestError):
    pass


class IndexArityMismatch(ManifestError):
    pass


@dataclass(frozen=True)
class StorageVar:
    name: str
    slot: int
    key_types: tuple[str, ...] = ()
    value_type: str = "uint256"

    @property
    def kind(self) -> str:
        return "mapping" if self.key_types else "scalar"

    @property
    def arity(self) -> int:
        return len(self.key_types)

    @property
    def type_text(self) -> str:
        t = self.value_type
        for k in reversed(self.key_types):
            t = f"mapping({k}=>{t})"
        return t


@dataclass
class FunctionAbi:
    name: str
    params: list[tuple[str, str]]
    postconditions: list[str] = field(default_factory=list)
    declarations: list[str] = field(default_factory=list)
    assignments: list[str] = field(default_factory=list)

    @property
    def signature(self) -> str:
        return f"{self.name}({','.join(t for _, t in self.params)})"

    @cached_property
    def selector(self) -> bytes:
        return function_selector(self.signature)

    @property
    def param_names(self) -> list[str]:
        return [n for n, _ in self.params]

    def declared_names(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for decl in self.declarations:
            out.update(speclang.parse_declaration(decl))
        return out


@dataclass
class ContractManifest:
    name: str
    address: int | None
    functions: list[FunctionAbi]
    storage_layout: list[StorageVar]
    invariants: list[str]
    bytecode_ref: str | None = None
    path: Path | None = None

    def var(self, name: str) -> StorageVar | None:
        for v in self.storage_layout:
            if v.name == name:
                return v
        return None

    def var_at_slot(self, slot: int) -> StorageVar | None:
        for v in self.storage_layout:
            if v.slot == slot:
                return v
        return None

    def function(self, name_or_selector: str | bytes) -> FunctionAbi:
        for f in self.functions:
            if f.name == name_or_selector or f.selector == name_or_selector:
                return f
        raise KeyError(f"{self.name} has no function {name_or_selector!r}")

    def bytecode(self) -> bytes:
        if self.bytecode_ref is None:
            raise ManifestError(f"{self.name} has no bytecode_ref")
        ref = Path(self.bytecode_ref)
        if not ref.is_absolute() and self.path is not None:
            ref = self.path.parent / ref
        text = ref.read_text()
        if ref.suffix == ".asm":
            return assemble(text)
        return bytes.fromhex(text.strip().removeprefix("0x"))

    def class_vars(self) -> dict[str, speclang.ClassVar]:
        return {v.name: speclang.ClassVar(v.arity, v.value_type) for v in self.storage_layout}


def storage_key(var: StorageVar, *indices: int) -> int:
    """Storage slot of ``var`` (scalar) or of ``var[i1][i2]...`` (mapping)."""
    if len(indices) != var.arity:
        raise IndexArityMismatch(f"{var.name} takes {var.arity} index(es), got {len(indices)}")
    key = var.slot
    for idx in indices:
        key = keccak_word(pad32(idx % MOD) + pad32(key))
    return key


_MAPPING_RE = re.compile(r"^mapping\(\s*(\w+)\s*=>\s*(.+)\)$")


def parse_type(text: str) -> tuple[tuple[str, ...], str]:
    keys: list[str] = []
    t = text.replace(" ", "")
    while True:
        m = _MAPPING_RE.match(t)
        if not m:
            break
        if m.group(1) not in PARAM_TYPES:
            raise ParseError(f"unsupported mapping key type {m.group(1)!r}")
        keys.append(m.group(1))
        t = m.group(2)
    if t not in PARAM_TYPES:
        raise ParseError(f"unsupported storage type {text!r}")
    return tuple(keys), t


def _check_expr(text: str, where: str) -> None:
    try:
        speclang.parse_spec(text)
    except speclang.SpecError as exc:
        raise BadSpecExpr(f"{where}: {exc}") from exc


def _function_from_json(raw: dict, where: str) -> FunctionAbi:
    try:
        params = [(p["name"], p["type"]) for p in raw.get("params", [])]
        fn = FunctionAbi(
            name=raw["name"],
            params=params,
            postconditions=list(raw.get("postconditions", [])),
            declarations=list(raw.get("declarations", [])),
            assignments=list(raw.get("assignments", [])),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{where}: malformed function entry ({exc})") from exc
    for pname, ptype in fn.params:
        if ptype not in PARAM_TYPES:
            raise ParseError(f"{where}: parameter {pname!r} has unsupported type {ptype!r}")
    for i, text in enumerate(fn.postconditions):
        _check_expr(text, f"{where}.postconditions[{i}]")
    for i, text in enumerate(fn.declarations):
        try:
            speclang.parse_declaration(text)
        except speclang.SpecError as exc:
            raise BadSpecExpr(f"{where}.declarations[{i}]: {exc}") from exc
    for i, text in enumerate(fn.assignments):
        try:
            speclang.parse_assignment(text)
        except speclang.SpecError as exc:
            raise BadSpecExpr(f"{where}.assignments[{i}]: {exc}") from exc
    return fn


def manifest_from_dict(raw: dict, path: Path | None = None, base: ContractManifest | None = None) -> ContractManifest:
    if not isinstance(raw, dict) or "name" not in raw:
        raise ParseError(f"{path}: manifest must be an object with a name")
    name = raw["name"]
    storage: dict[str, StorageVar] = {v.name: v for v in base.storage_layout} if base else {}
    for i, entry in enumerate(raw.get("storage", [])):
        try:
            keys, value = parse_type(entry["type"])
            var = StorageVar(entry["name"], hex_to_int(entry["slot"]), keys, value)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{name}.storage[{i}]: {exc}") from exc
        storage[var.name] = var
    seen_slots: dict[int, str] = {}
    for var in storage.values():
        if var.slot in seen_slots:
            raise DuplicateSlot(f"{name}: slot {var.slot} used by {seen_slots[var.slot]!r} and {var.name!r}")
        seen_slots[var.slot] = var.name

    functions: dict[str, FunctionAbi] = {f.name: f for f in base.functions} if base else {}
    for i, entry in enumerate(raw.get("functions", [])):
        fn = _function_from_json(entry, f"{name}.functions[{i}]")
        functions[fn.name] = fn
    seen_sel: dict[bytes, str] = {}
    for fn in functions.values():
        sel = fn.selector
        if sel in seen_sel:
            raise DuplicateSelector(f"{name}: {fn.signature} and {seen_sel[sel]} share selector 0x{sel.hex()}")
        seen_sel[sel] = fn.signature

    invariants = list(base.invariants) if base else []
    for i, text in enumerate(raw.get("invariants", [])):
        _check_expr(text, f"{name}.invariants[{i}]")
        invariants.append(text)

    address = raw.get("address")
    return ContractManifest(
        name=name,
        address=hex_to_int(address) if address is not None else None,
        functions=list(functions.values()),
        storage_layout=sorted(storage.values(), key=lambda v: v.slot),
        invariants=invariants,
        bytecode_ref=raw.get("bytecode_ref", base.bytecode_ref if base else None),
        path=path,
    )


def load_manifest(path: str | Path) -> ContractManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    base = None
    if raw.get("extends"):
        base_path = path.parent / raw["extends"]
        if base_path.resolve() == path.resolve():
            raise ParseError(f"{path}: manifest extends itself")
        base = load_manifest(base_path)
    return manifest_from_dict(raw, path, base)
