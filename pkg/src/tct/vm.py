"""Concrete interpreter for the supported EVM subset.

Each transaction runs against an immutable-by-convention :class:`WorldState`;
writes go to a journaled overlay and are folded into a fresh state only when
the outermost frame halts normally.  Every executed instruction is recorded as
a :class:`TraceEvent`, and branch/call outcomes are appended to the path
buffer whose Keccak-256 digest is the transaction's path hash.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .asm import MNEMONICS, jumpdests, push_size
from .manifest import ContractManifest, storage_key
from .words import (
    ADDRESS_MASK,
    MAX_WORD,
    MOD,
    address_bytes,
    check_address,
    check_word,
    fmt_address,
    function_selector,
    hex_to_int,
    keccak256,
    pad32,
)

DEFAULT_GAS_LIMIT = 1_000_000
MAX_CALL_DEPTH = 1024
MAX_STACK = 1024
MAX_MEMORY = 1 << 20

CALL_OPS = ("CALL", "STATICCALL", "DELEGATECALL", "CALLCODE")


class Trap(Exception):
    """Exceptional halt of the current frame; the message is the reason."""


@dataclass
class Account:
    code: bytes = b""
    storage: dict[int, int] = field(default_factory=dict)


class WorldState:
    """Accounts (code + storage) plus the manifest registry."""

    def __init__(self, accounts: dict[int, Account] | None = None,
                 manifests: dict[int, ContractManifest] | None = None):
        self.accounts: dict[int, Account] = accounts if accounts is not None else {}
        self.manifests: dict[int, ContractManifest] = manifests if manifests is not None else {}

    def copy(self) -> "WorldState":
        accounts = {a: Account(acc.code, dict(acc.storage)) for a, acc in self.accounts.items()}
        return WorldState(accounts, dict(self.manifests))

    def deploy(self, address: int, code: bytes, manifest: ContractManifest | None = None) -> None:
        check_address(address)
        acc = self.accounts.setdefault(address, Account())
        acc.code = bytes(code)
        if manifest is not None:
            self.manifests[address] = manifest

    def sload(self, address: int, key: int) -> int:
        acc = self.accounts.get(address)
        return acc.storage.get(key, 0) if acc else 0

    def sstore(self, address: int, key: int, value: int) -> None:
        """Direct write, for scenario setup only (transactions never call this)."""
        acc = self.accounts.setdefault(address, Account())
        if value:
            acc.storage[key] = check_word(value)
        else:
            acc.storage.pop(key, None)

    def code(self, address: int) -> bytes:
        acc = self.accounts.get(address)
        return acc.code if acc else b""

    # -- manifest-level access (also the spec-language StateReader protocol)

    def var_arity(self, contract: int, name: str) -> int | None:
        m = self.manifests.get(contract)
        if m is None:
            return None
        var = m.var(name)
        return None if var is None else var.arity

    def read(self, contract: int, name: str, indices: tuple[int, ...] = ()) -> int:
        var = self.manifests[contract].var(name)
        if var is None:
            raise KeyError(f"{self.manifests[contract].name} has no variable {name!r}")
        return self.sload(contract, storage_key(var, *indices))

    def write_var(self, contract: int, name: str, value: int, *indices: int) -> None:
        var = self.manifests[contract].var(name)
        if var is None:
            raise KeyError(f"{self.manifests[contract].name} has no variable {name!r}")
        self.sstore(contract, storage_key(var, *indices), value)

    def storage_items(self) -> dict[tuple[int, int], int]:
        return {(a, k): v for a, acc in self.accounts.items() for k, v in acc.storage.items() if v}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        codes = {a: acc.code for a, acc in self.accounts.items() if acc.code}
        other_codes = {a: acc.code for a, acc in other.accounts.items() if acc.code}
        return codes == other_codes and self.storage_items() == other.storage_items()

    # -- JSON snapshot

    def to_json(self) -> str:
        accounts = {}
        for addr in sorted(self.accounts):
            acc = self.accounts[addr]
            accounts[fmt_address(addr)] = {
                "code": acc.code.hex(),
                "storage": {hex(k): hex(v) for k, v in sorted(acc.storage.items()) if v},
            }
        return json.dumps({"accounts": accounts}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, manifests: dict[int, ContractManifest] | None = None) -> "WorldState":
        raw = json.loads(text)
        accounts = {}
        for addr, acc in raw.get("accounts", {}).items():
            storage = {hex_to_int(k): hex_to_int(v) for k, v in acc.get("storage", {}).items()}
            accounts[check_address(hex_to_int(addr))] = Account(bytes.fromhex(acc.get("code", "")), storage)
        return cls(accounts, manifests)


@dataclass(frozen=True)
class Transaction:
    origin: int
    to: int
    selector: bytes
    args: tuple[int, ...] = ()
    theorem_hash: bytes | None = None

    @property
    def calldata(self) -> bytes:
        return self.selector + b"".join(pad32(a) for a in self.args)

    @classmethod
    def call(cls, origin: int, to: int, signature: str, *args: int, theorem_hash: bytes | None = None) -> "Transaction":
        return cls(origin, to, function_selector(signature), tuple(args), theorem_hash)


class TraceEvent:
    """One executed instruction.

    ``aux`` carries op-specific facts: ``key`` (SLOAD/SSTORE), ``taken`` and
    ``next`` (JUMPI), ``callee``/``args``/``ret`` (calls), ``reason`` (TRAP).
    For calls, ``pushed`` is filled in when the callee frame finishes.
    """

    __slots__ = ("pc", "op", "contract", "depth", "popped", "pushed", "aux")

    def __init__(self, pc: int, op: str, contract: int, depth: int,
                 popped: tuple[int, ...], pushed: tuple[int, ...], aux: dict | None = None):
        self.pc = pc
        self.op = op
        self.contract = contract
        self.depth = depth
        self.popped = popped
        self.pushed = pushed
        self.aux = aux

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TraceEvent) and all(
            getattr(self, s) == getattr(other, s) for s in self.__slots__
        )

    def __repr__(self) -> str:
        return f"TraceEvent({dump_event(self)!r})"


@dataclass
class Receipt:
    status: str  # 'committed' | 'reverted'
    reason: str | None
    trace: list[TraceEvent]
    path_buffer: bytes
    path_hash: bytes
    gas_used: int
    return_data: bytes = b""

    @property
    def committed(self) -> bool:
        return self.status == "committed"


class _Frame:
    __slots__ = ("address", "caller", "code", "jumpdests", "calldata", "static", "stack", "memory",
                 "pc", "journal_mark", "call_event", "ret_off", "ret_len", "depth")

    def __init__(self, address, caller, code, dests, calldata, static, journal_mark, depth):
        self.address = address
        self.caller = caller
        self.code = code
        self.jumpdests = dests
        self.calldata = calldata
        self.static = static
        self.stack: list[int] = []
        self.memory = bytearray()
        self.pc = 0
        self.journal_mark = journal_mark
        self.call_event: TraceEvent | None = None
        self.ret_off = 0
        self.ret_len = 0
        self.depth = depth


def _mem_extend(frame: _Frame, offset: int, size: int) -> None:
    if size == 0:
        return
    end = offset + size
    if end > MAX_MEMORY:
        raise Trap("MemoryLimit")
    if end > len(frame.memory):
        frame.memory.extend(b"\x00" * (((end + 31) // 32) * 32 - len(frame.memory)))


_BINARY = {
    "ADD": lambda a, b: (a + b) % MOD,
    "MUL": lambda a, b: (a * b) % MOD,
    "SUB": lambda a, b: (a - b) % MOD,
    "DIV": lambda a, b: a // b if b else 0,
    "MOD": lambda a, b: a % b if b else 0,
    "LT": lambda a, b: 1 if a < b else 0,
    "GT": lambda a, b: 1 if a > b else 0,
    "EQ": lambda a, b: 1 if a == b else 0,
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
}


class _Interpreter:
    def __init__(self, state: WorldState, tx: Transaction, gas_limit: int):
        self.state = state
        self.tx = tx
        self.gas_left = gas_limit
        self.gas_limit = gas_limit
        self.overlay: dict[tuple[int, int], int] = {}
        self.journal: list[tuple[tuple[int, int], int | None]] = []
        self.trace: list[TraceEvent] = []
        self.path = bytearray()
        self._dest_cache: dict[bytes, frozenset[int]] = {}

    def dests(self, code: bytes) -> frozenset[int]:
        d = self._dest_cache.get(code)
        if d is None:
            d = self._dest_cache[code] = jumpdests(code)
        return d

    def sload(self, address: int, key: int) -> int:
        v = self.overlay.get((address, key))
        return self.state.sload(address, key) if v is None else v

    def sstore(self, address: int, key: int, value: int) -> None:
        slot = (address, key)
        self.journal.append((slot, self.overlay.get(slot)))
        self.overlay[slot] = value

    def rollback(self, mark: int) -> None:
        while len(self.journal) > mark:
            slot, old = self.journal.pop()
            if old is None:
                del self.overlay[slot]
            else:
                self.overlay[slot] = old

    def new_frame(self, address, caller, calldata, static, depth) -> _Frame:
        code = self.state.code(address)
        return _Frame(address, caller, code, self.dests(code), calldata, static, len(self.journal), depth)

    def run(self) -> tuple[str, str | None, bytes]:
        tx = self.tx
        frames = [self.new_frame(tx.to, tx.origin, tx.calldata, False, 0)]
        while True:
            frame = frames[-1]
            try:
                outcome, data = self.step_frame(frame, frames)
            except Trap as trap:
                self.trace.append(TraceEvent(frame.pc, "TRAP", frame.address, frame.depth, (), (), {"reason": str(trap)}))
                outcome, data = "trap", str(trap).encode()
            if outcome == "call":
                continue
            # the frame on top has halted
            frames.pop()
            ok = outcome == "return"
            if not ok:
                self.rollback(frame.journal_mark)
            if not frames:
                if ok:
                    return "committed", None, data
                reason = "Revert" if outcome == "revert" else data.decode()
                return "reverted", reason, data
            parent = frames[-1]
            ev = parent.call_event
            parent.call_event = None
            success = 1 if ok else 0
            ev.pushed = (success,)
            if ok and parent.ret_len:
                n = min(parent.ret_len, len(data))
                parent.memory[parent.ret_off:parent.ret_off + n] = data[:n]
            parent.stack.append(success)
            parent.pc += 1

    def step_frame(self, f: _Frame, frames: list[_Frame]) -> tuple[str, bytes]:
        code = f.code
        stack = f.stack
        trace = self.trace
        addr = f.address
        depth = f.depth
        n = len(code)
        while True:
            pc = f.pc
            if pc >= n:
                trace.append(TraceEvent(pc, "STOP", addr, depth, (), ()))
                return "return", b""
            if self.gas_left <= 0:
                raise Trap("OutOfGas")
            self.gas_left -= 1
            op = code[pc]
            name = MNEMONICS.get(op)
            if name is None:
                raise Trap(f"InvalidOpcode 0x{op:02x}")
            size = push_size(op)
            if size:
                if len(stack) >= MAX_STACK:
                    raise Trap("StackOverflow")
                v = int.from_bytes(code[pc + 1:pc + 1 + size].ljust(size, b"\x00"), "big")
                stack.append(v)
                trace.append(TraceEvent(pc, name, addr, depth, (), (v,)))
                f.pc = pc + 1 + size
                continue
            if 0x80 <= op <= 0x8F:  # DUPn
                k = op - 0x7F
                if len(stack) < k:
                    raise Trap("StackUnderflow")
                if len(stack) >= MAX_STACK:
                    raise Trap("StackOverflow")
                v = stack[-k]
                stack.append(v)
                trace.append(TraceEvent(pc, name, addr, depth, (), (v,)))
                f.pc = pc + 1
                continue
            if 0x90 <= op <= 0x9F:  # SWAPn
                k = op - 0x8F
                if len(stack) < k + 1:
                    raise Trap("StackUnderflow")
                stack[-1], stack[-1 - k] = stack[-1 - k], stack[-1]
                trace.append(TraceEvent(pc, name, addr, depth, (), ()))
                f.pc = pc + 1
                continue
            binop = _BINARY.get(name)
            if binop is not None:
                if len(stack) < 2:
                    raise Trap("StackUnderflow")
                a = stack.pop()
                b = stack.pop()
                r = binop(a, b)
                stack.append(r)
                trace.append(TraceEvent(pc, name, addr, depth, (a, b), (r,)))
                f.pc = pc + 1
                continue
            handler = getattr(self, "op_" + name)
            result = handler(f, frames, pc, name)
            if result is not None:
                return result

    # -- helpers

    @staticmethod
    def pop(f: _Frame, k: int) -> tuple[int, ...]:
        if len(f.stack) < k:
            raise Trap("StackUnderflow")
        vals = tuple(f.stack.pop() for _ in range(k))
        return vals

    def push(self, f: _Frame, v: int) -> None:
        if len(f.stack) >= MAX_STACK:
            raise Trap("StackOverflow")
        f.stack.append(v)

    def emit(self, f, pc, name, popped, pushed, aux=None):
        self.trace.append(TraceEvent(pc, name, f.address, f.depth, popped, pushed, aux))

    # -- opcodes (the common arithmetic ones are inlined in step_frame)

    def op_STOP(self, f, frames, pc, name):
        self.emit(f, pc, name, (), ())
        return "return", b""

    def op_ISZERO(self, f, frames, pc, name):
        (a,) = self.pop(f, 1)
        r = 1 if a == 0 else 0
        self.push(f, r)
        self.emit(f, pc, name, (a,), (r,))
        f.pc = pc + 1

    def op_NOT(self, f, frames, pc, name):
        (a,) = self.pop(f, 1)
        r = MAX_WORD ^ a
        self.push(f, r)
        self.emit(f, pc, name, (a,), (r,))
        f.pc = pc + 1

    def op_SHA3(self, f, frames, pc, name):
        off, size = self.pop(f, 2)
        _mem_extend(f, off, size)
        r = int.from_bytes(keccak256(bytes(f.memory[off:off + size])), "big")
        self.push(f, r)
        self.emit(f, pc, name, (off, size), (r,))
        f.pc = pc + 1

    def op_CALLDATALOAD(self, f, frames, pc, name):
        (off,) = self.pop(f, 1)
        chunk = f.calldata[off:off + 32] if off < len(f.calldata) else b""
        r = int.from_bytes(chunk.ljust(32, b"\x00"), "big")
        self.push(f, r)
        self.emit(f, pc, name, (off,), (r,))
        f.pc = pc + 1

    def _push_env(self, f, pc, name, value):
        self.push(f, value)
        self.emit(f, pc, name, (), (value,))
        f.pc = pc + 1

    def op_CALLDATASIZE(self, f, frames, pc, name):
        self._push_env(f, pc, name, len(f.calldata))

    def op_CALLER(self, f, frames, pc, name):
        self._push_env(f, pc, name, f.caller)

    def op_ORIGIN(self, f, frames, pc, name):
        self._push_env(f, pc, name, self.tx.origin)

    def op_PC(self, f, frames, pc, name):
        self._push_env(f, pc, name, pc)

    def op_POP(self, f, frames, pc, name):
        (a,) = self.pop(f, 1)
        self.emit(f, pc, name, (a,), ())
        f.pc = pc + 1

    def op_MLOAD(self, f, frames, pc, name):
        (off,) = self.pop(f, 1)
        _mem_extend(f, off, 32)
        r = int.from_bytes(f.memory[off:off + 32], "big")
        self.push(f, r)
        self.emit(f, pc, name, (off,), (r,))
        f.pc = pc + 1

    def op_MSTORE(self, f, frames, pc, name):
        off, val = self.pop(f, 2)
        _mem_extend(f, off, 32)
        f.memory[off:off + 32] = val.to_bytes(32, "big")
        self.emit(f, pc, name, (off, val), ())
        f.pc = pc + 1

    def op_SLOAD(self, f, frames, pc, name):
        (key,) = self.pop(f, 1)
        r = self.sload(f.address, key)
        self.push(f, r)
        self.emit(f, pc, name, (key,), (r,), {"key": key})
        f.pc = pc + 1

    def op_SSTORE(self, f, frames, pc, name):
        if f.static:
            raise Trap("StaticWrite")
        key, val = self.pop(f, 2)
        self.sstore(f.address, key, val)
        self.emit(f, pc, name, (key, val), (), {"key": key})
        f.pc = pc + 1

    def op_JUMP(self, f, frames, pc, name):
        (dest,) = self.pop(f, 1)
        if dest not in f.jumpdests:
            raise Trap("InvalidJumpDest")
        self.emit(f, pc, name, (dest,), (), {"next": dest})
        f.pc = dest

    def op_JUMPI(self, f, frames, pc, name):
        dest, cond = self.pop(f, 2)
        taken = cond != 0
        if taken and dest not in f.jumpdests:
            raise Trap("InvalidJumpDest")
        nxt = dest if taken else pc + 1
        self.emit(f, pc, name, (dest, cond), (), {"taken": taken, "next": nxt})
        record_path(self.path, self.trace[-1])
        f.pc = nxt

    def op_JUMPDEST(self, f, frames, pc, name):
        self.emit(f, pc, name, (), ())
        f.pc = pc + 1

    def op_RETURN(self, f, frames, pc, name):
        off, size = self.pop(f, 2)
        _mem_extend(f, off, size)
        self.emit(f, pc, name, (off, size), ())
        return "return", bytes(f.memory[off:off + size])

    def op_REVERT(self, f, frames, pc, name):
        off, size = self.pop(f, 2)
        _mem_extend(f, off, size)
        self.emit(f, pc, name, (off, size), ())
        return "revert", bytes(f.memory[off:off + size])

    def _call(self, f, frames, pc, name, popped, callee, args, ret, static):
        callee &= ADDRESS_MASK
        ev = TraceEvent(pc, name, f.address, f.depth, popped, (), {"callee": callee, "args": args, "ret": ret})
        self.trace.append(ev)
        record_path(self.path, ev)
        if name in ("DELEGATECALL", "CALLCODE"):
            raise Trap(f"UnsupportedOpcode {name}")
        _mem_extend(f, args[0], args[1])
        _mem_extend(f, ret[0], ret[1])
        if f.depth + 1 >= MAX_CALL_DEPTH:
            raise Trap("CallDepthExceeded")
        if not self.state.code(callee):
            ev.pushed = (1,)
            self.push(f, 1)
            f.pc = pc + 1
            return None
        calldata = bytes(f.memory[args[0]:args[0] + args[1]])
        f.call_event = ev
        f.ret_off, f.ret_len = ret
        frames.append(self.new_frame(callee, f.address, calldata, static or f.static, f.depth + 1))
        return "call", b""

    def op_CALL(self, f, frames, pc, name):
        popped = self.pop(f, 7)
        _gas, callee, value, a_off, a_len, r_off, r_len = popped
        if value:
            raise Trap("CallValueUnsupported")
        return self._call(f, frames, pc, name, popped, callee, (a_off, a_len), (r_off, r_len), False)

    def op_CALLCODE(self, f, frames, pc, name):
        popped = self.pop(f, 7)
        return self._call(f, frames, pc, name, popped, popped[1], (popped[3], popped[4]), (popped[5], popped[6]), False)

    def op_STATICCALL(self, f, frames, pc, name):
        popped = self.pop(f, 6)
        _gas, callee, a_off, a_len, r_off, r_len = popped
        return self._call(f, frames, pc, name, popped, callee, (a_off, a_len), (r_off, r_len), True)

    def op_DELEGATECALL(self, f, frames, pc, name):
        popped = self.pop(f, 6)
        return self._call(f, frames, pc, name, popped, popped[1], (popped[2], popped[3]), (popped[4], popped[5]), False)


def execute_transaction(state: WorldState, tx: Transaction, gas_limit: int = DEFAULT_GAS_LIMIT) -> tuple[WorldState, Receipt]:
    """Run ``tx``; on success return a new state with the writes applied.

    On revert or trap the input ``state`` object itself is returned untouched.
    """
    if not state.code(tx.to):
        raise ValueError(f"no code at {fmt_address(tx.to)}")
    interp = _Interpreter(state, tx, gas_limit)
    status, reason, data = interp.run()
    path = bytes(interp.path)
    receipt = Receipt(status, reason, interp.trace, path, keccak256(path), gas_limit - interp.gas_left, data)
    if status != "committed" or not interp.overlay:
        return state, receipt
    touched = {a for a, _ in interp.overlay}
    accounts = dict(state.accounts)
    for a in touched:
        old = accounts.get(a)
        accounts[a] = Account(old.code if old else b"", dict(old.storage) if old else {})
    for (a, k), v in interp.overlay.items():
        if v:
            accounts[a].storage[k] = v
        else:
            accounts[a].storage.pop(k, None)
    return WorldState(accounts, state.manifests), receipt


def record_path(buffer: bytearray, event: TraceEvent) -> None:
    """Append a JUMPI's next PC (32 bytes) or a call's callee address (20 bytes)."""
    if event.op == "JUMPI":
        buffer += pad32(event.aux["next"])
    elif event.op in CALL_OPS:
        buffer += address_bytes(event.aux["callee"])
    else:
        raise ValueError(f"{event.op} does not extend the path buffer")


def path_hash_of(trace: Iterable[TraceEvent]) -> bytes:
    """Recompute the path hash from a trace."""
    buf = bytearray()
    for ev in trace:
        op = ev.op
        if op == "JUMPI":
            buf += ev.aux["next"].to_bytes(32, "big")
        elif op in CALL_OPS:
            buf += ev.aux["callee"].to_bytes(20, "big")
    return keccak256(bytes(buf))


# ---------------------------------------------------------------- trace dump
#
# One event per line, tab separated:
#   depth  pc  contract  op  popped  pushed  aux
# popped/pushed are comma-separated hex words ("-" when empty); aux is a
# comma-separated list of key=value pairs ("-" when absent).  Values in aux are
# hex ints, "true"/"false", or "off:len" ranges.


def _fmt_words(ws: tuple[int, ...]) -> str:
    return ",".join(hex(w) for w in ws) if ws else "-"


def _fmt_aux(aux: dict | None) -> str:
    if not aux:
        return "-"
    parts = []
    for k in sorted(aux):
        v = aux[k]
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, tuple):
            s = f"{hex(v[0])}:{hex(v[1])}"
        elif isinstance(v, int):
            s = hex(v)
        else:
            s = str(v).replace(",", ";").replace("\t", " ")
        parts.append(f"{k}={s}")
    return ",".join(parts)


def dump_event(ev: TraceEvent) -> str:
    return "\t".join([str(ev.depth), str(ev.pc), fmt_address(ev.contract), ev.op,
                      _fmt_words(ev.popped), _fmt_words(ev.pushed), _fmt_aux(ev.aux)])


def dump_trace(trace: Iterable[TraceEvent]) -> str:
    return "".join(dump_event(ev) + "\n" for ev in trace)


def _parse_aux(text: str) -> dict | None:
    if text == "-":
        return None
    out: dict = {}
    for part in text.split(","):
        k, v = part.split("=", 1)
        if v in ("true", "false"):
            out[k] = v == "true"
        elif ":" in v:
            a, b = v.split(":")
            out[k] = (int(a, 16), int(b, 16))
        elif k == "reason":
            out[k] = v
        else:
            out[k] = int(v, 16)
    return out


def load_trace(text: str) -> list[TraceEvent]:
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 7:
            raise ValueError(f"trace line {lineno}: expected 7 tab-separated fields")
        depth, pc, contract, op, popped, pushed, aux = fields
        words = lambda s: () if s == "-" else tuple(int(w, 16) for w in s.split(","))  # noqa: E731
        events.append(TraceEvent(int(pc), op, int(contract, 16), int(depth), words(popped), words(pushed), _parse_aux(aux)))
    return events
