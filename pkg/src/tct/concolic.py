"""Concolic replay of a concrete trace over symbolic value trees (SVTs).

The replay mirrors the concrete stack machine event by event: every value on a
symbolic stack is an :class:`Svt` node that also carries its concrete value,
and each node is checked against the trace as it is produced.  Storage is not
modelled in the machine at all; each SLOAD reads the qualified global
(``Class.var[contract][index]``) into a fresh temp and each SSTORE assigns it,
so aliasing is left to the verifier.  Branches become ``assume`` statements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .manifest import ContractManifest, StorageVar, storage_key
from .speclang import vc_literal
from .vm import Transaction, TraceEvent, WorldState
from .words import (
    ADDRESS_MASK,
    MOD,
    evm_add,
    evm_div,
    evm_mod,
    evm_mul,
    evm_not,
    evm_sub,
    keccak_word,
)


class ReplayError(Exception):
    pass


class UnsupportedOpcode(ReplayError):
    pass


class StackMismatch(ReplayError):
    pass


class UnknownStorageSlot(ReplayError):
    pass


class OpaqueKey(ReplayError):
    pass


class MarshallingMismatch(ReplayError):
    pass


class OracleMismatch(ReplayError):
    pass


# ---------------------------------------------------------------- SVT nodes

UINT, ADDR, BOOL = "uint", "addr", "bool"

# op name -> (VC function or infix operator, result sort)
_OP_RENDER = {
    "ADD": ("evmadd", UINT),
    "SUB": ("evmsub", UINT),
    "MUL": ("evmmul", UINT),
    "DIV": ("evmdiv", UINT),
    "MOD": ("evmmod", UINT),
    "AND": ("evmand", UINT),
    "OR": ("evmor", UINT),
    "NOT": ("evmnot", UINT),
    "LT": ("<", BOOL),
    "GT": (">", BOOL),
    "EQ": ("==", BOOL),
    "ISZERO": ("iszero", BOOL),
    "NEZ": ("nez", BOOL),
}


class Svt:
    """A symbolic value tree node.

    kind is one of const, param, env, entry, temp, op, sha3, mask, compose.
    ``data`` is kind specific: the literal for const, the name for param/env/
    temp, the op name for op; ``children`` are operand nodes (for sha3 and
    compose, ``bytes_`` holds the per-byte provenance instead).
    """

    __slots__ = ("kind", "data", "children", "sort", "value", "temp", "bytes_")

    def __init__(self, kind: str, data, children: tuple = (), sort: str = UINT,
                 value: int = 0, bytes_: tuple | None = None):
        self.kind = kind
        self.data = data
        self.children = children
        self.sort = sort
        self.value = value
        self.temp: str | None = None
        self.bytes_ = bytes_

    def __repr__(self) -> str:
        return f"Svt({describe(self)})"


def const(value: int) -> Svt:
    return Svt("const", value, sort=UINT, value=value)


def describe(n: Svt) -> str:
    """Human-readable rendering used in error messages."""
    if n.temp:
        return n.temp
    if n.kind == "const":
        return hex(n.value)
    if n.kind in ("param", "env", "entry"):
        return str(n.data)
    if n.kind == "mask":
        return f"Partial32B(12,31,{describe(n.children[0])})"
    if n.kind == "op":
        return f"{n.data}({', '.join(describe(c) for c in n.children)})"
    if n.kind == "sha3":
        return f"Sha3({', '.join(describe(w) for w in _words_of(n.bytes_))})"
    if n.kind == "compose":
        return "Compose(" + ", ".join(f"{describe(b[0])}@{b[1]}" for b in n.bytes_) + ")"
    return n.kind


def _node_bytes(node: Svt) -> tuple[tuple[Svt, int], ...]:
    if node.kind == "compose":
        return node.bytes_
    return tuple((node, i) for i in range(32))


def _byte_value(b: tuple[Svt, int]) -> int:
    node, i = b
    return (node.value >> (8 * (31 - i))) & 0xFF


def _is_const_byte(b: tuple[Svt, int]) -> bool:
    return b[0].kind == "const"


def _words_of(bs: tuple) -> list[Svt]:
    return [_gather(bs[i:i + 32]) for i in range(0, len(bs), 32)]


def _gather(bs: tuple) -> Svt:
    """Turn 32 byte provenances into a node (identity, constant or compose)."""
    value = 0
    for b in bs:
        value = (value << 8) | _byte_value(b)
    first = bs[0][0]
    if all(b[0] is first and b[1] == i for i, b in enumerate(bs)):
        return first
    if all(_is_const_byte(b) for b in bs):
        return const(value)
    return Svt("compose", None, sort=UINT, value=value, bytes_=tuple(bs))


# ---------------------------------------------------------- straight-line IR


@dataclass
class Location:
    class_name: str
    var: StorageVar
    contract: Svt
    indices: tuple[Svt, ...] = ()


@dataclass
class Stmt:
    """One straight-line statement.

    kind: 'load' (temp := global), 'temp' (temp := expr), 'store' (global := expr)
    or 'assume'.  ``node`` is the defining SVT, ``location`` the storage target
    or source, ``value`` the concrete value observed on the trace.
    """

    kind: str
    target: str | None
    expr: str
    node: Svt | None = None
    location: Location | None = None
    value: int | None = None
    sort: str = UINT


@dataclass
class StraightLine:
    statements: list[Stmt] = field(default_factory=list)
    temps: list[tuple[str, str]] = field(default_factory=list)  # (name, sort)
    globals_used: dict[tuple[str, str], StorageVar] = field(default_factory=dict)
    classes: list[tuple[str, Svt, int]] = field(default_factory=list)  # (class, contract ref, address)
    params: list[tuple[str, str]] = field(default_factory=list)
    functions_used: set[str] = field(default_factory=set)
    entry_class: str = ""
    dropped_trivial: int = 0

    def text(self) -> str:
        return "".join(render_stmt(s) + "\n" for s in self.statements)


def render_stmt(s: Stmt) -> str:
    if s.kind == "assume":
        return f"assume({s.expr});"
    return f"{s.target} := {s.expr};"


# ------------------------------------------------------------------ machine


@dataclass
class _Frame:
    address: int
    address_node: Svt
    caller_node: Svt
    manifest: ContractManifest | None
    calldata: tuple
    depth: int
    stack: list[Svt] = field(default_factory=list)
    memory: dict[int, tuple[Svt, int]] = field(default_factory=dict)
    pending_call: tuple | None = None  # (ret_off, ret_len)


class Replayer:
    def __init__(self, manifests: dict[int, ContractManifest], tx: Transaction,
                 param_names: list[tuple[str, str]] | None = None):
        self.manifests = manifests
        self.tx = tx
        self.out = StraightLine()
        self.counter = 0
        self.zero = const(0)
        self._next_depth_is_child = True
        entry_manifest = manifests.get(tx.to)
        if entry_manifest is None:
            raise UnknownStorageSlot(f"no manifest for entry contract {tx.to:#x}")
        self.out.entry_class = entry_manifest.name
        if param_names is None:
            fn = entry_manifest.function(tx.selector)
            param_names = fn.params
        if len(param_names) != len(tx.args):
            raise MarshallingMismatch("argument count disagrees with the entry ABI")
        self.out.params = list(param_names)
        self.origin = Svt("env", "tx_origin", sort=ADDR, value=tx.origin)
        entry_node = Svt("entry", "entry_contract", sort=ADDR, value=tx.to)
        calldata: list[tuple[Svt, int]] = []
        sel = const(int.from_bytes(tx.selector, "big") << 224)
        calldata += [(sel, i) for i in range(4)]
        for (name, typ), arg in zip(param_names, tx.args):
            p = Svt("param", name, sort=ADDR if typ == "address" else UINT, value=arg)
            calldata += [(p, i) for i in range(32)]
        self.frames = [_Frame(tx.to, entry_node, self.origin, entry_manifest, tuple(calldata), 0)]
        self._note_class(entry_manifest, entry_node, tx.to)

    # -- helpers

    def _note_class(self, manifest: ContractManifest | None, node: Svt, address: int) -> None:
        if manifest is None:
            return
        if all(addr != address for _, _, addr in self.out.classes):
            self.out.classes.append((manifest.name, node, address))

    def fresh(self, sort: str) -> str:
        self.counter += 1
        name = f"tmp{self.counter}"
        self.out.temps.append((name, sort))
        return name

    def render(self, n: Svt, want: str = UINT) -> str:
        """Render an operand, flattening composite nodes into temps first."""
        if n.kind == "op" and n.temp is None:
            self.flatten(n)
        if n.temp is not None:
            text = n.temp
        elif n.kind == "const":
            text = vc_literal(n.value)
        elif n.kind in ("param", "env", "entry"):
            text = n.data
        elif n.kind == "mask":
            child = n.children[0]
            if child.sort != ADDR and not (child.kind == "const"):
                raise OpaqueKey(f"address mask over a non-address value: {describe(n)}")
            text = self.render(child, ADDR) if child.kind != "const" else vc_literal(child.value & ADDRESS_MASK)
        else:
            raise OpaqueKey(f"value has no VC rendering: {describe(n)}")
        if n.sort == BOOL and want != BOOL:
            return f"(if {text} then 1 else 0)"
        if n.sort != BOOL and want == BOOL:
            return f"({text} != Zero)"
        return text

    def op_expr(self, n: Svt) -> str:
        op = n.data
        fn, _ = _OP_RENDER[op]
        if op in ("LT", "GT"):
            a, b = (self.render(c) for c in n.children)
            return f"({a} {fn} {b})"
        if op == "EQ":
            a, b = (self.render(c) for c in n.children)
            return f"({a} == {b})"
        if op == "ISZERO":
            (c,) = n.children
            if c.sort == BOOL:
                return "!" + self.render(c, BOOL)
            return f"({self.render(c)} == Zero)"
        if op == "NEZ":
            return f"({self.render(n.children[0])} != Zero)"
        if op == "NOT":
            return f"(TwoE256 - 1 - {self.render(n.children[0])})"
        self.out.functions_used.add(fn)
        args = ",".join(self.render(c) for c in n.children)
        return f"{fn}({args})"

    def flatten(self, n: Svt) -> None:
        if n.temp is not None or n.kind != "op":
            return
        for c in n.children:
            self.flatten(c)
        expr = self.op_expr(n)
        n.temp = self.fresh(n.sort)
        self.out.statements.append(Stmt("temp", n.temp, expr, node=n, value=n.value, sort=n.sort))

    def assume(self, n: Svt) -> None:
        if n.kind == "const":
            if n.value == 0:
                raise StackMismatch("concretely false condition on the traced path")
            self.out.dropped_trivial += 1
            return
        self.flatten(n)
        self.out.statements.append(Stmt("assume", None, self.render(n, BOOL), node=n, value=1, sort=BOOL))

    # -- storage

    def resolve(self, key: Svt, frame: _Frame) -> Location:
        m = frame.manifest
        if m is None:
            raise UnknownStorageSlot(f"contract {frame.address:#x} has no manifest")
        var, indices = self._resolve_key(key, m)
        if len(indices) != var.arity:
            raise OpaqueKey(f"{m.name}.{var.name} accessed with {len(indices)} index(es): {describe(key)}")
        loc = Location(m.name, var, frame.address_node, tuple(indices))
        self.out.globals_used[(m.name, var.name)] = var
        return loc

    def _resolve_key(self, key: Svt, m: ContractManifest) -> tuple[StorageVar, list[Svt]]:
        if key.kind == "const" and key.temp is None:
            var = m.var_at_slot(key.value)
            if var is None:
                raise UnknownStorageSlot(f"{m.name} has no variable at slot {key.value:#x}")
            return var, []
        if key.kind == "sha3" and len(key.bytes_) == 64:
            idx, base = _words_of(key.bytes_)
            var, indices = self._resolve_key(base, m)
            return var, indices + [idx]
        raise OpaqueKey(f"storage key is neither a slot nor a mapping hash: {describe(key)}")

    def loc_text(self, loc: Location) -> str:
        parts = [f"{loc.class_name}.{loc.var.name}[{self.render(loc.contract, ADDR)}]"]
        for idx in loc.indices:
            parts.append(f"[{self.render(idx, ADDR if loc.var.key_types else UINT)}]")
        return "".join(parts)

    # -- replay

    def check(self, n: Svt, expected: int, ev: TraceEvent) -> Svt:
        if n.value != expected:
            raise StackMismatch(f"pc {ev.pc} {ev.op}: symbolic value {n.value:#x} != traced {expected:#x}")
        return n

    def pop(self, frame: _Frame, ev: TraceEvent) -> list[Svt]:
        k = len(ev.popped)
        if len(frame.stack) < k:
            raise StackMismatch(f"pc {ev.pc} {ev.op}: symbolic stack underflow")
        out = [frame.stack.pop() for _ in range(k)]
        for n, v in zip(out, ev.popped):
            self.check(n, v, ev)
        return out

    def mem_read(self, frame: _Frame, off: int, size: int) -> tuple:
        return tuple(frame.memory.get(off + i, (self.zero, 31)) for i in range(size))

    def run(self, trace: list[TraceEvent]) -> StraightLine:
        for i, ev in enumerate(trace):
            if ev.op in ("CALL", "STATICCALL"):
                # calls into accounts without code produce no nested events
                nxt = trace[i + 1] if i + 1 < len(trace) else None
                self._next_depth_is_child = nxt is not None and nxt.depth == ev.depth + 1
            self.step(ev)
        if len(self.frames) != 1:
            raise StackMismatch("trace ended inside a nested call")
        return self.out

    def step(self, ev: TraceEvent) -> None:
        frame = self.frames[-1]
        if ev.depth != frame.depth:
            raise StackMismatch(f"event depth {ev.depth} but replay is at depth {frame.depth}")
        op = ev.op
        st = frame.stack
        if op.startswith("PUSH"):
            st.append(const(ev.pushed[0]))
            return
        if op.startswith("DUP"):
            k = int(op[3:])
            if len(st) < k:
                raise StackMismatch(f"pc {ev.pc} {op}: symbolic stack underflow")
            st.append(self.check(st[-k], ev.pushed[0], ev))
            return
        if op.startswith("SWAP"):
            k = int(op[4:])
            if len(st) <= k:
                raise StackMismatch(f"pc {ev.pc} {op}: symbolic stack underflow")
            st[-1], st[-1 - k] = st[-1 - k], st[-1]
            return
        handler = getattr(self, "ev_" + op, None)
        if handler is None:
            raise UnsupportedOpcode(f"pc {ev.pc}: {op} is not supported by the replay")
        handler(frame, ev)

    def ev_JUMPDEST(self, frame, ev):
        pass

    def ev_POP(self, frame, ev):
        self.pop(frame, ev)

    def ev_JUMP(self, frame, ev):
        self.pop(frame, ev)

    def ev_PC(self, frame, ev):
        frame.stack.append(const(ev.pushed[0]))

    def ev_CALLDATASIZE(self, frame, ev):
        frame.stack.append(const(ev.pushed[0]))

    def ev_CALLER(self, frame, ev):
        frame.stack.append(self.check(frame.caller_node, ev.pushed[0], ev))

    def ev_ORIGIN(self, frame, ev):
        frame.stack.append(self.check(self.origin, ev.pushed[0], ev))

    def _arith(self, frame, ev, op: str):
        args = self.pop(frame, ev)
        result = ev.pushed[0]
        if all(a.kind == "const" for a in args):
            frame.stack.append(const(result))
            return
        if op == "AND":
            a, b = args
            for x, y in ((a, b), (b, a)):
                if y.kind == "const" and y.value == ADDRESS_MASK:
                    inner = x.children[0] if x.kind == "mask" else x
                    frame.stack.append(self.check(Svt("mask", None, (inner,), ADDR, inner.value & ADDRESS_MASK), result, ev))
                    return
        if op == "DIV":
            a, b = args
            if b.kind == "const" and b.value and b.value & (b.value - 1) == 0:
                shift = (b.value.bit_length() - 1) // 8
                if b.value == 1 << (8 * shift):
                    bs = _node_bytes(a)
                    if all(_is_const_byte(x) for x in bs[:32 - shift]):
                        frame.stack.append(const(result))
                        return
            if b.kind != "const":
                self._guard_divisor(b)
        if op == "MOD" and args[1].kind != "const":
            self._guard_divisor(args[1])
        _, sort = _OP_RENDER[op]
        for a in args:
            if a.kind in ("sha3", "compose"):
                raise OpaqueKey(f"{op} over a value with no VC rendering: {describe(a)}")
        frame.stack.append(Svt("op", op, tuple(args), sort, result))

    def _guard_divisor(self, b: Svt) -> None:
        if b.value != 0:
            self.assume(Svt("op", "NEZ", (b,), BOOL, 1))
        else:
            self.assume(Svt("op", "ISZERO", (b,), BOOL, 1))

    def ev_ADD(self, f, ev): self._arith(f, ev, "ADD")
    def ev_SUB(self, f, ev): self._arith(f, ev, "SUB")
    def ev_MUL(self, f, ev): self._arith(f, ev, "MUL")
    def ev_DIV(self, f, ev): self._arith(f, ev, "DIV")
    def ev_MOD(self, f, ev): self._arith(f, ev, "MOD")
    def ev_LT(self, f, ev): self._arith(f, ev, "LT")
    def ev_GT(self, f, ev): self._arith(f, ev, "GT")
    def ev_EQ(self, f, ev): self._arith(f, ev, "EQ")
    def ev_ISZERO(self, f, ev): self._arith(f, ev, "ISZERO")
    def ev_AND(self, f, ev): self._arith(f, ev, "AND")
    def ev_OR(self, f, ev): self._arith(f, ev, "OR")
    def ev_NOT(self, f, ev): self._arith(f, ev, "NOT")

    def ev_CALLDATALOAD(self, frame, ev):
        (off,) = self.pop(frame, ev)
        if off.kind != "const":
            raise MarshallingMismatch(f"pc {ev.pc}: symbolic calldata offset {describe(off)}")
        o = off.value
        bs = tuple(frame.calldata[o + i] if o + i < len(frame.calldata) else (self.zero, 31) for i in range(32))
        frame.stack.append(self.check(_gather(bs), ev.pushed[0], ev))

    def _const_args(self, ev, nodes):
        for n in nodes:
            if n.kind != "const":
                raise UnsupportedOpcode(f"pc {ev.pc}: {ev.op} with symbolic offset/size {describe(n)}")
        return [n.value for n in nodes]

    def ev_MLOAD(self, frame, ev):
        (off,) = self._const_args(ev, self.pop(frame, ev))
        frame.stack.append(self.check(_gather(self.mem_read(frame, off, 32)), ev.pushed[0], ev))

    def ev_MSTORE(self, frame, ev):
        off_n, val = self.pop(frame, ev)
        (off,) = self._const_args(ev, [off_n])
        for i, b in enumerate(_node_bytes(val)):
            frame.memory[off + i] = b

    def ev_SHA3(self, frame, ev):
        off, size = self._const_args(ev, self.pop(frame, ev))
        bs = self.mem_read(frame, off, size)
        if size % 32:
            raise UnsupportedOpcode(f"pc {ev.pc}: SHA3 over {size} bytes")
        data = bytes(_byte_value(b) for b in bs)
        value = keccak_word(data)
        frame.stack.append(self.check(Svt("sha3", None, (), UINT, value, bytes_=bs), ev.pushed[0], ev))

    def ev_SLOAD(self, frame, ev):
        (key,) = self.pop(frame, ev)
        loc = self.resolve(key, frame)
        sort = ADDR if loc.var.value_type == "address" else UINT
        name = self.fresh(sort)
        node = Svt("temp", name, sort=sort, value=ev.pushed[0])
        node.temp = name
        self.out.statements.append(Stmt("load", name, self.loc_text(loc), location=loc, value=ev.pushed[0], sort=sort))
        frame.stack.append(node)

    def ev_SSTORE(self, frame, ev):
        key, val = self.pop(frame, ev)
        loc = self.resolve(key, frame)
        want = ADDR if loc.var.value_type == "address" else UINT
        self.flatten(val)
        expr = self.render(val, want)
        self.out.statements.append(Stmt("store", self.loc_text(loc), expr, node=val, location=loc, value=val.value))

    def ev_JUMPI(self, frame, ev):
        _dest, cond = self.pop(frame, ev)
        if ev.aux["taken"]:
            if cond.kind != "const" and cond.sort != BOOL:
                cond = Svt("op", "NEZ", (cond,), BOOL, 1)
            self.assume(cond)
        else:
            if cond.kind == "const":
                self.assume(const(1))
            else:
                self.assume(Svt("op", "ISZERO", (cond,), BOOL, 1))

    def _enter(self, frame, ev, callee_n, args_off, args_len, ret_off, ret_len):
        callee = ev.aux["callee"]
        if callee_n.value & ADDRESS_MASK != callee:
            raise StackMismatch(f"pc {ev.pc}: callee mismatch")
        if ev.pushed and ev.pushed[0] == 0:
            raise UnsupportedOpcode(f"pc {ev.pc}: failed sub-call on the traced path")
        if callee_n.kind == "const":
            addr_node = const(callee)
        elif callee_n.kind == "mask" or callee_n.sort == ADDR:
            addr_node = callee_n
        else:
            addr_node = Svt("mask", None, (callee_n,), ADDR, callee)
        manifest = self.manifests.get(callee)
        calldata = self.mem_read(frame, args_off, args_len)
        frame.pending_call = (ret_off, ret_len)
        self._note_class(manifest, addr_node, callee)
        return _Frame(callee, addr_node, frame.address_node, manifest, calldata, frame.depth + 1)

    def _call(self, frame, ev, nodes, has_value):
        if has_value:
            gas, callee_n, value, a_off, a_len, r_off, r_len = nodes
            if value.kind != "const" or value.value != 0:
                raise UnsupportedOpcode(f"pc {ev.pc}: value-bearing call")
        else:
            gas, callee_n, a_off, a_len, r_off, r_len = nodes
        a_off, a_len, r_off, r_len = self._const_args(ev, [a_off, a_len, r_off, r_len])
        child = self._enter(frame, ev, callee_n, a_off, a_len, r_off, r_len)
        # an account without code returns immediately; its event carries the result
        if self._next_depth_is_child:
            self.frames.append(child)
        else:
            frame.pending_call = None
            frame.stack.append(const(1))

    def ev_CALL(self, frame, ev):
        self._call(frame, ev, self.pop(frame, ev), True)

    def ev_STATICCALL(self, frame, ev):
        self._call(frame, ev, self.pop(frame, ev), False)

    def _leave(self, frame, data: tuple) -> None:
        self.frames.pop()
        parent = self.frames[-1]
        r_off, r_len = parent.pending_call
        parent.pending_call = None
        for i in range(min(r_len, len(data))):
            parent.memory[r_off + i] = data[i]
        parent.stack.append(const(1))

    def ev_STOP(self, frame, ev):
        if frame.depth > 0:
            self._leave(frame, ())

    def ev_RETURN(self, frame, ev):
        off, size = self._const_args(ev, self.pop(frame, ev))
        if frame.depth > 0:
            self._leave(frame, self.mem_read(frame, off, size))

    def ev_REVERT(self, frame, ev):
        raise UnsupportedOpcode(f"pc {ev.pc}: REVERT on the traced path (only completed traces replay)")

    def ev_TRAP(self, frame, ev):
        raise UnsupportedOpcode(f"pc {ev.pc}: trap {ev.aux.get('reason') if ev.aux else ''} on the traced path")


def replay(trace: list[TraceEvent], manifests: dict[int, ContractManifest], tx: Transaction) -> StraightLine:
    """Replay ``trace`` of ``tx`` into straight-line code."""
    return Replayer(manifests, tx).run(trace)


# --------------------------------------------------------- concrete oracle


@dataclass
class OracleReport:
    checked_assumes: int = 0
    checked_temps: int = 0
    checked_stores: int = 0
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


_CONCRETE_OPS = {
    "ADD": evm_add,
    "SUB": evm_sub,
    "MUL": evm_mul,
    "DIV": evm_div,
    "MOD": evm_mod,
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "LT": lambda a, b: a < b,
    "GT": lambda a, b: a > b,
    "EQ": lambda a, b: a == b,
}


class _Evaluator:
    def __init__(self, pre: WorldState, tx: Transaction, line: StraightLine):
        self.pre = pre
        self.tx = tx
        self.params = {name: arg for (name, _), arg in zip(line.params, tx.args)}
        self.temps: dict[str, object] = {}
        self.storage: dict[tuple[int, int], int] = {}

    def value(self, n: Svt, allow_unassigned_temp: bool = False):
        if n.temp is not None and n.temp in self.temps:
            return self.temps[n.temp]
        if n.temp is not None and n.kind in ("temp",):
            raise OracleMismatch(f"{n.temp} used before assignment")
        k = n.kind
        if k == "const":
            return n.value
        if k == "param":
            return self.params[n.data]
        if k == "env":
            return self.tx.origin
        if k == "entry":
            return self.tx.to
        if k == "mask":
            v = self.value(n.children[0])
            return int(v) & ADDRESS_MASK
        if k == "op":
            if n.temp is not None and not allow_unassigned_temp:
                raise OracleMismatch(f"{n.temp} used before assignment")
            args = [self.value(c) for c in n.children]
            op = n.data
            if op == "ISZERO":
                a = args[0]
                return (not a) if isinstance(a, bool) else a == 0
            if op == "NEZ":
                return int(args[0]) != 0
            if op == "NOT":
                return evm_not(int(args[0]))
            ints = [int(a) for a in args]
            return _CONCRETE_OPS[op](*ints)
        raise OracleMismatch(f"cannot evaluate {describe(n)}")

    def slot(self, loc: Location) -> tuple[int, int]:
        contract = int(self.value(loc.contract)) & ADDRESS_MASK
        manifest = self.pre.manifests.get(contract)
        if manifest is None or manifest.name != loc.class_name:
            raise OracleMismatch(f"{loc.class_name} reference resolves to {contract:#x}")
        idx = [int(self.value(i)) % MOD for i in loc.indices]
        return contract, storage_key(loc.var, *idx)

    def read(self, loc: Location) -> int:
        key = self.slot(loc)
        if key in self.storage:
            return self.storage[key]
        return self.pre.sload(*key)


def check_against_concrete(line: StraightLine, pre: WorldState, tx: Transaction) -> OracleReport:
    """Evaluate the straight-line code over the concrete pre-state.

    Every assume must hold, every temp must equal the value seen on the trace
    and every store must write the traced value.  Values are computed from the
    pre-state and transaction arguments only, never copied from the trace.
    """
    ev = _Evaluator(pre, tx, line)
    report = OracleReport()
    for i, s in enumerate(line.statements):
        try:
            if s.kind == "load":
                v = ev.read(s.location)
                ev.temps[s.target] = v
                report.checked_temps += 1
                if v != s.value:
                    report.mismatches.append(f"#{i} {s.target}: evaluated {v:#x}, traced {s.value:#x}")
            elif s.kind == "temp":
                v = ev.value(s.node, allow_unassigned_temp=True)
                ev.temps[s.target] = v
                report.checked_temps += 1
                if int(v) != s.value:
                    report.mismatches.append(f"#{i} {s.target}: evaluated {int(v):#x}, traced {s.value:#x}")
            elif s.kind == "store":
                v = int(ev.value(s.node)) if s.node.kind != "const" else s.node.value
                key = ev.slot(s.location)
                ev.storage[key] = v
                report.checked_stores += 1
                if v != s.value:
                    report.mismatches.append(f"#{i} store {s.target}: evaluated {v:#x}, traced {s.value:#x}")
            elif s.kind == "assume":
                v = ev.value(s.node)
                report.checked_assumes += 1
                if not v:
                    report.mismatches.append(f"#{i} assume({s.expr}) is false")
        except (OracleMismatch, KeyError) as exc:
            report.mismatches.append(f"#{i}: {exc}")
    return report


def iter_stores(line: StraightLine) -> Iterator[Stmt]:
    return (s for s in line.statements if s.kind == "store")
