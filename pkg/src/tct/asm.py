"""Two-pass assembler and disassembler for the supported EVM opcode subset.

Source format, one instruction per line::

    ; comment
    start:                    ; label definition (may share a line with an instruction)
        PUSH2 ok              ; label reference patched as a big-endian immediate
        JUMPI
    ok: JUMPDEST
        PUSH1 0x02
        SLOAD

Immediates are hex (``0x..``) or decimal numbers, or label names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

OPCODES: dict[str, int] = {
    "STOP": 0x00,
    "ADD": 0x01,
    "MUL": 0x02,
    "SUB": 0x03,
    "DIV": 0x04,
    "MOD": 0x06,
    "LT": 0x10,
    "GT": 0x11,
    "EQ": 0x14,
    "ISZERO": 0x15,
    "AND": 0x16,
    "OR": 0x17,
    "NOT": 0x19,
    "SHA3": 0x20,
    "ORIGIN": 0x32,
    "CALLER": 0x33,
    "CALLDATALOAD": 0x35,
    "CALLDATASIZE": 0x36,
    "POP": 0x50,
    "MLOAD": 0x51,
    "MSTORE": 0x52,
    "SLOAD": 0x54,
    "SSTORE": 0x55,
    "JUMP": 0x56,
    "JUMPI": 0x57,
    "PC": 0x58,
    "JUMPDEST": 0x5B,
    "CALL": 0xF1,
    "CALLCODE": 0xF2,
    "RETURN": 0xF3,
    "DELEGATECALL": 0xF4,
    "STATICCALL": 0xFA,
    "REVERT": 0xFD,
}
for _n in range(1, 33):
    OPCODES[f"PUSH{_n}"] = 0x5F + _n
for _n in range(1, 17):
    OPCODES[f"DUP{_n}"] = 0x7F + _n
    OPCODES[f"SWAP{_n}"] = 0x8F + _n

MNEMONICS: dict[int, str] = {code: name for name, code in OPCODES.items()}


def push_size(opcode: int) -> int:
    """Immediate size in bytes for PUSHn, else 0."""
    return opcode - 0x5F if 0x60 <= opcode <= 0x7F else 0


class AsmError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownMnemonic(AsmError):
    pass


class UnresolvedLabel(AsmError):
    pass


class ImmediateSizeMismatch(AsmError):
    pass


@dataclass
class AsmLine:
    lineno: int
    mnemonic: str
    immediate: str | None = None
    label: str | None = None


@dataclass
class AsmProgram:
    lines: list[AsmLine] = field(default_factory=list)
    labels: dict[str, int] = field(default_factory=dict)


_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*):")
_IDENT_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")


def parse(text: str) -> AsmProgram:
    """Parse source text and lay out code offsets (first pass)."""
    prog = AsmProgram()
    offset = 0
    pending: list[tuple[str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        while line:
            m = _LABEL_RE.match(line)
            if not m:
                break
            pending.append((m.group(1), lineno))
            line = line[m.end():].strip()
        if not line:
            continue
        for name, where in pending:
            if name in prog.labels:
                raise AsmError(f"duplicate label {name!r}", where)
            prog.labels[name] = offset
        label = pending[-1][0] if pending else None
        pending = []
        parts = line.split()
        mnemonic = parts[0].upper()
        if mnemonic not in OPCODES:
            raise UnknownMnemonic(f"unknown mnemonic {parts[0]!r}", lineno)
        size = push_size(OPCODES[mnemonic])
        if size:
            if len(parts) != 2:
                raise ImmediateSizeMismatch(f"{mnemonic} needs exactly one immediate", lineno)
            immediate = parts[1]
        else:
            if len(parts) != 1:
                raise AsmError(f"{mnemonic} takes no immediate", lineno)
            immediate = None
        prog.lines.append(AsmLine(lineno, mnemonic, immediate, label))
        offset += 1 + size
    for name, where in pending:
        if name in prog.labels:
            raise AsmError(f"duplicate label {name!r}", where)
        prog.labels[name] = offset
    return prog


def _immediate_value(line: AsmLine, size: int, labels: dict[str, int], jumpdests: set[int]) -> int:
    imm = line.immediate
    assert imm is not None
    if _IDENT_RE.match(imm) and not imm.lower().startswith("0x"):
        if imm not in labels:
            raise UnresolvedLabel(f"undefined label {imm!r}", line.lineno)
        target = labels[imm]
        if target not in jumpdests:
            raise UnresolvedLabel(f"label {imm!r} does not mark a JUMPDEST", line.lineno)
        value = target
    else:
        try:
            value = int(imm, 0)
        except ValueError:
            raise AsmError(f"bad immediate {imm!r}", line.lineno) from None
        if imm.lower().startswith("0x") and len(imm) - 2 > 2 * size:
            raise ImmediateSizeMismatch(
                f"{line.mnemonic} immediate {imm} is wider than {size} bytes", line.lineno
            )
    if not 0 <= value < (1 << (8 * size)):
        raise ImmediateSizeMismatch(
            f"{line.mnemonic} immediate {imm} does not fit in {size} bytes", line.lineno
        )
    return value


def assemble(text: str) -> bytes:
    prog = parse(text)
    offsets = []
    offset = 0
    for line in prog.lines:
        offsets.append(offset)
        offset += 1 + push_size(OPCODES[line.mnemonic])
    jumpdests = {off for off, line in zip(offsets, prog.lines) if line.mnemonic == "JUMPDEST"}
    out = bytearray()
    for line in prog.lines:
        op = OPCODES[line.mnemonic]
        out.append(op)
        size = push_size(op)
        if size:
            out += _immediate_value(line, size, prog.labels, jumpdests).to_bytes(size, "big")
    return bytes(out)


def disassemble(code: bytes) -> list[tuple[int, str, bytes | None]]:
    """Decode bytecode into ``(offset, mnemonic, immediate)`` triples.

    Unknown bytes decode as ``INVALID_xx``; a PUSH truncated by the end of code
    keeps whatever immediate bytes remain.
    """
    out = []
    pc = 0
    while pc < len(code):
        op = code[pc]
        name = MNEMONICS.get(op, f"INVALID_{op:02x}")
        size = push_size(op)
        imm = code[pc + 1:pc + 1 + size] if size else None
        out.append((pc, name, imm))
        pc += 1 + size
    return out


def disassemble_text(code: bytes) -> str:
    """Render bytecode as re-assemblable text (JUMPDESTs get ``L<offset>`` labels)."""
    lines = []
    for pc, name, imm in disassemble(code):
        if name.startswith("INVALID"):
            raise AsmError(f"cannot render invalid opcode at {pc}: {name}")
        prefix = f"L{pc}: " if name == "JUMPDEST" else "    "
        if imm is not None:
            lines.append(f"{prefix}{name} 0x{imm.hex().rjust(2 * push_size(OPCODES[name]), '0')}")
        else:
            lines.append(f"{prefix}{name}")
    return "\n".join(lines) + ("\n" if lines else "")


def jumpdests(code: bytes) -> frozenset[int]:
    return frozenset(pc for pc, name, _ in disassemble(code) if name == "JUMPDEST")
