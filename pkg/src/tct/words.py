"""256-bit EVM words, addresses and Keccak-256.

Words are plain Python ints in ``[0, 2**256)``; addresses are ints in
``[0, 2**160)``.  VM-level comparisons return the words 0/1 (``lt``, ``eq``, ...),
API-level helpers return bools (``is_true``).
"""

from __future__ import annotations

from functools import lru_cache

from . import kernels

WORD_BITS = 256
MOD = 1 << WORD_BITS
MAX_WORD = MOD - 1
ADDRESS_MASK = (1 << 160) - 1


class WordError(ValueError):
    pass


def check_word(value: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < MOD:
        raise WordError(f"not a 256-bit word: {value!r}")
    return value


def check_address(value: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= ADDRESS_MASK:
        raise WordError(f"not a 20-byte address: {value!r}")
    return value


def evm_add(a: int, b: int) -> int:
    return (a + b) % MOD


def evm_sub(a: int, b: int) -> int:
    return (a - b) % MOD


def evm_mul(a: int, b: int) -> int:
    return (a * b) % MOD


def evm_div(a: int, b: int) -> int:
    return 0 if b == 0 else a // b


def evm_mod(a: int, b: int) -> int:
    return 0 if b == 0 else a % b


def lt(a: int, b: int) -> int:
    return 1 if a < b else 0


def gt(a: int, b: int) -> int:
    return 1 if a > b else 0


def eq(a: int, b: int) -> int:
    return 1 if a == b else 0


def iszero(a: int) -> int:
    return 1 if a == 0 else 0


def evm_not(a: int) -> int:
    return MAX_WORD ^ a


def is_true(word: int) -> bool:
    return word != 0


def from_bool(flag: bool) -> int:
    return 1 if flag else 0


def pad32(value: int) -> bytes:
    """Big-endian, left-zero-padded 32-byte encoding of a word or address."""
    return check_word(value).to_bytes(32, "big")


def parse_word(data: bytes) -> int:
    if len(data) != 32:
        raise WordError(f"expected 32 bytes, got {len(data)}")
    return int.from_bytes(data, "big")


def address_bytes(addr: int) -> bytes:
    return check_address(addr).to_bytes(20, "big")


def to_address(word: int) -> int:
    """Low 20 bytes of a word (what AND with twenty 0xff bytes yields)."""
    return word & ADDRESS_MASK


def keccak256(data: bytes) -> bytes:
    """Ethereum Keccak-256 (original 0x01 padding, not FIPS-202 SHA3)."""
    return kernels.sponge256(bytes(data))


def keccak_word(data: bytes) -> int:
    return int.from_bytes(keccak256(data), "big")


@lru_cache(maxsize=4096)
def function_selector(signature: str) -> bytes:
    """First four bytes of keccak256 of a canonical signature like ``f(address,uint256)``."""
    return keccak256(signature.encode("ascii"))[:4]


def hex_to_int(text: str | int) -> int:
    if isinstance(text, int):
        return text
    text = text.strip()
    return int(text, 16) if text.lower().startswith("0x") else int(text)


def fmt_address(addr: int) -> str:
    return "0x" + check_address(addr).to_bytes(20, "big").hex()


def fmt_word(value: int) -> str:
    return hex(value)
