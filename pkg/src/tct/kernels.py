"""Keccak-f[1600] permutation and sponge absorb kernels.

Two implementations share one interface:

* a numba ``@njit`` kernel (default), and
* a pure-numpy fallback that vectorises each round over the 5x5 lane grid.

Set ``TCT_DISABLE_NUMBA=1`` to force the numpy path (also used automatically
when numba cannot be imported).  ``benchmarks/bench_keccak.py`` compares both.
"""

from __future__ import annotations

import os
import sys

import numpy as np

ROUND_CONSTANTS = np.array(
    [
        0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
        0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
        0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
        0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
        0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
        0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
    ],
    dtype=np.uint64,
)

# rotation offsets indexed by lane x + 5*y
ROTATIONS = np.array(
    [
        0, 1, 62, 28, 27,
        36, 44, 6, 55, 20,
        3, 10, 43, 25, 39,
        41, 45, 15, 21, 8,
        18, 2, 61, 56, 14,
    ],
    dtype=np.uint64,
)

# pi step: lane (x, y) moves to (y, 2x + 3y)
_PI_DEST = np.array(
    [y + 5 * ((2 * x + 3 * y) % 5) for y in range(5) for x in range(5)], dtype=np.int64
)
# gather form of pi for the numpy path: B[dest] = A[src]
_PI_SRC = np.empty(25, dtype=np.int64)
_PI_SRC[_PI_DEST] = np.arange(25)

RATE_BYTES = 136  # Keccak-256: capacity 512 bits
RATE_LANES = RATE_BYTES // 8

_DISABLED_VALUES = {"1", "true", "yes", "on"}


def _numba_requested() -> bool:
    return os.environ.get("TCT_DISABLE_NUMBA", "").strip().lower() not in _DISABLED_VALUES


# ---------------------------------------------------------------- numpy path


def _rotl_np(v: np.ndarray, s: np.ndarray) -> np.ndarray:
    # (64 - s) & 63 keeps the s == 0 lanes well-defined
    return (v << s) | (v >> ((np.uint64(64) - s) & np.uint64(63)))


def keccak_f1600_numpy(state: np.ndarray) -> None:
    """Permute a 25-lane uint64 state in place (numpy implementation)."""
    a = state.reshape(5, 5)  # rows are y, columns are x
    one = np.uint64(1)
    for rnd in range(24):
        c = np.bitwise_xor.reduce(a, axis=0)
        d = np.roll(c, 1) ^ _rotl_np(np.roll(c, -1), one)
        a ^= d
        b = _rotl_np(state, ROTATIONS)[_PI_SRC].reshape(5, 5)
        a[:, :] = b ^ (~np.roll(b, -1, axis=1) & np.roll(b, -2, axis=1))
        state[0] ^= ROUND_CONSTANTS[rnd]


def absorb_numpy(lanes: np.ndarray) -> np.ndarray:
    """Absorb pre-padded input lanes (multiple of the rate) and return the state."""
    state = np.zeros(25, dtype=np.uint64)
    for off in range(0, lanes.shape[0], RATE_LANES):
        state[:RATE_LANES] ^= lanes[off:off + RATE_LANES]
        keccak_f1600_numpy(state)
    return state


# ---------------------------------------------------------------- numba path

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True)
    def _keccak_f1600_jit(a, rc, rot, pi_dest):
        c = np.empty(5, dtype=np.uint64)
        b = np.empty(25, dtype=np.uint64)
        one = np.uint64(1)
        sixty_three = np.uint64(63)
        sixty_four = np.uint64(64)
        for rnd in range(24):
            for x in range(5):
                c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20]
            for x in range(5):
                v = c[(x + 1) % 5]
                d = c[(x + 4) % 5] ^ ((v << one) | (v >> sixty_three))
                for y in range(0, 25, 5):
                    a[x + y] ^= d
            for i in range(25):
                s = rot[i]
                v = a[i]
                b[pi_dest[i]] = (v << s) | (v >> ((sixty_four - s) & sixty_three))
            for y in range(0, 25, 5):
                for x in range(5):
                    a[x + y] = b[x + y] ^ (~b[(x + 1) % 5 + y] & b[(x + 2) % 5 + y])
            a[0] ^= rc[rnd]

    @njit(cache=True)
    def _absorb_jit(lanes, rc, rot, pi_dest):
        state = np.zeros(25, dtype=np.uint64)
        for off in range(0, lanes.shape[0], 17):
            for i in range(17):
                state[i] ^= lanes[off + i]
            _keccak_f1600_jit(state, rc, rot, pi_dest)
        return state

    @njit(cache=True)
    def _sponge_jit(data, rc, rot, pi_dest):
        # pad, absorb and squeeze in one call; lanes are read little-endian
        n = data.shape[0]
        buf = np.zeros((n // 136 + 1) * 136, dtype=np.uint8)
        buf[:n] = data
        buf[n] ^= np.uint8(0x01)
        buf[buf.shape[0] - 1] ^= np.uint8(0x80)
        state = _absorb_jit(buf.view(np.uint64), rc, rot, pi_dest)
        return state[:4].copy().view(np.uint8)

    def keccak_f1600_numba(state: np.ndarray) -> None:
        """Permute a 25-lane uint64 state in place (numba kernel)."""
        _keccak_f1600_jit(state, ROUND_CONSTANTS, ROTATIONS, _PI_DEST)

    def absorb_numba(lanes: np.ndarray) -> np.ndarray:
        return _absorb_jit(lanes, ROUND_CONSTANTS, ROTATIONS, _PI_DEST)


USING_NUMBA = HAVE_NUMBA and _numba_requested()

# the fused kernel reinterprets bytes as native uint64 lanes
_FUSED = USING_NUMBA and sys.byteorder == "little"

if USING_NUMBA:
    keccak_f1600 = keccak_f1600_numba
    absorb = absorb_numba
else:
    keccak_f1600 = keccak_f1600_numpy
    absorb = absorb_numpy


def pad_keccak(data: bytes) -> np.ndarray:
    """Apply original Keccak multi-rate padding (0x01 ... 0x80) and return lanes."""
    n = len(data)
    padded_len = (n // RATE_BYTES + 1) * RATE_BYTES
    buf = bytearray(padded_len)
    buf[:n] = data
    buf[n] ^= 0x01
    buf[-1] ^= 0x80
    return np.frombuffer(bytes(buf), dtype="<u8").astype(np.uint64)


def sponge256(data: bytes, absorb_fn=None) -> bytes:
    """Keccak-256 digest of ``data`` using the selected (or given) absorb kernel."""
    if absorb_fn is None and _FUSED:
        return _sponge_jit(np.frombuffer(data, dtype=np.uint8), ROUND_CONSTANTS, ROTATIONS, _PI_DEST).tobytes()
    state = (absorb_fn or absorb)(pad_keccak(data))
    return state[:4].astype("<u8").tobytes()
