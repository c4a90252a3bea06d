"""
Count-distinct counters for the Space-Saving Set sketches.

Two interchangeable counters implement the same contract (insert, distinct,
merge): a HyperLogLog used in production and an exact set-based counter used
as a zero-error reference. Both are monotone: the reported cardinality never
decreases across inserts and merges. The hashing layer shared by the whole
package lives here too.
"""
import logging
import math
import struct
from dataclasses import dataclass
from typing import Protocol, Tuple, Union

import numpy as np
import xxhash

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0
HASH_BITS = 64
MIN_REGISTERS = 16
MAX_REGISTERS = 65536
DEFAULT_REGISTERS = 1024

# Payload header: log2(r) (0 marks an exact counter), seed, then either the
# watermark (HLL) or the item count (exact).
_HLL_HEADER = struct.Struct('<HQd')
_EXACT_HEADER = struct.Struct('<HQI')
_LAST_BELOW_ONE = math.nextafter(1.0, 0.0)

HashValue = int


class ConfigurationError(ValueError):
    """Raised when counters or sketches with different configurations meet."""


class PayloadError(ValueError):
    """Raised when an embedded counter payload cannot be decoded."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def hash64(data: bytes, seed: int = DEFAULT_SEED) -> HashValue:
    """
    Deterministic 64-bit digest of a byte string.

    Args:
        data: bytes to hash
        seed: 64-bit seed selecting the member of the hash family

    Returns:
        int: unsigned 64-bit hash
    """
    return xxhash.xxh64_intdigest(data, seed=seed)


def derive_seed(base_seed: int, tag: str) -> int:
    """Derive an independent 64-bit seed for one hash family from a base seed."""
    return hash64(tag.encode('utf-8'), base_seed)


def unit_interval(bits: HashValue) -> float:
    """
    Map a 64-bit hash to the open unit interval as (bits + 0.5) / 2^64.

    The top of the range rounds to 1.0 in double precision, so it is pinned to
    the largest double below 1 to keep 1 / unit_interval(h) finite and > 1.
    """
    value = (2 * bits + 1) / (1 << (HASH_BITS + 1))
    return value if value < 1.0 else _LAST_BELOW_ONE


def _alpha(registers):
    if registers == 16:
        return 0.673
    if registers == 32:
        return 0.697
    if registers == 64:
        return 0.709
    return 0.7213 / (1.0 + 1.079 / registers)


def _bit_length(values):
    """Vectorized int.bit_length for a uint64 array."""
    x = values.copy()
    out = np.zeros(x.shape, dtype=np.int64)
    for shift in (32, 16, 8, 4, 2, 1):
        big = x >= np.uint64(1 << shift)
        out[big] += shift
        x[big] >>= np.uint64(shift)
    out += (x > 0)
    return out


def _pack_registers(registers):
    """Pack one-byte registers into 6-bit fields, little-endian bit order."""
    regs = np.frombuffer(bytes(registers), dtype=np.uint8)
    bits = np.unpackbits(regs[:, None], axis=1, bitorder='little')[:, :6]
    return np.packbits(bits.ravel(), bitorder='little').tobytes()


def _unpack_registers(data, count):
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder='little')
    bits = bits[:count * 6].reshape(count, 6)
    values = (bits << np.arange(6, dtype=np.uint8)).sum(axis=1)
    return bytearray(values.astype(np.uint8).tobytes())


def _check_registers(registers):
    if registers < MIN_REGISTERS or registers > MAX_REGISTERS or registers & (registers - 1):
        raise ConfigurationError(
            f"Register count must be a power of two in [{MIN_REGISTERS}, {MAX_REGISTERS}], got {registers}")


class DistinctCounter(Protocol):
    """Monotone, mergeable count-distinct counter."""

    seed: int

    def insert(self, item_hash: HashValue) -> bool: ...

    def distinct(self) -> float: ...

    def merge(self, other: 'DistinctCounter') -> None: ...

    def copy(self) -> 'DistinctCounter': ...

    def to_bytes(self) -> bytes: ...


class HllSketch:
    """
    HyperLogLog with linear-counting small-range correction and a watermark.

    Registers are stored one byte each. The harmonic sum is kept as an exact
    integer, sum(2^(64 - register)), so every estimate is a pure function of
    the register state. The watermark is refreshed whenever the registers
    change, which makes distinct() monotone and independent of when it is
    called.
    """

    def __init__(self, registers: int = DEFAULT_REGISTERS, seed: int = DEFAULT_SEED):
        _check_registers(registers)
        self.register_count = registers
        self.seed = seed
        self.registers = bytearray(registers)
        self.watermark = 0.0
        self._p = registers.bit_length() - 1
        self._mask = registers - 1
        self._width = HASH_BITS - self._p
        self._scale = _alpha(registers) * registers * registers * float(1 << HASH_BITS)
        self._zeros = registers
        self._inverse_sum = registers << HASH_BITS
        self._estimate = 0.0

    def __repr__(self):
        return f'<HllSketch r={self.register_count} estimate={self._estimate:.1f}>'

    @property
    def log2_registers(self):
        return self._p

    def standard_error(self):
        """Relative standard error 1.04 / sqrt(r)."""
        return 1.04 / math.sqrt(self.register_count)

    def insert(self, item_hash: HashValue) -> bool:
        """
        Add one item hash.

        The low log2(r) bits pick the register; the rank is the number of
        leading zeros of the remaining bits plus one.

        Returns:
            bool: True if a register changed
        """
        index = item_hash & self._mask
        rank = self._width - (item_hash >> self._p).bit_length() + 1
        old = self.registers[index]
        if rank <= old:
            return False
        self.registers[index] = rank
        self._inverse_sum += (1 << (HASH_BITS - rank)) - (1 << (HASH_BITS - old))
        if old == 0:
            self._zeros -= 1
        self._update_estimate()
        return True

    def insert_many(self, item_hashes) -> bool:
        """
        Add a batch of item hashes; the final registers equal one-by-one insertion.

        Args:
            item_hashes: array-like of unsigned 64-bit hashes

        Returns:
            bool: True if any register changed
        """
        hashes = np.asarray(item_hashes, dtype=np.uint64)
        if hashes.size == 0:
            return False
        index = (hashes & np.uint64(self._mask)).astype(np.intp)
        ranks = (self._width + 1 - _bit_length(hashes >> np.uint64(self._p))).astype(np.uint8)
        regs = np.frombuffer(self.registers, dtype=np.uint8)
        before = regs.copy()
        np.maximum.at(regs, index, ranks)
        if np.array_equal(before, regs):
            return False
        self._refresh()
        return True

    def raw_estimate(self) -> float:
        """Harmonic-mean estimate with linear counting below 2.5r, no watermark."""
        r = self.register_count
        estimate = self._scale / self._inverse_sum
        if estimate <= 2.5 * r and self._zeros > 0:
            estimate = r * math.log(r / self._zeros)
        return estimate

    def distinct(self) -> float:
        """Current cardinality estimate, never below any earlier estimate."""
        return self._estimate

    def merge(self, other: 'HllSketch') -> None:
        """
        Fold another sketch in: pointwise register max, max of watermarks.

        Raises:
            ConfigurationError: on register-count, seed or counter-kind mismatch
        """
        if not isinstance(other, HllSketch):
            raise ConfigurationError(f"Cannot merge {type(other).__name__} into HllSketch")
        if other.register_count != self.register_count or other.seed != self.seed:
            raise ConfigurationError(
                f"HLL mismatch: r={self.register_count}/seed={self.seed} vs "
                f"r={other.register_count}/seed={other.seed}")
        regs = np.frombuffer(self.registers, dtype=np.uint8)
        np.maximum(regs, np.frombuffer(other.registers, dtype=np.uint8), out=regs)
        self.watermark = max(self.watermark, other.watermark)
        self._refresh()

    def copy(self) -> 'HllSketch':
        clone = HllSketch(self.register_count, self.seed)
        clone.registers[:] = self.registers
        clone.watermark = self.watermark
        clone._zeros = self._zeros
        clone._inverse_sum = self._inverse_sum
        clone._estimate = self._estimate
        return clone

    def to_bytes(self) -> bytes:
        """[u16 log2(r)][u64 seed][f64 watermark][packed 6-bit registers]"""
        return _HLL_HEADER.pack(self._p, self.seed, self.watermark) + _pack_registers(self.registers)

    def _refresh(self):
        counts = np.bincount(np.frombuffer(self.registers, dtype=np.uint8)).tolist()
        self._zeros = counts[0]
        self._inverse_sum = sum(c << (HASH_BITS - v) for v, c in enumerate(counts) if c)
        self._update_estimate()

    def _update_estimate(self):
        estimate = max(self.raw_estimate(), self.watermark)
        self.watermark = estimate
        self._estimate = estimate


class ExactCounter:
    """Set of item hashes; the zero-error reference counter."""

    def __init__(self, seed: int = DEFAULT_SEED):
        self.seed = seed
        self.items = set()

    def __repr__(self):
        return f'<ExactCounter distinct={len(self.items)}>'

    def insert(self, item_hash: HashValue) -> bool:
        before = len(self.items)
        self.items.add(item_hash)
        return len(self.items) != before

    def distinct(self) -> float:
        return float(len(self.items))

    def merge(self, other: 'ExactCounter') -> None:
        if not isinstance(other, ExactCounter):
            raise ConfigurationError(f"Cannot merge {type(other).__name__} into ExactCounter")
        if other.seed != self.seed:
            raise ConfigurationError(f"Exact counter seed mismatch: {self.seed} vs {other.seed}")
        self.items |= other.items

    def copy(self) -> 'ExactCounter':
        clone = ExactCounter(self.seed)
        clone.items = set(self.items)
        return clone

    def to_bytes(self) -> bytes:
        """[u16 0][u64 seed][u32 n][n x u64 hashes, ascending]"""
        hashes = np.array(sorted(self.items), dtype='<u8')
        return _EXACT_HEADER.pack(0, self.seed, len(self.items)) + hashes.tobytes()


Counter = Union[HllSketch, ExactCounter]


@dataclass(frozen=True)
class CounterSpec:
    """Configuration shared by every counter of one sketch (the NewSketch factory)."""
    kind: str = 'hll'
    registers: int = DEFAULT_REGISTERS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in ('hll', 'exact'):
            raise ConfigurationError(f"Unknown counter kind {self.kind!r}")
        if self.kind == 'hll':
            _check_registers(self.registers)
        elif self.registers:
            # exact counters carry no registers (log2(r) = 0 on disk)
            object.__setattr__(self, 'registers', 0)

    @property
    def log2_registers(self):
        """log2(r) for HLL counters, 0 for exact counters."""
        return self.registers.bit_length() - 1 if self.kind == 'hll' else 0

    def new_counter(self) -> Counter:
        if self.kind == 'hll':
            return HllSketch(self.registers, self.seed)
        return ExactCounter(self.seed)


def counter_from_bytes(buf, offset: int = 0) -> Tuple[Counter, int]:
    """
    Decode one counter payload.

    Args:
        buf: bytes-like holding the payload
        offset: position of the payload in buf

    Returns:
        tuple: (counter, offset just past the payload)

    Raises:
        PayloadError: on truncation or out-of-range fields
    """
    view = memoryview(buf)
    if len(view) - offset < 2:
        raise PayloadError("Truncated counter payload", offset)
    (log2_r,) = struct.unpack_from('<H', view, offset)
    if log2_r == 0:
        if len(view) - offset < _EXACT_HEADER.size:
            raise PayloadError("Truncated exact counter header", offset)
        _, seed, count = _EXACT_HEADER.unpack_from(view, offset)
        start = offset + _EXACT_HEADER.size
        end = start + 8 * count
        if end > len(view):
            raise PayloadError(f"Truncated exact counter: need {count} hashes", start)
        counter = ExactCounter(seed)
        counter.items = set(np.frombuffer(view[start:end], dtype='<u8').tolist())
        return counter, end

    registers = 1 << log2_r
    if registers < MIN_REGISTERS or registers > MAX_REGISTERS:
        raise PayloadError(f"Unsupported register count 2^{log2_r}", offset)
    if len(view) - offset < _HLL_HEADER.size:
        raise PayloadError("Truncated HLL header", offset)
    _, seed, watermark = _HLL_HEADER.unpack_from(view, offset)
    start = offset + _HLL_HEADER.size
    end = start + registers * 6 // 8
    if end > len(view):
        raise PayloadError("Truncated HLL registers", start)
    sketch = HllSketch(registers, seed)
    regs = _unpack_registers(view[start:end], registers)
    if max(regs) > sketch._width + 1:
        raise PayloadError("Register value out of range", start)
    if not watermark >= 0.0:
        raise PayloadError(f"Invalid watermark {watermark}", offset + 10)
    sketch.registers = regs
    sketch.watermark = watermark
    sketch._refresh()
    return sketch, end
