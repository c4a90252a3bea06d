"""
Space-Saving Set sketches for the heavy distinct hitters problem.

A sketch keeps at most `s` labels, each with its own count-distinct counter.
Three insert policies share one data layout:

    SSS   new labels take a fresh counter plus an offset equal to the evicted
          minimum counter's value
    RSSS  new labels take over (recycle) the minimum counter's state
    SSSS  like RSSS, but a new label is admitted only when its item's sample
          value 1/h(x) beats the minimum; a cached lower bound theta of that
          minimum short-circuits most rejections without a scan

Ties are always broken by ascending label bytes, which keeps eviction, top-k
and merge deterministic.
"""
import enum
import heapq
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from cardinality import (
    ConfigurationError,
    Counter,
    CounterSpec,
    PayloadError,
    counter_from_bytes,
    derive_seed,
    hash64,
    unit_interval,
)

logger = logging.getLogger(__name__)

MAGIC = b'SSSS'
FORMAT_VERSION = 1
MAX_LABEL_BYTES = 0xFFFF
INITIAL_SLOTS = 64

# magic, version, variant, s, log2(r), sample seed, register seed, theta, entry count
_HEADER = struct.Struct('<4sBBIHQQdI')
_LABEL_LEN = struct.Struct('<H')
_OFFSET = struct.Struct('<d')

TopList = List[Tuple[bytes, float]]


class SketchFormatError(ValueError):
    """Raised when a serialized sketch cannot be parsed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class Variant(enum.IntEnum):
    SSS = 0
    RSSS = 1
    SSSS = 2

    @classmethod
    def parse(cls, name):
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigurationError(f"Unknown sketch variant {name!r}")


@dataclass(frozen=True)
class SketchConfig:
    """Variant, capacity and hashing configuration; merges require equality."""
    variant: Variant = Variant.SSSS
    size: int = 2000
    counter: CounterSpec = field(default_factory=CounterSpec)
    sample_seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ConfigurationError(f"Sketch size must be positive, got {self.size}")

    @classmethod
    def create(cls, variant='ssss', size=2000, registers=1024, counter='hll', seed=0):
        """
        Build a configuration whose two hash families derive from one seed.

        Args:
            variant: 'sss', 'rsss' or 'ssss' (or a Variant)
            size: capacity s
            registers: HLL register count r (ignored for exact counters)
            counter: 'hll' or 'exact'
            seed: base seed; sampling and register seeds are derived from it

        Returns:
            SketchConfig
        """
        if not isinstance(variant, Variant):
            variant = Variant.parse(variant)
        spec = CounterSpec(counter, registers, derive_seed(seed, 'register'))
        return cls(variant, size, spec, derive_seed(seed, 'sample'))


@dataclass
class SketchStats:
    """Insert-path counters, exposed for benchmarks and property tests."""
    inserts: int = 0
    full_misses: int = 0       # non-resident arrivals at a full sketch
    gate_rejections: int = 0   # rejected by the theta fast path, no scan
    scan_rejections: int = 0   # rejected after a minimum scan
    min_scans: int = 0
    evictions: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass
class CounterEntry:
    """A label's counter and offset; value() never decreases while resident."""
    label: bytes
    counter: Counter
    offset: float = 0.0
    slot: int = -1

    def value(self) -> float:
        return self.counter.distinct() + self.offset


def _as_bytes(value):
    return value.encode('utf-8') if isinstance(value, str) else value


class SpaceSavingSetSketch:
    """
    Bounded map of label -> counter answering distinct-count queries.

    Per-slot values are mirrored in a numpy array so the minimum scan is a
    vectorized pass. The mirror is refreshed whenever a counter changes and
    grows with the resident entries rather than with s.
    """

    def __init__(self, config: Optional[SketchConfig] = None, cache_theta: bool = True):
        self.config = config or SketchConfig()
        self.capacity = self.config.size
        self.variant = self.config.variant
        self.theta = 0.0
        self.stats = SketchStats()
        self.entries: Dict[bytes, CounterEntry] = {}
        self._cache_theta = cache_theta
        self._spec = self.config.counter
        self._register_seed = self._spec.seed
        self._slots: List[bytes] = []
        self._values = np.zeros(min(self.capacity, INITIAL_SLOTS), dtype=np.float64)
        self._insert = {
            Variant.SSS: self._insert_with_offset,
            Variant.RSSS: self._insert_recycling,
            Variant.SSSS: self._insert_sampling,
        }[self.variant]

    def __len__(self):
        return len(self.entries)

    def __contains__(self, label):
        return _as_bytes(label) in self.entries

    def __repr__(self):
        return f'<SpaceSavingSetSketch {self.variant.name} s={self.capacity} entries={len(self.entries)}>'

    def labels(self):
        return list(self.entries)

    def is_full(self):
        return len(self.entries) >= self.capacity

    # ---------- insertion ----------

    def insert(self, label, item) -> None:
        """Add one (label, item) stream entry."""
        self.stats.inserts += 1
        self._insert(_as_bytes(label), _as_bytes(item))

    def update(self, entries: Iterable) -> int:
        """
        Insert every (label, item) pair of an iterable.

        Returns:
            int: number of entries consumed
        """
        count = 0
        insert = self.insert
        for label, item in entries:
            insert(label, item)
            count += 1
        return count

    def _insert_with_offset(self, label, item):
        entry = self.entries.get(label)
        if entry is None:
            if len(self.entries) < self.capacity:
                entry = self._admit(label, self._spec.new_counter())
            else:
                self.stats.full_misses += 1
                victim = self._find_min()
                entry = self._replace(victim, label, self._spec.new_counter(), victim.value())
        self._add_item(entry, item)

    def _insert_recycling(self, label, item):
        entry = self.entries.get(label)
        if entry is None:
            if len(self.entries) < self.capacity:
                entry = self._admit(label, self._spec.new_counter())
            else:
                self.stats.full_misses += 1
                victim = self._find_min()
                entry = self._replace(victim, label, victim.counter)
        self._add_item(entry, item)

    def _insert_sampling(self, label, item):
        entry = self.entries.get(label)
        if entry is None:
            if len(self.entries) < self.capacity:
                entry = self._admit(label, self._spec.new_counter())
            else:
                self.stats.full_misses += 1
                sample = 1.0 / unit_interval(hash64(item, self.config.sample_seed))
                if self._cache_theta and sample <= self.theta:
                    self.stats.gate_rejections += 1
                    return
                victim = self._find_min()
                smallest = victim.counter.distinct()
                if self._cache_theta:
                    self.theta = smallest
                if sample <= smallest:
                    self.stats.scan_rejections += 1
                    return
                entry = self._replace(victim, label, victim.counter)
        self._add_item(entry, item)

    def _add_item(self, entry, item):
        if entry.counter.insert(hash64(item, self._register_seed)):
            self._values[entry.slot] = entry.counter.distinct() + entry.offset

    def _admit(self, label, counter, offset=0.0):
        if len(label) > MAX_LABEL_BYTES:
            raise ValueError(f"Label of {len(label)} bytes exceeds {MAX_LABEL_BYTES}")
        entry = CounterEntry(label, counter, offset, len(self._slots))
        if entry.slot == len(self._values):
            self._grow()
        self._slots.append(label)
        self.entries[label] = entry
        self._values[entry.slot] = entry.value()
        return entry

    def _grow(self):
        # doubles, never past capacity
        grown = np.zeros(min(self.capacity, 2 * len(self._values)), dtype=np.float64)
        grown[:len(self._values)] = self._values
        self._values = grown

    def _replace(self, victim, label, counter, offset=0.0):
        if len(label) > MAX_LABEL_BYTES:
            raise ValueError(f"Label of {len(label)} bytes exceeds {MAX_LABEL_BYTES}")
        del self.entries[victim.label]
        self.stats.evictions += 1
        entry = CounterEntry(label, counter, offset, victim.slot)
        self._slots[entry.slot] = label
        self.entries[label] = entry
        self._values[entry.slot] = entry.value()
        return entry

    def _find_min(self):
        """Entry with the smallest value; ties go to the smallest label."""
        self.stats.min_scans += 1
        values = self._values[:len(self._slots)]
        candidates = np.flatnonzero(values == values.min())
        if len(candidates) == 1:
            slot = int(candidates[0])
        else:
            slot = min(candidates.tolist(), key=self._slots.__getitem__)
        return self.entries[self._slots[slot]]

    # ---------- queries ----------

    def query(self, label) -> float:
        """
        Estimated number of distinct items paired with a label.

        Resident labels answer with counter + offset; absent labels answer with
        the current minimum value; an empty sketch answers 0.
        """
        entry = self.entries.get(_as_bytes(label))
        if entry is not None:
            return entry.value()
        return self.min_value()

    def min_value(self) -> float:
        """alpha: the smallest value() over resident entries (0 when empty)."""
        if not self._slots:
            return 0.0
        return float(self._values[:len(self._slots)].min())

    def top(self, k: int) -> TopList:
        """
        The k resident labels with the largest estimates.

        Returns:
            list: (label, estimate) pairs, estimate descending, label ascending on ties
        """
        if k <= 0 or not self._slots:
            return []
        pairs = zip(self._slots, self._values[:len(self._slots)].tolist())
        return heapq.nsmallest(k, pairs, key=lambda pair: (-pair[1], pair[0]))

    # ---------- merge ----------

    def check_compatible(self, other: 'SpaceSavingSetSketch'):
        """
        Raises:
            ConfigurationError: when variant, s, counter configuration or seeds differ
        """
        if self.config != other.config:
            raise ConfigurationError(f"Incompatible sketches: {self.config} vs {other.config}")

    def merge(self, other: 'SpaceSavingSetSketch') -> None:
        """
        Fold another sketch into this one and keep the top s.

        Shared labels merge counters and keep the larger offset; labels only in
        `other` are copied in. Entries are then ranked by (value desc, label asc)
        and truncated to s. `other` is not modified.
        """
        self.check_compatible(other)
        for label, theirs in other.entries.items():
            mine = self.entries.get(label)
            if mine is None:
                self.entries[label] = CounterEntry(label, theirs.counter.copy(), theirs.offset)
            else:
                mine.counter.merge(theirs.counter)
                mine.offset = max(mine.offset, theirs.offset)
        ranked = sorted(self.entries.values(), key=lambda e: (-e.value(), e.label))
        dropped = len(ranked) - self.capacity
        self._rebuild(ranked[:self.capacity])
        if self.variant == Variant.SSSS:
            self.recompute_theta()
        logger.debug(f"Merged {len(other.entries)} entries; kept {len(self.entries)}, dropped {max(dropped, 0)}")

    def recompute_theta(self):
        """Reset theta to the exact minimum counter estimate."""
        if self.entries:
            self.theta = min(e.counter.distinct() for e in self.entries.values())
        else:
            self.theta = 0.0

    def _rebuild(self, entries):
        self.entries = {}
        self._slots = []
        self._values = np.zeros(min(self.capacity, max(len(entries), INITIAL_SLOTS)), dtype=np.float64)
        for entry in entries:
            self._admit(entry.label, entry.counter, entry.offset)

    def copy(self) -> 'SpaceSavingSetSketch':
        clone = SpaceSavingSetSketch(self.config, cache_theta=self._cache_theta)
        for label in self._slots:
            entry = self.entries[label]
            clone._admit(label, entry.counter.copy(), entry.offset)
        clone.theta = self.theta
        clone.stats = SketchStats(**self.stats.as_dict())
        return clone

    # ---------- serialization ----------

    def to_bytes(self) -> bytes:
        """
        Serialize to the little-endian sketch file format.

        Entries are written in ascending label order, so equal sketches give
        equal bytes.
        """
        spec = self._spec
        parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, int(self.variant), self.capacity,
                              spec.log2_registers, self.config.sample_seed, spec.seed,
                              self.theta, len(self.entries))]
        position = _HEADER.size
        for label in sorted(self.entries):
            entry = self.entries[label]
            if len(label) > MAX_LABEL_BYTES:
                raise SketchFormatError(f"Label of {len(label)} bytes exceeds {MAX_LABEL_BYTES}", position)
            payload = entry.counter.to_bytes()
            parts.extend((_LABEL_LEN.pack(len(label)), label, _OFFSET.pack(entry.offset), payload))
            position += _LABEL_LEN.size + len(label) + _OFFSET.size + len(payload)
        return b''.join(parts)

    @classmethod
    def from_bytes(cls, data) -> 'SpaceSavingSetSketch':
        """
        Parse a serialized sketch.

        Raises:
            SketchFormatError: on bad magic, unsupported version, truncation or
                inconsistent fields; no partial sketch is returned
        """
        view = memoryview(data)
        if len(view) < len(MAGIC) or bytes(view[:len(MAGIC)]) != MAGIC:
            raise SketchFormatError("Bad magic", 0)
        if len(view) < _HEADER.size:
            raise SketchFormatError(f"Truncated header: {len(view)} of {_HEADER.size} bytes", len(view))
        (_, version, variant, size, log2_r, sample_seed, register_seed,
         theta, count) = _HEADER.unpack_from(view, 0)
        if version != FORMAT_VERSION:
            raise SketchFormatError(f"Unsupported version {version}", 4)
        if variant not in Variant._value2member_map_:
            raise SketchFormatError(f"Unknown variant {variant}", 5)
        if size == 0:
            raise SketchFormatError("Sketch size is zero", 6)
        if log2_r != 0 and not 4 <= log2_r <= 16:
            raise SketchFormatError(f"Unsupported register count 2^{log2_r}", 10)
        if not theta >= 0.0:
            raise SketchFormatError(f"Invalid theta {theta}", 28)
        if count > size:
            raise SketchFormatError(f"Entry count {count} exceeds size {size}", 36)

        spec = CounterSpec('exact', 0, register_seed) if log2_r == 0 else CounterSpec('hll', 1 << log2_r, register_seed)
        sketch = cls(SketchConfig(Variant(variant), size, spec, sample_seed))
        sketch.theta = theta
        position = _HEADER.size
        for _ in range(count):
            if len(view) - position < _LABEL_LEN.size:
                raise SketchFormatError("Truncated label length", position)
            (length,) = _LABEL_LEN.unpack_from(view, position)
            position += _LABEL_LEN.size
            if len(view) - position < length + _OFFSET.size:
                raise SketchFormatError(f"Truncated entry: label of {length} bytes", position)
            label = bytes(view[position:position + length])
            position += length
            (offset,) = _OFFSET.unpack_from(view, position)
            if not offset >= 0.0:
                raise SketchFormatError(f"Invalid offset {offset}", position)
            position += _OFFSET.size
            start = position
            try:
                counter, position = counter_from_bytes(view, position)
            except PayloadError as e:
                raise SketchFormatError(str(e), e.offset) from e
            if not _counter_matches(counter, spec):
                raise SketchFormatError("Counter payload does not match the sketch header", start)
            if label in sketch.entries:
                raise SketchFormatError(f"Duplicate label {label!r}", start)
            sketch._admit(label, counter, offset)
        if position != len(view):
            raise SketchFormatError(f"{len(view) - position} trailing bytes", position)
        return sketch

    def memory_bytes(self) -> int:
        """Serialized size; the figure used to align memory budgets."""
        return len(self.to_bytes())

    def save(self, path):
        with open(path, 'wb') as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> 'SpaceSavingSetSketch':
        with open(path, 'rb') as f:
            return cls.from_bytes(f.read())


def _counter_matches(counter, spec):
    if counter.seed != spec.seed:
        return False
    if spec.kind == 'exact':
        return not hasattr(counter, 'register_count')
    return getattr(counter, 'register_count', None) == spec.registers


def counter_payload_bytes(registers: int) -> int:
    """Serialized size of one HLL counter payload."""
    return 18 + registers * 6 // 8


def capacity_for_budget(budget_bytes: int, registers: int = 1024, label_bytes: int = 16) -> int:
    """
    Largest s whose full HLL-backed sketch serializes within a byte budget.

    Args:
        budget_bytes: memory budget in bytes
        registers: HLL register count r
        label_bytes: expected average label length

    Returns:
        int: capacity s (0 if not even one entry fits)
    """
    per_entry = _LABEL_LEN.size + label_bytes + _OFFSET.size + counter_payload_bytes(registers)
    return max((int(budget_bytes) - _HEADER.size) // per_entry, 0)
