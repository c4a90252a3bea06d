"""
Labeled stream sources: synthetic generators and delimited files.

All generators are deterministic given their spec (seed included) and are
lazy: nothing is materialized until the first entry is pulled.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional

import numpy as np

from config import Config
from sketch import MAX_LABEL_BYTES

logger = logging.getLogger(__name__)

CHUNK = 1 << 16


class InvalidSpecError(ValueError):
    """Raised when a generator spec or column selection is invalid."""


class InputError(ValueError):
    """Raised when an input file is unreadable or holds no valid line."""


class Entry(NamedTuple):
    label: bytes
    item: bytes


@dataclass(frozen=True)
class ZipfSpec:
    n_labels: int = 100_000
    exponent: float = 0.2
    n_entries: int = 1_000_000
    seed: int = 0

    def validate(self):
        if self.n_labels < 1:
            raise InvalidSpecError(f"Zipf needs at least one label, got {self.n_labels}")
        if not self.exponent > 0:
            raise InvalidSpecError(f"Zipf exponent must be positive, got {self.exponent}")
        if self.n_entries < 0:
            raise InvalidSpecError(f"Entry count must be non-negative, got {self.n_entries}")
        return self

    @property
    def size(self):
        return self.n_entries


@dataclass(frozen=True)
class OverlapSpec:
    universe_size: int = 100_000
    common_size: int = 10_000
    n_small: int = 10_000
    small_set_size: int = 100
    n_heavy: int = 100
    heavy_size: int = 5000
    seed: int = 0

    def validate(self):
        for name in ('universe_size', 'common_size', 'small_set_size', 'heavy_size'):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.n_small < 0 or self.n_heavy < 0:
            raise InvalidSpecError("Set counts must be non-negative")
        if self.common_size > self.universe_size:
            raise InvalidSpecError(
                f"Common pool ({self.common_size}) exceeds the universe ({self.universe_size})")
        if self.small_set_size > self.common_size:
            raise InvalidSpecError(
                f"Small sets of {self.small_set_size} cannot be drawn from a common pool of {self.common_size}")
        if self.heavy_size > self.universe_size:
            raise InvalidSpecError(
                f"Heavy sets of {self.heavy_size} cannot be drawn from a universe of {self.universe_size}")
        return self

    @property
    def size(self):
        return self.n_small * self.small_set_size + self.n_heavy * self.heavy_size


@dataclass(frozen=True)
class CyclingSpec:
    """
    Heavy labels first, then round-robin churn over many light labels.

    Each light entry carries a fresh item, so a light label ends with about
    churn_entries / n_cycling distinct items.
    """
    n_heavy: int = 100
    heavy_size: int = 300
    n_cycling: int = 10_000
    churn_entries: int = 300_000
    seed: int = 0

    def validate(self):
        if self.n_heavy < 0 or self.heavy_size < 1:
            raise InvalidSpecError("Heavy label count must be non-negative and heavy sets non-empty")
        if self.n_cycling < 1:
            raise InvalidSpecError(f"Need at least one cycling label, got {self.n_cycling}")
        if self.churn_entries < 0:
            raise InvalidSpecError(f"Churn entry count must be non-negative, got {self.churn_entries}")
        return self

    @property
    def size(self):
        return self.n_heavy * self.heavy_size + self.churn_entries


ZIPF_DESK = ZipfSpec()
ZIPF_FULL = ZipfSpec(n_labels=10 ** 8, n_entries=10 ** 8)
OVERLAP_DESK = OverlapSpec()
OVERLAP_FULL = OverlapSpec(universe_size=10 ** 6, common_size=10 ** 5, n_small=10 ** 5,
                            small_set_size=1000, n_heavy=1000, heavy_size=20_000)
CYCLING_DESK = CyclingSpec()

PRESETS = {
    'zipf-desk': ZIPF_DESK,
    'zipf-full': ZIPF_FULL,
    'overlap-desk': OVERLAP_DESK,
    'overlap-full': OVERLAP_FULL,
    'cycling-desk': CYCLING_DESK,
}


def zipf_weights(n_labels: int, exponent: float) -> np.ndarray:
    """Probability of each rank 1..N, proportional to rank^-exponent."""
    weights = np.arange(1, n_labels + 1, dtype=np.float64) ** -exponent
    return weights / weights.sum()


def zipf_table(n_labels: int, exponent: float) -> np.ndarray:
    """Cumulative weight table for inverse-CDF sampling; the last entry is exactly 1."""
    table = np.cumsum(np.arange(1, n_labels + 1, dtype=np.float64) ** -exponent)
    table /= table[-1]
    table[-1] = 1.0
    return table


def gen_zipf(spec: ZipfSpec) -> Iterator[Entry]:
    """
    Zipf-labeled stream: labels are decimal ranks, items are fresh uniform
    64-bit values rendered in decimal.
    """
    spec.validate()
    if spec.n_entries == 0:
        return
    rng = np.random.default_rng(spec.seed)
    table = zipf_table(spec.n_labels, spec.exponent)
    remaining = spec.n_entries
    while remaining > 0:
        n = min(CHUNK, remaining)
        ranks = np.searchsorted(table, rng.random(n), side='right') + 1
        items = rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)
        for rank, item in zip(ranks.tolist(), items.tolist()):
            yield Entry(b'%d' % rank, b'%d' % item)
        remaining -= n


def gen_overlap(spec: OverlapSpec) -> Iterator[Entry]:
    """
    Many small sets drawn from a shared common pool plus a few heavy sets drawn
    from the whole universe, emitted in one seeded global shuffle.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    common = rng.choice(spec.universe_size, size=spec.common_size, replace=False)

    labels = np.empty(spec.size, dtype=np.int64)
    items = np.empty(spec.size, dtype=np.int64)
    position = 0
    for i in range(spec.n_small):
        labels[position:position + spec.small_set_size] = i
        items[position:position + spec.small_set_size] = rng.choice(common, size=spec.small_set_size, replace=False)
        position += spec.small_set_size
    for i in range(spec.n_heavy):
        labels[position:position + spec.heavy_size] = spec.n_small + i
        items[position:position + spec.heavy_size] = rng.choice(spec.universe_size, size=spec.heavy_size, replace=False)
        position += spec.heavy_size

    order = rng.permutation(spec.size)
    n_small = spec.n_small
    for start in range(0, spec.size, CHUNK):
        chunk = order[start:start + CHUNK]
        for label, item in zip(labels[chunk].tolist(), items[chunk].tolist()):
            if label < n_small:
                yield Entry(b'small-%d' % label, b'%d' % item)
            else:
                yield Entry(b'heavy-%d' % (label - n_small), b'%d' % item)


def gen_cycling(spec: CyclingSpec) -> Iterator[Entry]:
    """
    Label-cycling stream that drives non-sampling variants toward m/s offsets.

    Phase one emits every heavy label's unique items in shuffled order. Phase
    two cycles round-robin through the light labels, each entry with an item
    never seen before. Light labels sort before heavy ones.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    heavy_entries = spec.n_heavy * spec.heavy_size
    for index in rng.permutation(heavy_entries).tolist():
        yield Entry(b'heavy-%d' % (index // spec.heavy_size), b'%d' % index)
    for t in range(spec.churn_entries):
        yield Entry(b'cycle-%d' % (t % spec.n_cycling), b'%d' % (heavy_entries + t))


GENERATORS = {
    ZipfSpec: gen_zipf,
    OverlapSpec: gen_overlap,
    CyclingSpec: gen_cycling,
}


class EntrySource:
    """
    A replayable stream: every iteration starts a fresh pass.

    Evaluation reads a stream twice (ground truth, then sketch) and sharded runs
    read contiguous segments; both need replay rather than a one-shot iterator.
    """

    def __init__(self, factory: Callable[[], Iterator[Entry]], size_hint: Optional[int] = None, name: str = ''):
        self.factory = factory
        self.size_hint = size_hint
        self.name = name

    def __iter__(self):
        return iter(self.factory())

    def __repr__(self):
        return f'<EntrySource {self.name or "stream"} size={self.size_hint}>'

    def size(self) -> int:
        if self.size_hint is None:
            self.size_hint = sum(1 for _ in self)
        return self.size_hint

    def shard(self, index: int, count: int) -> 'EntrySource':
        """The index-th of count contiguous, nearly equal segments."""
        if count < 1 or not 0 <= index < count:
            raise InvalidSpecError(f"Invalid shard {index} of {count}")
        total = self.size()
        start = total * index // count
        stop = total * (index + 1) // count
        return EntrySource(lambda: itertools.islice(iter(self), start, stop), stop - start,
                           f'{self.name or "stream"}[{index}/{count}]')

    def shards(self, count: int):
        return [self.shard(i, count) for i in range(count)]


def source_for(spec) -> EntrySource:
    """Wrap a generator spec into a replayable source, warning above desk scale."""
    generator = GENERATORS.get(type(spec))
    if generator is None:
        raise InvalidSpecError(f"No generator for {type(spec).__name__}")
    spec.validate()
    if spec.size > Config.WARN_ENTRIES:
        logger.warning(f"{type(spec).__name__} requests {spec.size:,} entries; this is not a desk-scale run")
    return EntrySource(lambda: generator(spec), spec.size, type(spec).__name__)


class DelimitedFile:
    """
    Entries read from a delimited text file, one per line.

    Lines missing a column or a field are skipped, as are labels longer than
    MAX_LABEL_BYTES; the count of skipped lines from the latest pass is kept
    in `skipped`.
    """

    def __init__(self, path, delimiter=',', label_col=0, item_col=1):
        if label_col < 0 or item_col < 0:
            raise InvalidSpecError(f"Column indices must be non-negative, got {label_col}, {item_col}")
        if label_col == item_col:
            raise InvalidSpecError(f"Label and item columns must differ, both are {label_col}")
        if not delimiter:
            raise InvalidSpecError("Delimiter must not be empty")
        self.path = path
        self.delimiter = delimiter.encode('utf-8') if isinstance(delimiter, str) else delimiter
        self.label_col = label_col
        self.item_col = item_col
        self.skipped = 0
        self.valid = 0
        try:
            with open(path, 'rb'):
                pass
        except OSError as e:
            raise InputError(f"Cannot read {path}: {e}") from e

    def __iter__(self) -> Iterator[Entry]:
        self.skipped = 0
        self.valid = 0
        needed = max(self.label_col, self.item_col) + 1
        try:
            f = open(self.path, 'rb')
        except OSError as e:
            raise InputError(f"Cannot read {self.path}: {e}") from e
        with f:
            for line in f:
                fields = line.rstrip(b'\r\n').split(self.delimiter)
                if len(fields) < needed:
                    self.skipped += 1
                    continue
                label, item = fields[self.label_col], fields[self.item_col]
                if not label or not item or len(label) > MAX_LABEL_BYTES:
                    self.skipped += 1
                    continue
                self.valid += 1
                yield Entry(label, item)
        if self.skipped:
            logger.warning(f"Skipped {self.skipped} malformed line(s) in {self.path}")
        if self.valid == 0 and self.skipped:
            raise InputError(f"No valid lines in {self.path}")


def read_delimited(path, delimiter=',', label_col=0, item_col=1) -> DelimitedFile:
    """
    Open a delimited file as a replayable entry stream.

    Raises:
        InputError: file unreadable (now) or no valid line (at the end of a pass)
        InvalidSpecError: invalid column selection
    """
    return DelimitedFile(path, delimiter, label_col, item_col)


def write_delimited(entries, path, delimiter=',') -> int:
    """Materialize a stream as label<delimiter>item lines; returns the entry count."""
    separator = delimiter.encode('utf-8') if isinstance(delimiter, str) else delimiter
    count = 0
    with open(path, 'wb') as f:
        for label, item in entries:
            f.write(label + separator + item + b'\n')
            count += 1
    return count
