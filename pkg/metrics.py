"""
Ground truth and error metrics for heavy distinct hitter sketches.

Every metric is evaluated twice per k: over the true top-k labels (T_k) and over
the labels the estimator itself reports as its top-k (S_k). Q_k combines the two
NAE values with a quadratic mean, so a sketch that is accurate on the real heavy
labels but reports the wrong ones is still penalized.

An estimator is anything with `query(label) -> float` and
`top(k) -> [(label, estimate), ...]`: a sketch, the all-zero baseline, or the
ground truth itself.
"""
import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, Iterable, List, Mapping, Union

import numpy as np
from tabulate import tabulate

from cardinality import hash64

logger = logging.getLogger(__name__)

Estimates = Union[Mapping[bytes, float], Callable[[bytes], float]]


class MetricError(ValueError):
    """Raised when a metric is undefined for its inputs."""


class GroundTruth:
    """Exact per-label distinct counts, kept as sets of 64-bit item hashes."""

    def __init__(self):
        self.sets: Dict[bytes, set] = {}
        self.entries = 0

    @classmethod
    def from_entries(cls, entries: Iterable) -> 'GroundTruth':
        truth = cls()
        for label, item in entries:
            truth.add(label, item)
        return truth

    def __len__(self):
        return len(self.sets)

    def add(self, label: bytes, item: bytes) -> None:
        self.entries += 1
        items = self.sets.get(label)
        if items is None:
            items = self.sets[label] = set()
        items.add(hash64(item))

    def distinct(self, label: bytes) -> int:
        return len(self.sets.get(label, ()))

    def labels(self) -> List[bytes]:
        return list(self.sets)

    def counts(self) -> Dict[bytes, int]:
        return {label: len(items) for label, items in self.sets.items()}

    def total_pairs(self) -> int:
        """Number of unique (label, item) pairs seen."""
        return sum(len(items) for items in self.sets.values())

    # The oracle answers like a perfect sketch.
    def query(self, label: bytes) -> float:
        return float(self.distinct(label))

    def top(self, k: int):
        return [(label, float(d)) for label, d in _ranked(self.counts().items(), k)]


class ZeroEstimator:
    """The all-zero baseline: every estimate is 0, top(k) is the k smallest labels."""

    def __init__(self, truth: GroundTruth):
        self.truth = truth

    def query(self, label: bytes) -> float:
        return 0.0

    def top(self, k: int):
        if k <= 0:
            return []
        return [(label, 0.0) for label in heapq.nsmallest(k, self.truth.labels())]


def _ranked(pairs, k):
    if k <= 0:
        return []
    return heapq.nsmallest(k, pairs, key=lambda pair: (-pair[1], pair[0]))


def truth_topk(truth: GroundTruth, k: int) -> List[bytes]:
    """T_k: the k labels with the most distinct items, ties by ascending label."""
    return [label for label, _ in _ranked(((label, len(items)) for label, items in truth.sets.items()), k)]


def _as_lookup(estimates: Estimates):
    if callable(estimates):
        return estimates
    return estimates.__getitem__


def _paired(labels, estimates, truth):
    labels = list(labels)
    if not labels:
        raise MetricError("Metric is undefined over an empty label set")
    lookup = _as_lookup(estimates)
    actual = np.empty(len(labels), dtype=np.float64)
    estimated = np.empty(len(labels), dtype=np.float64)
    for i, label in enumerate(labels):
        d = truth.distinct(label)
        if d == 0:
            raise MetricError(f"Label {label!r} does not occur in the ground truth")
        actual[i] = d
        estimated[i] = lookup(label)
    return actual, estimated


def nae(labels, estimates: Estimates, truth: GroundTruth) -> float:
    """Normalized absolute error: sum |d - est| / sum d."""
    d, est = _paired(labels, estimates, truth)
    return float(np.abs(d - est).sum() / d.sum())


def nrse(labels, estimates: Estimates, truth: GroundTruth) -> float:
    """Normalized root squared error: sqrt(sum (d - est)^2 / sum d^2)."""
    d, est = _paired(labels, estimates, truth)
    return float(math.sqrt(np.square(d - est).sum() / np.square(d).sum()))


def rmae(labels, estimates: Estimates, truth: GroundTruth) -> float:
    """Relative mean absolute error: mean |d - est| / d."""
    d, est = _paired(labels, estimates, truth)
    return float(np.mean(np.abs(d - est) / d))


def rrmse(labels, estimates: Estimates, truth: GroundTruth) -> float:
    """Relative root mean square error: sqrt(mean ((d - est) / d)^2)."""
    d, est = _paired(labels, estimates, truth)
    return float(math.sqrt(np.mean(np.square((d - est) / d))))


def qk(nae_s: float, nae_t: float) -> float:
    """Quadratic mean of NAE(S_k) and NAE(T_k)."""
    if nae_s < 0 or nae_t < 0:
        raise MetricError(f"NAE values must be non-negative, got {nae_s}, {nae_t}")
    return math.sqrt((nae_s * nae_s + nae_t * nae_t) / 2.0)


@dataclass
class ErrorRow:
    k: int
    nae_t: float
    nae_s: float
    q: float
    nrse_t: float
    nrse_s: float
    rmae_t: float
    rmae_s: float
    rrmse_t: float
    rrmse_s: float
    s_k_size: int


COLUMNS = [f.name for f in fields(ErrorRow)]


@dataclass
class ErrorReport:
    name: str = ''
    rows: List[ErrorRow] = field(default_factory=list)

    def row(self, k: int) -> ErrorRow:
        for row in self.rows:
            if row.k == k:
                return row
        raise KeyError(k)

    def table_rows(self):
        return [[getattr(row, column) for column in COLUMNS] for row in self.rows]

    def to_table(self, pretty: bool = False) -> str:
        """One row per k; tab-separated with a header, or a grid when pretty."""
        return tabulate(self.table_rows(), headers=COLUMNS,
                        tablefmt='grid' if pretty else 'tsv', floatfmt='.6f')

    def to_json_lines(self) -> str:
        lines = []
        for row in self.rows:
            record = {'name': self.name} if self.name else {}
            record.update(asdict(row))
            lines.append(json.dumps(record))
        return '\n'.join(lines)


def evaluate(estimator, truth: GroundTruth, ks: Iterable[int], name: str = '') -> ErrorReport:
    """
    Compute every metric for each k.

    T_k estimates come from estimator.query, so labels an estimator does not
    hold receive whatever it answers for unknown labels (the minimum counter,
    for a sketch).

    Args:
        estimator: object with query(label) and top(k)
        truth: ground truth over the same stream
        ks: list of k values
        name: report name, carried into JSON output

    Returns:
        ErrorReport

    Raises:
        MetricError: when T_k or S_k is empty, or S_k holds an unseen label
    """
    report = ErrorReport(name)
    query = estimator.query
    for k in ks:
        top = estimator.top(k)
        s_k = [label for label, _ in top]
        reported = dict(top)
        t_k = truth_topk(truth, k)
        nae_t = nae(t_k, query, truth)
        nae_s = nae(s_k, reported, truth)
        report.rows.append(ErrorRow(
            k=k,
            nae_t=nae_t,
            nae_s=nae_s,
            q=qk(nae_s, nae_t),
            nrse_t=nrse(t_k, query, truth),
            nrse_s=nrse(s_k, reported, truth),
            rmae_t=rmae(t_k, query, truth),
            rmae_s=rmae(s_k, reported, truth),
            rrmse_t=rrmse(t_k, query, truth),
            rrmse_s=rrmse(s_k, reported, truth),
            s_k_size=len(s_k),
        ))
        logger.debug(f"{name or 'report'} k={k}: NAE(T)={nae_t:.4f} NAE(S)={nae_s:.4f}")
    return report


def baseline_report(truth: GroundTruth, ks: Iterable[int]) -> ErrorReport:
    """ErrorReport of the all-zero estimator."""
    return evaluate(ZeroEstimator(truth), truth, ks, name='all-zero')
