"""Tabular dataset ingestion, conditioning and client partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, PreconditionError


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise PreconditionError("features must be a 2-d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise PreconditionError("labels length must equal row count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise PreconditionError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise PreconditionError("features must be finite")

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class Partition:
    assignments: list[np.ndarray]
    distribution: str = "iid"
    beta: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


def load_csv(path) -> Dataset:
    """Read a numeric CSV whose last column is an integer class label.

    The first row is a header and is skipped. Raises ParseError carrying the
    1-based file line number of the first bad row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    width = len(rows[0])
    if width < 2:
        raise ParseError("need at least one feature column and a label column", line=1)
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", line=lineno)
        try:
            values = [float(c) for c in row[:-1]]
        except ValueError:
            raise ParseError("non-numeric feature cell", line=lineno) from None
        try:
            lab = float(row[-1])
        except ValueError:
            raise ParseError("non-numeric label cell", line=lineno) from None
        if not lab.is_integer() or lab < 0:
            raise ParseError(f"label {row[-1]!r} is not a non-negative integer", line=lineno)
        if not all(np.isfinite(values)):
            raise ParseError("non-finite feature cell", line=lineno)
        feats.append(values)
        labels.append(int(lab))
    if not feats:
        raise ParseError("no data rows", line=1)
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(feats, dtype=np.float64), y, int(y.max()) + 1)


def save_csv(d: Dataset, path, header: list[str] | None = None) -> None:
    """Write a dataset in the format accepted by :func:`load_csv`."""
    if header is None:
        header = [f"x{j}" for j in range(d.dim)] + ["label"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def normalize_minmax(d: Dataset) -> Dataset:
    lo = d.features.min(axis=0)
    span = d.features.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    x = np.where(span > 0, (d.features - lo) / safe, 0.0)
    return Dataset(x, d.labels.copy(), d.class_count)


def train_test_split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise PreconditionError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(d)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test > n - 1:
        raise PreconditionError(f"split of {n} rows at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return d.subset(perm[n_test:]), d.subset(perm[:n_test])


def partition_iid(train: Dataset, num_clients: int, seed: int) -> Partition:
    n = len(train)
    if num_clients < 1:
        raise PreconditionError("need at least one client")
    if n < num_clients:
        raise PreconditionError(f"{n} samples cannot cover {num_clients} clients")
    perm = np.random.default_rng(seed).permutation(n)
    # array_split gives the first n % K shards one extra sample
    return Partition([np.sort(s) for s in np.array_split(perm, num_clients)], "iid")


def _largest_remainder(total: int, props: np.ndarray) -> np.ndarray:
    raw = props * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps ties in client order
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(train: Dataset, num_clients: int, beta: float, seed: int) -> Partition:
    """Per-class Dirichlet(beta) allocation of samples to clients.

    Each class's (shuffled) samples are split by proportions drawn from
    Dir(beta * 1_K) using largest-remainder rounding. Clients left empty then
    take one sample from the currently largest client, until none are empty.
    """
    if num_clients < 1:
        raise PreconditionError("need at least one client")
    if beta <= 0:
        raise PreconditionError("beta must be positive")
    if len(train) < num_clients:
        raise PreconditionError(f"{len(train)} samples cannot cover {num_clients} clients")
    hist = train.class_histogram()
    if np.any(hist == 0):
        raise PreconditionError("every class needs at least one training sample")

    rng = np.random.default_rng(seed)
    shards: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(train.class_count):
        idx = np.flatnonzero(train.labels == c)
        idx = idx[rng.permutation(len(idx))]
        props = rng.dirichlet(np.full(num_clients, float(beta)))
        counts = _largest_remainder(len(idx), props)
        start = 0
        for k, cnt in enumerate(counts):
            shards[k].extend(idx[start:start + cnt].tolist())
            start += cnt

    while True:
        sizes = [len(s) for s in shards]
        empty = [k for k, s in enumerate(sizes) if s == 0]
        if not empty:
            break
        donor = int(np.argmax(sizes))
        shards[empty[0]].append(shards[donor].pop())

    return Partition([np.sort(np.asarray(s, dtype=np.int64)) for s in shards],
                     "dirichlet", beta=float(beta))


def make_blobs(n_samples: int = 2000, n_features: int = 20, n_informative: int = 4,
               separation: float = 3.0, seed: int = 0) -> Dataset:
    """Balanced two-class Gaussian blobs.

    Class means differ by ``separation`` standard deviations along the first
    ``n_informative`` axes (split evenly); the remaining axes are pure noise.
    """
    if n_samples < 2 or n_features < 1 or not 1 <= n_informative <= n_features:
        raise PreconditionError("invalid blob generator parameters")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    shift = np.zeros(n_features)
    shift[:n_informative] = separation / np.sqrt(n_informative)
    x = rng.standard_normal((n_samples, n_features)) + np.outer(labels, shift)
    perm = rng.permutation(n_samples)
    return Dataset(x[perm], labels[perm].astype(np.int64), 2)
