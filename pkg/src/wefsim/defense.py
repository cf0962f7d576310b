"""Server-side client separation and per-group aggregation.

The server scores every client's WEF matrix against the others with three
metrics (pairwise Euclidean distance, mean cosine similarity, average
frequency), turns each metric into normalized deviation shares, sums them
into a deviation score and flags every client within ``epsilon`` of the
maximum. Flagged and clean clients are then aggregated into separate models.

Server cost per round is O(K^2 * H*W) for the pairwise metrics plus O(K) for
aggregation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .nn import ModelWeights

log = logging.getLogger(__name__)

MODES = ("wef_defense", "fedavg_undefended")


@dataclass(frozen=True)
class DefenseConfig:
    epsilon: float = 0.05
    mode: str = "wef_defense"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 3.0:
            raise PreconditionError("epsilon must lie in (0, 3)")
        if self.mode not in MODES:
            raise PreconditionError(f"unknown defense mode {self.mode!r}")


@dataclass
class SeparationReport:
    dis: np.ndarray
    cos: np.ndarray
    avg: np.ndarray
    dev: np.ndarray
    xi: float
    flagged: list[int] = field(default_factory=list)
    clean: list[int] = field(default_factory=list)


def _stack(mats) -> np.ndarray:
    arrs = [np.asarray(m, dtype=np.float64) for m in mats]
    if len({a.shape for a in arrs}) > 1:
        raise PreconditionError("WEF matrices must share one shape")
    return np.stack(arrs).reshape(len(arrs), -1)


def dis_scores(mats) -> np.ndarray:
    f = _stack(mats)
    if len(f) < 2:
        raise PreconditionError("need at least two clients")
    # direct differences, not the Gram identity: avoids cancellation near 0
    d2 = np.array([np.sum((f - row) ** 2, axis=1) for row in f])
    return np.sqrt(d2.sum(axis=1))


def cos_scores(mats) -> np.ndarray:
    """Mean cosine similarity to every other client; zero-norm pairs count as 0."""
    f = _stack(mats)
    k = len(f)
    if k < 2:
        raise PreconditionError("need at least two clients")
    norms = np.linalg.norm(f, axis=1)
    denom = np.outer(norms, norms)
    sims = np.divide(f @ f.T, denom, out=np.zeros((k, k)), where=denom > 0)
    np.fill_diagonal(sims, 0.0)
    return sims.sum(axis=1) / (k - 1)


def avg_scores(mats) -> np.ndarray:
    f = _stack(mats)
    if len(f) < 1:
        raise PreconditionError("need at least one client")
    return f.sum(axis=1) / f.shape[1]


def _shares(deviation: np.ndarray) -> np.ndarray:
    total = deviation.sum()
    if total <= 0:
        return np.full(len(deviation), 1.0 / len(deviation))
    return deviation / total


def deviations(dis, cos, avg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unnormalized per-metric deviations.

    Distance and average frequency use the absolute deviation from the
    cross-client mean. Cosine is a similarity, so its deviation is the
    shortfall from the most similar client; an absolute deviation would score
    a tight majority as deviant as the outliers and ties every client when
    two equal-sized groups form.
    """
    dis, cos, avg = (np.asarray(v, dtype=np.float64) for v in (dis, cos, avg))
    if not (len(dis) == len(cos) == len(avg)) or len(dis) < 2:
        raise PreconditionError("metric vectors must share a length of at least 2")
    return np.abs(dis - dis.mean()), cos.max() - cos, np.abs(avg - avg.mean())


def dev_scores(dis, cos, avg) -> np.ndarray:
    """Sum of the three per-metric deviation shares; always totals 3.

    A metric with zero total deviation contributes ``1/K`` to every client.
    """
    return sum(_shares(d) for d in deviations(dis, cos, avg))


def separate(dev, epsilon: float) -> tuple[float, list[int], list[int]]:
    dev = np.asarray(dev, dtype=np.float64)
    if len(dev) < 2:
        raise PreconditionError("need at least two clients")
    xi = float(dev.max() - epsilon)
    flagged = [i for i in range(len(dev)) if dev[i] >= xi]
    clean = [i for i in range(len(dev)) if dev[i] < xi]
    return xi, flagged, clean


def separation_report(mats, epsilon: float) -> SeparationReport:
    dis, cos, avg = dis_scores(mats), cos_scores(mats), avg_scores(mats)
    dev = dev_scores(dis, cos, avg)
    xi, flagged, clean = separate(dev, epsilon)
    return SeparationReport(dis, cos, avg, dev, xi, flagged, clean)


def aggregate_group(base: ModelWeights, updates: list[ModelWeights]) -> ModelWeights:
    """``base + mean(u - base)``; an empty group keeps ``base``."""
    if not updates:
        log.info("empty group: carrying its model forward unchanged")
        return base.copy()
    layers = []
    for i, (bw, bb) in enumerate(base.layers):
        dw = np.mean(np.stack([u.layers[i][0] - bw for u in updates]), axis=0)
        db = np.mean(np.stack([u.layers[i][1] - bb for u in updates]), axis=0)
        layers.append((bw + dw, bb + db))
    return ModelWeights(layers, base.activations)


def fedavg(updates: list[ModelWeights]) -> ModelWeights:
    if not updates:
        raise PreconditionError("no updates to average")
    first = updates[0]
    for u in updates[1:]:
        first._check(u)
    layers = [(np.mean(np.stack([u.layers[i][0] for u in updates]), axis=0),
               np.mean(np.stack([u.layers[i][1] for u in updates]), axis=0))
              for i in range(len(first.layers))]
    return ModelWeights(layers, first.activations)
