"""Weight-evolving-frequency (WEF) matrix collection.

A client keeps one integer matrix shaped like its penultimate-layer weights.
After every local epoch it computes the mean absolute change of that layer
(the dynamic threshold) and adds 1 to each entry whose change strictly
exceeds it. Counts accumulate over the client's whole lifetime.

Cost per local epoch is O(H*W); per round O(T' * H*W) on the client.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError


@dataclass
class WefTracker:
    counts: np.ndarray
    previous: np.ndarray
    last_alpha: float = 0.0
    alphas: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def reset_reference(self, layer_weights: np.ndarray) -> None:
        """Point the next comparison at freshly distributed weights.

        Counts are kept; only the reference matrix changes.
        """
        layer_weights = np.asarray(layer_weights, dtype=np.float64)
        if layer_weights.shape != self.counts.shape:
            raise PreconditionError(f"shape {layer_weights.shape} != tracker {self.counts.shape}")
        self.previous = layer_weights.copy()

    def avg(self) -> float:
        return float(self.counts.sum()) / self.counts.size


def wef_init(h: int, w: int, start_weights: np.ndarray | None = None) -> WefTracker:
    if h < 1 or w < 1:
        raise PreconditionError(f"WEF dimensions must be positive, got ({h}, {w})")
    if start_weights is None:
        start = np.zeros((h, w))
    else:
        start = np.asarray(start_weights, dtype=np.float64)
        if start.shape != (h, w):
            raise PreconditionError(f"starting weights {start.shape} do not match ({h}, {w})")
        start = start.copy()
    return WefTracker(np.zeros((h, w), dtype=np.int64), start)


def wef_threshold(prev: np.ndarray, nxt: np.ndarray) -> float:
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape:
        raise PreconditionError(f"shape mismatch {prev.shape} vs {nxt.shape}")
    return float(np.mean(np.abs(nxt - prev)))


def wef_update(tracker: WefTracker, next_layer_weights: np.ndarray) -> WefTracker:
    """Fold one local epoch into ``tracker`` (in place) and return it."""
    nxt = np.asarray(next_layer_weights, dtype=np.float64)
    if nxt.shape != tracker.counts.shape:
        raise PreconditionError(f"shape {nxt.shape} != tracker {tracker.counts.shape}")
    change = np.abs(nxt - tracker.previous)
    alpha = float(np.mean(change))
    tracker.counts += change > alpha
    tracker.previous = nxt.copy()
    tracker.last_alpha = alpha
    tracker.alphas.append(alpha)
    tracker.steps += 1
    return tracker


def wef_run_trajectory(tracker: WefTracker, trajectory) -> WefTracker:
    if len(trajectory) == 0:
        raise PreconditionError("trajectory is empty")
    for layer in trajectory:
        wef_update(tracker, layer)
    return tracker
