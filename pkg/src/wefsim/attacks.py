"""Free-rider camouflage strategies.

Free-riders have no data, so each strategy fabricates a per-local-epoch
trajectory of models from what the client has received from the server. The
upload is the trajectory's last entry, and the client's WEF matrix is
computed from the fake trajectory exactly as an honest client would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .nn import ModelWeights

KINDS = ("ordinary", "random_weight", "stochastic_perturbation", "delta_weight", "adaptive")


@dataclass(frozen=True)
class AttackStrategy:
    kind: str = "stochastic_perturbation"
    weight_range: float = 1e-3
    sigma: float = 1e-3
    sigma_schedule: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    adaptive_delta_base: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.weight_range <= 0 or self.sigma <= 0:
            raise PreconditionError("attack parameters must be positive")
        if not self.sigma_schedule or any(s <= 0 for s in self.sigma_schedule):
            raise PreconditionError("sigma_schedule must be non-empty and positive")


class GlobalHistory:
    """Models a free-rider has received, oldest first."""

    def __init__(self, received=None):
        self.received: list[ModelWeights] = list(received or [])

    def append(self, model: ModelWeights) -> None:
        self.received.append(model.copy())

    def __len__(self) -> int:
        return len(self.received)

    @property
    def last(self) -> ModelWeights:
        return self.received[-1]

    @property
    def previous(self) -> ModelWeights:
        return self.received[-2] if len(self.received) > 1 else self.received[-1]


def _rng(strategy: AttackStrategy, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([strategy.rng_seed, round_index]))


def _gaussian_like(model: ModelWeights, sigma: float, rng: np.random.Generator) -> ModelWeights:
    return model.map(lambda a: rng.normal(0.0, sigma, size=a.shape))


def craft_trajectory(strategy: AttackStrategy, history: GlobalHistory, local_epochs: int,
                     round_index: int) -> list[ModelWeights]:
    if local_epochs < 1:
        raise PreconditionError("local_epochs must be >= 1")
    if len(history) == 0:
        raise PreconditionError("free-rider has not received any model yet")
    w = history.last
    rng = _rng(strategy, round_index)
    kind = strategy.kind

    if kind == "ordinary":
        return [w.copy() for _ in range(local_epochs)]

    if kind == "random_weight":
        r = strategy.weight_range
        return [w.map(lambda a: rng.uniform(-r, r, size=a.shape)) for _ in range(local_epochs)]

    if kind == "stochastic_perturbation":
        return [w + _gaussian_like(w, strategy.sigma, rng) for _ in range(local_epochs)]

    delta = w - history.previous
    if kind == "delta_weight":
        return [w + delta * ((k + 1) / local_epochs) for k in range(local_epochs)]

    # adaptive: random walk with a cycling noise schedule
    current = w + delta if strategy.adaptive_delta_base else w.copy()
    out = []
    sched = strategy.sigma_schedule
    for k in range(local_epochs):
        current = current + _gaussian_like(w, sched[k % len(sched)], rng)
        out.append(current)
    return out
