"""Round orchestration for federated training with free-riders.

Each global round: every client receives the model of the group it was
assigned to (all clients get the initial model in round 1), benign clients
train and free-riders fabricate, all of them fold their local-epoch
trajectory into their WEF matrix, and the server either separates clients
and aggregates each group separately (``wef_defense``) or averages
everything (``fedavg_undefended``).

Ground truth about who is a free-rider is kept in the harness for metrics
only; the server path sees WEF matrices and uploads, nothing else.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import data as datamod
from .attacks import AttackStrategy, GlobalHistory, craft_trajectory
from .data import Dataset, Partition
from .defense import DefenseConfig, aggregate_group, separation_report
from .errors import ConfigError, TrainingDivergedError
from .nn import (ModelWeights, TrainConfig, evaluate_accuracy, init_model, mlp_spec,
                 penultimate_weights, train_local)
from .wef import WefTracker, wef_init, wef_run_trajectory

log = logging.getLogger(__name__)

# seed-stream purpose tags
_INIT, _SPLIT, _PARTITION, _SYNTH, _TRAIN, _ATTACK = range(6)


def derive_seed(*keys: int) -> int:
    """Independent 63-bit seed for a tuple of non-negative integer keys."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    n_samples: int = 5000
    n_features: int = 86
    n_informative: int = 8
    separation: float = 4.0
    normalize: bool = True
    test_fraction: float = 0.2
    distribution: str = "iid"
    beta: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    hidden: tuple[int, ...] = (32,)
    train: TrainConfig = field(default_factory=TrainConfig)
    rounds: int = 50
    num_clients: int = 10
    free_rider_ratio: float = 0.0
    attack: AttackStrategy = field(default_factory=AttackStrategy)
    data: DataConfig = field(default_factory=DataConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    master_seed: int = 0
    snapshot_rounds: tuple[int, ...] = ()
    workers: int = 1

    @property
    def num_free_riders(self) -> int:
        # floor with a small guard against 10 * 0.7 = 7.000000000000001 style noise
        return int(math.floor(self.num_clients * self.free_rider_ratio + 1e-9))

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.num_clients < 2:
            raise ConfigError("num_clients must be >= 2")
        if not 0.0 <= self.free_rider_ratio < 1.0:
            raise ConfigError("free_rider_ratio must lie in [0, 1)")
        if self.num_clients - self.num_free_riders < 1:
            raise ConfigError("at least one benign client is required")
        if any(h < 1 for h in self.hidden) or not self.hidden:
            raise ConfigError("hidden must list at least one positive layer width")
        if self.data.distribution not in ("iid", "dirichlet"):
            raise ConfigError(f"unknown distribution {self.data.distribution!r}")
        if self.data.beta <= 0:
            raise ConfigError("beta must be positive")
        if not 0.0 < self.data.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if any(r < 1 or r > self.rounds for r in self.snapshot_rounds):
            raise ConfigError("snapshot_rounds must lie in [1, rounds]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class RoundRecord:
    round: int
    acc_clean: float
    acc_flagged: float | None
    acc_benign: float
    acc_freerider: float | None
    hma_benign: float
    hma_freerider: float | None
    flagged: list[int] | None
    dev: list[float] | None
    xi: float | None
    exact: bool
    free_riders_flagged: bool | None
    detected: bool
    contributors: dict[str, list[int]]
    truth: list[int]


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    free_riders: list[int]
    snapshots: dict[int, np.ndarray]
    hma_benign: float
    hma_freerider: float | None
    detection_round: int | None
    separation_round: int | None
    final_models: dict[str, ModelWeights]
    alphas: dict[int, list[float]]


@dataclass
class Experiment:
    """Prepared data and client layout for a config, before any round runs."""

    config: ExperimentConfig
    train: Dataset
    test: Dataset
    partition: Partition
    benign_ids: list[int]
    free_rider_ids: list[int]

    def client_data(self, cid: int) -> Dataset:
        return self.train.subset(self.partition.assignments[cid])


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    dc = cfg.data
    if dc.path:
        d = datamod.load_csv(dc.path)
    else:
        d = datamod.make_blobs(dc.n_samples, dc.n_features, dc.n_informative, dc.separation,
                               seed=derive_seed(cfg.master_seed, _SYNTH))
    return datamod.normalize_minmax(d) if dc.normalize else d


def prepare(cfg: ExperimentConfig) -> Experiment:
    cfg.validate()
    full = load_dataset(cfg)
    train, test = datamod.train_test_split(full, cfg.data.test_fraction,
                                           derive_seed(cfg.master_seed, _SPLIT))
    n_fr = cfg.num_free_riders
    n_benign = cfg.num_clients - n_fr
    pseed = derive_seed(cfg.master_seed, _PARTITION)
    if cfg.data.distribution == "iid":
        part = datamod.partition_iid(train, n_benign, pseed)
    else:
        part = datamod.partition_dirichlet(train, n_benign, cfg.data.beta, pseed)
    # free-riders take the highest ids so benign ids (and their seeds) do not
    # depend on how many free-riders exist
    return Experiment(cfg, train, test, part, list(range(n_benign)),
                      list(range(n_benign, cfg.num_clients)))


@dataclass
class _Upload:
    cid: int
    model: ModelWeights
    counts: np.ndarray


class _Client:
    def __init__(self, cid: int, tracker: WefTracker, data: Dataset | None = None,
                 strategy: AttackStrategy | None = None):
        self.cid = cid
        self.tracker = tracker
        self.data = data
        self.strategy = strategy
        self.history = GlobalHistory() if strategy is not None else None

    def step(self, received: ModelWeights, cfg: ExperimentConfig, round_index: int) -> _Upload:
        self.tracker.reset_reference(penultimate_weights(received))
        if self.strategy is None:
            final, traj = train_local(received, self.data, cfg.train,
                                      derive_seed(cfg.master_seed, _TRAIN, self.cid, round_index),
                                      round_index=round_index, client_id=self.cid)
            phase = "train"
        else:
            self.history.append(received)
            traj = craft_trajectory(self.strategy, self.history, cfg.train.local_epochs,
                                    round_index)
            final = traj[-1]
            phase = "craft"
        wef_run_trajectory(self.tracker, [penultimate_weights(m) for m in traj])
        if log.isEnabledFor(logging.DEBUG):
            log.debug("round=%d client=%d phase=%s alpha=%s", round_index, self.cid, phase,
                      ",".join(f"{a:.3e}" for a in self.tracker.alphas[-len(traj):]))
        return _Upload(self.cid, final, self.tracker.counts.copy())


def _exact(flagged: list[int], clean: list[int], truth: set[int]) -> tuple[bool, bool | None]:
    """Whether the two groups coincide with {free-riders, benign}.

    Returns ``(exact, free_riders_flagged)``; the second value says which
    side the free-riders landed on when the split is exact.
    """
    fset, cset = set(flagged), set(clean)
    if not truth or not cset:
        return False, None
    if fset == truth:
        return True, True
    if cset == truth:
        return True, False
    return False, None


def _member_accuracy(acc: dict[str, float], assignment: dict[int, str], ids) -> float:
    labels = [assignment[i] for i in ids]
    if len(set(labels)) == 1:
        # avoid summation noise when every member holds the same model
        return acc[labels[0]]
    return float(np.mean([acc[label] for label in labels]))


def run_experiment(cfg: ExperimentConfig, experiment: Experiment | None = None,
                   on_round=None) -> RunResult:
    """Run every round of ``cfg``.

    ``on_round(t, models)``, if given, sees the group models after each
    round's aggregation; it must not mutate them.
    """
    exp = experiment if experiment is not None else prepare(cfg)
    cfg = exp.config
    spec = mlp_spec(exp.train.dim, list(cfg.hidden), exp.train.class_count)
    w0 = init_model(spec, derive_seed(cfg.master_seed, _INIT))
    p0 = penultimate_weights(w0)

    clients: list[_Client] = []
    for cid in exp.benign_ids:
        clients.append(_Client(cid, wef_init(*p0.shape, p0), data=exp.client_data(cid)))
    for cid in exp.free_rider_ids:
        a = cfg.attack
        strat = AttackStrategy(a.kind, a.weight_range, a.sigma, a.sigma_schedule,
                               a.adaptive_delta_base, derive_seed(cfg.master_seed, _ATTACK, cid))
        clients.append(_Client(cid, wef_init(*p0.shape, p0), strategy=strat))

    defended = cfg.defense.mode == "wef_defense"
    models = {"clean": w0, "flagged": w0} if defended else {"all": w0}
    assignment = {c.cid: ("clean" if defended else "all") for c in clients}
    truth = set(exp.free_rider_ids)
    records: list[RoundRecord] = []
    snapshots: dict[int, np.ndarray] = {}
    hma_b, hma_f = -math.inf, -math.inf

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            received = {c.cid: models[assignment[c.cid]] for c in clients}
            if pool is None:
                uploads = [c.step(received[c.cid], cfg, t) for c in clients]
            else:
                uploads = list(pool.map(lambda c: c.step(received[c.cid], cfg, t), clients))

            # server barrier
            flagged = dev = xi = None
            if defended:
                rep = separation_report([u.counts for u in uploads], cfg.defense.epsilon)
                flagged = [uploads[i].cid for i in rep.flagged]
                clean = [uploads[i].cid for i in rep.clean]
                groups = {"clean": clean, "flagged": flagged}
                dev, xi = [float(v) for v in rep.dev], rep.xi
                log.info("round=%d xi=%.4f flagged=%s", t, xi, flagged)
            else:
                groups = {"all": [u.cid for u in uploads]}
            by_id = {u.cid: u.model for u in uploads}
            for label, members in groups.items():
                models[label] = aggregate_group(models[label], [by_id[i] for i in members])
                for i in members:
                    assignment[i] = label

            acc = {label: evaluate_accuracy(m, exp.test) for label, m in models.items()}
            acc_b = _member_accuracy(acc, assignment, exp.benign_ids)
            acc_f = (_member_accuracy(acc, assignment, exp.free_rider_ids)
                     if exp.free_rider_ids else None)
            hma_b = max(hma_b, acc_b)
            if acc_f is not None:
                hma_f = max(hma_f, acc_f)
            if defended:
                exact, fr_flagged = _exact(flagged, groups["clean"], truth)
            else:
                exact, fr_flagged = False, None
            records.append(RoundRecord(
                round=t,
                acc_clean=acc["clean" if defended else "all"],
                acc_flagged=acc["flagged"] if defended else None,
                acc_benign=acc_b, acc_freerider=acc_f,
                hma_benign=hma_b, hma_freerider=hma_f if acc_f is not None else None,
                flagged=flagged, dev=dev, xi=xi, exact=exact, free_riders_flagged=fr_flagged,
                detected=bool(exact and fr_flagged),
                contributors={k: list(v) for k, v in groups.items()},
                truth=sorted(truth)))
            if on_round is not None:
                on_round(t, models)
            if t in cfg.snapshot_rounds:
                snapshots[t] = np.stack([c.tracker.counts.copy() for c in clients])
    except TrainingDivergedError:
        log.error("training diverged; aborting run")
        raise
    finally:
        if pool is not None:
            pool.shutdown()

    return RunResult(
        config=cfg, records=records, free_riders=sorted(truth), snapshots=snapshots,
        hma_benign=hma(records, "benign"),
        hma_freerider=hma(records, "freerider") if truth else None,
        detection_round=detection_round(records),
        separation_round=separation_round(records),
        final_models={k: v.copy() for k, v in models.items()},
        alphas={c.cid: list(c.tracker.alphas) for c in clients})


def hma(records, group: str) -> float:
    """Highest per-round mean accuracy of the models a group's members hold."""
    if not records:
        raise ValueError("no rounds recorded")
    key = {"benign": "acc_benign", "freerider": "acc_freerider"}[group]
    values = [getattr(r, key) for r in records if getattr(r, key) is not None]
    if not values:
        raise ValueError(f"no accuracies recorded for group {group!r}")
    return float(max(values))


def detection_round(records) -> int | None:
    """First round whose flagged set equals the free-rider set."""
    for r in records:
        if r.detected:
            return r.round
    return None


def separation_round(records) -> int | None:
    """First round whose two groups equal {free-riders, benign} in either orientation."""
    for r in records:
        if r.exact:
            return r.round
    return None
