from dataclasses import replace

import numpy as np
import pytest

from wefsim.attacks import AttackStrategy
from wefsim.defense import DefenseConfig
from wefsim.errors import ConfigError
from wefsim.sim import (DataConfig, ExperimentConfig, derive_seed, detection_round, hma,
                        prepare, run_experiment)

SMALL = ExperimentConfig(rounds=3, free_rider_ratio=0.3,
                         data=DataConfig(n_samples=1500),
                         attack=AttackStrategy("ordinary"), snapshot_rounds=(1, 3))


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert len({derive_seed(0, 4, c, r) for c in range(10) for r in range(10)}) == 100


@pytest.mark.parametrize("k,ratio,n", [(10, 0.3, 3), (10, 0.7, 7), (10, 0.25, 2), (7, 0.5, 3)])
def test_floor_rule(k, ratio, n):
    assert ExperimentConfig(num_clients=k, free_rider_ratio=ratio).num_free_riders == n


def test_free_riders_take_highest_ids():
    exp = prepare(SMALL)
    assert exp.free_rider_ids == [7, 8, 9]
    assert exp.benign_ids == list(range(7))
    assert len(exp.partition) == 7


@pytest.mark.parametrize("change", [
    {"rounds": 0}, {"num_clients": 1}, {"free_rider_ratio": 1.0}, {"hidden": ()},
    {"snapshot_rounds": (4,)}, {"workers": 0},
    {"data": DataConfig(distribution="shards")}, {"data": DataConfig(beta=0.0)},
])
def test_invalid_configs_rejected_before_training(change):
    with pytest.raises(ConfigError):
        run_experiment(replace(SMALL, **change))


def test_run_is_deterministic():
    a, b = run_experiment(SMALL), run_experiment(SMALL)
    assert [r.acc_benign for r in a.records] == [r.acc_benign for r in b.records]
    assert all(a.final_models[k].equals(b.final_models[k]) for k in a.final_models)
    np.testing.assert_array_equal(a.snapshots[3], b.snapshots[3])


def test_parallel_matches_sequential():
    a = run_experiment(SMALL)
    b = run_experiment(replace(SMALL, workers=4))
    assert all(a.final_models[k].equals(b.final_models[k]) for k in a.final_models)
    assert [r.dev for r in a.records] == [r.dev for r in b.records]


def test_record_bookkeeping():
    res = run_experiment(SMALL)
    assert len(res.records) == 3
    assert res.free_riders == [7, 8, 9]
    for r in res.records:
        assert sorted(r.contributors["clean"] + r.contributors["flagged"]) == list(range(10))
        assert abs(sum(r.dev) - 3.0) <= 1e-12
    assert res.hma_benign == hma(res.records, "benign")
    assert res.detection_round == detection_round(res.records)
    assert set(res.snapshots) == {1, 3}
    assert res.snapshots[1].shape == (10, 86, 32)
    assert all(len(a) == 3 * 3 for a in res.alphas.values())


def test_ordinary_free_riders_isolated_and_stuck():
    res = run_experiment(SMALL)
    assert res.detection_round == 1
    assert all(r.free_riders_flagged for r in res.records if r.exact)
    # the flagged group only ever averages copies of the initial model
    assert all(r.acc_freerider == res.records[0].acc_freerider for r in res.records)
    assert res.hma_benign > 0.8


def test_fedavg_mode_shares_one_model():
    res = run_experiment(replace(SMALL, defense=DefenseConfig(mode="fedavg_undefended")))
    assert set(res.final_models) == {"all"}
    for r in res.records:
        assert r.acc_benign == r.acc_freerider
        assert r.flagged is None and not r.exact
    assert res.detection_round is None


def test_no_free_riders():
    res = run_experiment(replace(SMALL, free_rider_ratio=0.0))
    assert res.hma_freerider is None
    assert all(r.acc_freerider is None for r in res.records)


def test_benign_insulation_against_free_rider_free_run():
    cfg = replace(SMALL, rounds=4)
    res = run_experiment(cfg)
    assert res.detection_round == 1 and all(r.exact for r in res.records)
    # same benign clients and seeds, no free-riders, plain averaging
    ref_cfg = replace(cfg, num_clients=7, free_rider_ratio=0.0,
                      defense=DefenseConfig(mode="fedavg_undefended"))
    ref = run_experiment(ref_cfg)
    assert res.final_models["clean"].equals(ref.final_models["all"])
    assert [r.acc_clean for r in res.records] == [r.acc_clean for r in ref.records]


def test_dirichlet_run():
    cfg = replace(SMALL, data=DataConfig(n_samples=1500, distribution="dirichlet", beta=0.5))
    res = run_experiment(cfg)
    assert len(res.records) == 3


def test_majority_split_counts_as_separation_not_detection():
    cfg = replace(SMALL, rounds=1, free_rider_ratio=0.9, snapshot_rounds=())
    res = run_experiment(cfg)
    r = res.records[0]
    # the lone benign client is the outlier, so it lands above the threshold
    assert r.exact and r.free_riders_flagged is False and not r.detected
    assert r.flagged == [0]
    assert res.separation_round == 1 and res.detection_round is None
