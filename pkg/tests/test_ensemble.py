import os
from dataclasses import replace

import numpy as np
import pytest

from mtlf.dataset import synthesize
from mtlf.ensemble import (
    EnsembleConfig,
    ForecastSet,
    Partition,
    aggregate,
    derive_seed,
    partition_series,
    run_ensemble,
    write_forecast_csv,
    write_members_csv,
)
from mtlf.loss import LossConfig
from mtlf.trainer import TrainConfig


def tiny_train_cfg():
    return TrainConfig(
        epochs=2,
        batch_size=3,
        snapshot_window=2,
        m=3,
        seed=0,
        loss=LossConfig(tau=0.4, lam=50.0),
    )


def test_partition_sizes_35_by_4():
    part = partition_series([f"S{i:02d}" for i in range(35)], 4, seed=5)
    sizes = sorted(len(s) for s in part.subsets)
    assert sizes == [8, 9, 9, 9]
    all_ids = [sid for sub in part.subsets for sid in sub]
    assert len(all_ids) == 35
    assert len(set(all_ids)) == 35


def test_partition_forced_singletons():
    part = partition_series(["a", "b", "c", "d"], 4, seed=1)
    assert sorted(len(s) for s in part.subsets) == [1, 1, 1, 1]


def test_partition_deterministic_per_seed():
    ids = [f"S{i}" for i in range(10)]
    assert partition_series(ids, 3, seed=9) == partition_series(ids, 3, seed=9)
    assert partition_series(ids, 3, seed=9) != partition_series(ids, 3, seed=10)


def test_partition_rejects_too_few_ids():
    with pytest.raises(ValueError, match="cannot split"):
        partition_series(["a", "b"], 3, seed=0)


def test_partition_validates_invariants():
    with pytest.raises(ValueError, match="two subsets"):
        Partition((("a",), ("a",)))
    with pytest.raises(ValueError, match="differ"):
        Partition((("a", "b", "c"), ("d",)))


def test_derive_seed_distinct_pairs():
    seeds = {derive_seed(42, r, k) for r in range(1, 4) for k in range(1, 5)}
    assert len(seeds) == 12
    assert derive_seed(42, 1, 1) == derive_seed(42, 1, 1)


def test_aggregate_rules():
    vecs = [np.full(12, 100.0), np.full(12, 200.0), np.full(12, 300.0)]
    np.testing.assert_array_equal(aggregate(vecs), np.full(12, 200.0))
    np.testing.assert_array_equal(aggregate(vecs[:1]), vecs[0])
    np.testing.assert_array_equal(aggregate(vecs, "median"), np.full(12, 200.0))
    np.testing.assert_array_equal(aggregate(vecs, "trimmed_mean"), np.full(12, 200.0))
    perm = [vecs[2], vecs[0], vecs[1]]
    np.testing.assert_array_equal(aggregate(perm), aggregate(vecs))
    with pytest.raises(ValueError):
        aggregate([])


def test_config_validation():
    with pytest.raises(ValueError, match="K"):
        EnsembleConfig(pool_size=1)
    with pytest.raises(ValueError, match="R"):
        EnsembleConfig(runs=0)
    with pytest.raises(ValueError, match="combine"):
        EnsembleConfig(combine="vote")


def test_run_ensemble_topology_and_aggregate():
    coll = synthesize(6, 3, seed=20)
    cfg = EnsembleConfig(pool_size=3, runs=2, base=tiny_train_cfg(), master_seed=11, workers=1)
    fs = run_ensemble(coll, cfg)
    assert isinstance(fs, ForecastSet)
    assert set(fs.contributors) == set(coll.ids)
    for sid, members in fs.contributors.items():
        assert len(members) == cfg.runs * (cfg.pool_size - 1)
        tags = [(m.run, m.pool_index) for m in members]
        assert len(set(tags)) == len(tags)  # a (run, model) contributes at most once
        np.testing.assert_allclose(
            fs.average[sid], np.mean([m.values for m in members], axis=0), rtol=1e-15
        )
        assert np.all(fs.average[sid] > 0)
    assert fs.horizon_start == (2015, 1)


def test_held_out_series_never_forecast_by_its_model():
    coll = synthesize(6, 3, seed=21)
    cfg = EnsembleConfig(pool_size=3, runs=2, base=tiny_train_cfg(), master_seed=3, workers=1)
    fs = run_ensemble(coll, cfg)
    for run in range(1, cfg.runs + 1):
        partition = partition_series(coll.ids, cfg.pool_size, derive_seed(cfg.master_seed, run))
        for k in range(1, cfg.pool_size + 1):
            held_out = set(partition.subsets[k - 1])
            for sid in held_out:
                tags = [(m.run, m.pool_index) for m in fs.contributors[sid]]
                assert (run, k) not in tags


def test_degenerate_ensemble_k2_r1():
    coll = synthesize(4, 3, seed=22)
    cfg = EnsembleConfig(pool_size=2, runs=1, base=tiny_train_cfg(), master_seed=5, workers=1)
    fs = run_ensemble(coll, cfg)
    for sid, members in fs.contributors.items():
        assert len(members) == 1
        np.testing.assert_array_equal(fs.average[sid], members[0].values)


def test_run_ensemble_deterministic_and_parallel_equivalent(tmp_path):
    coll = synthesize(4, 3, seed=23)
    base = tiny_train_cfg()
    serial = run_ensemble(coll, EnsembleConfig(pool_size=2, runs=2, base=base, master_seed=9, workers=1))
    parallel = run_ensemble(coll, EnsembleConfig(pool_size=2, runs=2, base=base, master_seed=9, workers=2))
    for sid in coll.ids:
        np.testing.assert_array_equal(serial.average[sid], parallel.average[sid])

    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    write_forecast_csv(serial, p1)
    write_forecast_csv(parallel, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_artifacts_written(tmp_path):
    coll = synthesize(4, 3, seed=24)
    cfg = EnsembleConfig(pool_size=2, runs=1, base=tiny_train_cfg(), master_seed=2, workers=1)
    fs = run_ensemble(coll, cfg, artifacts_dir=str(tmp_path))
    assert (tmp_path / "model_r1_k1.json").exists()
    assert (tmp_path / "model_r1_k2.json").exists()
    log = (tmp_path / "train_r1_k1.csv").read_text().splitlines()
    assert log[0] == "epoch,batch,loss"
    assert len(log) > 1

    members_path = tmp_path / "members.csv"
    write_members_csv(fs, members_path)
    rows = members_path.read_text().splitlines()
    assert rows[0] == "id,run,pool,year,month,forecast"
    assert len(rows) == 1 + sum(12 * len(m) for m in fs.contributors.values())
