"""Pool-and-run ensembling over leave-subset-out training sets.

For each of R independent runs the series are split randomly into K
similar-size subsets.  Model k trains on every series except those in
subset k, so each series is forecast by exactly K - 1 of a run's models and
collects R * (K - 1) member forecasts overall, which are combined
componentwise (mean by default):

    y_avg = 1 / (R (K - 1)) * sum over runs and contributing models

Member trainers are fully independent (own seeds, own parameters), so they
can execute on a process pool; results are merged in (run, pool) order,
which makes the output independent of scheduling.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import add_months
from .trainer import TrainConfig, save_model, snapshot_average, train

__all__ = [
    "EnsembleConfig",
    "Partition",
    "MemberForecast",
    "ForecastSet",
    "derive_seed",
    "partition_series",
    "aggregate",
    "run_ensemble",
    "write_forecast_csv",
    "write_members_csv",
]


@dataclass
class EnsembleConfig:
    pool_size: int = 4  # K: models per run
    runs: int = 3  # R: independent runs
    base: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    combine: str = "mean"  # mean | median | trimmed_mean
    workers: int | None = None  # None: one per core, capped at the task count

    def __post_init__(self):
        if self.pool_size < 2:
            raise ValueError("pool size K must be at least 2")
        if self.runs < 1:
            raise ValueError("run count R must be at least 1")
        if self.combine not in ("mean", "median", "trimmed_mean"):
            raise ValueError(f"unknown combine rule {self.combine!r}")


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of the series ids by K similar-size subsets."""

    subsets: tuple  # tuple of tuples of ids

    def __post_init__(self):
        seen = set()
        for sub in self.subsets:
            for sid in sub:
                if sid in seen:
                    raise ValueError(f"id {sid!r} appears in two subsets")
                seen.add(sid)
        sizes = [len(s) for s in self.subsets]
        if max(sizes) - min(sizes) > 1:
            raise ValueError(f"subset sizes differ by more than 1: {sizes}")


def derive_seed(*parts):
    """Deterministic child seed from integer components (documented scheme:
    first 64-bit word of numpy's SeedSequence over the components)."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1, np.uint64)[0])


def partition_series(ids, pool_size, seed):
    """Uniform random split into ``pool_size`` subsets whose sizes differ by
    at most one; deterministic per seed."""
    ids = list(ids)
    if len(ids) < pool_size:
        raise ValueError(f"cannot split {len(ids)} series into {pool_size} subsets")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    q, r = divmod(len(ids), pool_size)
    subsets = []
    lo = 0
    for k in range(pool_size):
        size = q + (1 if k < r else 0)
        subsets.append(tuple(order[lo : lo + size]))
        lo += size
    return Partition(tuple(subsets))


@dataclass(frozen=True)
class MemberForecast:
    run: int  # 1-based run index r
    pool_index: int  # 1-based model index k within the run
    values: np.ndarray


@dataclass
class ForecastSet:
    contributors: dict  # id -> [MemberForecast], ordered by (run, pool_index)
    average: dict  # id -> 12-vector
    horizon_start: tuple  # (year, month) of the first forecast month


def aggregate(forecasts, combine="mean"):
    """Combine member forecasts componentwise."""
    forecasts = [np.asarray(f, dtype=float) for f in forecasts]
    if not forecasts:
        raise ValueError("no contributing forecasts")
    stacked = np.stack(forecasts)
    if combine == "mean":
        return stacked.mean(axis=0)
    if combine == "median":
        return np.median(stacked, axis=0)
    if combine == "trimmed_mean":
        if len(forecasts) < 3:
            return stacked.mean(axis=0)
        ordered = np.sort(stacked, axis=0)
        return ordered[1:-1].mean(axis=0)
    raise ValueError(f"unknown combine rule {combine!r}")


def _member_task(args):
    collection, member_ids, run, pool_index, cfg, artifacts_dir = args
    member = collection.subset(member_ids)
    tcfg = replace(cfg.base, seed=derive_seed(cfg.master_seed, run, pool_index))
    log = None
    try:
        if artifacts_dir is not None:
            log = open(os.path.join(artifacts_dir, f"train_r{run}_k{pool_index}.csv"), "w", encoding="utf-8")
        model = train(member, tcfg, log=log)
    finally:
        if log is not None:
            log.close()
    if artifacts_dir is not None:
        save_model(model, os.path.join(artifacts_dir, f"model_r{run}_k{pool_index}.json"))
    window = cfg.base.snapshot_window
    forecasts = {sid: snapshot_average(model.snapshots[sid], window) for sid in member.ids}
    return run, pool_index, forecasts


def run_ensemble(collection, cfg, artifacts_dir=None):
    """Train R * K leave-subset-out models and combine their forecasts.

    Every subset partition and trainer seed derives from ``master_seed``, so
    the result is reproducible and independent of worker scheduling.  With
    ``artifacts_dir`` each member writes its training log and checkpoint
    there.
    """
    ids = collection.ids
    tasks = []
    for run in range(1, cfg.runs + 1):
        partition = partition_series(ids, cfg.pool_size, derive_seed(cfg.master_seed, run))
        for k in range(1, cfg.pool_size + 1):
            held_out = set(partition.subsets[k - 1])
            member_ids = [sid for sid in ids if sid not in held_out]
            tasks.append((collection, member_ids, run, k, cfg, artifacts_dir))

    n_workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    n_workers = max(1, min(n_workers, len(tasks)))
    if n_workers == 1:
        outcomes = [_member_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(_member_task, tasks))

    contributors = {sid: [] for sid in ids}
    for run, k, forecasts in sorted(outcomes, key=lambda o: (o[0], o[1])):
        for sid, values in forecasts.items():
            contributors[sid].append(MemberForecast(run=run, pool_index=k, values=values))
    expected = cfg.runs * (cfg.pool_size - 1)
    for sid, members in contributors.items():
        if len(members) != expected:
            raise RuntimeError(
                f"series {sid}: {len(members)} member forecasts, expected {expected}"
            )
    average = {
        sid: aggregate([m.values for m in members], cfg.combine)
        for sid, members in contributors.items()
    }
    year, month = collection.common_end
    return ForecastSet(
        contributors=contributors,
        average=average,
        horizon_start=add_months(year, month, 1),
    )


def write_forecast_csv(forecast_set, path):
    """Aggregate forecasts as ``id,year,month,forecast`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "year", "month", "forecast"])
        year0, month0 = forecast_set.horizon_start
        for sid in sorted(forecast_set.average):
            for h, value in enumerate(forecast_set.average[sid]):
                year, month = add_months(year0, month0, h)
                writer.writerow([sid, year, month, repr(float(value))])


def write_members_csv(forecast_set, path):
    """Per-member forecasts with ``run,pool`` provenance columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "run", "pool", "year", "month", "forecast"])
        year0, month0 = forecast_set.horizon_start
        for sid in sorted(forecast_set.contributors):
            for member in forecast_set.contributors[sid]:
                for h, value in enumerate(member.values):
                    year, month = add_months(year0, month0, h)
                    writer.writerow([sid, member.run, member.pool_index, year, month, repr(float(value))])
