"""Replicated generate -> fit -> score sweeps and the posterior-sample study."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._meta import SPEC_VERSION, version_string
from .core import Dataset, ModelKind, PriorConfig
from .data import GeneratorSpec, simulate, view_for
from .inference import MapConfig, McmcConfig, NumericalFailure, map_estimate, mcmc_sample
from .metrics import CLICK_RANK, NON_CLICK, l1_click_rank_error, l1_nonclick_error

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "ReplicationResult",
    "CellSummary",
    "ExperimentReport",
    "ViolinResult",
    "run_replication",
    "run_sweep",
    "run_violin",
]

ALL_MODELS = (ModelKind.FULL, ModelKind.RANK, ModelKind.REWARD)

# Fixed (N, K, n) and swept values per experiment; values follow the
# reference experiment settings.
PRESETS: dict[str, dict] = {
    "catalog": dict(catalog_size=None, slate_size=2, samples_per_slate=1000,
                    values=(5, 10, 20, 30, 40, 50, 60, 70, 80)),
    "slate": dict(catalog_size=50, slate_size=None, samples_per_slate=1000,
                  values=(2, 3)),
    "samples": dict(catalog_size=80, slate_size=2, samples_per_slate=None,
                    values=(5, 10, 50, 100, 200, 300, 400, 500, 600, 700, 800, 900,
                            1000, 5000, 10000)),
    "nonclick": dict(catalog_size=None, slate_size=2, samples_per_slate=1000,
                     values=(5, 10, 20, 30, 40, 50, 60, 70, 80),
                     metric=NON_CLICK, models=(ModelKind.FULL, ModelKind.REWARD)),
    "violin": dict(catalog_size=20, slate_size=2, samples_per_slate=1000, values=(20,)),
}
HEAVY_SLATE_VALUES = (2, 3, 4)
# ~230k slates per dataset at K=4; 13-40 s and ~300 MB per replication,
# about 27 minutes single-threaded for 50 replications (measured).
HEAVY_NOTE = ("include K=4 in the slate sweep (230300 slates per dataset; about 30 s per "
              "replication, roughly 30 minutes for 50 on one core)")

_SWEPT = {"catalog": "catalog_size", "nonclick": "catalog_size", "violin": "catalog_size",
          "slate": "slate_size", "samples": "samples_per_slate"}


@dataclass(frozen=True)
class ExperimentConfig:
    sweep: str
    values: tuple[int, ...]
    catalog_size: int | None = None
    slate_size: int | None = None
    samples_per_slate: int | None = None
    replications: int = 50
    base_seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    map_config: MapConfig = field(default_factory=MapConfig)
    mcmc_config: McmcConfig = field(default_factory=McmcConfig)
    models: tuple[ModelKind, ...] = ALL_MODELS
    metric: str = CLICK_RANK
    all_positions: bool = False

    def __post_init__(self):
        if self.sweep not in _SWEPT:
            raise ValueError(f"unknown sweep {self.sweep!r}; choose from {sorted(_SWEPT)}")
        values = tuple(int(v) for v in self.values)
        if not values or min(values) <= 0:
            raise ValueError("sweep values must be a non-empty list of positive integers")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "models", tuple(ModelKind.parse(m) for m in self.models))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.metric not in (CLICK_RANK, NON_CLICK):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == NON_CLICK and ModelKind.RANK in self.models:
            raise ValueError("the rank model has no phi and cannot be scored on non-clicks")

    @classmethod
    def preset(cls, name: str, heavy: bool = False, **overrides) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        kw = dict(PRESETS[name])
        if name == "slate" and heavy:
            kw["values"] = HEAVY_SLATE_VALUES
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(sweep=name, **kw)

    def cell(self, value: int) -> tuple[int, int, int]:
        """(N, K, n) for one sweep value."""
        dims = {"catalog_size": self.catalog_size, "slate_size": self.slate_size,
                "samples_per_slate": self.samples_per_slate}
        dims[_SWEPT[self.sweep]] = value
        missing = [k for k, v in dims.items() if v is None]
        if missing:
            raise ValueError(f"fixed parameters not set: {missing}")
        return dims["catalog_size"], dims["slate_size"], dims["samples_per_slate"]

    def to_dict(self) -> dict:
        return {
            "sweep": self.sweep,
            "values": list(self.values),
            "catalog_size": self.catalog_size,
            "slate_size": self.slate_size,
            "samples_per_slate": self.samples_per_slate,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "prior": self.prior.to_dict(),
            "map_config": self.map_config.to_dict(),
            "mcmc_config": self.mcmc_config.to_dict(),
            "models": [m.value for m in self.models],
            "metric": self.metric,
            "all_positions": self.all_positions,
        }


@dataclass(frozen=True)
class ReplicationResult:
    seed: int
    values: dict[ModelKind, float]
    converged: dict[ModelKind, bool]
    dataset_digest: str

    def failed(self, kind: ModelKind) -> bool:
        return not math.isfinite(self.values[kind])


def _score(metric: str, kind: ModelKind, est, truth, slates, all_positions: bool) -> float:
    if metric == NON_CLICK:
        return l1_nonclick_error(est, truth, slates).value
    return l1_click_rank_error(est.theta, truth.theta, slates, all_positions=all_positions).value


def _check_same_realization(raw: Dataset, views: dict[ModelKind, Dataset]) -> None:
    # the reward and rank views together determine the raw counts
    reward, rank = views.get(ModelKind.REWARD), views.get(ModelKind.RANK)
    if reward is not None and rank is not None:
        rebuilt = Dataset(raw.catalog_size, raw.slate_size, rank.slates,
                          reward.non_clicks, rank.clicks)
        if rebuilt.digest() != raw.digest():
            raise RuntimeError("model views were not derived from the same dataset")
    for v in views.values():
        if not np.array_equal(v.slates, raw.slates) or not np.array_equal(
                v.total_clicks, raw.total_clicks):
            raise RuntimeError("model views were not derived from the same dataset")


def run_replication(models: Sequence[ModelKind | str], catalog_size: int, slate_size: int,
                    samples_per_slate: int, seed: int, prior: PriorConfig | None = None,
                    map_config: MapConfig | None = None, metric: str = CLICK_RANK,
                    all_positions: bool = False) -> ReplicationResult:
    """Simulate one dataset and score every requested model fitted to its own view of it.

    A fit that fails numerically, or yields a non-finite metric, is recorded
    as NaN.
    """
    models = tuple(ModelKind.parse(m) for m in models)
    spec = GeneratorSpec.standard(catalog_size, slate_size, samples_per_slate, seed)
    raw = simulate(spec)
    truth = spec.true_params
    views = {k: view_for(k, raw) for k in models}
    _check_same_realization(raw, views)

    values, converged = {}, {}
    for kind in models:
        try:
            fit = map_estimate(kind, views[kind], prior, map_config)
            v = _score(metric, kind, fit.params, truth, raw.slates, all_positions)
            converged[kind] = fit.converged
        except (NumericalFailure, FloatingPointError, ValueError):
            v, converged[kind] = math.nan, False
        values[kind] = v if math.isfinite(v) else math.nan
    return ReplicationResult(seed, values, converged, raw.digest())


@dataclass(frozen=True)
class CellSummary:
    sweep_value: int
    model: ModelKind
    values: tuple[float, ...]
    n_unconverged: int = 0

    @property
    def finite(self) -> np.ndarray:
        v = np.array(self.values, dtype=float)
        return v[np.isfinite(v)]

    @property
    def n_replications(self) -> int:
        return len(self.values)

    @property
    def n_failed(self) -> int:
        return self.n_replications - self.finite.size

    @property
    def mean(self) -> float:
        f = self.finite
        return float(f.mean()) if f.size else math.nan

    @property
    def std(self) -> float:
        """Sample standard deviation (ddof=1) over successful replications."""
        f = self.finite
        if f.size == 0:
            return math.nan
        return float(f.std(ddof=1)) if f.size > 1 else 0.0

    @property
    def unreliable(self) -> bool:
        return self.n_failed > 0.1 * self.n_replications

    def to_dict(self) -> dict:
        return {
            "sweep_value": self.sweep_value,
            "model": self.model.value,
            "mean": self.mean,
            "std": self.std,
            "n_replications": self.n_replications,
            "n_failed": self.n_failed,
            "n_unconverged": self.n_unconverged,
            "unreliable": self.unreliable,
            "values": [None if not math.isfinite(v) else v for v in self.values],
        }


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    cells: tuple[CellSummary, ...]
    wall_clock_seconds: float
    version: str

    def cell(self, sweep_value: int, model: ModelKind | str) -> CellSummary:
        model = ModelKind.parse(model)
        for c in self.cells:
            if c.sweep_value == sweep_value and c.model is model:
                return c
        raise KeyError((sweep_value, model))

    def means(self, model: ModelKind | str) -> dict[int, float]:
        model = ModelKind.parse(model)
        return {c.sweep_value: c.mean for c in self.cells if c.model is model}

    def to_dict(self) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "type": "experiment_report",
            "version": self.version,
            "wall_clock_seconds": self.wall_clock_seconds,
            "config": self.config.to_dict(),
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep_value", "model", "mean", "std", "n_replications", "n_failed"])
        for c in self.cells:
            w.writerow([c.sweep_value, c.model.value, repr(c.mean), repr(c.std),
                        c.n_replications, c.n_failed])
        return buf.getvalue()

    def write(self, directory, stem: str | None = None) -> tuple[Path, Path]:
        directory = Path(directory)
        stem = stem or self.config.sweep
        js, cs = directory / f"{stem}.json", directory / f"{stem}.csv"
        js.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        cs.write_text(self.to_csv(), encoding="utf-8", newline="\n")
        return js, cs


def _replication_task(args) -> ReplicationResult:
    return run_replication(*args)


def _map_tasks(tasks: list, threads: int | None):
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(tasks) <= 1:
        return [_replication_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        # map() yields in submission order, so the reduction is deterministic
        return list(pool.map(_replication_task, tasks, chunksize=1))


def run_sweep(config: ExperimentConfig, threads: int | None = None,
              progress=None) -> ExperimentReport:
    """Run ``config.replications`` replications for every sweep value.

    Replication r of every cell uses seed ``base_seed + r``. ``progress`` is
    called as ``progress(sweep_value, results)`` after each cell.
    """
    start = time.perf_counter()
    cells = []
    for value in config.values:
        N, K, n = config.cell(value)
        tasks = [(config.models, N, K, n, config.base_seed + r, config.prior,
                  config.map_config, config.metric, config.all_positions)
                 for r in range(config.replications)]
        results = _map_tasks(tasks, threads)
        for kind in config.models:
            cells.append(CellSummary(
                value, kind,
                tuple(res.values[kind] for res in results),
                sum(not res.converged[kind] for res in results)))
        if progress is not None:
            progress(value, results)
    return ExperimentReport(config, tuple(cells), time.perf_counter() - start, version_string())


# -- posterior-sample study ------------------------------------------------------


@dataclass(frozen=True)
class ViolinResult:
    catalog_size: int
    slate_size: int
    samples_per_slate: int
    seed: int
    values: dict[ModelKind, np.ndarray]
    acceptance_rate: dict[ModelKind, float]
    warnings: dict[ModelKind, str | None]
    dataset_digest: str
    wall_clock_seconds: float = 0.0

    def summary(self) -> dict[str, dict]:
        return {k.value: {"mean": float(v.mean()), "std": float(v.std(ddof=1)),
                          "median": float(np.median(v)), "num_samples": int(v.size),
                          "acceptance_rate": self.acceptance_rate[k],
                          "warning": self.warnings[k]}
                for k, v in self.values.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "sample_index", "l1"])
        for kind, vals in self.values.items():
            for i, v in enumerate(vals.tolist()):
                w.writerow([kind.value, i, repr(v)])
        return buf.getvalue()

    def to_dict(self, config: dict | None = None) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "type": "violin_report",
            "version": version_string(),
            "wall_clock_seconds": self.wall_clock_seconds,
            "catalog_size": self.catalog_size,
            "slate_size": self.slate_size,
            "samples_per_slate": self.samples_per_slate,
            "seed": self.seed,
            "dataset_sha256": self.dataset_digest,
            "config": config or {},
            "models": self.summary(),
        }

    def write(self, directory, stem: str = "violin", config: dict | None = None):
        directory = Path(directory)
        js, cs = directory / f"{stem}.json", directory / f"{stem}.csv"
        js.write_text(json.dumps(self.to_dict(config), indent=2) + "\n", encoding="utf-8")
        cs.write_text(self.to_csv(), encoding="utf-8", newline="\n")
        return js, cs


def run_violin(catalog_size: int = 20, slate_size: int = 2, samples_per_slate: int = 1000,
               seed: int = 0, prior: PriorConfig | None = None,
               mcmc_config: McmcConfig | None = None, map_config: MapConfig | None = None,
               models: Sequence[ModelKind | str] = ALL_MODELS) -> ViolinResult:
    """Click-rank L1 error of every posterior sample, per model, on one dataset."""
    start = time.perf_counter()
    models = tuple(ModelKind.parse(m) for m in models)
    mcmc_config = mcmc_config or McmcConfig(seed=seed)
    spec = GeneratorSpec.standard(catalog_size, slate_size, samples_per_slate, seed)
    raw = simulate(spec)
    truth = spec.true_params.theta
    values, acc, warns = {}, {}, {}
    for kind in models:
        post = mcmc_sample(kind, view_for(kind, raw), prior, mcmc_config, map_config)
        values[kind] = np.array([l1_click_rank_error(t, truth, raw.slates).value
                                 for t in post.theta])
        acc[kind] = post.acceptance_rate
        warns[kind] = post.warning
    return ViolinResult(catalog_size, slate_size, samples_per_slate, seed, values, acc,
                        warns, raw.digest(), time.perf_counter() - start)
