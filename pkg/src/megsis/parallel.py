"""Master-worker execution of SIS on a local worker pool.

The ``m`` paths are split into ``W`` equal substreams.  Each worker runs the
full ``T``-step sampler on its substream with its own random stream and the
master stacks the results in worker order.

* ``per_worker`` pooling: every worker is a standalone SIS run, resampling
  included; workers only meet at the start and at the final stack.
* ``master_pooled`` pooling: workers only extend their paths and evaluate
  likelihoods; after every step the master pools and normalises all
  weights, checks the pooled ESS and resamples globally when needed.

CPU time is measured per worker with the thread (or process) CPU clock and
summed with the master's for the aggregate figure.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .sis import (EnsembleCollapse, ParticleEnsemble, SisConfig, ess, resample,
                  run_sis)
from .state_space import initial_sample, likelihood_logpdf, transition_sample
from .streams import derive_worker_seed, make_rng

__all__ = ["RunPlan", "TimingReport", "WorkerError", "run_parallel", "bench_scaling",
           "BenchTable", "available_cores"]


class WorkerError(RuntimeError):
    def __init__(self, worker_index, cause):
        super().__init__(f"worker {worker_index} failed: {cause!r}")
        self.worker_index = worker_index
        self.cause = cause


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass(frozen=True)
class RunPlan:
    """``m`` paths over ``workers`` substreams.

    ``backend`` is ``"thread"`` or ``"process"``; ``master_pooled`` needs
    the thread backend because workers synchronise with the master every step.
    """

    workers: int
    m: int
    pooling: str = "per_worker"
    seed: int = 0
    timesteps: int = 0
    backend: str = "thread"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.m % self.workers:
            raise ValueError(f"m={self.m} is not divisible by W={self.workers}; "
                             "choose m as a multiple of the worker count")
        if self.pooling not in ("per_worker", "master_pooled"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.backend not in ("thread", "process"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.pooling == "master_pooled" and self.backend != "thread":
            raise ValueError("master_pooled runs in lock-step and needs the thread backend")

    @property
    def paths_per_worker(self) -> int:
        return self.m // self.workers

    def worker_seed(self, k: int) -> np.random.SeedSequence:
        return derive_worker_seed(self.seed, k, self.workers)

    def master_seed(self) -> np.random.SeedSequence:
        # spawn key W is never given to a worker of this plan
        return np.random.SeedSequence(int(self.seed), spawn_key=(self.workers,))


@dataclass(frozen=True)
class TimingReport:
    plan: RunPlan
    wall_time: float
    worker_cpu: tuple
    master_cpu: float = 0.0

    @property
    def cpu_time(self) -> float:
        return float(sum(self.worker_cpu) + self.master_cpu)

    @property
    def timesteps(self) -> int:
        return self.plan.timesteps


def _worker_run(model, obs, ys, cfg):
    t0 = time.thread_time()
    ens = run_sis(model, obs, ys, cfg)
    return ens.paths, np.asarray(ens.log_weights), time.thread_time() - t0


def _worker_run_process(model, obs, ys, cfg):
    t0 = time.process_time()
    ens = run_sis(model, obs, ys, cfg)
    return ens.paths, np.asarray(ens.log_weights), time.process_time() - t0


def _per_worker(model, obs, ys, cfg, plan):
    cfgs = [replace(cfg, m=plan.paths_per_worker, seed=plan.worker_seed(k))
            for k in range(plan.workers)]
    if plan.workers == 1:
        try:
            t0 = time.thread_time()
            ens = run_sis(model, obs, ys, cfgs[0])
            return ens, (time.thread_time() - t0,), 0.0
        except EnsembleCollapse:
            raise
        except Exception as exc:
            raise WorkerError(0, exc) from exc
    m0 = time.thread_time()
    pool_cls, fn = ((ThreadPoolExecutor, _worker_run) if plan.backend == "thread"
                    else (ProcessPoolExecutor, _worker_run_process))
    with pool_cls(max_workers=plan.workers) as pool:
        futures = [pool.submit(fn, model, obs, ys, c) for c in cfgs]
        results = []
        for k, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except EnsembleCollapse:
                raise
            except Exception as exc:
                raise WorkerError(k, exc) from exc
    paths = np.concatenate([r[0] for r in results])
    lw = np.concatenate([r[1] for r in results])
    ens = ParticleEnsemble.from_paths(paths, lw)
    return ens, tuple(r[2] for r in results), time.thread_time() - m0


def _extend(model, obs, states, y, rng, t):
    t0 = time.thread_time()
    new = transition_sample(model, states, rng, t)
    inc = likelihood_logpdf(obs, new, y)
    return new, inc, time.thread_time() - t0


def _master_pooled(model, obs, ys, cfg, plan):
    if cfg.variant != "resampling":
        raise ValueError("master_pooled supports the resampling variant only")
    W, n = plan.workers, plan.paths_per_worker
    rngs = [make_rng(plan.worker_seed(k)) for k in range(W)]
    master_rng = make_rng(plan.master_seed())
    m0 = time.thread_time()
    wcpu = np.zeros(W)
    ens = ParticleEnsemble(np.concatenate([initial_sample(model, g, size=n) for g in rngs]),
                           np.zeros(plan.m), 0)
    T = ys.shape[0]
    with ThreadPoolExecutor(max_workers=W) as pool:
        for t in range(1, T + 1):
            futures = [pool.submit(_extend, model, obs, ens.states[k * n:(k + 1) * n],
                                   ys[t - 1], rngs[k], t) for k in range(W)]
            parts = []
            for k, fut in enumerate(futures):
                try:
                    parts.append(fut.result())
                except Exception as exc:
                    raise WorkerError(k, exc) from exc
            wcpu += [p[2] for p in parts]
            lw = ens.log_weights + np.concatenate([p[1] for p in parts])
            lw = np.where(np.isnan(lw), -np.inf, lw)
            if not np.isfinite(lw.max()):
                raise EnsembleCollapse(f"every particle left the support at t={t}")
            ens = ParticleEnsemble(np.concatenate([p[0] for p in parts]), lw, t, ens,
                                   np.arange(plan.m))
            if t == T or cfg.resample_mode == "every_step" or (
                    cfg.resample_mode == "ess_threshold" and ess(ens) < cfg.tau * plan.m):
                ens = resample(ens, cfg.resample_scheme, master_rng)
    return ens, tuple(wcpu), time.thread_time() - m0


def run_parallel(model, obs, ys, sis_cfg: SisConfig, plan: RunPlan):
    """Run ``plan`` and return ``(ensemble, TimingReport)``.

    Worker ``k`` uses the stream ``derive_worker_seed(plan.seed, k, W)``;
    with ``W = 1`` this is the sequential run with seed ``plan.seed``,
    bit for bit.  ``sis_cfg.m`` and ``sis_cfg.seed`` are replaced by the
    plan's values.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    plan = replace(plan, timesteps=ys.shape[0])
    cfg = replace(sis_cfg, m=plan.m, seed=plan.seed)
    w0 = time.perf_counter()
    if plan.pooling == "per_worker":
        ens, wcpu, mcpu = _per_worker(model, obs, ys, cfg, plan)
    else:
        ens, wcpu, mcpu = _master_pooled(model, obs, ys, cfg, plan)
    return ens, TimingReport(plan, time.perf_counter() - w0, wcpu, mcpu)


@dataclass
class BenchTable:
    """Timing grid over worker counts and time-series lengths."""

    worker_counts: tuple
    timestep_counts: tuple
    m: int
    reports: dict = field(default_factory=dict)   # (W, T) -> TimingReport

    def cpu(self, W, T) -> float:
        return self.reports[(W, T)].cpu_time

    def wall(self, W, T) -> float:
        return self.reports[(W, T)].wall_time

    def rows(self) -> list:
        head = ["workers", "load_per_task"]
        head += [f"cpu_s_T{T}" for T in self.timestep_counts]
        head += [f"wall_min_T{T}" for T in self.timestep_counts]
        out = [head]
        for W in self.worker_counts:
            row = [W, self.m // W]
            row += [repr(round(self.cpu(W, T), 6)) for T in self.timestep_counts]
            row += [repr(round(self.wall(W, T) / 60.0, 8)) for T in self.timestep_counts]
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())


def bench_scaling(model, obs, ys, sis_cfg: SisConfig, worker_counts: Sequence[int],
                  timestep_counts: Sequence[int], backend: str = "thread",
                  pooling: str = "per_worker", warmup: bool = True) -> BenchTable:
    """Time ``run_parallel`` on every (W, T) pair, using the first T rows of ``ys``.

    ``warmup`` runs the smallest cell once untimed first, so lazy imports
    and cold caches are not charged to the first measurement.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if max(timestep_counts) > ys.shape[0]:
        raise ValueError(f"need {max(timestep_counts)} observation rows, got {ys.shape[0]}")
    table = BenchTable(tuple(worker_counts), tuple(timestep_counts), sis_cfg.m)
    if warmup:
        W0, T0 = min(worker_counts), min(timestep_counts)
        run_parallel(model, obs, ys[:T0], sis_cfg, RunPlan(W0, sis_cfg.m, pooling, sis_cfg.seed, T0, backend))
    for W in worker_counts:
        for T in timestep_counts:
            plan = RunPlan(W, sis_cfg.m, pooling, sis_cfg.seed, T, backend)
            _, rep = run_parallel(model, obs, ys[:T], sis_cfg, plan)
            table.reports[(W, T)] = rep
    return table
