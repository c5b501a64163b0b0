"""``megsis`` command line: simulate, fit, bench, diagnose.

Every command reads a flat config (see ``configs/`` and the README for
the keys) and writes plain CSV plus a ``manifest.cfg``.  The manifest is
itself a config: feeding it back through ``--config`` repeats the run and
reproduces every output file byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data/file error,
4 numerical collapse.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as mio
from .diagnostics import DiagnosticsReport, diagnose
from .forward import DipoleTooCloseError, FieldGain
from .gibbs import GibbsConfig, run_chains
from .io import REQUIRED, ConfigError, DataError
from .parallel import RunPlan, bench_scaling, run_parallel
from .scenarios import (Scenario, case1_model, gen_case1, gen_case2, make_sensor_array,
                        simulate)
from .sis import EnsembleCollapse, SisConfig
from .state_space import ArModel, ObsModel, clamp_count
from .streams import make_rng

log = logging.getLogger("megsis")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_COLLAPSE = 0, 2, 3, 4

METHODS = ("sis_resampling", "sis_rejection", "rw_gibbs", "hybrid_gibbs", "block_gibbs")
PRESETS = {"case1": gen_case1, "case2": gen_case2}


# -- config resolution ------------------------------------------------------


def _load(args) -> mio.Config:
    cfg = mio.read_config(args.config) if args.config else mio.Config(source="<flags>")
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg["plan.workers"] = args.workers
    if getattr(args, "window", None):
        mio.parse_range(args.window, "--window")
        cfg["data.window"] = args.window
    if "seed" not in cfg:
        raise ConfigError(f"{cfg.source}: a seed is required (config key 'seed' or --seed)")
    cfg.get_int("seed")
    return cfg


def _versions() -> list:
    import scipy
    return [("version.megsis", __version__), ("version.numpy", np.__version__),
            ("version.scipy", scipy.__version__)]


def _write_manifest(cfg: mio.Config, out: Path, inputs: dict) -> None:
    """Effective config plus input hashes, keys sorted, output location left out."""
    items = {k: v for k, v in cfg.items() if not k.startswith(("output.", "version."))}
    items = {k: v for k, v in items.items() if not k.startswith("input.sha256.")}
    for name, path in sorted(inputs.items()):
        items[f"input.sha256.{name}"] = mio.sha256_file(path)
    items.update(_versions())
    mio.write_config(sorted(items.items()), out / "manifest.cfg",
                     header="megsis run manifest; rerun with: megsis <command> --config manifest.cfg")


def _check_hashes(cfg: mio.Config, inputs: dict) -> None:
    for name, path in inputs.items():
        key = f"input.sha256.{name}"
        if key in cfg and cfg[key] != mio.sha256_file(path):
            raise DataError(f"{path} does not match the hash recorded in {cfg.source}")


def _scenario(cfg: mio.Config):
    """Build the dataset to fit; returns ``(Scenario, input_files)``."""
    source = cfg.get_str("data.source", "preset", ("preset", "dir", "recording"))
    seed = cfg.get_int("seed")
    inputs = {}
    if source == "preset":
        name = cfg.get_str("data.preset", "case1", tuple(PRESETS))
        kw = {"kappa": cfg.get_float("obs.kappa", 1.0)}
        if "data.T" in cfg:
            kw["T"] = cfg.get_int("data.T")
        try:
            sc = PRESETS[name](cfg.get_int("data.seed", seed), **kw)
        except ValueError as exc:
            raise ConfigError(f"{cfg.source}: {exc}") from None
    elif source == "dir":
        d = Path(cfg.get_str("data.dir", REQUIRED))
        sc = mio.read_scenario(d)
        for f in ("scenario.cfg", "truth.csv", "observations.csv", "schedule.csv", "sensors.csv"):
            inputs[f"data.{f}"] = d / f
    else:
        data = Path(cfg.get_str("data.recording", REQUIRED))
        geom = Path(cfg.get_str("data.geometry", REQUIRED))
        window = cfg.get_range("data.window")
        rec = mio.ingest_recording(data, geom, window)
        inputs = {"data.recording": data, "data.geometry": geom}
        model = _recorded_model(cfg)
        try:
            obs = ObsModel(rec.sensors, FieldGain(cfg.get_float("obs.kappa", 1.0)),
                           cfg.get_float("obs.sigma1", 0.25))
        except ValueError as exc:
            raise ConfigError(f"{cfg.source}: {exc}") from None
        truth = np.full((rec.ys.shape[0] + 1, 6), np.nan)
        sc = Scenario(model, obs, truth, rec.ys, ("ar",) * rec.ys.shape[0], None, "recording")
        return sc, inputs
    window = cfg.get_range("data.window")
    if window is not None:
        t0, t1 = window
        if not 1 <= t0 <= t1 <= sc.T:
            raise DataError(f"window {t0}:{t1} outside timesteps 1:{sc.T}")
        sc = Scenario(sc.model, sc.obs, sc.truth[[0] + list(range(t0, t1 + 1))], sc.ys[t0 - 1:t1],
                      sc.schedule[t0 - 1:t1], sc.seed, sc.name)
    return sc, inputs


def _recorded_model(cfg: mio.Config) -> ArModel:
    m_ini = cfg.get_floats("model.m_ini", REQUIRED, 6)
    sigma2 = cfg.get_floats("model.sigma2", np.full(6, 0.01), 6).copy()
    if cfg.get_bool("model.fixed_moment", False):
        sigma2[3:] = 0.0
    bounds = cfg.get_floats("model.bounds", None, 12)
    return ArModel(m_ini, cfg.get_floats("model.m_com", np.zeros(6), 6),
                   cfg.get_floats("model.rho", np.ones(6), 6), sigma2,
                   None if bounds is None else bounds.reshape(6, 2))


def _diag_timesteps(cfg, T):
    ts = cfg.get_ints("diagnostics.timesteps", [t for t in (9, 10, 11, 12) if t <= T] or [T])
    bad = [t for t in ts if not 1 <= t <= T]
    if bad:
        raise ConfigError(f"diagnostics.timesteps {bad} outside 1..{T}")
    return ts


def _component(cfg):
    name = cfg.get_str("diagnostics.component", "z", mio.COMPONENTS)
    return mio.COMPONENTS.index(name)


def _write_diagnostics(reports, out: Path) -> None:
    if not reports:
        return
    n_lags = len(reports[0].acf)
    mio.write_table(out / "diagnostics.csv", DiagnosticsReport.csv_header(n_lags),
                    [r.csv_row() for r in reports])
    (out / "diagnostics.txt").write_text("\n".join(r.to_text() for r in reports))


def _summary_rows(paths, weights):
    w = weights / weights.sum()
    mean = np.einsum("j,jtc->tc", w, paths)
    var = np.einsum("j,jtc->tc", w, (paths - mean) ** 2)
    return mean, var


def _write_moments(path, mean, var, t0=0):
    header = ["timestep"] + [f"mean_{c}" for c in mio.COMPONENTS] + [f"var_{c}" for c in mio.COMPONENTS]
    mio.write_matrix(path, header, range(t0, t0 + mean.shape[0]), np.hstack([mean, var]))


# -- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    cfg["data.source"] = cfg.get_str("data.source", "preset", ("preset",))
    sc, _ = _scenario(cfg)
    out = mio.output_dir(args.out, cfg)
    out.mkdir(parents=True, exist_ok=True)
    mio.write_scenario(sc, out)
    _write_manifest(cfg, out, {})
    print(f"wrote {sc.name} scenario (T={sc.T}, L={sc.obs.L}) to {out}")
    return EXIT_OK


def _sis_config(cfg, variant, seed):
    return SisConfig(
        m=cfg.get_int("sis.m", 2000),
        variant=variant,
        resample_mode=cfg.get_str("sis.resample_mode", "ess_threshold"),
        tau=cfg.get_float("sis.tau", 0.5),
        resample_scheme=cfg.get_str("sis.resample_scheme", "multinomial"),
        m_prime=cfg.get_int("sis.m_prime"),
        seed=seed,
    )


def _fit_sis(cfg, sc, method, out):
    seed = cfg.get_int("seed")
    try:
        scfg = _sis_config(cfg, "rejection" if method == "sis_rejection" else "resampling", seed)
        plan = RunPlan(cfg.get_int("plan.workers", 1), scfg.m,
                       cfg.get_str("plan.pooling", "per_worker"), seed,
                       backend=cfg.get_str("plan.backend", "thread"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    reps = cfg.get_int("sis.replicates", 1)
    if reps < 1:
        raise ConfigError("sis.replicates must be positive")
    ensembles = []
    for r in range(reps):
        # replicate r uses seed + r; replicate 0 is the plain run
        p = replace(plan, seed=seed + r)
        ens, _ = run_parallel(sc.model, sc.obs, sc.ys, scfg, p)
        ensembles.append(ens)
    ens = ensembles[0]
    mio.write_ensemble(ens, out)
    w = np.exp(ens.log_weights - ens.log_weights.max())
    mean, var = _summary_rows(ens.paths, w)
    _write_moments(out / "posterior.csv", mean, var)
    # stacked per-worker output keeps no per-step weights
    if plan.workers == 1 or plan.pooling == "master_pooled":
        fm, fv = ens.filtered_moments()
        _write_moments(out / "filtered.csv", fm, fv)
    comp = _component(cfg)
    reports = []
    for t in _diag_timesteps(cfg, sc.T):
        chains = [e.paths[:, t, comp] for e in ensembles]
        reports.append(diagnose(chains, cfg.get_int("diagnostics.max_lag", 40), method, t))
    _write_diagnostics(reports, out)
    return f"{method}: {ens.m} paths over T={sc.T}"


def _fit_gibbs(cfg, sc, method, out):
    seed = cfg.get_int("seed")
    try:
        sigma3 = cfg.get_floats("gibbs.sigma3", None, 6)
        block = cfg.get_range("gibbs.block")
        gcfg = GibbsConfig(cfg.get_int("gibbs.n_iter", 2000), cfg.get_int("gibbs.burn_in", 500),
                           sigma3, block, seed, init_spread=cfg.get_float("gibbs.init_spread", 1.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n_chains = cfg.get_int("gibbs.n_chains", 4)
    if n_chains < 1:
        raise ConfigError("gibbs.n_chains must be positive")
    try:
        traces = run_chains(method, sc.model, sc.obs, sc.ys, gcfg, n_chains)
    except ValueError as exc:
        if isinstance(exc, DipoleTooCloseError):
            raise
        raise ConfigError(str(exc)) from None
    for c, tr in enumerate(traces):
        mio.write_trace(tr, out / f"trace_chain{c}.csv")
    kept = np.concatenate([tr.samples[tr.burn_in:] for tr in traces])
    mean = kept.mean(axis=0)
    _write_moments(out / "posterior.csv", mean, kept.var(axis=0), t0=1)
    mio.write_table(out / "acceptance.csv", ["chain", "timestep", "accepted", "proposed"],
                    [(c, t + 1, int(tr.acceptance_counts[t]), int(tr.proposals[t]))
                     for c, tr in enumerate(traces) for t in range(sc.T)])
    comp = _component(cfg)
    reports = [diagnose([tr.chain(t, comp) for tr in traces], cfg.get_int("diagnostics.max_lag", 40),
                        method, t) for t in _diag_timesteps(cfg, sc.T)]
    _write_diagnostics(reports, out)
    return f"{method}: {n_chains} chain(s) x {gcfg.n_iter} iterations over T={sc.T}"


def cmd_fit(args) -> int:
    cfg = _load(args)
    method = cfg.get_str("sampler.method", REQUIRED, METHODS)
    sc, inputs = _scenario(cfg)
    _check_hashes(cfg, inputs)
    out = mio.output_dir(args.out, cfg)
    out.mkdir(parents=True, exist_ok=True)
    before = clamp_count()
    if method.startswith("sis_"):
        msg = _fit_sis(cfg, sc, method, out)
    else:
        msg = _fit_gibbs(cfg, sc, method, out)
    if np.isfinite(sc.truth).all():
        mio.write_matrix(out / "truth.csv", ["timestep"] + list(mio.COMPONENTS), range(sc.T + 1), sc.truth)
    _write_manifest(cfg, out, inputs)
    n_trunc = clamp_count() - before
    if n_trunc:
        log.info("%d draw(s) fell back to exact truncated-normal sampling", n_trunc)
    print(f"{msg}; outputs in {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load(args)
    seed = cfg.get_int("seed")
    workers = cfg.get_ints("bench.workers", [1, 3, 5, 10, 15])
    steps = cfg.get_ints("bench.timesteps", [100, 500, 1000, 1500, 2000])
    m = cfg.get_int("bench.m", 1500)
    bad = [w for w in workers if w < 1 or m % w]
    if bad:
        raise ConfigError(f"bench.m={m} is not divisible by worker counts {bad}")
    model = case1_model()
    sensors = make_sensor_array("planar_grid", 40, shape=(8, 5))
    obs = ObsModel(sensors, FieldGain(cfg.get_float("obs.kappa", 1.0)), 0.25)
    _, ys = simulate(model, obs, max(steps), make_rng(seed))
    scfg = SisConfig(m=m, variant=cfg.get_str("bench.variant", "resampling", ("resampling", "rejection")),
                     seed=seed)
    table = bench_scaling(model, obs, ys, scfg, workers, steps,
                          backend=cfg.get_str("plan.backend", "thread", ("thread", "process")))
    out = mio.output_dir(args.out, cfg)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "timing.csv")
    _write_manifest(cfg, out, {})
    print(f"timed {len(workers)} x {len(steps)} runs; table in {out / 'timing.csv'}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    comp = mio.COMPONENTS.index(args.component)
    samples = [mio.read_trace(p) for p in args.traces]
    T = samples[0].shape[1]
    if any(s.shape != samples[0].shape for s in samples):
        raise DataError("trace files differ in shape")
    if not 0 <= args.burn_in < samples[0].shape[0]:
        raise ConfigError(f"--burn-in must lie in [0, {samples[0].shape[0] - 1}]")
    ts = [int(t) for t in args.timesteps.split(",")] if args.timesteps else list(range(1, T + 1))
    bad = [t for t in ts if not 1 <= t <= T]
    if bad:
        raise ConfigError(f"timesteps {bad} outside 1..{T}")
    reports = [diagnose([s[args.burn_in:, t - 1, comp] for s in samples], args.max_lag,
                        args.method, t) for t in ts]
    out = mio.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_diagnostics(reports, out)
    print(f"diagnostics for {len(ts)} timestep(s) in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="megsis", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"megsis {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=False, window=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory (else $MEGSIS_OUT, else output.dir)")
        if workers:
            sp.add_argument("--workers", type=int, help="overrides plan.workers")
        if window:
            sp.add_argument("--window", help="T0:T1, inclusive time window of the data")

    common(sub.add_parser("simulate", help="generate a preset scenario"))
    common(sub.add_parser("fit", help="run a sampler on a dataset"), workers=True, window=True)
    common(sub.add_parser("bench", help="CPU and wall time over workers x timesteps"), workers=False)
    d = sub.add_parser("diagnose", help="diagnostics on existing trace files")
    d.add_argument("traces", nargs="+", help="trace CSV files, one per chain")
    d.add_argument("--timesteps", help="comma separated, default all")
    d.add_argument("--component", default="z", choices=mio.COMPONENTS)
    d.add_argument("--burn-in", type=int, default=0)
    d.add_argument("--max-lag", type=int, default=40)
    d.add_argument("--method", default="")
    d.add_argument("--out")
    return p


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "bench": cmd_bench, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnsembleCollapse, DipoleTooCloseError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_COLLAPSE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
