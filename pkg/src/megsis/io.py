"""File formats: flat configs, CSV tables, manifests and recordings.

Configs are ``key = value`` lines with dotted section names; ``#`` starts a
comment.  Lists are comma separated.  Floats are written with ``repr`` so
every table reads back to the identical binary value.

Units in files: positions in cm, readings in fT.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .forward import FieldGain, SensorArray
from .state_space import ArModel, ObsModel

__all__ = [
    "ConfigError",
    "DataError",
    "Config",
    "parse_config",
    "read_config",
    "write_config",
    "write_table",
    "read_table",
    "write_scenario",
    "read_scenario",
    "write_ensemble",
    "read_ensemble",
    "write_trace",
    "read_trace",
    "write_geometry",
    "read_geometry",
    "ingest_recording",
    "sha256_file",
    "COMPONENTS",
    "REQUIRED",
]

COMPONENTS = ("x", "y", "z", "m1", "m2", "s")


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


REQUIRED = object()


class Config:
    """Ordered string mapping with typed getters.

    Getters take a default; passing the module constant ``REQUIRED`` makes a
    missing key a :class:`ConfigError`.
    """

    def __init__(self, items=None, source: str = "<config>"):
        self._d = dict(items or {})
        self.source = source

    def __contains__(self, key):
        return key in self._d

    def __getitem__(self, key):
        return self._d[key]

    def __setitem__(self, key, value):
        self._d[key] = value if isinstance(value, str) else format_value(value)

    def items(self):
        return self._d.items()

    def keys(self):
        return self._d.keys()

    def copy(self) -> "Config":
        return Config(self._d, self.source)

    def section(self, prefix: str) -> dict:
        p = prefix.rstrip(".") + "."
        return {k[len(p):]: v for k, v in self._d.items() if k.startswith(p)}

    def _raw(self, key, default):
        if key in self._d:
            return self._d[key]
        if default is REQUIRED:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return default

    def get(self, key, default=None):
        return self._raw(key, default)

    def get_str(self, key, default=None, choices=None):
        v = self._raw(key, default)
        if v is not None and choices is not None and v not in choices:
            raise ConfigError(f"{self.source}: {key} = {v!r}; expected one of {', '.join(choices)}")
        return v

    def get_int(self, key, default=None):
        v = self._raw(key, default)
        if v is None or isinstance(v, int):
            return v
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} = {v!r} is not an integer") from None

    def get_float(self, key, default=None):
        v = self._raw(key, default)
        if v is None or isinstance(v, float):
            return v
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} = {v!r} is not a number") from None

    def get_bool(self, key, default=None):
        v = self._raw(key, default)
        if v is None or isinstance(v, bool):
            return v
        s = str(v).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.source}: {key} = {v!r} is not a boolean")

    def get_floats(self, key, default=None, n: Optional[int] = None):
        v = self._raw(key, default)
        if v is None:
            return None
        if isinstance(v, str):
            try:
                arr = np.array([float(s) for s in v.split(",") if s.strip()])
            except ValueError:
                raise ConfigError(f"{self.source}: {key} = {v!r} is not a list of numbers") from None
        else:
            arr = np.asarray(v, dtype=float).reshape(-1)
        if n is not None and arr.size != n:
            raise ConfigError(f"{self.source}: {key} needs {n} values, got {arr.size}")
        return arr

    def get_ints(self, key, default=None):
        v = self.get_floats(key, default)
        if v is None:
            return None
        if np.any(v != np.round(v)):
            raise ConfigError(f"{self.source}: {key} must hold integers")
        return [int(x) for x in v]

    def get_range(self, key, default=None):
        """``a:b`` pair of integers."""
        v = self._raw(key, default)
        if v is None or isinstance(v, tuple):
            return v
        return parse_range(v, key)


def parse_range(text: str, what: str = "range") -> tuple:
    parts = str(text).split(":")
    try:
        if len(parts) != 2:
            raise ValueError
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"{what} must look like START:END, got {text!r}") from None
    if a > b:
        raise ConfigError(f"{what} {text!r} has START > END")
    return a, b


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, tuple) and len(v) == 2 and all(isinstance(x, (int, np.integer)) for x in v):
        return f"{int(v[0])}:{int(v[1])}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(format_value(x) for x in np.asarray(v).reshape(-1).tolist())
    return str(v)


def parse_config(text: str, source: str = "<config>") -> Config:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"{source}:{lineno}: invalid key {key!r}")
        if key in items:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        items[key] = value
    return Config(items, source)


def read_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def write_config(cfg, path, header: Optional[str] = None) -> None:
    items = cfg.items() if hasattr(cfg, "items") else cfg
    lines = [] if header is None else [f"# {h}" for h in header.splitlines()]
    lines += [f"{k} = {v if isinstance(v, str) else format_value(v)}" for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n")


# -- CSV tables -------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_matrix(path, header, first_col, matrix) -> None:
    """Numeric table whose first column is an integer index."""
    m = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for idx, row in zip(first_col, m):
            fh.write(str(int(idx)) + "," + ",".join(map(repr, row.tolist())) + "\n")


def read_table(path, expect_header=None):
    """Read a rectangular numeric CSV into ``(header, array)``.

    Errors name the file and the 1-based line number.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if expect_header is not None and header != list(expect_header):
            raise DataError(f"{path}:1: header {','.join(header)!r} != expected {','.join(expect_header)!r}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: {len(row)} columns, header has {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, arr


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# -- geometry and recordings ------------------------------------------------


def write_geometry(path, sensors: SensorArray) -> None:
    write_matrix_plain(path, ["x", "y", "z"], sensors.positions)


def write_matrix_plain(path, header, matrix) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.asarray(matrix, dtype=float):
            fh.write(",".join(map(repr, row.tolist())) + "\n")


def read_geometry(path, e=(0.0, 0.0, 1.0)) -> SensorArray:
    _, pos = read_table(path, ["x", "y", "z"])
    if pos.shape[0] < 1:
        raise DataError(f"{path}: geometry has no sensors")
    try:
        return SensorArray(pos, np.asarray(e, dtype=float))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


@dataclass(frozen=True, eq=False)
class Recording:
    t: np.ndarray          # time stamps of the retained rows
    ys: np.ndarray         # n x L readings in fT
    sensors: SensorArray


def ingest_recording(data_path, geometry_path, window: Optional[tuple] = None) -> Recording:
    """Load a ``t,ch_1..ch_L`` recording and its ``x,y,z`` sensor geometry.

    ``window = (t0, t1)`` keeps the rows whose ``t`` lies in ``[t0, t1]``.
    """
    header, arr = read_table(data_path)
    if not header or header[0] != "t":
        raise DataError(f"{data_path}:1: first column must be 't'")
    L = len(header) - 1
    if L < 1:
        raise DataError(f"{data_path}:1: no channel columns")
    expected = [f"ch_{k}" for k in range(1, L + 1)]
    if header[1:] != expected:
        raise DataError(f"{data_path}:1: channel columns must be ch_1..ch_{L}")
    if arr.shape[0] == 0:
        raise DataError(f"{data_path}: no data rows")
    sensors = read_geometry(geometry_path)
    if sensors.L != L:
        raise DataError(f"{data_path} has {L} channels but {geometry_path} lists {sensors.L} sensors")
    t = arr[:, 0]
    if window is not None:
        t0, t1 = window
        if t0 < t.min() or t1 > t.max():
            raise DataError(f"window {t0}:{t1} outside recording range {t.min():g}:{t.max():g}")
        keep = (t >= t0) & (t <= t1)
        arr = arr[keep]
        t = t[keep]
        if arr.shape[0] == 0:
            raise DataError(f"window {t0}:{t1} selects no rows")
    return Recording(t, arr[:, 1:], sensors)


# -- scenarios --------------------------------------------------------------

_STATE_HEADER = ["timestep"] + list(COMPONENTS)


def _model_items(model: ArModel) -> list:
    items = [("model.m_ini", model.m_ini), ("model.m_com", model.m_com),
             ("model.rho", model.rho), ("model.sigma2", model.sigma2)]
    if model.bounds is not None:
        items.append(("model.bounds", model.bounds.reshape(-1)))
    return items


def model_from_config(cfg: Config, schedule=None) -> ArModel:
    rho = cfg.get_floats("model.rho", REQUIRED, 6)
    bounds = cfg.get_floats("model.bounds", None, 12)
    rho_schedule = None
    if schedule is not None and any(tag != "ar" for tag in schedule):
        rho_schedule = np.array([rho if tag == "ar" else np.ones(6) for tag in schedule])
    return ArModel(
        m_ini=cfg.get_floats("model.m_ini", REQUIRED, 6),
        m_com=cfg.get_floats("model.m_com", REQUIRED, 6),
        rho=rho,
        sigma2=cfg.get_floats("model.sigma2", REQUIRED, 6),
        bounds=None if bounds is None else bounds.reshape(6, 2),
        rho_schedule=rho_schedule,
    )


def write_scenario(sc, out_dir) -> dict:
    """Write a scenario directory; returns ``{name: path}`` of the files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "scenario": out / "scenario.cfg",
        "truth": out / "truth.csv",
        "observations": out / "observations.csv",
        "schedule": out / "schedule.csv",
        "sensors": out / "sensors.csv",
    }
    items = [("scenario.name", sc.name), ("scenario.seed", "" if sc.seed is None else sc.seed),
             ("scenario.T", sc.T), ("scenario.L", sc.obs.L)]
    items += _model_items(sc.model)
    items += [("obs.sigma1", float(sc.obs.sigma1)), ("obs.kappa", float(sc.obs.gain.kappa)),
              ("obs.min_separation", float(sc.obs.min_separation)),
              ("obs.e", sc.obs.sensors.e)]
    write_config(items, files["scenario"], header="scenario parameters; units cm, fT")
    write_matrix(files["truth"], _STATE_HEADER, range(sc.T + 1), sc.truth)
    write_matrix(files["observations"], ["t"] + [f"ch_{k}" for k in range(1, sc.obs.L + 1)],
                 range(1, sc.T + 1), sc.ys)
    write_table(files["schedule"], ["timestep", "move"], zip(range(1, sc.T + 1), sc.schedule))
    write_matrix_plain(files["sensors"], ["x", "y", "z"], sc.obs.sensors.positions)
    return files


def read_scenario(in_dir):
    from .scenarios import Scenario
    d = Path(in_dir)
    if not (d / "scenario.cfg").is_file():
        raise DataError(f"{d} is not a scenario directory (no scenario.cfg)")
    cfg = read_config(d / "scenario.cfg")
    try:
        with open(d / "schedule.csv", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {d / 'schedule.csv'}: {exc.strerror}") from None
    if not rows or rows[0] != ["timestep", "move"]:
        raise DataError(f"{d / 'schedule.csv'}:1: header must be timestep,move")
    schedule = tuple(r[1] for r in rows[1:] if r)
    bad = [i + 2 for i, tag in enumerate(schedule) if tag not in ("ar", "random_walk")]
    if bad:
        raise DataError(f"{d / 'schedule.csv'}:{bad[0]}: move must be 'ar' or 'random_walk'")
    model = model_from_config(cfg, schedule)
    sensors = read_geometry(d / "sensors.csv", cfg.get_floats("obs.e", "0,0,1", 3))
    obs = ObsModel(sensors, FieldGain(cfg.get_float("obs.kappa", 1.0)),
                   cfg.get_float("obs.sigma1", REQUIRED),
                   cfg.get_float("obs.min_separation", 0.1))
    _, truth = read_table(d / "truth.csv", _STATE_HEADER)
    _, ys = read_table(d / "observations.csv")
    T = cfg.get_int("scenario.T")
    if ys.shape != (T, obs.L + 1) or truth.shape != (T + 1, 7) or len(schedule) != T:
        raise DataError(f"{d}: file shapes disagree with scenario.T={T}, L={obs.L}")
    seed = cfg.get("scenario.seed", "")
    return Scenario(model, obs, truth[:, 1:], ys[:, 1:], schedule,
                    int(seed) if seed else None, cfg.get("scenario.name", "custom"))


# -- sampler output ---------------------------------------------------------


def write_ensemble(ens, out_dir, prefix: str = "") -> dict:
    """``paths.csv`` (particle, timestep, 6 components) and ``weights.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = ens.paths
    m, n_t, _ = paths.shape
    p_file = out / f"{prefix}paths.csv"
    w_file = out / f"{prefix}weights.csv"
    with open(p_file, "w", newline="") as fh:
        fh.write(",".join(["particle"] + _STATE_HEADER) + "\n")
        for j in range(m):
            for t in range(n_t):
                fh.write(f"{j},{t}," + ",".join(map(repr, paths[j, t].tolist())) + "\n")
    with open(w_file, "w", newline="") as fh:
        fh.write("particle,log_weight\n")
        for j, lw in enumerate(np.asarray(ens.log_weights, dtype=float).tolist()):
            fh.write(f"{j},{lw!r}\n")
    return {"paths": p_file, "weights": w_file}


def read_ensemble(in_dir, prefix: str = ""):
    from .sis import ParticleEnsemble
    d = Path(in_dir)
    _, p = read_table(d / f"{prefix}paths.csv", ["particle"] + _STATE_HEADER)
    _, w = read_table(d / f"{prefix}weights.csv", ["particle", "log_weight"])
    m = w.shape[0]
    n_t = int(p[:, 1].max()) + 1 if p.size else 0
    if p.shape[0] != m * n_t:
        raise DataError(f"{d}: paths table has {p.shape[0]} rows, expected {m} x {n_t}")
    order = np.lexsort((p[:, 1], p[:, 0]))
    paths = p[order, 2:].reshape(m, n_t, 6)
    return ParticleEnsemble.from_paths(paths, w[:, 1])


def write_trace(trace, path) -> None:
    """Chain draws as ``iteration, timestep, 6 components`` (timestep 1-based)."""
    s = trace.samples
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["iteration"] + _STATE_HEADER) + "\n")
        for it in range(s.shape[0]):
            for t in range(s.shape[1]):
                fh.write(f"{it},{t + 1}," + ",".join(map(repr, s[it, t].tolist())) + "\n")


def read_trace(path) -> np.ndarray:
    """Samples array ``n_iter x T x 6`` from :func:`write_trace` output."""
    _, a = read_table(path, ["iteration"] + _STATE_HEADER)
    if a.size == 0:
        raise DataError(f"{path}: empty trace")
    n_iter = int(a[:, 0].max()) + 1
    T = int(a[:, 1].max())
    if a.shape[0] != n_iter * T:
        raise DataError(f"{path}: {a.shape[0]} rows do not form {n_iter} x {T}")
    order = np.lexsort((a[:, 1], a[:, 0]))
    return a[order, 2:].reshape(n_iter, T, 6)


def output_dir(cli_value: Optional[str], cfg: Optional[Config] = None) -> Path:
    """--out beats the MEGSIS_OUT environment variable, which beats output.dir."""
    if cli_value:
        return Path(cli_value)
    env = os.environ.get("MEGSIS_OUT")
    if env:
        return Path(env)
    if cfg is not None and "output.dir" in cfg:
        return Path(cfg["output.dir"])
    return Path("megsis_out")
