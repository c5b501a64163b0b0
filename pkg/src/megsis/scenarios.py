"""Simulated MEG datasets and sensor layouts.

Two presets:

* case 1: only the z coordinate moves (AR(1) towards 0 with rho = 0.9),
  15 time steps, 40 magnetometers;
* case 2: all six components move, ten random-walk steps followed by one
  AR step, repeated to 100 time steps, 100 magnetometers, box bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import isqrt
from typing import Optional

import numpy as np

from .forward import FieldGain, HeadRegion, SensorArray, observe
from .state_space import ArModel, ObsModel, initial_sample, transition_sample
from .streams import make_rng

__all__ = [
    "Scenario",
    "DEFAULT_HEAD_BOX",
    "make_sensor_array",
    "gen_case1",
    "gen_case2",
    "simulate",
    "case1_model",
    "case2_model",
]

# Encloses every location either preset can reach and stays below the
# default sensor plane.
DEFAULT_HEAD_BOX = HeadRegion.box((-12.0, -12.0, -12.0), (12.0, 12.0, 14.0))


@dataclass(frozen=True, eq=False)
class Scenario:
    model: ArModel
    obs: ObsModel
    truth: np.ndarray     # (T + 1) x 6, row 0 is J_0
    ys: np.ndarray        # T x L
    schedule: tuple       # move tag per step t = 1..T
    seed: Optional[int] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.ys.shape[0]

    def truncated(self, T: int) -> "Scenario":
        """The same dataset restricted to its first ``T`` steps."""
        if not 1 <= T <= self.T:
            raise ValueError(f"cannot truncate a {self.T}-step scenario to {T}")
        return Scenario(self.model, self.obs, self.truth[:T + 1], self.ys[:T],
                        self.schedule[:T], self.seed, self.name, dict(self.meta))


def make_sensor_array(kind: str = "planar_grid", n: int = 100, *, extent: float = 20.0,
                      height: float = 15.0, center=(0.0, 0.0), shape=None,
                      radius: float = 25.0, origin=(0.0, 0.0, 0.0),
                      head: HeadRegion = DEFAULT_HEAD_BOX) -> SensorArray:
    """Radial magnetometer layouts, all measuring along ``e = (0, 0, 1)``.

    ``planar_grid`` puts a ``sqrt(n) x sqrt(n)`` lattice (or ``shape =
    (rows, cols)``) spanning ``extent`` cm at ``z = height``.
    ``hemisphere`` spreads ``n`` points over the upper half of a sphere of
    ``radius`` around ``origin`` with a Fibonacci spiral.
    """
    if n < 1:
        raise ValueError("need at least one sensor")
    if kind == "planar_grid":
        if height <= 0 or extent <= 0:
            raise ValueError("height and extent must be positive")
        if shape is None:
            k = isqrt(n)
            if k * k != n:
                raise ValueError(f"planar_grid needs a perfect square sensor count, got {n}")
            rows = cols = k
        else:
            rows, cols = map(int, shape)
            if rows * cols != n:
                raise ValueError(f"grid shape {shape} does not hold {n} sensors")
        xs = _axis(cols, extent) + center[0]
        ys = _axis(rows, extent) + center[1]
        gx, gy = np.meshgrid(xs, ys)
        pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(n, float(height))])
    elif kind == "hemisphere":
        if radius <= 0:
            raise ValueError("radius must be positive")
        i = np.arange(n) + 0.5
        cz = 1.0 - i / n                      # z in (0, 1): upper cap only
        r_xy = np.sqrt(1.0 - cz**2)
        phi = np.pi * (3.0 - np.sqrt(5.0)) * i
        pos = np.asarray(origin) + radius * np.column_stack(
            [r_xy * np.cos(phi), r_xy * np.sin(phi), cz])
    else:
        raise ValueError(f"unknown sensor layout {kind!r}")
    if head is not None and head.contains(pos).any():
        raise ValueError("sensor layout intersects the head region")
    return SensorArray(pos, np.array([0.0, 0.0, 1.0]))


def _axis(k, extent):
    if k == 1:
        return np.zeros(1)
    return np.linspace(-extent / 2.0, extent / 2.0, k)


def simulate(model: ArModel, obs: ObsModel, T: int, rng) -> tuple:
    """Draw a truth path ``J_0..J_T`` from the prior and noisy readings of it."""
    truth = np.empty((T + 1, 6))
    truth[0] = initial_sample(model, rng)
    for t in range(1, T + 1):
        truth[t] = transition_sample(model, truth[t - 1], rng, t)
    ys = observe(obs.predict(truth[1:]), obs.sigma1, rng)
    return truth, ys


def case1_model() -> ArModel:
    return ArModel(
        m_ini=[1, 1, 5, 3, 3, 3],
        m_com=[0, 0, 0, 0, 0, 0],
        rho=[1, 1, 0.9, 1, 1, 1],
        sigma2=[0, 0, 0.0225, 0, 0, 0],
    )


def gen_case1(seed: int, T: int = 15, kappa: float = 1.0, sensors: Optional[SensorArray] = None) -> Scenario:
    """Single moving coordinate (z), 40 sensors on an 8 x 5 planar grid."""
    model = case1_model()
    if sensors is None:
        sensors = make_sensor_array("planar_grid", 40, shape=(8, 5))
    obs = ObsModel(sensors, FieldGain(kappa), sigma1=0.25)
    truth, ys = simulate(model, obs, T, make_rng(seed))
    return Scenario(model, obs, truth, ys, ("ar",) * T, seed, "case1")


def case2_schedule(T: int, run: int = 10) -> tuple:
    """``run`` random-walk steps, then one AR step, repeated."""
    return tuple("ar" if t % (run + 1) == 0 else "random_walk" for t in range(1, T + 1))


def case2_model(T: int = 100, half_width: float = 5.0) -> ArModel:
    m_ini = np.array([6, 7, 8, 3, 5, 5], dtype=float)
    rho = np.array([0.65, 0.7, 0.75, 0.8, 0.85, 0.9])
    schedule = case2_schedule(T)
    rho_schedule = np.array([rho if tag == "ar" else np.ones(6) for tag in schedule])
    return ArModel(
        m_ini=m_ini,
        m_com=np.zeros(6),
        rho=rho,
        sigma2=np.full(6, 0.01),
        bounds=np.column_stack([m_ini - half_width, m_ini + half_width]),
        rho_schedule=rho_schedule,
    )


def gen_case2(seed: int, T: int = 100, kappa: float = 1.0, sensors: Optional[SensorArray] = None) -> Scenario:
    """All six components move, bounded to ``m_ini +/- 5``, 10 x 10 sensor grid."""
    model = case2_model(T)
    if sensors is None:
        sensors = make_sensor_array("planar_grid", 100)
    obs = ObsModel(sensors, FieldGain(kappa), sigma1=0.25)
    truth, ys = simulate(model, obs, T, make_rng(seed))
    return Scenario(model, obs, truth, ys, case2_schedule(T), seed, "case2")
