"""Quasi-static dipole forward model for radial magnetometers.

A current dipole with location ``p`` and moment ``q`` produces, at a sensor
located at ``r`` and measuring along the unit direction ``e``, the reading

    B = kappa * ((q x (r - p)) . e) / |r - p|**3

where ``kappa`` stands in for mu0 / 4 pi in whatever unit system the data
use.  Volume currents are ignored.

States are handled as 6-vectors ``(p1, p2, p3, q1, q2, q3)`` throughout the
package; :class:`DipoleState` is the named view of one such vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DipoleState",
    "SensorArray",
    "FieldGain",
    "HeadRegion",
    "DipoleTooCloseError",
    "DEFAULT_MIN_SEPARATION",
    "field_at_sensor",
    "field_vector",
    "field_matrix",
    "superpose",
    "observe",
]

DEFAULT_MIN_SEPARATION = 0.1  # cm


class DipoleTooCloseError(ValueError):
    """A dipole sits closer to a sensor than the singularity guard allows."""

    def __init__(self, sensor_index, distance, min_separation):
        self.sensor_index = sensor_index
        self.distance = distance
        self.min_separation = min_separation
        super().__init__(
            f"dipole within {distance:.3g} cm of sensor {sensor_index} "
            f"(minimum separation {min_separation:g} cm)"
        )


@dataclass(frozen=True)
class DipoleState:
    """Location ``p`` (cm) and moment ``q`` of a single current dipole.

    The moment is stored as Cartesian components ``(m1, m2, s)``.  Under a
    radial sensor direction ``e = (0, 0, 1)`` the third component never
    changes a reading.
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        q = np.asarray(self.q, dtype=float).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("dipole state must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_vector(cls, x) -> "DipoleState":
        x = np.asarray(x, dtype=float).reshape(6)
        return cls(x[:3], x[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])


@dataclass(frozen=True)
class FieldGain:
    kappa: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")


@dataclass(frozen=True)
class SensorArray:
    """Sensor positions (L x 3, cm) sharing one measurement direction."""

    positions: np.ndarray
    e: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be L x 3, got shape {pos.shape}")
        e = np.asarray(self.e, dtype=float).reshape(3)
        if abs(np.linalg.norm(e) - 1.0) > 1e-12:
            raise ValueError("measurement direction e must be a unit vector")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("sensor positions must be distinct")
        pos.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "e", e)

    @property
    def L(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.L

    def permuted(self, order) -> "SensorArray":
        return SensorArray(self.positions[np.asarray(order)], self.e)


@dataclass(frozen=True)
class HeadRegion:
    """Admissible dipole locations: an axis-aligned box or a ball."""

    kind: str = "box"
    lower: tuple = (-np.inf, -np.inf, -np.inf)
    upper: tuple = (np.inf, np.inf, np.inf)
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = np.inf

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise ValueError(f"unknown head region kind {self.kind!r}")

    @classmethod
    def box(cls, lower, upper) -> "HeadRegion":
        return cls("box", tuple(map(float, lower)), tuple(map(float, upper)))

    @classmethod
    def ball(cls, center, radius) -> "HeadRegion":
        return cls("ball", center=tuple(map(float, center)), radius=float(radius))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.kind == "box":
            return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1) <= self.radius


def field_at_sensor(d: DipoleState, r, e, g: FieldGain = FieldGain(),
                    min_separation: float = DEFAULT_MIN_SEPARATION) -> float:
    """Noiseless reading of one sensor at ``r`` along ``e`` from dipole ``d``."""
    a = np.asarray(r, dtype=float) - d.p
    dist = float(np.linalg.norm(a))
    if dist < min_separation:
        raise DipoleTooCloseError(0, dist, min_separation)
    return float(g.kappa * np.dot(np.cross(d.q, a), np.asarray(e, dtype=float)) / dist**3)


def field_matrix(states, sensors: SensorArray, g: FieldGain = FieldGain(),
                 min_separation: float = DEFAULT_MIN_SEPARATION) -> np.ndarray:
    """Readings for a batch of 6-vector states, shape ``(..., L)``.

    Uses ``(q x a) . e = q . (a x e)``, expanded componentwise to avoid
    ``(..., L, 3)`` temporaries.
    """
    x = np.asarray(states, dtype=float)
    r = sensors.positions
    e = sensors.e
    ax = r[:, 0] - x[..., 0, None]
    ay = r[:, 1] - x[..., 1, None]
    az = r[:, 2] - x[..., 2, None]
    dist2 = ax * ax + ay * ay + az * az
    if min_separation > 0:
        bad = dist2 < min_separation**2
        if bad.any():
            k = int(np.argwhere(bad)[0][-1])
            raise DipoleTooCloseError(k, float(np.sqrt(dist2[bad].min())), min_separation)
    # componentwise a x e, contracted with q
    num = (x[..., 3, None] * (ay * e[2] - az * e[1])
           + x[..., 4, None] * (az * e[0] - ax * e[2])
           + x[..., 5, None] * (ax * e[1] - ay * e[0]))
    return g.kappa * num / (dist2 * np.sqrt(dist2))


def field_vector(d: DipoleState, sensors: SensorArray, g: FieldGain = FieldGain(),
                 min_separation: float = DEFAULT_MIN_SEPARATION) -> np.ndarray:
    """L-vector of noiseless readings from a single dipole."""
    return field_matrix(d.as_vector(), sensors, g, min_separation)


def superpose(fields) -> np.ndarray:
    """Componentwise sum of per-dipole field vectors (fields add linearly)."""
    arrays = [np.asarray(f, dtype=float) for f in fields]
    if not arrays:
        raise ValueError("superpose needs at least one field")
    L = arrays[0].shape
    for i, f in enumerate(arrays):
        if f.shape != L:
            raise ValueError(f"field {i} has shape {f.shape}, expected {L}")
    return np.sum(arrays, axis=0)


def observe(noiseless, sigma1: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma1**2) sensor noise."""
    if sigma1 < 0:
        raise ValueError("sigma1 must be non-negative")
    y = np.asarray(noiseless, dtype=float)
    if sigma1 == 0:
        return y.copy()
    return y + sigma1 * rng.standard_normal(y.shape)
