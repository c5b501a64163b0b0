"""AR(1) dipole prior, Gaussian sensor likelihood and exact conditionals.

All vectors are 6-vectors ordered ``(x, y, z, m1, m2, s)``.  Time index 0 is
the initial state ``J_0 ~ N(m_ini, Sigma_2)``; observations exist for
``t = 1..T``.  Every density is returned in log space.

Components whose state variance is zero are deterministic: densities treat
them as point masses (log-density 0 on the image, ``-inf`` elsewhere) and
samplers copy the image exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .forward import DEFAULT_MIN_SEPARATION, FieldGain, SensorArray, field_matrix

__all__ = [
    "ArModel",
    "ObsModel",
    "LinearObsModel",
    "clamp_count",
    "initial_sample",
    "initial_logpdf",
    "transition_sample",
    "transition_logpdf",
    "likelihood_logpdf",
    "full_conditional",
    "gaussian_bridge",
    "first_state_prior",
    "joint_log_target",
]

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
MAX_REDRAWS = 1000

_clamped = 0


def clamp_count() -> int:
    """Number of draws so far that exhausted the redraw budget."""
    return _clamped


def _vec6(x, name):
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (6,):
        raise ValueError(f"{name} must have 6 components, got {v.shape}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class ArModel:
    """Diagonal first-order autoregression for the dipole state.

    ``J_t = m_com + rho_t * (J_{t-1} - m_com) + V_t`` with
    ``V_t ~ N(0, diag(sigma2))``.  ``rho_schedule`` optionally gives one
    row of coefficients per step ``t = 1..T`` (row ``t - 1``) and overrides
    ``rho``; it is how alternating random-walk / AR moves are expressed.
    ``bounds`` is an optional 6 x 2 array of ``[min, max]`` per component.
    """

    m_ini: np.ndarray
    m_com: np.ndarray
    rho: np.ndarray
    sigma2: np.ndarray
    bounds: Optional[np.ndarray] = None
    rho_schedule: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("m_ini", "m_com", "rho", "sigma2"):
            object.__setattr__(self, name, _vec6(getattr(self, name), name))
        if np.any(self.sigma2 < 0):
            raise ValueError("sigma2 components must be non-negative")
        if self.bounds is not None:
            b = np.array(self.bounds, dtype=float).reshape(6, 2)
            if np.any(b[:, 0] >= b[:, 1]):
                raise ValueError("bounds need min < max for every component")
            b.setflags(write=False)
            object.__setattr__(self, "bounds", b)
        if self.rho_schedule is not None:
            s = np.array(self.rho_schedule, dtype=float).reshape(-1, 6)
            s.setflags(write=False)
            object.__setattr__(self, "rho_schedule", s)
        sd = np.sqrt(self.sigma2)
        sd.setflags(write=False)
        object.__setattr__(self, "_sd", sd)
        object.__setattr__(self, "_random", self.sigma2 > 0)

    @property
    def sd(self) -> np.ndarray:
        return self._sd

    @property
    def random_mask(self) -> np.ndarray:
        return self._random

    def rho_at(self, t: Optional[int]) -> np.ndarray:
        """AR coefficients for the move ``t - 1 -> t``."""
        if self.rho_schedule is None or t is None:
            return self.rho
        return self.rho_schedule[t - 1]

    def image(self, prev, t: Optional[int] = None) -> np.ndarray:
        """Deterministic part of the transition into step ``t``."""
        return self.m_com + self.rho_at(t) * (np.asarray(prev, dtype=float) - self.m_com)

    def in_bounds(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.bounds is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.all((x >= self.bounds[:, 0]) & (x <= self.bounds[:, 1]), axis=-1)


@dataclass(frozen=True)
class ObsModel:
    """Biot-Savart readings plus homogeneous uncorrelated Gaussian noise."""

    sensors: SensorArray
    gain: FieldGain = FieldGain()
    sigma1: float = 0.25
    min_separation: float = DEFAULT_MIN_SEPARATION

    def __post_init__(self):
        if self.sigma1 < 0:
            raise ValueError("sigma1 must be non-negative")

    @property
    def L(self) -> int:
        return self.sensors.L

    def predict(self, states) -> np.ndarray:
        return field_matrix(states, self.sensors, self.gain, self.min_separation)


@dataclass(frozen=True)
class LinearObsModel:
    """Surrogate observation operator ``y = H x + offset + noise``.

    Shares the noise model of :class:`ObsModel`; used to check the samplers
    against an exact Kalman filter.
    """

    H: np.ndarray
    sigma1: float = 0.25
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim != 2 or H.shape[1] != 6:
            raise ValueError("H must be L x 6")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        off = np.zeros(H.shape[0]) if self.offset is None else np.array(self.offset, dtype=float)
        off.setflags(write=False)
        object.__setattr__(self, "offset", off)

    @property
    def L(self) -> int:
        return self.H.shape[0]

    def predict(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self.H.T + self.offset


# -- sampling ---------------------------------------------------------------


def _draw_truncated(mean, model: ArModel, rng: np.random.Generator) -> np.ndarray:
    """Gaussian draw around ``mean`` with ``model.sd``, redrawn into bounds.

    Entries still outside after ``MAX_REDRAWS`` attempts are drawn from the
    exact truncated normal (the distribution the redraw loop converges to)
    and counted; deterministic components falling outside are clamped.
    """
    global _clamped
    mean = np.asarray(mean, dtype=float)
    sd = np.broadcast_to(model.sd, mean.shape)
    x = mean + sd * rng.standard_normal(mean.shape)
    if model.bounds is None:
        return x
    lo = np.broadcast_to(model.bounds[:, 0], mean.shape)
    hi = np.broadcast_to(model.bounds[:, 1], mean.shape)
    bad = (x < lo) | (x > hi)
    tries = 1
    while bad.any() and tries < MAX_REDRAWS:
        idx = np.nonzero(bad)
        x[idx] = mean[idx] + sd[idx] * rng.standard_normal(len(idx[0]))
        bad[idx] = (x[idx] < lo[idx]) | (x[idx] > hi[idx])
        tries += 1
    if bad.any():
        idx = np.nonzero(bad)
        n_bad = len(idx[0])
        _clamped += n_bad
        log.debug("%d draw(s) exhausted %d redraws", n_bad, MAX_REDRAWS)
        s = sd[idx]
        m = mean[idx]
        out = np.clip(m, lo[idx], hi[idx])
        live = s > 0
        if live.any():
            a = (lo[idx][live] - m[live]) / s[live]
            b = (hi[idx][live] - m[live]) / s[live]
            z = stats.truncnorm.rvs(a, b, size=int(live.sum()), random_state=rng)
            out[live] = m[live] + s[live] * z
        x[idx] = out
    return x


def initial_sample(model: ArModel, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw ``J_0 ~ N(m_ini, Sigma_2)`` (truncated to the bounds)."""
    shape = (6,) if size is None else (size, 6)
    return _draw_truncated(np.broadcast_to(model.m_ini, shape).copy(), model, rng)


def transition_sample(model: ArModel, prev, rng: np.random.Generator,
                      t: Optional[int] = None) -> np.ndarray:
    """AR(1) draw of ``J_t`` given ``J_{t-1} = prev`` (vectorised over rows)."""
    return _draw_truncated(model.image(prev, t), model, rng)


# -- densities --------------------------------------------------------------


def _gauss_logpdf(x, mean, model: ArModel) -> np.ndarray:
    """Sum over components of N(x; mean, sigma2) with point-mass handling."""
    x = np.asarray(x, dtype=float)
    resid = x - mean
    rnd = model.random_mask
    out = np.zeros(np.broadcast_shapes(x.shape, np.shape(mean))[:-1])
    if rnd.any():
        r = resid[..., rnd]
        s2 = model.sigma2[rnd]
        out = out - 0.5 * np.sum(r * r / s2 + np.log(s2) + _LOG_2PI, axis=-1)
    if not rnd.all():
        hit = np.all(resid[..., ~rnd] == 0.0, axis=-1)
        out = np.where(hit, out, -np.inf)
    if model.bounds is not None:
        out = np.where(model.in_bounds(x), out, -np.inf)
    return out


def initial_logpdf(model: ArModel, x0) -> np.ndarray:
    return _gauss_logpdf(x0, model.m_ini, model)


def transition_logpdf(model: ArModel, prev, nxt, t: Optional[int] = None) -> np.ndarray:
    """log p(J_t = nxt | J_{t-1} = prev); ``-inf`` outside the bounds."""
    return _gauss_logpdf(nxt, model.image(prev, t), model)


def likelihood_logpdf(obs, state, y) -> np.ndarray:
    """sum_k log N(y_k; B_k(state), sigma1^2), vectorised over state rows."""
    if not obs.sigma1 > 0:
        raise ValueError("likelihood needs sigma1 > 0")
    resid = np.asarray(y, dtype=float) - obs.predict(state)
    s2 = obs.sigma1**2
    L = resid.shape[-1]
    return -0.5 * np.einsum("...k,...k->...", resid, resid) / s2 - 0.5 * L * (np.log(s2) + _LOG_2PI)


# -- conditionals -----------------------------------------------------------


def gaussian_bridge(prior_mean, prior_var, rho_next, m_com, var_next, nxt):
    """Combine a Gaussian prior on ``x`` with one AR observation of ``x``.

    Returns mean and variance of ``x`` under
    ``N(x; prior_mean, prior_var) * N(nxt; m_com + rho_next (x - m_com), var_next)``.
    Components with zero ``prior_var`` are returned as point masses.
    """
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_var = np.broadcast_to(np.asarray(prior_var, dtype=float), prior_mean.shape)
    var_next = np.broadcast_to(np.asarray(var_next, dtype=float), prior_mean.shape)
    rho_next = np.broadcast_to(np.asarray(rho_next, dtype=float), prior_mean.shape)
    nxt = np.asarray(nxt, dtype=float)
    live = (prior_var > 0) & (var_next > 0)
    mean = prior_mean.copy()
    var = prior_var.copy()
    if live.any():
        pv = prior_var[live]
        vn = var_next[live]
        r = rho_next[live]
        prec = 1.0 / pv + r * r / vn
        target = np.broadcast_to(nxt - m_com + rho_next * m_com, prior_mean.shape)[live]
        mean[live] = (prior_mean[live] / pv + r * target / vn) / prec
        var[live] = 1.0 / prec
    return mean, var


def full_conditional(model: ArModel, prev, nxt, t: Optional[int] = None):
    """Exact law of ``J_t`` given ``J_{t-1} = prev`` and ``J_{t+1} = nxt``.

    With a constant coefficient this is, per component,
    ``N((rho (prev + nxt) + (1 - rho)**2 m_com) / (1 + rho**2),
    sigma2 / (1 + rho**2))``.  ``t`` selects scheduled coefficients.
    Returns ``(mean, var)``.
    """
    t_next = None if t is None else t + 1
    return gaussian_bridge(model.image(prev, t), model.sigma2, model.rho_at(t_next),
                           model.m_com, model.sigma2, nxt)


def first_state_prior(model: ArModel):
    """Marginal prior of ``J_1`` once ``J_0 ~ N(m_ini, Sigma_2)`` is integrated out."""
    r = model.rho_at(1)
    mean = model.m_com + r * (model.m_ini - model.m_com)
    return mean, model.sigma2 * (1.0 + r * r)


def first_state_logpdf(model: ArModel, x1) -> np.ndarray:
    mean, var = first_state_prior(model)
    scaled = ArModel(model.m_ini, model.m_com, model.rho, var, model.bounds)
    return _gauss_logpdf(x1, mean, scaled)


def joint_log_target(model: ArModel, obs, path, ys) -> float:
    """Unnormalised log posterior of a path ``J_0..J_t`` given ``Y_1..Y_t``.

    ``path`` has ``t + 1`` rows (row 0 is ``J_0``), ``ys`` has ``t`` rows.
    """
    path = np.asarray(path, dtype=float)
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if path.shape[0] != ys.shape[0] + 1:
        raise ValueError(f"path has {path.shape[0]} states for {ys.shape[0]} observations; "
                         "expected one more state than observations")
    total = float(initial_logpdf(model, path[0]))
    for s in range(1, path.shape[0]):
        total += float(transition_logpdf(model, path[s - 1], path[s], s))
        total += float(likelihood_logpdf(obs, path[s], ys[s - 1]))
    return total
