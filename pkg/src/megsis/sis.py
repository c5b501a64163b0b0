"""Sequential importance sampling for the dipole state-space model.

The trial distribution is the prior transition, so the incremental weight
of a freshly extended path is its observation likelihood.  Two complete
samplers are provided:

* :func:`sis_resampling_run` assigns the likelihood as the weight and
  resamples according to :class:`SisConfig`.
* :func:`sis_rejection_run` embeds a rejection step at every time point and
  replaces the weights by acceptance frequencies, then keeps ``m_prime``
  rows drawn without replacement at the final step.

Ensembles are stored as a chain of nodes, one per extension or resampling,
each holding the current states and ancestor indices into its parent.
Resampling therefore costs O(m) rather than O(m t), and full paths are
rebuilt on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import resampling
from .state_space import (ArModel, initial_sample, likelihood_logpdf,
                          transition_sample)
from .streams import make_rng

__all__ = [
    "EnsembleCollapse",
    "ParticleEnsemble",
    "SisConfig",
    "initial_ensemble",
    "sis_step",
    "normalized_weights",
    "ess",
    "resample",
    "rejection_step",
    "sis_resampling_run",
    "sis_rejection_run",
    "run_sis",
]


class EnsembleCollapse(RuntimeError):
    """Every particle has zero weight."""


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted stream of dipole paths ``J_0..J_t``.

    ``states`` are the ``m`` states at time ``t`` and ``log_weights`` their
    unnormalised log weights.  ``parent``/``ancestry`` link each particle to
    the particle it descends from in the previous node.
    """

    states: np.ndarray
    log_weights: np.ndarray
    t: int = 0
    parent: Optional["ParticleEnsemble"] = field(default=None, repr=False)
    ancestry: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def extends(self) -> bool:
        """True when this node added a time step (rather than resampled one)."""
        return self.parent is None or self.parent.t != self.t

    def nodes(self):
        node = self
        while node is not None:
            yield node
            node = node.parent

    @property
    def paths(self) -> np.ndarray:
        """Full paths, shape ``(m, t + 1, 6)``; column 0 holds ``J_0``."""
        out = np.empty((self.m, self.t + 1, self.states.shape[1]))
        idx = np.arange(self.m)
        seen = None
        for node in self.nodes():
            if node.t != seen:
                out[:, node.t] = node.states[idx]
                seen = node.t
            if node.parent is not None:
                idx = node.ancestry[idx]
        return out

    def history(self):
        """Extension nodes in time order, i.e. the weighted ensemble at each t."""
        return [n for n in self.nodes() if n.extends][::-1]

    def filtered_moments(self):
        """Weighted mean and variance of the state at each ``t = 0..T``.

        Computed from each step's weights before any resampling, so these
        estimate the filtering laws ``p(J_t | Y_1..Y_t)``.
        """
        hist = self.history()
        mean = np.empty((len(hist), self.states.shape[1]))
        var = np.empty_like(mean)
        for i, node in enumerate(hist):
            w = normalized_weights(node)
            mean[i] = w @ node.states
            var[i] = w @ (node.states - mean[i]) ** 2
        return mean, var

    @classmethod
    def from_paths(cls, paths, log_weights) -> "ParticleEnsemble":
        """Rebuild a node chain from stacked paths ``(m, t + 1, 6)``."""
        paths = np.asarray(paths, dtype=float)
        m = paths.shape[0]
        ident = np.arange(m)
        node = None
        for s in range(paths.shape[1]):
            lw = np.zeros(m) if s < paths.shape[1] - 1 else np.asarray(log_weights, dtype=float)
            node = cls(paths[:, s].copy(), lw, s, node, None if node is None else ident)
        return node


@dataclass(frozen=True)
class SisConfig:
    """Settings for one SIS run.

    ``resample_mode`` is ``"final_only"``, ``"ess_threshold"`` (resample
    when ESS < ``tau * m``) or ``"every_step"``; the resampling variant
    always resamples once at the final step.  ``m_prime`` is the number of
    rows the rejection variant keeps at the end (default ``m // 3``).
    """

    m: int = 2000
    variant: str = "resampling"
    resample_mode: str = "ess_threshold"
    tau: float = 0.5
    resample_scheme: str = "multinomial"
    m_prime: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.variant not in ("resampling", "rejection"):
            raise ValueError(f"unknown SIS variant {self.variant!r}")
        if self.resample_mode not in ("final_only", "ess_threshold", "every_step"):
            raise ValueError(f"unknown resample_mode {self.resample_mode!r}")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.resample_scheme not in resampling.SCHEMES:
            raise ValueError(f"unknown resampling scheme {self.resample_scheme!r}")
        if not 0 < self.kept <= self.m:
            raise ValueError("m_prime must satisfy 0 < m_prime <= m")

    @property
    def kept(self) -> int:
        return max(1, self.m // 3) if self.m_prime is None else int(self.m_prime)


def initial_ensemble(model: ArModel, m: int, rng) -> ParticleEnsemble:
    return ParticleEnsemble(initial_sample(model, rng, size=m), np.zeros(m), 0)


def normalized_weights(ens: ParticleEnsemble) -> np.ndarray:
    lw = np.asarray(ens.log_weights, dtype=float)
    top = lw.max() if lw.size else -np.inf
    if not np.isfinite(top):
        raise EnsembleCollapse(f"all {lw.size} particle weights are zero at t={ens.t}")
    w = np.exp(lw - top)
    return w / w.sum()


def ess(ens: ParticleEnsemble) -> float:
    w = normalized_weights(ens)
    return float(1.0 / np.dot(w, w))


TrialFn = Callable[[np.ndarray, int, np.random.Generator], tuple]


def sis_step(ens: ParticleEnsemble, model: ArModel, obs, y_next, rng,
             trial: Optional[TrialFn] = None) -> ParticleEnsemble:
    """Extend every path by one state and update its weight.

    ``trial(states, t, rng)`` may return ``(new_states, log_correction)``
    where the correction is ``log p(new | old) - log g(new | old)``; the
    default trial is the prior transition, for which the correction is 0.
    """
    t = ens.t + 1
    if trial is None:
        new = transition_sample(model, ens.states, rng, t)
        inc = likelihood_logpdf(obs, new, y_next)
    else:
        new, corr = trial(ens.states, t, rng)
        inc = likelihood_logpdf(obs, new, y_next) + corr
    lw = ens.log_weights + inc
    lw = np.where(np.isnan(lw), -np.inf, lw)
    if not np.isfinite(lw.max()):
        raise EnsembleCollapse(f"every particle left the support at t={t}")
    return ParticleEnsemble(new, lw, t, ens, np.arange(ens.m))


def resample(ens: ParticleEnsemble, scheme: str, rng, n_out: Optional[int] = None) -> ParticleEnsemble:
    """Draw ``n_out`` whole paths proportionally to the weights; equal weights out.

    Sorted schemes are shuffled so that the output order is exchangeable.
    """
    n_out = ens.m if n_out is None else int(n_out)
    idx = resampling.resample_indices(normalized_weights(ens), n_out, scheme, rng)
    if scheme != "multinomial":
        idx = rng.permutation(idx)
    return ParticleEnsemble(ens.states[idx], np.zeros(n_out), ens.t, ens, idx)


def _check_inputs(ys, obs):
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if ys.shape[1] != obs.L:
        raise ValueError(f"observations have {ys.shape[1]} channels, model expects {obs.L}")
    return ys


def sis_resampling_run(model: ArModel, obs, ys, cfg: SisConfig) -> ParticleEnsemble:
    """SIS with likelihood weights and scheduled resampling."""
    ys = _check_inputs(ys, obs)
    T = ys.shape[0]
    rng = make_rng(cfg.seed)
    ens = initial_ensemble(model, cfg.m, rng)
    for t in range(1, T + 1):
        ens = sis_step(ens, model, obs, ys[t - 1], rng)
        if t == T or cfg.resample_mode == "every_step" or (
                cfg.resample_mode == "ess_threshold" and ess(ens) < cfg.tau * ens.m):
            ens = resample(ens, cfg.resample_scheme, rng)
    return ens


def rejection_step(ens: ParticleEnsemble, model: ArModel, obs, y_next, rng,
                   n_local: Optional[int] = None) -> ParticleEnsemble:
    """One step of SIS with an embedded rejection sampler.

    Draws ``n_local`` pairs ``(J, x)`` with ``J`` proportional to the current
    weights and ``x`` from the prior transition of path ``J``, accepts each
    with probability ``lik(x) / c`` where ``c`` is the largest likelihood in
    the batch, and sets the new weight of path ``j`` to the number of
    accepted draws with ``J = j``.  A path with accepted draws takes the
    first of them as its new state; a path without any takes a uniformly
    chosen accepted state (its weight is zero, its history is kept).
    """
    m = ens.m
    n_local = m if n_local is None else int(n_local)
    t = ens.t + 1
    w = normalized_weights(ens)
    J = resampling.multinomial(w, n_local, rng)
    x = transition_sample(model, ens.states[J], rng, t)
    ll = likelihood_logpdf(obs, x, y_next)
    top = ll.max()
    if not np.isfinite(top):
        raise EnsembleCollapse(f"no local draw has positive likelihood at t={t}")
    accepted = np.flatnonzero(rng.random(n_local) < np.exp(ll - top))
    if accepted.size == 0:
        raise EnsembleCollapse(f"rejection step accepted nothing at t={t}")
    counts = np.bincount(J[accepted], minlength=m)
    uniq, first = np.unique(J[accepted], return_index=True)
    new = np.empty_like(ens.states)
    new[uniq] = x[accepted[first]]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        new[empty] = x[accepted[rng.integers(accepted.size, size=empty.size)]]
    with np.errstate(divide="ignore"):
        lw = np.log(counts.astype(float))
    return ParticleEnsemble(new, lw, t, ens, np.arange(m))


def sis_rejection_run(model: ArModel, obs, ys, cfg: SisConfig) -> ParticleEnsemble:
    """SIS with rejection, frequency weights and a final without-replacement draw.

    The final ensemble holds ``min(m_prime, #rows with positive weight)``
    equally weighted paths.
    """
    ys = _check_inputs(ys, obs)
    rng = make_rng(cfg.seed)
    ens = initial_ensemble(model, cfg.m, rng)
    for t in range(1, ys.shape[0] + 1):
        ens = rejection_step(ens, model, obs, ys[t - 1], rng)
    idx = resampling.without_replacement(normalized_weights(ens), cfg.kept, rng)
    # selection order follows the keys, which favour heavy rows
    idx = rng.permutation(idx)
    return ParticleEnsemble(ens.states[idx], np.zeros(idx.size), ens.t, ens, idx)


def run_sis(model: ArModel, obs, ys, cfg: SisConfig) -> ParticleEnsemble:
    if cfg.variant == "rejection":
        return sis_rejection_run(model, obs, ys, cfg)
    return sis_resampling_run(model, obs, ys, cfg)

