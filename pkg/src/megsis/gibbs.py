"""MCMC-within-Gibbs baselines over the states ``J_1..J_T``.

``J_0`` is integrated out analytically: the prior of ``J_1`` is the
Gaussian :func:`~megsis.state_space.first_state_prior`, so these chains
target the same posterior as the SIS samplers.

Three samplers share one sweep structure (``t = 1..T`` each iteration):

* random walk: propose ``J_t + N(0, Sigma_3)``, accept with the ratio of
  likelihood times both neighbouring transition densities;
* hybrid: propose from the exact conditional prior given the neighbours,
  accept with the likelihood ratio alone;
* block hybrid: as hybrid, except that the states ``r..s`` are proposed
  together from their conditional prior given ``J_{r-1}`` and ``J_{s+1}``.

Every acceptance ratio is formed in log space and compared with ``log U``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .state_space import (ArModel, _gauss_logpdf, first_state_prior, gaussian_bridge,
                          initial_sample, likelihood_logpdf, transition_logpdf,
                          transition_sample)
from .streams import derive_worker_seed, make_rng

__all__ = ["GibbsConfig", "ChainTrace", "random_walk_gibbs", "hybrid_gibbs",
           "block_hybrid_gibbs", "run_gibbs", "run_chains", "prior_path"]


@dataclass(frozen=True)
class GibbsConfig:
    """Chain length, burn-in, proposal scale and seed.

    ``sigma3`` holds random-walk proposal variances; components with a
    zero entry are never perturbed.  ``block`` is a 1-based inclusive
    ``(r, s)`` range.  ``init`` is a ``T x 6`` start path; by default each
    chain starts from a path simulated from the prior with every standard
    deviation multiplied by ``init_spread`` (values above 1 give the
    overdispersed starts that between-chain diagnostics assume).
    """

    n_iter: int = 2000
    burn_in: int = 500
    sigma3: Optional[np.ndarray] = None
    block: Optional[tuple] = None
    seed: int = 0
    init: Optional[np.ndarray] = field(default=None, repr=False)
    init_spread: float = 1.0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if not self.init_spread > 0:
            raise ValueError("init_spread must be positive")
        if self.sigma3 is not None:
            s3 = np.asarray(self.sigma3, dtype=float).reshape(6)
            if np.any(s3 < 0) or not np.any(s3 > 0):
                raise ValueError("sigma3 must be non-negative with at least one positive entry")
            object.__setattr__(self, "sigma3", s3)


@dataclass(frozen=True, eq=False)
class ChainTrace:
    samples: np.ndarray             # n_iter x T x 6
    acceptance_counts: np.ndarray   # accepted moves per time step
    proposals: np.ndarray           # proposed moves per time step
    burn_in: int = 0
    method: str = ""

    @property
    def n_iter(self) -> int:
        return self.samples.shape[0]

    @property
    def T(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> np.ndarray:
        return self.acceptance_counts / np.maximum(self.proposals, 1)

    def chain(self, t: int, component: int = 2) -> np.ndarray:
        """Post burn-in draws of one component at time ``t`` (1-based)."""
        return self.samples[self.burn_in:, t - 1, component]


def prior_path(model: ArModel, T: int, rng, spread: float = 1.0) -> np.ndarray:
    """Forward simulation of ``J_1..J_T`` with standard deviations scaled by ``spread``."""
    if spread != 1.0:
        model = ArModel(model.m_ini, model.m_com, model.rho, model.sigma2 * spread**2,
                        model.bounds, model.rho_schedule)
    x = initial_sample(model, rng)
    path = np.empty((T, 6))
    for t in range(1, T + 1):
        x = transition_sample(model, x, rng, t)
        path[t - 1] = x
    return path


_CHUNK = 128


class _Sweeper:
    """Current paths and cached log-likelihoods of ``C`` chains run in lock-step.

    Every array carries a leading chain axis, so one numpy call moves all
    chains at once; each chain still owns its random stream.
    """

    def __init__(self, model, obs, ys, cfg, n_chains):
        ys = np.asarray(ys, dtype=float)
        if ys.ndim == 1:
            ys = ys[None, :]
        if ys.ndim == 2:
            ys = np.broadcast_to(ys, (n_chains,) + ys.shape)
        if ys.ndim != 3 or ys.shape[0] != n_chains:
            raise ValueError("ys must be T x L or n_chains x T x L")
        self.model = model
        self.obs = obs
        self.ys = ys
        self.C, self.T = ys.shape[:2]
        if self.T < 1:
            raise ValueError("need at least one observation")
        if ys.shape[2] != obs.L:
            raise ValueError(f"observations have {ys.shape[2]} channels, model expects {obs.L}")
        self.rngs = [make_rng(derive_worker_seed(cfg.seed, c, self.C)) for c in range(self.C)]
        if cfg.init is None:
            x = np.stack([prior_path(model, self.T, g, cfg.init_spread) for g in self.rngs])
        else:
            x = np.array(np.broadcast_to(np.asarray(cfg.init, dtype=float).reshape(-1, self.T, 6),
                                         (self.C, self.T, 6)))
        self.x = x
        self.ll = likelihood_logpdf(obs, x, ys)
        self.first_mean, self.first_var = first_state_prior(model)
        self.first_model = ArModel(model.m_ini, model.m_com, model.rho, self.first_var, model.bounds)
        self.accepted = np.zeros((self.C, self.T), dtype=np.int64)
        self.proposed = np.zeros((self.C, self.T), dtype=np.int64)
        self._k = _CHUNK

    def next_iteration(self):
        """Advance the per-chain random numbers by one sweep.

        Every sweep consumes exactly ``T x 6`` normals and ``T`` uniforms per
        chain whatever the sampler does, drawn in chunks from each chain's
        own stream, so chain ``c`` never depends on the other chains.
        """
        self._k += 1
        if self._k >= _CHUNK:
            self._z = np.stack([g.standard_normal((_CHUNK, self.T, 6)) for g in self.rngs], axis=1)
            self._u = np.stack([g.random((_CHUNK, self.T)) for g in self.rngs], axis=1)
            self._k = 0
        self.z = self._z[self._k]       # C x T x 6
        self.log_u = np.log(self._u[self._k])

    # -- prior pieces --------------------------------------------------

    def log_prior_local(self, i, xi):
        """Prior terms of the full conditional density of J_{i+1} at ``xi``."""
        model = self.model
        if i == 0:
            lp = _gauss_logpdf(xi, self.first_mean, self.first_model)
        else:
            lp = transition_logpdf(model, self.x[:, i - 1], xi, i + 1)
        if i + 1 < self.T:
            lp = lp + transition_logpdf(model, xi, self.x[:, i + 1], i + 2)
        return lp

    def left_prior(self, i, left):
        """Mean and variance of J_{i+1} given its left neighbour ``left``."""
        if i == 0:
            return np.broadcast_to(self.first_mean, (self.C, 6)), self.first_var
        return self.model.image(left, i + 1), self.model.sigma2

    def draw(self, i, mean, var):
        return mean + np.sqrt(var) * self.z[:, i]

    def _commit(self, rows, i, prop, ll_new):
        self.x[rows, i] = prop[rows]
        self.ll[rows, i] = ll_new[rows]
        self.accepted[rows, i] += 1

    # -- moves ---------------------------------------------------------

    def rw_update(self, i, sigma3_sd):
        self.proposed[:, i] += 1
        prop = self.x[:, i] + sigma3_sd * self.z[:, i]
        log_u = self.log_u[:, i]
        lp_new = self.log_prior_local(i, prop)
        ll_new = likelihood_logpdf(self.obs, prop, self.ys[:, i])
        with np.errstate(invalid="ignore"):
            log_alpha = ll_new + lp_new - self.ll[:, i] - self.log_prior_local(i, self.x[:, i])
        ok = np.isfinite(lp_new) & (log_u < log_alpha)
        self._commit(ok, i, prop, ll_new)

    def hybrid_update(self, i):
        self.proposed[:, i] += 1
        mean, var = self.left_prior(i, self.x[:, i - 1] if i else None)
        if i + 1 < self.T:
            m = self.model
            mean, var = gaussian_bridge(mean, var, m.rho_at(i + 2), m.m_com, m.sigma2, self.x[:, i + 1])
        prop = self.draw(i, mean, var)
        log_u = self.log_u[:, i]
        ll_new = likelihood_logpdf(self.obs, prop, self.ys[:, i])
        ok = self.model.in_bounds(prop) & (log_u < ll_new - self.ll[:, i])
        self._commit(ok, i, prop, ll_new)

    def block_update(self, r, s):
        """Joint move of J_r..J_s (1-based, inclusive)."""
        model = self.model
        lo, hi = r - 1, s - 1
        self.proposed[:, lo:hi + 1] += 1
        prop = np.empty((self.C, hi - lo + 1, 6))
        left = self.x[:, lo - 1] if lo else None
        for k, i in enumerate(range(lo, hi + 1)):
            mean, var = self.left_prior(i, left)
            if hi + 1 < self.T:
                gain, noise = _k_step(model, i + 1, s + 1)
                mean, var = gaussian_bridge(mean, var, gain, model.m_com, noise, self.x[:, hi + 1])
            prop[:, k] = left = self.draw(i, mean, var)
        log_u = self.log_u[:, lo]
        ll_new = likelihood_logpdf(self.obs, prop, self.ys[:, lo:hi + 1])
        gain_ll = ll_new.sum(axis=1) - self.ll[:, lo:hi + 1].sum(axis=1)
        ok = np.all(model.in_bounds(prop), axis=1) & (log_u < gain_ll)
        self.x[ok, lo:hi + 1] = prop[ok]
        self.ll[ok, lo:hi + 1] = ll_new[ok]
        self.accepted[ok, lo:hi + 1] += 1


def _k_step(model: ArModel, t_from: int, t_to: int):
    """Gain and noise variance of the composed AR map from J_{t_from} to J_{t_to}."""
    gain = np.ones(6)
    noise = np.zeros(6)
    for u in range(t_from + 1, t_to + 1):
        r = model.rho_at(u)
        gain = gain * r
        noise = noise * r * r + model.sigma2
    return gain, noise


def run_chains(method: str, model, obs, ys, cfg: GibbsConfig, n_chains: int = 1) -> list:
    """Run ``n_chains`` chains of one sampler side by side.

    ``ys`` is either one ``T x L`` dataset shared by all chains or an
    ``n_chains x T x L`` stack giving each chain its own dataset.  Chain
    ``c`` uses the stream ``derive_worker_seed(cfg.seed, c, n_chains)``, so a
    single chain uses ``cfg.seed`` itself and results for a given
    ``(cfg.seed, n_chains)`` are bit-identical across runs.
    """
    if method not in SAMPLERS:
        raise ValueError(f"unknown Gibbs sampler {method!r}")
    if n_chains < 1:
        raise ValueError("n_chains must be positive")
    sw = _Sweeper(model, obs, ys, cfg, n_chains)
    T = sw.T
    samples = np.empty((cfg.n_iter, sw.C, T, 6))
    if method == "rw_gibbs":
        sigma3 = model.sigma2 if cfg.sigma3 is None else cfg.sigma3
        sigma3_sd = np.sqrt(sigma3)
    block = None
    if method == "block_gibbs":
        if cfg.block is None:
            raise ValueError("block_gibbs needs cfg.block = (r, s)")
        r, s = map(int, cfg.block)
        if not 1 <= r <= s <= T:
            raise ValueError(f"invalid block ({r}, {s}) for T={T}")
        block = (r, s)
    for it in range(cfg.n_iter):
        sw.next_iteration()
        i = 0
        while i < T:
            if method == "rw_gibbs":
                sw.rw_update(i, sigma3_sd)
            elif block is not None and i == block[0] - 1:
                sw.block_update(*block)
                i = block[1]
                continue
            else:
                sw.hybrid_update(i)
            i += 1
        samples[it] = sw.x
    return [ChainTrace(np.ascontiguousarray(samples[:, c]), sw.accepted[c], sw.proposed[c],
                       cfg.burn_in, method) for c in range(sw.C)]


def random_walk_gibbs(model: ArModel, obs, ys, cfg: GibbsConfig) -> ChainTrace:
    """Random-walk Metropolis within Gibbs.

    ``cfg.sigma3`` defaults to the state variances ``model.sigma2``.
    """
    return run_chains("rw_gibbs", model, obs, ys, cfg)[0]


def hybrid_gibbs(model: ArModel, obs, ys, cfg: GibbsConfig) -> ChainTrace:
    return run_chains("hybrid_gibbs", model, obs, ys, cfg)[0]


def block_hybrid_gibbs(model: ArModel, obs, ys, cfg: GibbsConfig) -> ChainTrace:
    """Hybrid sweep in which ``cfg.block`` is replaced by one joint move."""
    return run_chains("block_gibbs", model, obs, ys, cfg)[0]


SAMPLERS = {
    "rw_gibbs": random_walk_gibbs,
    "hybrid_gibbs": hybrid_gibbs,
    "block_gibbs": block_hybrid_gibbs,
}


def run_gibbs(method: str, model, obs, ys, cfg: GibbsConfig) -> ChainTrace:
    return run_chains(method, model, obs, ys, cfg)[0]
