"""Resampling index generators.

Each scheme maps normalised weights to ``n_out`` ancestor indices whose
expected copy counts are ``n_out * w``.  Indices come back in scheme order
(sorted for the stratified and residual schemes); callers that need an
exchangeable ordering shuffle them.
"""

import numpy as np

__all__ = ["SCHEMES", "multinomial", "residual", "stratified", "resample_indices",
           "copy_counts", "without_replacement"]


def _check(w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0:
        raise ValueError("weights sum to zero")
    return w / s


def _inverse_cdf(w, u):
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right").clip(max=len(w) - 1)


def multinomial(w, n_out, rng):
    """I.i.d. categorical draws."""
    w = _check(w)
    return _inverse_cdf(w, rng.random(n_out))


def stratified(w, n_out, rng):
    """One uniform draw inside each of ``n_out`` equal CDF strata."""
    w = _check(w)
    u = (np.arange(n_out) + rng.random(n_out)) / n_out
    return _inverse_cdf(w, u)


def residual(w, n_out, rng):
    """``floor(n_out * w)`` deterministic copies plus a multinomial remainder."""
    w = _check(w)
    base = np.floor(n_out * w).astype(np.int64)
    rest = n_out - int(base.sum())
    idx = np.repeat(np.arange(len(w)), base)
    if rest > 0:
        frac = n_out * w - base
        idx = np.concatenate([idx, _inverse_cdf(frac / frac.sum(), rng.random(rest))])
    return idx


SCHEMES = {"multinomial": multinomial, "residual": residual, "stratified": stratified}


def resample_indices(w, n_out, scheme, rng):
    try:
        fn = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown resampling scheme {scheme!r}") from None
    return fn(w, n_out, rng)


def copy_counts(idx, m):
    return np.bincount(idx, minlength=m)


def without_replacement(w, k, rng):
    """Weighted selection of ``k`` distinct indices (Efraimidis-Spirakis keys).

    Only indices with positive weight are eligible, so fewer than ``k``
    indices are returned when fewer than ``k`` weights are positive.
    """
    w = np.asarray(w, dtype=float)
    pos = np.flatnonzero(w > 0)
    if pos.size == 0:
        raise ValueError("no positive weights to select from")
    k = min(int(k), pos.size)
    # log(u) / w ranks identically to u ** (1 / w) without underflow
    keys = np.log(rng.random(pos.size)) / w[pos]
    top = np.argpartition(-keys, k - 1)[:k]
    top = top[np.argsort(-keys[top], kind="stable")]
    return pos[top]
