"""Convergence diagnostics for scalar chains.

Conventions follow the R package ``coda``, so values are comparable with
published tables, except for the spectral density used by Geweke and
Heidelberger-Welch (see below):

* ``acf``: biased sample autocorrelation (divide by ``n``), lag 0 is 1;
* ``ess``: ``n / (1 + 2 sum rho_k)`` truncated by Geyer's initial positive
  sequence, never above ``n``;
* ``gelman_rubin``: potential scale reduction factor without the degrees of
  freedom correction;
* ``geweke``: first 10% against last 50%, spectral density at zero from
  overlapping batch means;
* ``heidelberger_welch``: Cramer-von Mises stationarity test with 10%
  discard steps up to half of the chain, same spectral estimator;
* ``raftery_lewis``: two-state Markov fit to the indicator of the ``q``
  quantile, thinned until a first-order model is preferred by BIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "DegenerateChainError",
    "acf",
    "ess",
    "gelman_rubin",
    "geweke",
    "heidelberger_welch",
    "raftery_lewis",
    "spectrum0_ar",
    "spectrum0_obm",
    "pcramer",
    "DiagnosticsReport",
    "diagnose",
]


class DegenerateChainError(ValueError):
    """The chain has zero variance, so correlation-based diagnostics are undefined."""


def _as_chain(chain, min_len=2) -> np.ndarray:
    x = np.asarray(chain, dtype=float).reshape(-1)
    if x.size < min_len:
        raise ValueError(f"chain needs at least {min_len} draws, got {x.size}")
    if not np.isfinite(x).all():
        raise ValueError("chain contains non-finite values")
    return x


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariances at lags 0..n-1 via a zero-padded FFT."""
    n = x.size
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def _autocorr(x: np.ndarray) -> np.ndarray:
    c = _autocov(x)
    # relative threshold: a chain of identical floats leaves only rounding noise
    if c[0] <= 1e-28 * max(1.0, float(np.mean(x * x))):
        raise DegenerateChainError("constant chain: autocorrelation is undefined beyond lag 0")
    return c / c[0]


def acf(chain, max_lag: int = 40) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag``."""
    x = _as_chain(chain)
    if not 0 <= max_lag < x.size:
        raise ValueError(f"max_lag must lie in [0, {x.size - 1}]")
    return _autocorr(x)[:max_lag + 1]


def ess(chain) -> float:
    """Effective sample size with the initial positive sequence truncation."""
    x = _as_chain(chain, 4)
    n = x.size
    r = _autocorr(x)
    m = (n - 1) // 2
    pairs = r[0:2 * m:2] + r[1:2 * m:2]   # Gamma_k = rho_2k + rho_2k+1
    neg = np.flatnonzero(pairs <= 0)
    k = neg[0] if neg.size else pairs.size
    tau = -1.0 + 2.0 * pairs[:k].sum()
    if tau <= 0:
        return float(n)
    return float(min(n, n / tau))


def gelman_rubin(chains: Sequence) -> float:
    """Potential scale reduction factor of two or more equal-length chains.

    Returns ``inf`` when every chain is constant but the chains disagree,
    and 1 when all chains are the same constant.
    """
    if len(chains) < 2:
        raise ValueError("Gelman-Rubin needs at least two chains")
    x = np.array([_as_chain(c, 10) for c in chains], dtype=float) if len(
        {np.size(c) for c in chains}) == 1 else None
    if x is None:
        raise ValueError("chains must have equal length")
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W <= 0:
        return 1.0 if B <= 0 else math.inf
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def _levinson(acov: np.ndarray, order_max: int):
    """Yule-Walker fits of every order up to ``order_max``.

    Returns the coefficient rows (``coefs[k]`` holds the order-``k`` fit)
    and the innovation variances ``r0 * prod(1 - phi_kk**2)``.
    """
    coefs = [np.zeros(0)]
    var = np.empty(order_max + 1)
    var[0] = acov[0]
    phi = np.zeros(0)
    for k in range(1, order_max + 1):
        kk = (acov[k] - phi @ acov[k - 1:0:-1]) / var[k - 1]
        phi = np.concatenate([phi - kk * phi[::-1], [kk]])
        var[k] = var[k - 1] * (1.0 - kk * kk)
        coefs.append(phi)
    return coefs, var


def spectrum0_ar(chain) -> tuple:
    """Spectral density at frequency zero from an AIC-chosen AR fit.

    Returns ``(spec, order)``.  The variance of the chain mean is
    ``spec / n``.
    """
    x = _as_chain(chain, 3)
    n = x.size
    acov = _autocov(x)
    if acov[0] <= 1e-28 * max(1.0, float(np.mean(x * x))):
        raise DegenerateChainError("constant chain has no spectral density")
    order_max = int(min(n - 1, math.floor(10.0 * math.log10(n))))
    coefs, var = _levinson(acov, order_max)
    with np.errstate(divide="ignore"):
        aic = n * np.log(np.maximum(var, 0.0)) + 2.0 * np.arange(order_max + 1)
    order = int(np.argmin(aic))
    var_pred = var[order] * n / (n - (order + 1))
    return float(var_pred / (1.0 - coefs[order].sum()) ** 2), order


def spectrum0_obm(chain) -> float:
    """Spectral density at zero from overlapping batch means.

    Batches have length ``floor(sqrt(n))``.  Unlike an AR fit this does not
    turn a deterministic drift into apparent autocorrelation, so drifting
    chains keep a small standard error and are flagged.
    """
    x = _as_chain(chain, 3)
    n = x.size
    b = max(1, int(math.isqrt(n)))
    c = np.concatenate([[0.0], np.cumsum(x - x.mean())])
    means = (c[b:] - c[:-b]) / b
    spec = n * b * float(np.sum(means * means)) / ((n - b) * (n - b + 1))
    if spec <= 1e-28 * max(1.0, float(np.mean(x * x))):
        raise DegenerateChainError("constant chain has no spectral density")
    return spec


def geweke(chain, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """z-score comparing the means of the first and last windows."""
    x = _as_chain(chain)
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise ValueError("window fractions must be in (0, 1) and sum to at most 1")
    n = x.size
    na = int(math.floor(frac_a * n))
    nb = int(math.floor(frac_b * n))
    if min(na, nb) < 10:
        raise ValueError(f"chain of {n} leaves a window shorter than 10 draws")
    a, b = x[:na], x[n - nb:]
    se2 = spectrum0_obm(a) / na + spectrum0_obm(b) / nb
    return float((a.mean() - b.mean()) / math.sqrt(se2))


def pcramer(q, eps: float = 1e-5):
    """Distribution function of the Cramer-von Mises statistic (series form).

    The four-term series turns back down above q of about 3, where the true
    upper tail is below 1e-6, so the value is set to 1 there.
    """
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape)
    pos = q > 0
    qq = q[pos]
    cut = -math.log(eps)
    total = np.zeros(qq.shape)
    for k in range(4):
        z = special.gamma(k + 0.5) * math.sqrt(4 * k + 1) / (special.gamma(k + 1) * math.pi**1.5 * np.sqrt(qq))
        u = (4 * k + 1) ** 2 / (16.0 * qq)
        with np.errstate(over="ignore", invalid="ignore"):
            term = z * np.exp(-u) * special.kv(0.25, u)
        total += np.where(u > cut, 0.0, term)
    out[pos] = np.where(qq >= 3.0, 1.0, np.minimum(total, 1.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class HeidelResult:
    p_value: float
    passed: bool
    start: int          # first retained draw (0-based) of the tested window
    statistic: float


def heidelberger_welch(chain, alpha: float = 0.05, full: bool = False):
    """Stationarity p-value after the iterative 10% discard procedure.

    The spectral density is estimated once from the second half of the
    chain.  Windows starting at 0, 10%, ..., 50% are tested in turn and the
    first that passes at level ``alpha`` is reported; if none passes, the
    last one is.  ``full=True`` returns a :class:`HeidelResult`.
    """
    x = _as_chain(chain)
    n_all = x.size
    if n_all < 100:
        raise ValueError("Heidelberger-Welch needs at least 100 draws")
    s0 = spectrum0_obm(x[(n_all - 1) // 2:])
    step = n_all // 10
    starts = range(0, n_all // 2 + 1, step)
    for start in starts:
        y = x[start:]
        n = y.size
        b = np.cumsum(y) - y.mean() * np.arange(1, n + 1)
        stat = float(np.sum(b * b) / (n * s0) / n)
        p = 1.0 - float(pcramer(stat))
        if p > alpha:
            break
    res = HeidelResult(p, p > alpha, start, stat)
    return res if full else res.p_value


@dataclass(frozen=True)
class RafteryResult:
    dependence: float
    n_burn: int
    n_keep: int
    n_min: int
    thin: int


def raftery_lewis(chain, q: float = 0.025, r: float = 0.005, s: float = 0.95,
                  eps: float = 0.001, full: bool = False):
    """Dependence factor ``(n_burn + n_keep) / n_min`` for estimating the ``q`` quantile."""
    x = _as_chain(chain)
    phi = stats.norm.ppf(0.5 * (1.0 + s))
    n_min = int(math.ceil(q * (1.0 - q) * phi * phi / (r * r)))
    if x.size < n_min:
        raise ValueError(f"Raftery-Lewis needs at least {n_min} draws for q={q}, r={r}, s={s}; "
                         f"got {x.size}")
    d = (x <= np.quantile(x, q)).astype(np.int64)
    if d.min() == d.max():
        raise DegenerateChainError("quantile indicator is constant")
    thin = 0
    while True:
        thin += 1
        z = d[::thin]
        n = z.size
        if n < 3:
            raise ValueError("thinning exhausted the chain before a first-order fit was accepted")
        tab = np.zeros((2, 2, 2))
        np.add.at(tab, (z[:-2], z[1:-1], z[2:]), 1.0)
        g2 = 0.0
        for i1 in range(2):
            for i2 in range(2):
                for i3 in range(2):
                    c = tab[i1, i2, i3]
                    if c:
                        fitted = tab[i1, i2, :].sum() * tab[:, i2, i3].sum() / tab[:, i2, :].sum()
                        g2 += 2.0 * c * math.log(c / fitted)
        if g2 - 2.0 * math.log(n - 2) < 0:
            break
    tran = np.zeros((2, 2))
    np.add.at(tran, (z[:-1], z[1:]), 1.0)
    a = tran[0, 1] / tran[0].sum()
    b = tran[1, 0] / tran[1].sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        burn = math.log(eps * (a + b) / max(a, b)) / math.log(abs(1.0 - a - b)) if a + b != 1 else 0.0
    n_burn = int(math.ceil(burn) * thin)
    keep = (2.0 - a - b) * a * b * phi * phi / ((a + b) ** 3 * r * r)
    n_keep = int(math.ceil(keep) * thin)
    res = RafteryResult((n_burn + n_keep) / n_min, n_burn, n_keep, n_min, thin)
    return res if full else res.dependence


@dataclass(frozen=True)
class DiagnosticsReport:
    """Diagnostics of one quantity (method, time step) over one or more chains.

    Single-chain diagnostics are averaged over the chains; ``gelman_rubin``
    is NaN when only one chain is given.  Diagnostics whose preconditions
    fail (e.g. a chain shorter than the Raftery-Lewis minimum) are NaN.
    """

    ess: float
    gelman_rubin: float
    geweke_z: float
    heidelberger_p: float
    raftery_lewis_I: float
    acf: np.ndarray = field(repr=False)
    n: int = 0
    n_chains: int = 1
    method: str = ""
    timestep: Optional[int] = None
    settings: str = "spectrum0=obm; geweke=0.1/0.5; heidel=alpha0.05,step0.1; raftery=q0.025,r0.005,s0.95"

    SCALARS = ("ess", "gelman_rubin", "geweke_z", "heidelberger_p", "raftery_lewis_I")

    def to_text(self) -> str:
        lines = [f"method: {self.method}", f"timestep: {'' if self.timestep is None else self.timestep}",
                 f"n: {self.n}", f"n_chains: {self.n_chains}"]
        lines += [f"{k}: {getattr(self, k)!r}" for k in self.SCALARS]
        lines.append("acf: " + " ".join(repr(float(v)) for v in self.acf))
        lines.append(f"settings: {self.settings}")
        return "\n".join(lines) + "\n"

    @classmethod
    def csv_header(cls, n_lags: int) -> list:
        return (["method", "timestep", "n", "n_chains"] + list(cls.SCALARS)
                + [f"acf_{k}" for k in range(n_lags)])

    def csv_row(self) -> list:
        return ([self.method, "" if self.timestep is None else self.timestep, self.n, self.n_chains]
                + [repr(float(getattr(self, k))) for k in self.SCALARS]
                + [repr(float(v)) for v in self.acf])


def _safe(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ValueError:   # includes DegenerateChainError
        return math.nan


def diagnose(chains, max_lag: int = 40, method: str = "", timestep: Optional[int] = None) -> DiagnosticsReport:
    """Full report for a list of chains (or a single chain)."""
    if isinstance(chains, np.ndarray) and chains.ndim == 1:
        chains = [chains]
    chains = [_as_chain(c) for c in chains]
    n = min(c.size for c in chains)
    chains = [c[:n] for c in chains]
    lag = min(max_lag, n - 1)
    acfs = [_safe(acf, c, lag) for c in chains]
    good = [a for a in acfs if not np.isscalar(a)]
    mean_acf = np.mean(good, axis=0) if good else np.full(lag + 1, np.nan)

    def avg(fn):
        return float(np.mean([_safe(fn, c) for c in chains]))

    gr = _safe(gelman_rubin, chains) if len(chains) > 1 else math.nan
    return DiagnosticsReport(avg(ess), float(gr), avg(geweke), avg(heidelberger_welch),
                             avg(raftery_lewis), mean_acf, n, len(chains), method, timestep)
