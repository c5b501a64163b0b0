import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.regression.linear_model import yule_walker
from statsmodels.tsa.stattools import acf as sm_acf

from megsis import diagnostics as dg


def ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def test_acf_matches_statsmodels():
    x = ar1(0.6, 3000, 1)
    np.testing.assert_allclose(dg.acf(x, 30), sm_acf(x, nlags=30, fft=False), rtol=0, atol=1e-12)


def test_acf_lag0_and_errors():
    assert dg.acf(np.random.default_rng(0).normal(size=50), 5)[0] == 1.0
    with pytest.raises(dg.DegenerateChainError):
        dg.acf(np.ones(100))
    with pytest.raises(ValueError):
        dg.acf(np.arange(10.0), 10)


def test_acf_ar1_theory():
    x = ar1(0.8, 100_000, 2)
    assert np.all(np.abs(dg.acf(x, 10) - 0.8 ** np.arange(11)) < 0.02)


def test_levinson_matches_yule_walker():
    x = ar1(0.7, 5000, 3)
    acov = dg._autocov(x)
    coefs, var = dg._levinson(acov, 6)
    for k in (1, 3, 6):
        rho, sigma = yule_walker(x, order=k, method="mle")
        np.testing.assert_allclose(coefs[k], rho, rtol=1e-9)
        assert var[k] == pytest.approx(sigma**2, rel=1e-9)


def test_spectrum0_ar1_theory():
    # AR(1) with unit innovations: S(0) = 1 / (1 - phi)^2
    spec, order = dg.spectrum0_ar(ar1(0.9, 200_000, 4))
    assert spec == pytest.approx(100.0, rel=0.08)
    assert order >= 1


def test_spectrum0_obm_ar1_theory():
    # relative sd of the batch-means estimator is about sqrt(4 b / 3 n)
    for x, want in ((ar1(0.9, 200_000, 4), 100.0), (np.random.default_rng(4).normal(size=50_000), 1.0)):
        rel = 3 * math.sqrt(4 * math.isqrt(x.size) / (3 * x.size))
        assert dg.spectrum0_obm(x) == pytest.approx(want, rel=rel)
    with pytest.raises(dg.DegenerateChainError):
        dg.spectrum0_obm(np.full(100, 2.0))


def test_geweke_linear_drift_grows_with_n():
    rng = np.random.default_rng(20)
    z = [abs(dg.geweke(0.01 * np.arange(n) + rng.normal(size=n))) for n in (1000, 10_000)]
    # drift inflates the batch-means variance too, so z grows like n^(1/4)
    assert z[1] > 1.3 * z[0] > 4


def test_ess_iid_and_ar1():
    assert abs(dg.ess(np.random.default_rng(5).normal(size=2000)) / 2000 - 1) < 0.1
    x = ar1(0.5, 50_000, 6)
    assert dg.ess(x) == pytest.approx(50_000 * 0.5 / 1.5, rel=0.1)


def test_ess_capped_at_n():
    # strongly anticorrelated chains would give ESS above n without the cap
    x = np.tile([1.0, -1.0], 500) + 1e-3 * np.random.default_rng(7).normal(size=1000)
    assert dg.ess(x) == 1000


@given(seed=st.integers(0, 10_000), n=st.integers(20, 400))
def test_ess_never_exceeds_n(seed, n):
    x = np.random.default_rng(seed).normal(size=n).cumsum()
    assert 0 < dg.ess(x) <= n


def test_gelman_rubin_formula_and_edge_cases():
    rng = np.random.default_rng(8)
    ch = rng.normal(size=(3, 200)) + np.array([[0.0], [0.2], [0.5]])
    n = 200
    W = ch.var(axis=1, ddof=1).mean()
    B = n * ch.mean(axis=1).var(ddof=1)
    assert dg.gelman_rubin(list(ch)) == pytest.approx(math.sqrt(((n - 1) / n * W + B / n) / W))
    assert dg.gelman_rubin(list(rng.normal(size=(4, 5000)))) < 1.01
    assert math.isinf(dg.gelman_rubin([np.zeros(20), np.ones(20)]))
    assert dg.gelman_rubin([np.ones(20), np.ones(20)]) == 1.0
    with pytest.raises(ValueError):
        dg.gelman_rubin([np.zeros(20)])
    with pytest.raises(ValueError):
        dg.gelman_rubin([np.zeros(20), np.zeros(21)])


def test_gelman_rubin_permutation_invariant():
    rng = np.random.default_rng(9)
    ch = list(rng.normal(size=(5, 300)) * rng.uniform(0.5, 2, (5, 1)))
    a = dg.gelman_rubin(ch)
    assert dg.gelman_rubin(ch[::-1]) == pytest.approx(a, rel=1e-14)
    assert dg.gelman_rubin([ch[i] for i in (2, 0, 4, 1, 3)]) == pytest.approx(a, rel=1e-14)


def test_geweke_iid_calibration():
    rng = np.random.default_rng(10)
    z = np.array([dg.geweke(rng.normal(size=1000)) for _ in range(200)])
    assert np.mean(np.abs(z) < 2) >= 0.93


def test_geweke_window_mean_shift():
    # a level shift between the windows grows like sqrt(n) in z
    rng = np.random.default_rng(11)
    z = []
    for n in (1000, 10_000):
        x = rng.normal(size=n)
        x[: n // 2] += 0.5
        z.append(abs(dg.geweke(x)))
    assert z[1] > 2 * z[0] > 0


def test_geweke_short_chain_rejected():
    with pytest.raises(ValueError):
        dg.geweke(np.arange(50.0))


def test_pcramer_reference_values():
    # Cramer-von Mises limiting law: 95% point 0.4614, 99% point 0.7435
    assert dg.pcramer(0.4614) == pytest.approx(0.95, abs=2e-3)
    assert dg.pcramer(0.7435) == pytest.approx(0.99, abs=2e-3)
    assert dg.pcramer(0.0) == 0.0


def test_heidelberger_iid_calibration():
    rng = np.random.default_rng(12)
    rej = [dg.heidelberger_welch(rng.normal(size=1000)) < 0.05 for _ in range(200)]
    assert np.mean(rej) <= 0.10


def test_heidelberger_discards_early_transient():
    rng = np.random.default_rng(13)
    fails = 0
    for _ in range(100):
        x = rng.normal(size=1000)
        x[:600] += np.linspace(8, 0, 600)
        r = dg.heidelberger_welch(x, full=True)
        fails += r.start > 0 or not r.passed
    assert fails >= 95


def test_heidelberger_needs_length():
    with pytest.raises(ValueError):
        dg.heidelberger_welch(np.random.default_rng(0).normal(size=50))


def test_raftery_lewis_iid_and_dependent():
    rng = np.random.default_rng(14)
    assert 0.8 <= dg.raftery_lewis(rng.normal(size=20_000)) <= 1.5
    assert dg.raftery_lewis(ar1(0.95, 20_000, 15)) > 5
    res = dg.raftery_lewis(rng.normal(size=4000), full=True)
    assert res.n_min == 3746 and res.thin >= 1
    with pytest.raises(ValueError):
        dg.raftery_lewis(rng.normal(size=1000))


def test_raftery_lewis_two_state_chain():
    # indicator chain with known switching probabilities a (0->1) and b (1->0)
    rng = np.random.default_rng(16)
    a, b = 0.01, 0.3
    n = 200_000
    s = np.empty(n, dtype=int)
    s[0] = 0
    u = rng.random(n)
    for i in range(1, n):
        s[i] = (u[i] < a) if s[i - 1] == 0 else (u[i] >= b)
    x = np.where(s == 1, -1.0, 1.0) + 1e-6 * rng.normal(size=n)
    # the empirical state frequency makes the quantile indicator equal the state
    res = dg.raftery_lewis(x, q=s.mean(), full=True)
    phi = 1.959963984540054
    keep = (2 - a - b) * a * b * phi**2 / ((a + b) ** 3 * 0.005**2)
    assert res.thin == 1
    assert res.n_keep == pytest.approx(keep, rel=0.15)


@pytest.mark.parametrize("name", ["ess", "geweke", "heidelberger_welch", "raftery_lewis"])
def test_affine_invariance(name):
    x = ar1(0.5, 5000, 17)
    fn = getattr(dg, name)
    assert fn(3 * x + 7) == pytest.approx(fn(x), rel=1e-10, abs=1e-10)


def test_acf_and_gr_affine_invariance():
    x = ar1(0.5, 3000, 18)
    np.testing.assert_allclose(dg.acf(3 * x + 7), dg.acf(x), atol=1e-10)
    ch = [ar1(0.5, 500, s) for s in range(3)]
    assert dg.gelman_rubin([3 * c + 7 for c in ch]) == pytest.approx(dg.gelman_rubin(ch), rel=1e-10)


def test_diagnose_report():
    rng = np.random.default_rng(19)
    rep = dg.diagnose([rng.normal(size=4000) for _ in range(3)], max_lag=10, method="m", timestep=9)
    assert rep.n == 4000 and rep.n_chains == 3 and rep.acf.shape == (11,)
    assert abs(rep.gelman_rubin - 1) < 0.01
    assert 0 < rep.ess <= 4000
    row = rep.csv_row()
    assert len(row) == len(dg.DiagnosticsReport.csv_header(11))
    assert "raftery_lewis_I: " in rep.to_text()
    one = dg.diagnose(rng.normal(size=500), max_lag=5)
    assert math.isnan(one.gelman_rubin) and math.isnan(one.raftery_lewis_I)
    const = dg.diagnose([np.ones(200), np.ones(200)])
    assert math.isnan(const.ess) and const.gelman_rubin == 1.0
