import math

import numpy as np
import pytest
from scipy import stats

from trellip import dgf
from trellip.exceptions import InvalidParameterError
from trellip.sampler import (TruncEllipticalSpec, acf, coordinate_slice_bounds, slice_gibbs_sample,
                             standardize)

S07 = np.array([[1.0, 0.7], [0.7, 1.0]])


def bivariate(family=None):
    return TruncEllipticalSpec([0, 0], S07, [-2, -2], [3, 2], family or dgf.normal(2))


def test_standardize_identity():
    st = standardize(TruncEllipticalSpec([0, 0], np.eye(2), [-2, -2], [3, 2], dgf.normal(2)))
    np.testing.assert_array_equal(st.corr, np.eye(2))
    np.testing.assert_array_equal(st.lower_std, [-2, -2])
    np.testing.assert_array_equal(st.upper_std, [3, 2])


def test_standardize_scaling():
    st = standardize(TruncEllipticalSpec([1, 1], np.diag([4.0, 9.0]), [-1, -2], [3, 4], dgf.normal(2)))
    np.testing.assert_allclose(st.lam, [2, 3])
    np.testing.assert_allclose(st.lower_std, [-1, -1])
    np.testing.assert_allclose(st.upper_std, [1, 1])


def test_standardize_correlation_and_infinite_bounds():
    st = standardize(TruncEllipticalSpec([0, 5], S07, [-np.inf, 0], [1, np.inf], dgf.normal(2)))
    np.testing.assert_allclose(st.corr, S07)
    np.testing.assert_allclose(st.lam, [1, 1])
    assert st.lower_std[0] == -np.inf and st.upper_std[1] == np.inf


def test_non_pd_sigma_rejected():
    with pytest.raises(InvalidParameterError):
        TruncEllipticalSpec([0, 0], [[1, 2], [2, 1]], [-1, -1], [1, 1], dgf.normal(2))


@pytest.mark.parametrize("lo,up", [([1, 0], [0, 1]), ([np.inf, 0], [np.inf, 1])])
def test_bad_bounds_rejected(lo, up):
    with pytest.raises(InvalidParameterError):
        TruncEllipticalSpec([0, 0], np.eye(2), lo, up, dgf.normal(2))


def test_slice_bounds_identity():
    lo, hi = coordinate_slice_bounds([0, 0.5], 0, np.eye(2), 1.0, [-2, -2], [3, 2])
    assert lo == pytest.approx(-math.sqrt(0.75)) and hi == pytest.approx(math.sqrt(0.75))


def test_slice_bounds_box_binds():
    assert coordinate_slice_bounds([0, 0], 0, np.eye(2), 4.0, [-1, -1], [1, 1]) == (-1, 1)


def test_slice_bounds_correlated():
    rinv = np.array([[1, -0.7], [-0.7, 1]]) / 0.51
    x = np.array([0.2, -0.1])
    q = x @ rinv @ x
    kappa = 2.0
    lo, hi = coordinate_slice_bounds(x, 1, rinv, kappa, [-np.inf] * 2, [np.inf] * 2)
    # hand-worked: rho22 = 1/0.51, eta = x1^2 rho11, lambda = 0.7 x1
    rjj = 1 / 0.51
    eta = 0.04 / 0.51
    lam = 0.7 * 0.2
    tau = math.sqrt(lam ** 2 + (kappa - eta) / rjj)
    assert q < kappa
    assert lo == pytest.approx(lam - tau) and hi == pytest.approx(lam + tau)
    assert lo < -0.1 < hi


def test_containment_bivariate():
    chain = slice_gibbs_sample(bivariate(), 10_000, seed=3)
    y = chain.samples
    assert y.shape == (10_000, 2)
    assert np.all((y > [-2, -2]) & (y < [3, 2]))


@pytest.mark.parametrize("fam", [dgf.student_t(3, 2), dgf.pearson_vii(3, 2, 2), dgf.slash(1.5, 2),
                                 dgf.contaminated_normal(0.2, 0.1, 2), dgf.power_exponential(0.6, 2),
                                 dgf.kotz(2, 0.25, 0.5, 2)], ids=lambda f: f.name)
def test_containment_all_families_with_check(fam):
    spec = TruncEllipticalSpec([0.5, -1], [[2, 0.6], [0.6, 1]], [-1, -np.inf], [2, 0], fam)
    y = slice_gibbs_sample(spec, 3000, seed=11, check=True).samples
    assert np.all((y > spec.lower) & (y < spec.upper))


def test_custom_family_sampler():
    g = lambda t: math.exp(-t) / (1 + math.exp(-t)) ** 2
    spec = bivariate(dgf.custom(g, p=2))
    y = slice_gibbs_sample(spec, 2000, seed=5, check=True).samples
    assert np.all((y > spec.lower) & (y < spec.upper))


def test_untruncated_normal_moments():
    spec = TruncEllipticalSpec([0], [[1]], [-np.inf], [np.inf], dgf.normal(1))
    y = slice_gibbs_sample(spec, 100_000, seed=8).samples[:, 0]
    assert abs(y.mean()) < 0.02
    assert abs(y.var() - 1) < 0.03


def test_determinism():
    a = slice_gibbs_sample(bivariate(), 5000, burn_in=10, thinning=2, seed=42)
    b = slice_gibbs_sample(bivariate(), 5000, burn_in=10, thinning=2, seed=42)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.spec_digest == b.spec_digest
    c = slice_gibbs_sample(bivariate(), 5000, burn_in=10, thinning=2, seed=43)
    assert not np.array_equal(a.samples, c.samples)


def test_chunking_does_not_change_stream():
    # n large enough to span several internal chunks on p=1
    spec = TruncEllipticalSpec([0], [[1]], [-1], [2], dgf.normal(1))
    full = slice_gibbs_sample(spec, 300_000, seed=9).samples
    part = slice_gibbs_sample(spec, 1000, seed=9).samples
    np.testing.assert_array_equal(full[:1000], part)


def test_thinning_and_burn_in_semantics():
    spec = bivariate()
    base = slice_gibbs_sample(spec, 30, seed=4).samples
    thin = slice_gibbs_sample(spec, 9, burn_in=3, thinning=3, seed=4).samples
    # kept draw k is iteration burn_in + (k + 1) * thinning
    np.testing.assert_array_equal(thin, base[3 + 3 * np.arange(1, 10) - 1])


def test_affine_closure():
    mu = np.array([1.0, -2.0])
    sigma = np.array([[4.0, 1.2], [1.2, 1.0]])
    lo, up = np.array([-1.0, -3.0]), np.array([4.0, np.inf])
    spec = TruncEllipticalSpec(mu, sigma, lo, up, dgf.student_t(4, 2))
    st = standardize(spec)
    std_spec = TruncEllipticalSpec(np.zeros(2), st.corr, st.lower_std, st.upper_std, dgf.student_t(4, 2))
    y = slice_gibbs_sample(spec, 2000, seed=21).samples
    x = slice_gibbs_sample(std_spec, 2000, seed=21).samples
    np.testing.assert_allclose(y, mu + st.lam * x, rtol=0, atol=1e-13)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_ks_half_normal(seed):
    spec = TruncEllipticalSpec([0], [[1]], [0], [np.inf], dgf.normal(1))
    y = slice_gibbs_sample(spec, 100_000, thinning=1, seed=seed).samples[:, 0]
    assert stats.kstest(y, stats.halfnorm.cdf).pvalue > 0.01


def test_t_marginal_moments():
    # untruncated bivariate t: first coordinate is t_1 with the same nu
    nu = 6.0
    spec = TruncEllipticalSpec([1.0, 0], [[2.0, 0.5], [0.5, 1.0]], [-np.inf] * 2, [np.inf] * 2,
                               dgf.student_t(nu, 2))
    y = slice_gibbs_sample(spec, 200_000, thinning=2, seed=17).samples[:, 0]
    want_var = 2.0 * nu / (nu - 2)
    nb = int(math.sqrt(y.size))
    batches = y[: nb * nb].reshape(nb, nb)
    se_mean = batches.mean(axis=1).std(ddof=1) / math.sqrt(nb)
    se_var = ((batches - 1.0) ** 2).mean(axis=1).std(ddof=1) / math.sqrt(nb)
    assert abs(y.mean() - 1.0) < 3 * se_mean
    assert abs(((y - 1.0) ** 2).mean() - want_var) < 3 * se_var


def test_x0_validation():
    with pytest.raises(InvalidParameterError):
        slice_gibbs_sample(bivariate(), 10, x0=[5.0, 0.0])
    y = slice_gibbs_sample(bivariate(), 10, x0=[0.1, 0.1]).samples
    assert y.shape == (10, 2)


def test_acf_iid():
    x = np.random.default_rng(0).standard_normal((100_000, 1))
    r = acf(x, 5)
    assert r.shape == (5, 1)
    assert abs(r[0, 0]) < 0.01


def test_acf_constant_column_is_nan():
    x = np.column_stack([np.random.default_rng(1).standard_normal(100), np.ones(100)])
    r = acf(x, 3)
    assert np.all(np.isfinite(r[:, 0])) and np.all(np.isnan(r[:, 1]))


def test_acf_matches_direct_formula():
    x = np.random.default_rng(2).standard_normal(500).cumsum()
    r = acf(x, 4)[:, 0]
    xc = x - x.mean()
    direct = [np.sum(xc[k:] * xc[:-k]) / np.sum(xc * xc) for k in range(1, 5)]
    np.testing.assert_allclose(r, direct, rtol=1e-10)


def test_thinning_reduces_lag1_acf():
    wins = 0
    for s in range(10):
        r1 = acf(slice_gibbs_sample(bivariate(), 3000, thinning=1, seed=s), 1)[0].mean()
        r3 = acf(slice_gibbs_sample(bivariate(), 3000, thinning=3, seed=s), 1)[0].mean()
        wins += abs(r3) < abs(r1)
    assert wins >= 9
