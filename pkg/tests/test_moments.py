import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from trellip import dgf
from trellip.exceptions import ExistenceError
from trellip.moments import (existence_check, mc_moments, mc_moments_full, mc_moments_partitioned,
                             omega21)
from trellip.partition import split
from trellip.sampler import TruncEllipticalSpec, slice_gibbs_sample

INF = np.inf


def uni(lo, hi, fam=None):
    return TruncEllipticalSpec([0], [[1]], [lo], [hi], fam or dgf.normal(1))


def test_half_normal():
    est = mc_moments(uni(0, INF), 100_000, thinning=3, seed=1)
    assert est.mean[0] == pytest.approx(math.sqrt(2 / math.pi), abs=0.01)
    assert est.cov[0, 0] == pytest.approx(1 - 2 / math.pi, abs=0.01)


def test_symmetric_interval():
    want = 1 - 2 * stats.norm.pdf(1) / (stats.norm.cdf(1) - stats.norm.cdf(-1))
    est = mc_moments(uni(-1, 1), 100_000, thinning=3, seed=2)
    assert abs(est.mean[0]) < 0.01
    assert est.cov[0, 0] == pytest.approx(want, abs=0.01)


@pytest.mark.parametrize("fam", [dgf.student_t(3, 2), dgf.slash(1.5, 2), dgf.kotz(2, 0.25, 0.5, 2)],
                         ids=lambda f: f.name)
def test_symmetric_spec_mean_is_centre(fam):
    spec = TruncEllipticalSpec([0, 0], [[1, 0.4], [0.4, 1]], [-1, -2], [1, 2], fam)
    est = mc_moments(spec, 40_000, seed=3, route="full")
    assert np.all(np.abs(est.mean) < 3 * est.mean_se)
    np.testing.assert_allclose(est.cov, est.cov.T)


def test_second_moment_identity():
    spec = TruncEllipticalSpec([1, 0, 2], np.eye(3) + 0.2, [0, -INF, 1], [2, INF, INF],
                               dgf.student_t(5, 3))
    for route in ("full", "partitioned"):
        est = mc_moments(spec, 5000, seed=4, route=route)
        np.testing.assert_allclose(est.second_moment - np.outer(est.mean, est.mean), est.cov,
                                   atol=1e-12)


def test_normal_independent_blocks_exact():
    sig = np.diag([1.0, 2.0, 0.5])
    spec = TruncEllipticalSpec([0, 3, -1], sig, [-1, -INF, -INF], [0.5, INF, INF], dgf.normal(3))
    est = mc_moments_partitioned(spec, 5000, seed=5)
    np.testing.assert_array_equal(est.mean[1:], [3, -1])
    np.testing.assert_allclose(est.cov[1:, 1:], np.diag([2.0, 0.5]), rtol=1e-14)
    assert est.omega21 == 1.0
    assert est.route == "partitioned"


def test_untruncated_t5():
    sig = np.array([[1, 0.5, 0.2], [0.5, 2, 0.3], [0.2, 0.3, 1.5]])
    spec = TruncEllipticalSpec([1, -1, 0], sig, [-INF] * 3, [INF] * 3, dgf.student_t(5, 3))
    est = mc_moments(spec, 100_000, seed=6)
    assert np.all(np.abs(est.mean - spec.mu) < 3 * est.mean_se)
    assert np.all(np.abs(est.cov - 5 / 3 * sig) < 3 * est.cov_se)


def example1_spec():
    mu = np.array([0.0, 0.5, 1.0, -0.5])
    sig = np.array([[1.0, 0.4, 0.3, 0.2],
                    [0.4, 2.0, 0.5, 0.3],
                    [0.3, 0.5, 1.5, 0.4],
                    [0.2, 0.3, 0.4, 1.0]])
    return TruncEllipticalSpec(mu, sig, [-1, -INF, 0, -2], [2, INF, 3, 1], dgf.student_t(3, 4))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_partitioned_matches_full(seed):
    spec = example1_spec()
    a = mc_moments_partitioned(spec, 50_000, seed=seed)
    b = mc_moments_full(spec, 50_000, seed=seed + 100)
    z = np.concatenate([np.abs(a.mean - b.mean) / np.hypot(a.mean_se, b.mean_se),
                        (np.abs(a.cov - b.cov) / np.hypot(a.cov_se, b.cov_se))[np.triu_indices(4)]])
    # 14 entries: a lone 3-sigma excursion is expected now and then
    assert np.mean(z < 3) >= 0.9
    assert np.all(z < 4.5)


@pytest.mark.parametrize("fam", [dgf.pearson_vii(4, 3, 3), dgf.slash(2, 3),
                                 dgf.contaminated_normal(0.3, 0.2, 3)], ids=lambda f: f.name)
def test_partitioned_matches_full_other_families(fam):
    sig = np.array([[1, 0.5, 0.2], [0.5, 2, 0.3], [0.2, 0.3, 1.5]])
    spec = TruncEllipticalSpec([0, 1, 0], sig, [-1, -INF, 0], [1.5, INF, INF], fam)
    a = mc_moments_partitioned(spec, 50_000, seed=7)
    b = mc_moments_full(spec, 50_000, seed=8)
    z = np.concatenate([np.abs(a.mean - b.mean) / np.hypot(a.mean_se, b.mean_se),
                        (np.abs(a.cov - b.cov) / np.hypot(a.cov_se, b.cov_se))[np.triu_indices(3)]])
    assert np.mean(z < 3) >= 0.85
    assert np.all(z < 4.5)


def test_fallback_to_full_for_pe():
    spec = TruncEllipticalSpec([0, 0], np.eye(2), [-1, -INF], [1, INF], dgf.power_exponential(0.7, 2))
    assert mc_moments_partitioned(spec, 1000, seed=1).route == "full"


def test_omega_examples():
    spec = TruncEllipticalSpec([0, 0, 0], np.eye(3), [-1, -1, -INF], [1, 1, INF], dgf.student_t(4, 3))
    part = split(spec)
    assert omega21(dgf.normal(3), part, np.zeros((3, 2))) == 1.0
    # E(delta1) = tr(Omega11) + |xi1|^2 = 2
    w = omega21(spec.family, part, np.zeros((1, 2)), xi1=np.zeros(2), omega11=np.eye(2))
    assert w == pytest.approx(1.5)


def test_omega_slash_untruncated_limit():
    nu = 2.0
    spec = TruncEllipticalSpec([0, 0], [[1, 0.3], [0.3, 1]], [-1e8, -INF], [1e8, INF],
                               dgf.slash(nu, 2))
    part = split(spec)
    x1 = slice_gibbs_sample(TruncEllipticalSpec([0], [[1]], [-INF], [INF], dgf.slash(nu, 1)),
                            100_000, thinning=2, seed=9).samples
    from trellip.moments import _omega_terms
    h, _ = _omega_terms(spec.family, part, x1)
    nb = int(math.sqrt(h.size))
    se = h[: nb * nb].reshape(nb, nb).mean(axis=1).std(ddof=1) / math.sqrt(nb)
    assert abs(h.mean() - 2.0) < 3 * se


def test_omega_denominator_error():
    spec = TruncEllipticalSpec([0, 0], np.eye(2), [-1, -INF], [1, INF], dgf.student_t(0.5, 2))
    with pytest.raises(ExistenceError):
        omega21(spec.family, split(spec), np.zeros((1, 1)), xi1=np.zeros(1), omega11=np.eye(1))


def test_existence_scenarios():
    a = existence_check(dgf.pearson_vii(2, 1, 2), [-0.8, -0.6], [INF, INF])
    assert a.mean_exists and not a.cov_exists
    b = existence_check(dgf.pearson_vii(1.4, 1, 2), [-0.8, -0.6], [0.8, INF])
    assert b.mean_exists and not b.cov_exists
    assert b.cov_entries[0, 0] and b.cov_entries[0, 1] and not b.cov_entries[1, 1]
    c = existence_check(dgf.pearson_vii(2, 1, 2), [-0.8, -0.6], [0.8, INF])
    assert c.mean_exists and c.cov_exists


def test_existence_simple_rules():
    assert not existence_check(dgf.student_t(1, 1), [-INF], [INF]).mean_exists
    assert existence_check(dgf.student_t(1.5, 1), [0], [INF]).mean_exists
    assert not existence_check(dgf.student_t(1.5, 1), [0], [INF]).cov_exists
    assert existence_check(dgf.student_t(0.5, 2), [0, 0], [1, 1]).cov_exists
    assert not existence_check(dgf.slash(1, 1), [-INF], [INF]).cov_exists
    assert existence_check(dgf.power_exponential(0.3, 2), [-INF] * 2, [INF] * 2).cov_exists


def test_divergent_raises_or_flags():
    spec = uni(-INF, INF, dgf.student_t(1.5, 1))
    with pytest.raises(ExistenceError):
        mc_moments(spec, 1000)
    est = mc_moments(spec, 1000, allow_divergent=True)
    assert not est.reliable


def test_chains_average():
    est = mc_moments(uni(0, INF), 20_000, seed=3, chains=3)
    assert est.n_used == 60_000
    assert est.mean[0] == pytest.approx(math.sqrt(2 / math.pi), abs=0.02)
    again = mc_moments(uni(0, INF), 20_000, seed=3, chains=3)
    np.testing.assert_array_equal(est.mean, again.mean)


bounds = st.sampled_from([(-INF, INF), (-1.0, INF), (-INF, 2.0), (-1.0, 2.0)])


@settings(max_examples=80, deadline=None)
@given(name=st.sampled_from(["t", "slash", "pvii"]), base=st.floats(0.6, 4.0),
       bump=st.floats(0.0, 3.0), b=st.lists(bounds, min_size=1, max_size=3))
def test_existence_monotone(name, base, bump, b):
    p = len(b)
    lower, upper = [x[0] for x in b], [x[1] for x in b]

    def fam(v):
        if name == "pvii":
            return dgf.Family("pvii", (v + p / 2, 1.0), p)
        return dgf.Family(name, (v,), p)

    lo, hi = existence_check(fam(base), lower, upper), existence_check(fam(base + bump), lower, upper)
    assert not (lo.mean_exists and not hi.mean_exists)
    assert not (lo.cov_exists and not hi.cov_exists)
