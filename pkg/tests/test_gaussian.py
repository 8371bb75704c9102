import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinchain import SingleSitePotential, chain_spec, exchangeable_spec
from spinchain import gaussian as G
from spinchain.errors import PotentialNotGaussian

from .strategies import specs


def test_free_chain_moments():
    g = G.gce_moments(chain_spec(4, sigma=0.7))
    assert np.allclose(g.mean, 0.7, atol=1e-15) and np.allclose(g.covariance, np.eye(4), atol=1e-15)


def test_three_site_mean():
    # M mu = 1 for the tridiagonal (1, 0.25) matrix, solved by hand
    g = G.gce_moments(chain_spec(3, 0.25, sigma=1.0))
    assert np.allclose(g.mean, [6 / 7, 4 / 7, 6 / 7], atol=1e-14)


def test_matching_field_cancels_mean():
    g = G.gce_moments(chain_spec(5, 0.2, s=0.4, sigma=0.4))
    assert np.allclose(g.mean, 0.0, atol=1e-15)


def test_precision_times_covariance():
    spec = chain_spec(20, 0.3)
    g = G.gce_moments(spec)
    assert np.allclose(spec.interaction.dense() @ g.covariance, np.eye(20), atol=1e-10)


def test_ce_free_chain():
    N = 5
    c = G.ce_moments(chain_spec(N), 0.3)
    assert np.allclose(c.mean, 0.3)
    assert np.allclose(c.covariance, np.eye(N) - 1.0 / N, atol=1e-14)
    assert c.covariance[0, 1] == pytest.approx(-c.covariance[0, 0] / (N - 1), abs=1e-15)


def test_ce_at_unconditional_mean():
    spec = chain_spec(6, 0.2, s=np.linspace(-1, 1, 6), sigma=0.5)
    g = G.gce_moments(spec)
    c = G.ce_moments(spec, g.mean.mean())
    assert np.allclose(c.mean, g.mean, atol=1e-13)


def test_ce_two_sites():
    c = G.ce_moments(chain_spec(2), 0.0)
    assert np.allclose(c.covariance, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)


def test_free_energy_examples():
    spec = chain_spec(3)
    assert G.free_energy(spec, 0.4) == pytest.approx(0.08 + 0.5 * np.log(2 * np.pi), abs=1e-14)
    h = 1e-5
    d = (G.free_energy(spec, 0.3 + h) - G.free_energy(spec, 0.3 - h)) / (2 * h)
    assert d == pytest.approx(0.3, abs=1e-8)


def test_sigma_of_m_examples():
    assert G.sigma_of_m_closed_form(chain_spec(4), 0.37) == pytest.approx(0.37, abs=1e-15)
    assert G.sigma_of_m_closed_form(chain_spec(4, s=0.5), 0.37) == pytest.approx(0.87, abs=1e-15)
    spec = chain_spec(3, 0.25)
    s = G.sigma_of_m_closed_form(spec, 2 / 3)
    # mean of (6/7, 4/7, 6/7) is 16/21 per unit field
    assert s == pytest.approx((2 / 3) / (16 / 21), abs=1e-14)
    assert G.gce_mean(spec, s).mean() == pytest.approx(2 / 3, abs=1e-10)


def test_non_gaussian_rejected():
    spec = chain_spec(3, 0.1, potential=SingleSitePotential.cosine())
    for fn in (G.gce_moments, G.free_energy):
        with pytest.raises(PotentialNotGaussian):
            fn(spec)
    with pytest.raises(PotentialNotGaussian):
        G.ce_moments(spec, 0.0)


def test_sampler_determinism_and_constraint():
    spec = chain_spec(5, 0.3, sigma=0.2)
    a = G.sample_gce(spec, seed=42, size=100)
    assert np.array_equal(a, G.sample_gce(spec, seed=42, size=100))
    x = G.sample_ce(spec, 0.1, seed=3, size=1000)
    assert np.max(np.abs(x.mean(axis=1) - 0.1)) < 1e-10
    y = G.sample_ce(chain_spec(2), 0.0, seed=1, size=50)
    assert np.allclose(y[:, 0], -y[:, 1], atol=1e-12)


def test_free_marginals_normal():
    from scipy import stats

    x = G.sample_gce(chain_spec(2, sigma=0.5), seed=7, size=100_000)
    assert stats.kstest(x[:, 0] - 0.5, "norm").pvalue > 0.01


def test_sample_covariance_within_4se():
    spec = chain_spec(16, 0.3)
    S = G.gce_moments(spec).covariance
    x = G.sample_gce(spec, seed=11, size=200_000)
    n = len(x)
    emp = np.cov(x, rowvar=False)
    se = np.sqrt((S**2 + np.outer(np.diag(S), np.diag(S))) / n)
    assert np.all(np.abs(emp - S) <= 4 * se + 1e-12)


def test_ce_sample_covariance():
    spec = chain_spec(6, 0.3)
    C = G.ce_moments(spec, 0.2).covariance
    x = G.sample_ce(spec, 0.2, seed=5, size=200_000)
    emp = np.cov(x, rowvar=False)
    se = np.sqrt((C**2 + np.outer(np.diag(C), np.diag(C))) / len(x))
    assert np.all(np.abs(emp - C) <= 4 * se + 1e-12)


# -- properties ---------------------------------------------------------------


@given(specs(max_N=10, gaussian=True), st.floats(-2, 2))
def test_ce_mean_and_null_direction(spec, m):
    c = G.ce_moments(spec, m)
    assert abs(c.mean.sum() - spec.N * m) <= 1e-9 * max(1.0, abs(spec.N * m))
    assert np.allclose(c.covariance.sum(axis=1), 0.0, atol=1e-9)


@given(specs(max_N=10, gaussian=True))
def test_variance_identity(spec):
    h = 1e-3
    s0 = spec.sigma
    d2 = (G.free_energy(spec, s0 + h) - 2 * G.free_energy(spec, s0) + G.free_energy(spec, s0 - h)) / h**2
    assert d2 == pytest.approx(G.sum_variance(spec) / spec.N, rel=1e-6, abs=1e-6)


@given(st.integers(3, 12), st.floats(-0.3, 0.3), st.floats(-1, 1))
@settings(max_examples=30)
def test_symmetric_ce_identity(N, c, m):
    c = c / (N - 1) * 0.9 / 0.3
    C = G.ce_moments(exchangeable_spec(N, c), m).covariance
    off = C[~np.eye(N, dtype=bool)]
    assert np.allclose(off, -C[0, 0] / (N - 1), atol=1e-9)


def test_variance_band_over_N():
    vals = [G.sum_variance(chain_spec(N, 0.3)) / N for N in 2 ** np.arange(3, 11)]
    assert max(vals) / min(vals) < 1.5


def test_gce_covariance_decay():
    S = G.gce_moments(chain_spec(40, 0.25)).covariance
    d = np.arange(1, 13)
    slope = np.polyfit(d, np.log(np.abs(S[0, d])), 1)[0]
    assert np.exp(slope) < 1


def test_ce_gce_difference_halves():
    diffs = [abs(G.ce_covariance_correction(chain_spec(N, 0.3), 0, 2)) for N in (64, 128, 256)]
    for a, b in zip(diffs, diffs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.1)
