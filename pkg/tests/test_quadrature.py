import numpy as np
import pytest

from spinchain import Observable, SingleSitePotential, chain_spec, exchangeable_spec
from spinchain import gaussian as G
from spinchain.errors import DimensionTooLarge
from spinchain.quadrature import (
    QuadratureSpec,
    ce_covariance_bruteforce,
    ce_expectation_bruteforce,
    ce_moments_bruteforce,
    gce_covariance_bruteforce,
    gce_expectation_bruteforce,
    gce_log_partition_bruteforce,
    gce_moments_bruteforce,
)

COS = SingleSitePotential.cosine(1.0, 2.0)
GAUSS3 = chain_spec(3, 0.25, s=np.array([0.1, 0.0, -0.1]), sigma=0.3)
COS3 = chain_spec(3, 0.25, potential=COS, s=np.array([0.1, 0.0, -0.1]), sigma=0.3)


def test_gaussian_agreement():
    logz, mean, cov = gce_moments_bruteforce(GAUSS3)
    g = G.gce_moments(GAUSS3)
    assert np.allclose(mean, g.mean, atol=1e-7)
    assert np.allclose(cov, g.covariance, atol=1e-7)
    assert logz == pytest.approx(3 * G.free_energy(GAUSS3), abs=1e-6)
    mc, cc = ce_moments_bruteforce(GAUSS3, 0.2)
    c = G.ce_moments(GAUSS3, 0.2)
    assert np.allclose(mc, c.mean, atol=1e-6) and np.allclose(cc, c.covariance, atol=1e-6)


def test_log_partition_differences():
    a = gce_log_partition_bruteforce(GAUSS3, 0.3) - gce_log_partition_bruteforce(GAUSS3, -0.4)
    b = 3 * (G.free_energy(GAUSS3, 0.3) - G.free_energy(GAUSS3, -0.4))
    assert a == pytest.approx(b, abs=1e-6)


def test_normalization_and_odd_symmetry():
    spec = chain_spec(3, 0.25, potential=COS)
    assert gce_expectation_bruteforce(spec, 0.0, Observable.constant()) == pytest.approx(1.0, abs=1e-13)
    f = Observable.site_sum([0, 2])
    assert abs(gce_expectation_bruteforce(spec, 0.0, f)) < 1e-9


def test_ce_trivial_cases():
    assert abs(ce_expectation_bruteforce(chain_spec(2), 0.0, Observable.spin(0))) < 1e-12
    assert ce_expectation_bruteforce(COS3, 0.2, Observable.mean_spin(3)) == pytest.approx(0.2, abs=1e-12)
    cov = ce_covariance_bruteforce(COS3, 0.2, Observable.window((0, 1), lambda y: np.sin(y[..., 0]) * y[..., 1]), Observable.mean_spin(3))
    assert abs(cov) < 1e-8


def test_symmetric_cosine_identity():
    spec = exchangeable_spec(3, 0.3, potential=COS)
    var = ce_covariance_bruteforce(spec, 0.1, Observable.spin(0), Observable.spin(0))
    cov = ce_covariance_bruteforce(spec, 0.1, Observable.spin(0), Observable.spin(1))
    assert cov == pytest.approx(-var / 2, abs=1e-6)


def test_frozen_cosine_values():
    # reference values of this oracle at its converged defaults
    assert gce_log_partition_bruteforce(COS3) == pytest.approx(3.3772576604598306, abs=1e-10)
    _, mean, cov = gce_moments_bruteforce(COS3)
    assert mean[0] == pytest.approx(0.22609270539023865, abs=1e-10)
    assert cov[0, 1] == pytest.approx(-0.6051491765024556, abs=1e-10)
    assert ce_expectation_bruteforce(COS3, 0.2, Observable.spin(0)) == pytest.approx(0.15687251399555327, abs=1e-10)
    assert ce_covariance_bruteforce(COS3, 0.2, Observable.spin(0), Observable.spin(1)) == pytest.approx(-0.9869568227511882, abs=1e-10)


def test_self_convergence():
    q = QuadratureSpec()
    f, g = Observable.spin(0), Observable.spin(2)
    assert gce_covariance_bruteforce(COS3, 0.3, f, g, q) == pytest.approx(gce_covariance_bruteforce(COS3, 0.3, f, g, q.refined()), abs=1e-7)
    assert ce_expectation_bruteforce(COS3, 0.2, f, q) == pytest.approx(ce_expectation_bruteforce(COS3, 0.2, f, q.refined()), abs=1e-6)


def test_dimension_limit():
    with pytest.raises(DimensionTooLarge):
        gce_log_partition_bruteforce(chain_spec(5))


def test_grid_limits():
    with pytest.raises(ValueError):
        QuadratureSpec(L=4.0)
    assert QuadratureSpec().tail_mass_bound(COS3) < 1e-6
