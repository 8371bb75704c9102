import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinchain import SingleSitePotential, chain_spec
from spinchain import gaussian as G
from spinchain import matching as M
from spinchain.errors import BackendInapplicable, NoConvergence
from spinchain.samplers import SamplerConfig

COS = SingleSitePotential.cosine(1.0, 2.0)


def cosine_chain(N):
    return chain_spec(N, 0.3, potential=COS, s=0.2 * (-1.0) ** np.arange(N))


def test_backend_choice():
    assert M.best_backend(chain_spec(8, 0.3)) is M.Backend.CLOSED_FORM
    assert M.best_backend(cosine_chain(8)) is M.Backend.TRANSFER
    assert M.best_backend(chain_spec(8, 0.2, R=2, potential=COS)) is M.Backend.STOCHASTIC
    with pytest.raises(BackendInapplicable):
        M.sigma_of_m(cosine_chain(8), 0.1, "closed_form")
    with pytest.raises(BackendInapplicable):
        M.free_energy(chain_spec(8, 0.2, R=2, potential=COS), 0.0)


def test_free_chain():
    r = M.sigma_of_m(chain_spec(5), 0.3)
    assert r.sigma == pytest.approx(0.3, abs=1e-15) and r.residual < 1e-10
    assert M.legendre_transform(chain_spec(5), 0.4) == pytest.approx(0.08 - 0.5 * math.log(2 * math.pi), abs=1e-12)


def test_transfer_round_trip():
    spec = cosine_chain(16)
    r = M.sigma_of_m(spec, 0.25)
    assert r.backend is M.Backend.TRANSFER and r.residual < 1e-9
    assert M.mean_spin(spec, r.sigma) == pytest.approx(0.25, abs=1e-9)
    assert M.sigma_of_m(spec, M.mean_spin(spec, 0.7)).sigma == pytest.approx(0.7, abs=1e-8)


def test_even_model_zero_mean():
    assert abs(M.mean_spin(chain_spec(10, 0.3, potential=COS), 0.0)) < 1e-9


def test_monotone_mean_spin():
    spec = cosine_chain(12)
    vals = [M.mean_spin(spec, s) for s in np.linspace(-2, 2, 21)]
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("spec", [chain_spec(12, 0.3, s=0.1), cosine_chain(12)], ids=["gaussian", "cosine"])
def test_legendre_convex_with_slope_sigma(spec):
    ms = np.linspace(-0.6, 0.6, 13)
    H = [M.legendre_transform(spec, m) for m in ms]
    assert M.discrete_convexity_gap(H) <= 1e-8
    h = 1e-4
    for m in (-0.3, 0.2):
        slope = (M.legendre_transform(spec, m + h) - M.legendre_transform(spec, m - h)) / (2 * h)
        assert slope == pytest.approx(M.sigma_of_m(spec, m).sigma, abs=1e-5)


def test_legendre_minimum_at_zero_field_mean():
    spec = cosine_chain(10)
    m0 = M.mean_spin(spec, 0.0)
    h = [M.legendre_transform(spec, m0 + d) for d in (-0.05, 0.0, 0.05)]
    assert h[1] < h[0] and h[1] < h[2]


def test_variance_band():
    for spec_of in (lambda N: chain_spec(N, 0.3), cosine_chain):
        v = [M.variance_density(spec_of(N)) for N in (8, 32, 128, 512)]
        assert max(v) / min(v) < 3


@given(st.floats(-1.5, 1.5))
@settings(max_examples=20)
def test_gaussian_round_trip(sigma):
    spec = chain_spec(9, 0.25, s=np.linspace(-0.5, 0.5, 9))
    m = M.mean_spin(spec, sigma)
    assert M.sigma_of_m(spec, m).sigma == pytest.approx(sigma, abs=1e-10)


def test_stochastic_matches_closed_form():
    spec = chain_spec(8, 0.3, s=0.1)
    m = 0.2
    r = M.sigma_of_m(spec, m, "stochastic", sampler=SamplerConfig(n_sweeps=100_000, seed=1), sigma0=0.0)
    assert r.backend is M.Backend.STOCHASTIC
    exact = G.sigma_of_m_closed_form(spec, m)
    # a mean-spin error of 3 SE moves sigma by 3 SE / (d mean / d sigma)
    slope = G.sum_variance(spec) / spec.N
    assert abs(r.sigma - exact) <= 3 * r.std_error / slope + 1e-3


def test_transfer_vs_mcmc_mean_spin():
    spec = cosine_chain(32)
    est = M.mean_spin_estimate(spec, 0.3, SamplerConfig(n_sweeps=100_000, seed=3))
    assert est.within(M.mean_spin(spec, 0.3), k=3.5)


def test_stochastic_gives_up():
    spec = chain_spec(4, 0.2)
    with pytest.raises(NoConvergence):
        M.sigma_of_m(spec, 0.1, "stochastic", sampler=SamplerConfig(n_sweeps=2000, seed=1), tolerance=1e-6, max_iter=3)
