import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinchain import InteractionMatrix, ModelSpec, Observable, SingleSitePotential, SpinConfig, chain_spec, validate_model
from spinchain.errors import ConstraintViolation, DimensionMismatch, NonSymmetric, NotDiagonallyDominant, SameSite
from spinchain.model import (
    energy_delta_pair,
    energy_delta_single,
    gce_log_density_unnormalized,
    hamiltonian,
    hamiltonian_gradient,
)

from .strategies import configs, specs


def brute_hamiltonian(spec, x):
    """Direct double sum of the defining formula."""
    M = spec.interaction.dense()
    N = spec.N
    e = 0.0
    for i in range(N):
        e += spec.potential.value(x[i]) + spec.s[i] * x[i] + 0.5 * x[i] ** 2
        for j in range(i + 1, N):
            e += M[i, j] * x[i] * x[j]
    return float(e)


# -- validation ---------------------------------------------------------------


def test_margin_bulk_rows():
    assert validate_model(chain_spec(4, 0.25)).delta == pytest.approx(0.5, abs=1e-15)


def test_two_sites_at_0_6_pass_and_unit_coupling_fails():
    assert chain_spec(2, 0.6).delta == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(NotDiagonallyDominant):
        chain_spec(2, 1.0)


def test_asymmetric_band_names_pair():
    inter = InteractionMatrix(3, 1, [[0.1, 0.0, 0.0]], [[0.2, 0.0, 0.0]])
    with pytest.raises(NonSymmetric) as exc:
        ModelSpec(inter)
    assert "(0, 1)" in str(exc.value) or "0" in str(exc.value)


def test_field_length_mismatch():
    with pytest.raises(DimensionMismatch):
        ModelSpec(InteractionMatrix.uniform(3, 1, 0.1), s=np.zeros(4))


def test_cosine_sup_norms():
    assert SingleSitePotential.cosine(1.5, -2.0).sup_norms() == pytest.approx((1.5, 3.0, 6.0))
    assert SingleSitePotential.zero().sup_norms() == (0.0, 0.0, 0.0)


def test_zero_potential_is_exactly_zero():
    z = np.linspace(-5, 5, 11)
    p = SingleSitePotential.zero()
    assert not np.any(p.value(z)) and not np.any(p.d1(z)) and not np.any(p.d2(z))


# -- energies -----------------------------------------------------------------


def test_free_chain_energy():
    assert hamiltonian(chain_spec(2), np.array([1.0, 2.0])) == 2.5


def test_cosine_at_origin():
    spec = chain_spec(5, 0.1, potential=SingleSitePotential.cosine(1.0, 1.0))
    assert hamiltonian(spec, np.zeros(5)) == pytest.approx(5.0, abs=1e-15)


def test_generic_energy_frozen():
    # 2 cos(1) + cos(2) - 0.05 + 0.75 - 0.1875, summed by hand
    spec = chain_spec(3, 0.25, potential=SingleSitePotential.cosine(1.0, 2.0), s=np.array([0.1, 0.0, -0.1]))
    assert hamiltonian(spec, np.array([0.5, -0.5, 1.0])) == pytest.approx(1.1769577751891371, rel=1e-14)


def test_log_density():
    spec = chain_spec(1, sigma=1.0)
    assert gce_log_density_unnormalized(spec, np.array([0.0])) == 0.0
    spec = chain_spec(3, 0.2, potential=SingleSitePotential.cosine())
    x = np.array([0.3, -1.0, 2.0])
    assert gce_log_density_unnormalized(spec, x) == -hamiltonian(spec, x)
    assert gce_log_density_unnormalized(spec, x, sigma=0.7) == pytest.approx(0.7 * x.sum() - hamiltonian(spec, x), rel=1e-14)


def test_single_delta_trivial():
    spec = chain_spec(3)
    x = np.zeros(3)
    assert energy_delta_single(spec, x, 1, 1.0, sigma=0.0) == pytest.approx(0.5)
    assert energy_delta_single(spec, x, 1, 0.0) == 0.0


def test_pair_delta_trivial_and_same_site():
    spec = chain_spec(3, 0.2)
    x = np.array([1.0, 2.0, 3.0])
    assert energy_delta_pair(spec, x, 0, 2, 0.0) == 0.0
    with pytest.raises(SameSite):
        energy_delta_pair(spec, x, 1, 1, 0.5)


def test_gradient_examples():
    x = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(hamiltonian_gradient(chain_spec(3), x), x)
    s = np.array([0.3, -0.2, 0.7])
    spec = chain_spec(3, 0.25, potential=SingleSitePotential.cosine(1.0, 2.0), s=s)
    assert np.allclose(hamiltonian_gradient(spec, np.zeros(3)), s, atol=1e-15)


def test_spin_config_tag():
    SpinConfig(np.array([0.1, 0.3]), m=0.2)
    with pytest.raises(ConstraintViolation):
        SpinConfig(np.array([0.1, 0.3]), m=0.21)


# -- properties ---------------------------------------------------------------


@given(st.data())
def test_band_form_equals_double_sum(data):
    spec = data.draw(specs())
    x = data.draw(configs(spec.N))
    h, ref = hamiltonian(spec, x), brute_hamiltonian(spec, x)
    assert math.isclose(h, ref, rel_tol=1e-12, abs_tol=1e-12)


@given(st.data())
def test_single_delta_matches_recompute(data):
    spec = data.draw(specs())
    x = data.draw(configs(spec.N))
    i = data.draw(st.integers(0, spec.N - 1))
    new = data.draw(st.floats(-3, 3))
    y = x.copy()
    y[i] = new
    full = gce_log_density_unnormalized(spec, x) - gce_log_density_unnormalized(spec, y)
    assert math.isclose(energy_delta_single(spec, x, i, new), full, rel_tol=1e-12, abs_tol=1e-11)


@given(st.data())
def test_pair_delta_matches_recompute_and_ignores_sigma(data):
    spec = data.draw(specs(max_N=10).filter(lambda s: s.N >= 2))
    x = data.draw(configs(spec.N))
    i, j = data.draw(st.lists(st.integers(0, spec.N - 1), min_size=2, max_size=2, unique=True))
    eta = data.draw(st.floats(-2, 2))
    y = x.copy()
    y[i] += eta
    y[j] -= eta
    d = energy_delta_pair(spec, x, i, j, eta)
    assert math.isclose(d, hamiltonian(spec, y) - hamiltonian(spec, x), rel_tol=1e-12, abs_tol=1e-11)
    assert energy_delta_pair(spec.with_sigma(spec.sigma + 3.7), x, i, j, eta) == d


@given(st.data())
def test_gradient_matches_finite_differences(data):
    spec = data.draw(specs(max_N=6))
    x = data.draw(configs(spec.N))
    g = hamiltonian_gradient(spec, x)
    h = 1e-5
    fd = np.array([(hamiltonian(spec, x + h * e) - hamiltonian(spec, x - h * e)) / (2 * h) for e in np.eye(spec.N)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)


@given(st.data())
def test_observable_ignores_off_support(data):
    N = 8
    x = data.draw(configs(N))
    f = Observable.window((2, 3), lambda y: np.sin(y[..., 0]) * y[..., 1])
    y = x.copy()
    k = data.draw(st.sampled_from([0, 1, 4, 5, 6, 7]))
    y[k] += data.draw(st.floats(-5, 5))
    assert f(x) == f(y)
