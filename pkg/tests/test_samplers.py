import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinchain import Observable, SingleSitePotential, chain_spec
from spinchain import gaussian as G
from spinchain import samplers as S
from spinchain.errors import ConstraintViolation, DriftTooLarge
from spinchain.estimators import mc_mean
from spinchain.quadrature import ce_expectation_bruteforce, gce_expectation_bruteforce

COS3 = chain_spec(3, 0.25, potential=SingleSitePotential.cosine(1.0, 2.0), s=np.array([0.1, 0.0, -0.1]), sigma=0.3)


def test_initialize():
    spec = chain_spec(4, 0.2)
    ce = S.initialize(spec, S.CE, m=0.5)
    assert np.array_equal(ce.config, [0.5] * 4)
    assert not np.any(S.initialize(spec, S.GCE).config)


def test_zero_width_rejected():
    with pytest.raises(ValueError):
        S.SamplerConfig(n_sweeps=10, initial_step=0.0)
    with pytest.raises(ValueError):
        S.ChainState(np.zeros(2), np.array([1.0, 0.0]), S.GCE)


@pytest.mark.parametrize("n, burn", [(100, 20), (40_000, 10_000), (1_000_000, 200_000), (10_000, 2000)])
def test_default_burn_in(n, burn):
    assert S.default_burn_in(n) == burn


def test_config_invariants():
    with pytest.raises(ValueError):
        S.SamplerConfig(n_sweeps=10, burn_in_sweeps=10)
    with pytest.raises(ValueError):
        S.SamplerConfig(n_sweeps=10, thin=0)
    with pytest.raises(ValueError):
        S.SamplerConfig(n_sweeps=10, target_acceptance=1.0)


# -- random stream ------------------------------------------------------------


@given(st.integers(0, 2**64 - 1), st.integers(0, 7), st.integers(0, 500), st.integers(1, 50))
@settings(max_examples=50)
def test_stream_is_splittable(seed, cid, start, count):
    full = S.stream_uniforms(seed, cid, 0, start + count)
    assert np.array_equal(S.stream_uniforms(seed, cid, start, count), full[start:])
    assert np.all((full > 0) & (full < 1))


def test_chains_have_distinct_streams():
    assert not np.array_equal(S.stream_uniforms(1, 0, 0, 8), S.stream_uniforms(1, 1, 0, 8))


# -- determinism and block structure ------------------------------------------------


def _run(spec, ensemble, m=None, **kw):
    cfg = S.SamplerConfig(**{"n_sweeps": 3000, "burn_in_sweeps": 1000, "seed": 9, **kw})
    return S.run_chain(spec, ensemble, cfg, m=m, observe=lambda X: X.copy())


@pytest.mark.parametrize("ensemble, m", [(S.GCE, None), (S.CE, 0.2)])
def test_reproducible_and_block_invariant(ensemble, m):
    spec = chain_spec(6, 0.3, potential=SingleSitePotential.cosine())
    a = _run(spec, ensemble, m)
    b = _run(spec, ensemble, m)
    c = _run(spec, ensemble, m, block_sweeps=7)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.samples, c.samples)
    assert np.array_equal(a.step_sizes, c.step_sizes)


def test_thinning_selects_subsequence():
    spec = chain_spec(5, 0.3)
    full = _run(spec, S.GCE)
    thin = _run(spec, S.GCE, thin=10)
    assert np.array_equal(thin.samples, full.samples[9::10])


def test_ce_ignores_sigma():
    spec = chain_spec(8, 0.3, potential=SingleSitePotential.cosine(), s=0.3)
    a = _run(spec, S.CE, 0.1)
    b = _run(spec.with_sigma(-2.5), S.CE, 0.1)
    assert np.array_equal(a.samples, b.samples)


def test_ce_sweep_checks_tag():
    spec = chain_spec(4, 0.2)
    state = S.initialize(spec, S.CE, m=0.1)
    S.ce_sweep(spec, 0.1, state)
    assert state.sweep == 1
    with pytest.raises(ConstraintViolation):
        S.ce_sweep(spec, 0.2, state)
    S.gce_sweep(spec, 0.0, S.initialize(spec, S.GCE))


# -- adaptation and reprojection ---------------------------------------------------


def _state(burn_in=10, sweep=0):
    st_ = S.initialize(chain_spec(3), S.GCE, S.SamplerConfig(n_sweeps=100, burn_in_sweeps=burn_in))
    st_.sweep = sweep
    return st_


def test_adapt_sign():
    up = S.adapt(_state(), np.ones(3))
    assert np.all(up.step_sizes > 1.0)
    down = S.adapt(_state(), np.zeros(3))
    assert np.all(down.step_sizes < 1.0)


def test_adapt_frozen_after_burn_in():
    st_ = S.adapt(_state(burn_in=10, sweep=11), np.ones(3))
    assert np.all(st_.step_sizes == 1.0)


def test_reproject():
    spec = chain_spec(4)
    st_ = S.initialize(spec, S.CE, m=0.25)
    S.reproject(st_)
    assert st_.max_displacement == 0.0
    st_.config[0] += 4e-12
    S.reproject(st_)
    assert abs(st_.config.mean() - 0.25) < 1e-15 and st_.max_displacement == pytest.approx(1e-12, rel=1e-3)
    st_.config[1] += 4e-5
    with pytest.raises(DriftTooLarge):
        S.reproject(st_)


def test_sum_invariance_without_reprojection():
    N, m = 256, 0.3
    spec = chain_spec(N, 0.3, potential=SingleSitePotential.cosine())
    state = S.initialize(spec, S.CE, m=m)
    out = S.advance(spec, state, 1000)
    assert np.max(np.abs(out.sum(axis=1) - N * m)) < 1e-9


def test_drift_after_reprojection():
    spec = chain_spec(32, 0.3, potential=SingleSitePotential.cosine())
    res = S.run_chain(spec, S.CE, S.SamplerConfig(n_sweeps=20_000, seed=1), m=0.1)
    assert abs(res.state.config.mean() - 0.1) < 1e-10
    assert res.state.max_displacement < 1e-9


# -- correctness against oracles ---------------------------------------------------


def test_random_walk_acceptance():
    # stationary acceptance of N(0, h^2) proposals on a standard normal is (2/pi) atan(2/h)
    h = 1.7
    spec = chain_spec(1)
    cfg = S.SamplerConfig(n_sweeps=400_000, burn_in_sweeps=0, initial_step=h, seed=4)
    res = S.run_chain(spec, S.GCE, cfg)
    assert res.acceptance == pytest.approx(2 / math.pi * math.atan(2 / h), abs=5e-3)


def test_gaussian_gce_moments():
    spec = chain_spec(16, 0.3, s=0.1, sigma=0.2)
    g = G.gce_moments(spec)
    res = S.run_chain(spec, S.GCE, S.SamplerConfig(n_sweeps=200_000, seed=2), observe=lambda X: np.c_[X[:, 3], X[:, 3] * X[:, 4], X.sum(axis=1)])
    est = [mc_mean(res.samples[:, k]) for k in range(3)]
    assert est[0].within(g.mean[3], k=4)
    assert est[1].within(g.covariance[3, 4] + g.mean[3] * g.mean[4], k=4)
    assert est[2].within(g.mean.sum(), k=4)


def test_gaussian_ce_covariance():
    spec = chain_spec(6, 0.3)
    c = G.ce_moments(spec, 0.1)
    res = S.run_chain(spec, S.CE, S.SamplerConfig(n_sweeps=200_000, seed=3), m=0.1, observe=lambda X: (X[:, 0] - c.mean[0]) * (X[:, 1] - c.mean[1]))
    assert mc_mean(res.samples).within(c.covariance[0, 1], k=4)


def test_cosine_three_sites():
    f = Observable.spin(0)
    gce = S.run_chain(COS3, S.GCE, S.SamplerConfig(n_sweeps=200_000, seed=5), observe=lambda X: X[:, 0])
    assert mc_mean(gce.samples).within(gce_expectation_bruteforce(COS3, 0.3, f), floor=2e-3)
    ce = S.run_chain(COS3, S.CE, S.SamplerConfig(n_sweeps=200_000, seed=6), m=0.2, observe=lambda X: X[:, 0])
    assert mc_mean(ce.samples).within(ce_expectation_bruteforce(COS3, 0.2, f), floor=2e-3)


# -- traces ---------------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    spec = chain_spec(5, 0.2)
    path = tmp_path / "t.bin"
    cfg = S.SamplerConfig(n_sweeps=500, burn_in_sweeps=100, thin=4, seed=1)
    res = S.run_chain(spec, S.GCE, cfg, observe=lambda X: X.copy(), trace_path=path)
    X, stride = S.read_trace(path)
    assert stride == 4 and np.array_equal(X, res.samples) and len(X) == res.sweeps_kept == 100
    raw = path.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 5 and len(raw) == 24 + 8 * 5 * 100
