"""Coupling the ensembles: ``sigma(m)``, mean spin, free energy and its Legendre transform."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import gaussian
from .errors import BackendInapplicable, NoConvergence
from .estimators import mc_mean
from .model import ModelSpec
from .samplers import GCE, SamplerConfig, run_chain
from .transfer import TransferEngine

log = logging.getLogger(__name__)


class Backend(enum.Enum):
    CLOSED_FORM = "closed_form"
    TRANSFER = "transfer"
    STOCHASTIC = "stochastic"


TOLERANCE = {Backend.CLOSED_FORM: 1e-10, Backend.TRANSFER: 1e-9}


@dataclass(frozen=True)
class MatchResult:
    sigma: float
    m: float
    achieved_mean: float
    residual: float
    backend: Backend
    iterations: int
    std_error: float = 0.0


def applicable(spec: ModelSpec, backend: Backend):
    if backend is Backend.CLOSED_FORM:
        return spec.potential.is_zero
    if backend is Backend.TRANSFER:
        return spec.R == 1 or spec.N == 1
    return True


def best_backend(spec: ModelSpec) -> Backend:
    for b in (Backend.CLOSED_FORM, Backend.TRANSFER):
        if applicable(spec, b):
            return b
    return Backend.STOCHASTIC


def _backend(spec, backend):
    backend = best_backend(spec) if backend is None else Backend(backend)
    if not applicable(spec, backend):
        why = "needs psi_b = 0" if backend is Backend.CLOSED_FORM else "needs R = 1"
        raise BackendInapplicable(f"{backend.value} backend {why}")
    return backend


_engines = {}


def engine(spec: ModelSpec) -> TransferEngine:
    """Shared transfer engine per model, so sigma(m) and moments are computed once."""
    key = id(spec)
    hit = _engines.get(key)
    if hit is None or hit[0] is not spec:
        if len(_engines) > 64:
            _engines.clear()
        hit = _engines[key] = (spec, TransferEngine(spec))
    return hit[1]


def mean_spin(spec: ModelSpec, sigma=None, backend=None, sampler: SamplerConfig = None):
    """``(1/N) sum_i m_i`` under the gce at ``sigma``."""
    sigma = spec.sigma if sigma is None else float(sigma)
    backend = _backend(spec, backend)
    if backend is Backend.CLOSED_FORM:
        return float(np.mean(gaussian.gce_mean(spec, sigma)))
    if backend is Backend.TRANSFER:
        return engine(spec).mean_spin(sigma)
    return mean_spin_estimate(spec, sigma, sampler).value


def mean_spin_estimate(spec: ModelSpec, sigma, sampler: SamplerConfig = None, chain_id=0):
    """MCMC estimate of the mean spin with its batch-means error."""
    sampler = sampler or SamplerConfig(n_sweeps=200_000)
    cfg = replace(sampler, chain_id=chain_id)
    res = run_chain(spec, GCE, cfg, sigma=sigma, observe=lambda X: X.mean(axis=1))
    return mc_mean(res.samples)


def free_energy(spec: ModelSpec, sigma=None, backend=None):
    """``A_gce(sigma) = (1/N) log Z``; closed form or transfer only."""
    backend = _backend(spec, backend)
    if backend is Backend.CLOSED_FORM:
        return gaussian.free_energy(spec, sigma)
    if backend is Backend.TRANSFER:
        return engine(spec).free_energy(spec.sigma if sigma is None else sigma)
    raise BackendInapplicable("stochastic backend does not supply A_gce")


def sigma_of_m(spec: ModelSpec, m, backend=None, sampler: SamplerConfig = None, tolerance=1e-2, max_iter=60, a0=1.0, tau=10.0, sigma0=None) -> MatchResult:
    """Field ``sigma`` whose gce mean spin equals ``m``."""
    m = float(m)
    backend = _backend(spec, backend)
    if backend is Backend.CLOSED_FORM:
        s = gaussian.sigma_of_m_closed_form(spec, m)
        got = mean_spin(spec, s, backend)
        return MatchResult(s, m, got, abs(got - m), backend, 1)
    if backend is Backend.TRANSFER:
        s = engine(spec).sigma_of_m(m)
        got = engine(spec).mean_spin(s)
        return MatchResult(s, m, got, abs(got - m), backend, 1)
    return _stochastic(spec, m, sampler, tolerance, max_iter, a0, tau, sigma0)


def _stochastic(spec, m, sampler, tolerance, max_iter, a0, tau, sigma0):
    """Robbins-Monro on ``sigma``; stops once a 3-SE interval around the residual holds 0 and is narrower than ``2 tolerance``."""
    if sigma0 is None:
        # start from the field that would match in the harmonic part alone
        gauss = spec.replace(potential=type(spec.potential).zero())
        sigma0 = gaussian.sigma_of_m_closed_form(gauss, m)
    s = float(sigma0)
    for k in range(max_iter):
        est = mean_spin_estimate(spec, s, sampler, chain_id=k)
        r = m - est.value
        log.debug("SA iterate %d: sigma=%.6g m_hat=%.6g se=%.3g", k, s, est.value, est.std_error)
        if abs(r) <= 3.0 * est.std_error and 3.0 * est.std_error < tolerance:
            return MatchResult(s, m, est.value, abs(r), Backend.STOCHASTIC, k + 1, est.std_error)
        s += a0 / (1.0 + k / tau) * r
    raise NoConvergence(f"stochastic approximation did not converge in {max_iter} iterations (last residual {r:.3g})")


def legendre_transform(spec: ModelSpec, m, backend=None):
    """``H_N(m) = sigma(m) m - A_gce(sigma(m))``."""
    backend = _backend(spec, backend)
    if backend is Backend.STOCHASTIC:
        raise BackendInapplicable("Legendre transform needs a backend with A_gce")
    s = sigma_of_m(spec, m, backend).sigma
    return s * float(m) - free_energy(spec, s, backend)


def variance_density(spec: ModelSpec, sigma=None, backend=None):
    """``var(sum X) / N``, the slope of the mean spin in ``sigma``."""
    backend = _backend(spec, backend)
    sigma = spec.sigma if sigma is None else sigma
    if backend is Backend.CLOSED_FORM:
        return gaussian.sum_variance(spec) / spec.N
    if backend is Backend.TRANSFER:
        return engine(spec).sum_variance(sigma) / spec.N
    raise BackendInapplicable("use a finite difference of mean_spin_estimate for sampled models")


def discrete_convexity_gap(values):
    """Largest ``f(x_k) - (f(x_{k-1}) + f(x_{k+1})) / 2`` on a uniform grid; <= 0 means convex."""
    v = np.asarray(values, dtype=float)
    return float(np.max(v[1:-1] - 0.5 * (v[:-2] + v[2:]))) if v.size >= 3 else -math.inf
