"""Closed-form backend for ``psi_b = 0``.

The gce is ``N(mu, M^-1)`` with ``M mu = sigma 1 - s``; the ce is that Gaussian
conditioned on ``1^T x = N m``. All solves go through a banded Cholesky factor
of the precision matrix, so single columns and ``M^-1 1`` stay O(N R^2) at any N.
Dense covariances are formed only on request.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import FactorizationError, PotentialNotGaussian
from .model import ModelSpec, SpinConfig

DENSE_LIMIT = 4096


@dataclass(frozen=True)
class GaussianGce:
    mean: np.ndarray
    covariance: np.ndarray
    log_partition: float


@dataclass(frozen=True)
class GaussianCe:
    mean: np.ndarray
    covariance: np.ndarray
    m: float


def _require_gaussian(spec: ModelSpec):
    if not spec.potential.is_zero:
        raise PotentialNotGaussian(f"closed form needs psi_b = 0, got {spec.potential}")


class _Factor:
    """Banded Cholesky ``M = U^T U`` plus cached ``M^-1 1``."""

    def __init__(self, spec: ModelSpec):
        _require_gaussian(spec)
        self.spec = spec
        self.R = spec.R
        try:
            self.U = linalg.cholesky_banded(spec.interaction.banded_upper(), lower=False)
        except linalg.LinAlgError as exc:
            raise FactorizationError(f"precision matrix is not positive definite: {exc}") from None
        self.ones_solve = self.solve(np.ones(spec.N))

    def solve(self, b):
        return linalg.cho_solve_banded((self.U, False), b)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(self.U[-1])))

    def whiten_inverse(self, z):
        """``U^{-1} z``: maps standard normals to ``N(0, M^-1)``."""
        return linalg.solve_banded((0, self.R), self.U, z)


_cache: "weakref.WeakKeyDictionary[ModelSpec, _Factor]" = weakref.WeakKeyDictionary()


def _factor(spec: ModelSpec) -> _Factor:
    f = _cache.get(spec)
    if f is None:
        f = _cache[spec] = _Factor(spec)
    return f


def precision_solve(spec: ModelSpec, b):
    return _factor(spec).solve(np.asarray(b, dtype=float))


def gce_mean(spec: ModelSpec, sigma=None):
    return precision_solve(spec, spec.linear_field(sigma))


def covariance_columns(spec: ModelSpec, cols):
    """Columns of ``M^-1`` for the given site indices, shape ``(N, len(cols))``."""
    cols = np.atleast_1d(cols)
    E = np.zeros((spec.N, len(cols)))
    E[cols, np.arange(len(cols))] = 1.0
    return precision_solve(spec, E)


def sum_response(spec: ModelSpec):
    """``M^-1 1``, the covariance of each site with the total spin."""
    return _factor(spec).ones_solve


def sum_variance(spec: ModelSpec):
    """``var(sum X) = 1^T M^-1 1``."""
    _require_gaussian(spec)
    return float(np.sum(sum_response(spec)))


def gce_moments(spec: ModelSpec, sigma=None) -> GaussianGce:
    _require_gaussian(spec)
    sigma = spec.sigma if sigma is None else sigma
    mu = gce_mean(spec, sigma)
    if spec.N > DENSE_LIMIT:
        raise MemoryError(f"dense covariance refused for N={spec.N} > {DENSE_LIMIT}; use covariance_columns")
    cov = precision_solve(spec, np.eye(spec.N))
    cov = 0.5 * (cov + cov.T)
    return GaussianGce(mu, cov, spec.N * free_energy(spec, sigma))


def ce_moments(spec: ModelSpec, m) -> GaussianCe:
    g = gce_moments(spec, spec.sigma)
    N = spec.N
    c = sum_response(spec)
    v = float(np.sum(c))
    mean = g.mean + c * (N * m - np.sum(g.mean)) / v
    cov = g.covariance - np.outer(c, c) / v
    return GaussianCe(mean, cov, float(m))


def ce_covariance_correction(spec: ModelSpec, i, j):
    """``cov_gce(X_i, X_j) - cov_ce(X_i, X_j) = (M^-1 1)_i (M^-1 1)_j / (1^T M^-1 1)``."""
    _require_gaussian(spec)
    c = sum_response(spec)
    return float(c[i] * c[j] / np.sum(c))


def free_energy(spec: ModelSpec, sigma=None):
    """``A_gce(sigma) = (1/N) log Z`` in closed form."""
    _require_gaussian(spec)
    f = _factor(spec)
    h = spec.linear_field(sigma)
    N = spec.N
    quad = float(h @ f.solve(h))
    return (0.5 * quad + 0.5 * N * math.log(2.0 * math.pi) - 0.5 * f.logdet()) / N


def sigma_of_m_closed_form(spec: ModelSpec, m):
    """Field whose gce mean spin is ``m``: ``(N m + 1^T M^-1 s) / (1^T M^-1 1)``."""
    _require_gaussian(spec)
    c = sum_response(spec)
    # 1^T M^-1 s = c^T s by symmetry
    return float((spec.N * m + c @ spec.s) / np.sum(c))


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)))


def sample_gce(spec: ModelSpec, sigma=None, seed=0, size=None):
    """Exact draws; one :class:`SpinConfig` when ``size`` is None, else an ``(size, N)`` array."""
    f = _factor(spec)
    mu = gce_mean(spec, sigma)
    k = 1 if size is None else int(size)
    z = _rng(seed).standard_normal((spec.N, k))
    x = (mu[:, None] + f.whiten_inverse(z)).T
    return SpinConfig(x[0]) if size is None else x


def sample_ce(spec: ModelSpec, m, seed=0, size=None):
    """Exact ce draws via the conditional update ``x + (N m - 1^T x) / (1^T S 1) * S 1``."""
    x = sample_gce(spec, spec.sigma, seed, 1 if size is None else size)
    c = sum_response(spec)
    v = float(np.sum(c))
    x = x + ((spec.N * m - x.sum(axis=1)) / v)[:, None] * c[None, :]
    return SpinConfig(x[0], m=float(m)) if size is None else x
