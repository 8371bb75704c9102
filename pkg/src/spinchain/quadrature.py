"""Tensor-grid Gauss-Legendre integration for N <= 4.

This is the independent ground truth for the other backends, so it shares
nothing with them beyond :func:`spinchain.model.hamiltonian`: every grid point
gets its full energy evaluated, and sums are exactly rounded with
:func:`math.fsum` so results do not depend on evaluation order.

The ce is integrated over ``(x_0..x_{N-2})`` with ``x_{N-1} = N m - sum``.
The Hausdorff Jacobian of that parametrization is the constant ``sqrt(N)`` and
cancels in every normalized expectation, so it is omitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionTooLarge
from .model import ModelSpec, Observable, hamiltonian

MAX_SITES = 4


@dataclass(frozen=True)
class QuadratureSpec:
    L: float = 8.0
    n: int = 96

    def __post_init__(self):
        if self.n < 16 or self.L < 6:
            raise ValueError("quadrature needs n >= 16 nodes and half-width L >= 6")

    def refined(self, factor=1.5):
        return QuadratureSpec(self.L, int(math.ceil(self.n * factor)))

    def tail_mass_bound(self, spec: ModelSpec, center=0.0):
        """Crude Gaussian tail bound ``exp(-(L - |center|)^2 delta / 2)`` on discarded mass."""
        r = max(self.L - float(np.max(np.abs(center))), 0.0)
        return math.exp(-0.5 * spec.delta * r * r + 2.0 * spec.potential.sup_norms()[0])


@lru_cache(maxsize=16)
def _nodes(L, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x * L, w * L


def _check(spec):
    if spec.N > MAX_SITES:
        raise DimensionTooLarge(f"brute-force quadrature supports N <= {MAX_SITES}, got N={spec.N}")


def _points(spec, q, ensemble, m):
    """Yield ``(x, log_w)`` chunks covering the grid, one chunk per first-axis node."""
    z, w = _nodes(q.L, q.n)
    N = spec.N
    dim = N if ensemble == "gce" else N - 1
    if dim == 0:
        yield np.array([[N * m]]), np.zeros(1)
        return
    logw = np.log(w)
    rest = dim - 1
    if rest:
        mesh = np.stack(np.meshgrid(*([z] * rest), indexing="ij"), axis=-1).reshape(-1, rest)
        mlw = sum(np.meshgrid(*([logw] * rest), indexing="ij")).reshape(-1)
    else:
        mesh = np.zeros((1, 0))
        mlw = np.zeros(1)
    for k in range(q.n):
        head = np.full((mesh.shape[0], 1), z[k])
        free = np.concatenate([head, mesh], axis=1)
        if ensemble == "gce":
            x = free
        else:
            x = np.concatenate([free, (N * m - free.sum(axis=1))[:, None]], axis=1)
        yield x, mlw + logw[k]


def _integrate(spec, q, ensemble, sigma, m, funcs):
    """Return ``(log normalizer, [sum(w f) / sum(w)])`` for each callable in ``funcs``."""
    _check(spec)

    def logdens(x):
        e = -hamiltonian(spec, x)
        if ensemble == "gce":
            e = e + sigma * x.sum(axis=1)
        return e

    shift = -np.inf
    for x, lw in _points(spec, q, ensemble, m):
        shift = max(shift, float(np.max(logdens(x) + lw)))
    zparts = []
    parts = [[] for _ in funcs]
    for x, lw in _points(spec, q, ensemble, m):
        p = np.exp(logdens(x) + lw - shift)
        zparts.append(math.fsum(p))
        for k, f in enumerate(funcs):
            parts[k].append(math.fsum(p * f(x)))
    Z = math.fsum(zparts)
    return shift + math.log(Z), [math.fsum(pk) / Z for pk in parts]


def gce_log_partition_bruteforce(spec: ModelSpec, sigma=None, q=QuadratureSpec()):
    """``log Z`` of the gce (equals ``N * A_gce``)."""
    sigma = spec.sigma if sigma is None else sigma
    return _integrate(spec, q, "gce", sigma, None, [])[0]


def gce_expectation_bruteforce(spec: ModelSpec, sigma, f: Observable, q=QuadratureSpec()):
    sigma = spec.sigma if sigma is None else sigma
    return _integrate(spec, q, "gce", sigma, None, [f])[1][0]


def gce_covariance_bruteforce(spec: ModelSpec, sigma, f: Observable, g: Observable, q=QuadratureSpec()):
    sigma = spec.sigma if sigma is None else sigma
    _, (ef, eg, efg) = _integrate(spec, q, "gce", sigma, None, [f, g, lambda x: f(x) * g(x)])
    return efg - ef * eg


def ce_expectation_bruteforce(spec: ModelSpec, m, f: Observable, q=QuadratureSpec()):
    return _integrate(spec, q, "ce", None, m, [f])[1][0]


def ce_covariance_bruteforce(spec: ModelSpec, m, f: Observable, g: Observable, q=QuadratureSpec()):
    # center with the ce means first so the product term does not cancel catastrophically
    _, (ef, eg) = _integrate(spec, q, "ce", None, m, [f, g])
    return _integrate(spec, q, "ce", None, m, [lambda x: (f(x) - ef) * (g(x) - eg)])[1][0]


def gce_moments_bruteforce(spec: ModelSpec, sigma=None, q=QuadratureSpec()):
    """Site means and full covariance in one grid pass: ``(log Z, mean, cov)``."""
    sigma = spec.sigma if sigma is None else sigma
    N = spec.N
    funcs = [(lambda x, i=i: x[:, i]) for i in range(N)]
    pairs = [(i, j) for i in range(N) for j in range(i, N)]
    funcs += [(lambda x, i=i, j=j: x[:, i] * x[:, j]) for i, j in pairs]
    logz, vals = _integrate(spec, q, "gce", sigma, None, funcs)
    mean = np.array(vals[:N])
    cov = np.empty((N, N))
    for (i, j), v in zip(pairs, vals[N:]):
        cov[i, j] = cov[j, i] = v - mean[i] * mean[j]
    return logz, mean, cov


def ce_moments_bruteforce(spec: ModelSpec, m, q=QuadratureSpec()):
    """ce site means and covariance: ``(mean, cov)``."""
    N = spec.N
    _, mean = _integrate(spec, q, "ce", None, m, [(lambda x, i=i: x[:, i]) for i in range(N)])
    mean = np.array(mean)
    pairs = [(i, j) for i in range(N) for j in range(i, N)]
    funcs = [(lambda x, i=i, j=j: (x[:, i] - mean[i]) * (x[:, j] - mean[j])) for i, j in pairs]
    _, vals = _integrate(spec, q, "ce", None, m, funcs)
    cov = np.empty((N, N))
    for (i, j), v in zip(pairs, vals):
        cov[i, j] = cov[j, i] = v
    return mean, cov
