"""Transfer-operator engine for nearest-neighbour chains (R = 1).

The gce weight factorizes into site weights and bond kernels on a
Gauss-Legendre grid,

    W_k(z) = q(z) exp(-z^2/2 - psi_b(z) + (sigma - s_k) z),
    K_k(z, z') = exp(-M_{k,k+1} z z'),

so partition functions, marginals and correlations are chains of
matrix-vector products. Tilting every site weight by
``exp(i xi (z - m_k) / sqrt(N))`` turns the same contraction into the
characteristic function of the centred, rescaled total spin and its
observable-weighted versions. Integrating those over ``xi`` gives
canonical expectations and covariances without sampling:

    E_ce[f]  = E_gce[f] + int E[(f - E f) e^{i xi S}] / int E[e^{i xi S}]
    cov_ce(f, g) = int E[(f - E f)(g - E g) e^{i xi S}] / int E[e^{i xi S}]
                   - (E_ce f - E_gce f)(E_ce g - E_gce g)

with ``S = N^{-1/2} sum_k (X_k - m_k)`` and ``sigma`` matched to ``m``.

All messages are batched over ``xi`` (leading axis) and renormalized per
step with log scales tracked separately. Complex arithmetic is used on
every path, including ``xi = 0``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    BracketNotFound,
    FourierTruncationInsufficient,
    NonContiguousSupport,
    RangeNotSupported,
)
from .model import ModelSpec, Observable

log = logging.getLogger(__name__)

MAX_WINDOW = 3
_CHUNK_BUDGET = 4_000_000  # complex entries held per xi-chunk of stored messages
_diagnostics = {"dir": None, "count": 0}


def set_diagnostics_dir(path):
    """Write a per-xi CSV (xi, re_cf, im_cf) for every Fourier integral into ``path``; None disables."""
    _diagnostics["dir"] = None if path is None else Path(path)
    _diagnostics["count"] = 0


@dataclass(frozen=True)
class TransferGrid:
    nodes: np.ndarray
    weights: np.ndarray
    L: float
    n: int

    @classmethod
    def gauss_legendre(cls, L=8.0, n=160):
        x, w = _leggauss(int(n))
        return cls(x * L, w * L, float(L), int(n))

    def refined(self, factor=2):
        return TransferGrid.gauss_legendre(self.L, int(self.n * factor))


@lru_cache(maxsize=32)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@dataclass(frozen=True)
class FourierQuadrature:
    xi_max: float = 40.0
    n_xi: int = 800
    tail_tol: float = 1e-10
    max_enlargements: int = 2

    def nodes(self):
        x, w = _leggauss(int(self.n_xi))
        return x * self.xi_max, w * self.xi_max

    def enlarged(self):
        return replace(self, xi_max=2.0 * self.xi_max, n_xi=2 * self.n_xi)


DEFAULT_GRID = TransferGrid.gauss_legendre()
DEFAULT_FOURIER = FourierQuadrature()


def _require_nn(spec: ModelSpec):
    if spec.R != 1 and spec.N > 1:
        raise RangeNotSupported(f"transfer backend handles R = 1 only, got R = {spec.R}")


def _matK(a, K):
    """``a @ K`` for complex ``a`` and real ``K`` with one real GEMM."""
    B = a.shape[0]
    r = np.concatenate((a.real, a.imag)) @ K
    return r[:B] + 1j * r[B:]


def _normalize(a):
    s = np.max(np.abs(a), axis=1)
    s = np.where(s > 0, s, 1.0)
    return a / s[:, None], np.log(s)


class TiltedChain:
    """Site weights and bond kernels of one gce at fixed ``sigma``.

    ``centers`` are the reference means ``m_k`` subtracted inside the tilt.
    """

    def __init__(self, spec: ModelSpec, sigma, grid: TransferGrid = DEFAULT_GRID, centers=None):
        _require_nn(spec)
        self.spec = spec
        self.sigma = float(sigma)
        self.grid = grid
        N, z = spec.N, grid.nodes
        self.N = N
        self.z = z
        lw = (
            -0.5 * z[None, :] ** 2
            - spec.potential.value(z)[None, :]
            + (self.sigma - spec.s)[:, None] * z[None, :]
            + np.log(grid.weights)[None, :]
        )
        off = lw.max(axis=1)
        self.W = np.exp(lw - off[:, None])
        self.log_offset = float(math.fsum(off))
        bonds = spec.interaction.bond(1) if N > 1 else np.zeros(0)
        kernels = {}
        self.K = []
        for c in bonds:
            c = float(c)
            if c not in kernels:
                kernels[c] = np.exp(-c * np.outer(z, z))
            self.K.append(kernels[c])
        self.centers = np.zeros(N) if centers is None else np.asarray(centers, dtype=float)
        self._phase_cache = None

    def with_centers(self, centers):
        out = object.__new__(TiltedChain)
        out.__dict__.update(self.__dict__)
        out.centers = np.asarray(centers, dtype=float)
        out._phase_cache = None
        return out

    # -- tilted weights ------------------------------------------------

    def _phases(self, xis):
        key = xis.tobytes()
        if self._phase_cache is None or self._phase_cache[0] != key:
            r = 1.0 / math.sqrt(self.N)
            pz = np.exp(1j * r * np.outer(xis, self.z))
            pk = np.exp(-1j * r * np.outer(self.centers, xis))  # (N, B)
            self._phase_cache = (key, pz, pk)
        return self._phase_cache[1:]

    def weight(self, k, xis):
        """Tilted site weight ``W_k(z) exp(i xi (z - m_k)/sqrt N)``, shape ``(B, n)``."""
        pz, pk = self._phases(xis)
        return self.W[k][None, :] * pz * pk[k][:, None]

    # -- passes -----------------------------------------------------------

    def forward(self, xis):
        """Normalized forward messages ``alpha_k`` (include ``W_k``) and log scales."""
        xis = np.asarray(xis, dtype=float)
        B, N, n = len(xis), self.N, len(self.z)
        alpha = np.empty((N, B, n), dtype=complex)
        la = np.empty((N, B))
        a, s = _normalize(self.weight(0, xis).astype(complex))
        alpha[0], la[0] = a, s
        for k in range(1, N):
            a, s = _normalize(_matK(a, self.K[k - 1]) * self.weight(k, xis))
            alpha[k], la[k] = a, la[k - 1] + s
        return alpha, la

    def forward_total(self, xis):
        """Only ``Z(xi)`` relative scale: ``(sum_z alpha_{N-1}, la_{N-1})``; no storage."""
        xis = np.asarray(xis, dtype=float)
        a, la = _normalize(self.weight(0, xis).astype(complex))
        for k in range(1, self.N):
            a, s = _normalize(_matK(a, self.K[k - 1]) * self.weight(k, xis))
            la = la + s
        return a.sum(axis=1), la

    def backward(self, xis):
        """Normalized backward messages ``beta_k`` (exclude ``W_k``) and log scales."""
        xis = np.asarray(xis, dtype=float)
        B, N, n = len(xis), self.N, len(self.z)
        beta = np.empty((N, B, n), dtype=complex)
        lb = np.empty((N, B))
        b = np.ones((B, n), dtype=complex)
        beta[N - 1], lb[N - 1] = b, 0.0
        for k in range(N - 2, -1, -1):
            b, s = _normalize(_matK(self.weight(k + 1, xis) * b, self.K[k]))
            beta[k], lb[k] = b, lb[k + 1] + s
        return beta, lb


class _Pass:
    """Forward/backward messages for one xi-batch, plus derived insertions."""

    def __init__(self, chain: TiltedChain, xis, log_z0):
        self.chain = chain
        self.xis = np.asarray(xis, dtype=float)
        self.alpha, self.la = chain.forward(self.xis)
        self.beta, self.lb = chain.backward(self.xis)
        self.log_z0 = log_z0
        # step normalizers, so partial-sum messages can share alpha/beta scales
        self.fstep = np.exp(np.diff(self.la, axis=0))  # (N-1, B): scale of alpha_k over alpha_{k-1}
        self.bstep = np.exp(self.lb[:-1] - self.lb[1:])  # (N-1, B): beta_k over beta_{k+1}

    def scale(self, k_fwd, k_bwd, extra=0.0):
        return np.exp(self.la[k_fwd] + self.lb[k_bwd] + extra + self.chain.log_offset - self.log_z0)

    def cf(self):
        return np.sum(self.alpha[0] * self.beta[0], axis=1) * self.scale(0, 0)

    def site_tilted(self, table):
        """``E[f_k(X_k) e^{i xi S}]`` for every site k from an ``(N, n)`` value table, shape ``(B, N)``."""
        v = np.einsum("kbz,kz,kbz->bk", self.alpha, table, self.beta)
        return v * np.exp(self.la + self.lb + self.chain.log_offset - self.log_z0).T

    def fwd_partial(self, table):
        """Forward messages carrying the partial sum of an additive observable over sites <= k."""
        c = self.chain
        out = np.empty_like(self.alpha)
        out[0] = table[0][None, :] * self.alpha[0]
        for k in range(1, c.N):
            prop = _matK(out[k - 1], c.K[k - 1]) * c.weight(k, self.xis) / self.fstep[k - 1][:, None]
            out[k] = prop + table[k][None, :] * self.alpha[k]
        return out

    def bwd_partial(self, table):
        """Backward messages carrying the partial sum over sites > k."""
        c = self.chain
        N = c.N
        out = np.empty_like(self.beta)
        out[N - 1] = 0.0
        for k in range(N - 2, -1, -1):
            inner = c.weight(k + 1, self.xis) * (out[k + 1] + table[k + 1][None, :] * self.beta[k + 1])
            out[k] = _matK(inner, c.K[k]) / self.bstep[k][:, None]
        return out

    def additive(self, table):
        return self.site_tilted(table).sum(axis=1)

    def additive_pair(self, tf, tg):
        ag = self.fwd_partial(tg)
        bg = self.bwd_partial(tg)
        v = np.einsum("kz,kbz->bk", tf, ag * self.beta + self.alpha * bg)
        return (v * np.exp(self.la + self.lb + self.chain.log_offset - self.log_z0).T).sum(axis=1)

    # -- windows ------------------------------------------------------------

    def window_forward(self, msg, a, b, Y):
        """Push a message at site ``a`` (including ``W_a``) through window ``[a, b]`` weighted by ``Y``."""
        c = self.chain
        if b == a:
            return msg * Y[None, :]
        # Y is real: two real contractions instead of one complex upcast
        R = np.tensordot(msg.real, Y, axes=([1], [0])) + 1j * np.tensordot(msg.imag, Y, axes=([1], [0]))
        for k in range(a + 1, b):
            R = np.einsum("bz...,bz->b...", R, c.weight(k, self.xis))
        return R * c.weight(b, self.xis)

    def window(self, a, b, Y, left=None, right=None):
        """Tilted expectation of a window insertion; ``left``/``right`` override the boundary messages."""
        msg = self.alpha[a] if left is None else left
        out = self.window_forward(msg, a, b, Y)
        beta = self.beta[b] if right is None else right
        return np.sum(out * beta, axis=1) * self.scale(a, b)

    def left_partial_at(self, a, table):
        """Forward message at ``a`` (with W_a) carrying the additive partial sum over sites < a."""
        if a == 0:
            return np.zeros_like(self.alpha[0])
        c = self.chain
        af = self.fwd_partial(table)
        return _matK(af[a - 1], c.K[a - 1]) * c.weight(a, self.xis) / self.fstep[a - 1][:, None]

    def windows_disjoint(self, a, b, Yf, c_, d, Yg):
        """``E[F G e]`` for windows ``[a,b]`` before ``[c_, d]`` (``b < c_``)."""
        ch = self.chain
        msg = self.window_forward(self.alpha[a], a, b, Yf)
        extra = np.zeros(len(self.xis))
        for k in range(b + 1, c_ + 1):
            msg, s = _normalize(_matK(msg, ch.K[k - 1]) * ch.weight(k, self.xis))
            extra += s
        out = self.window_forward(msg, c_, d, Yg)
        return np.sum(out * self.beta[d], axis=1) * self.scale(a, d, extra)

    def row(self, i, js):
        """``E[X_i X_j e^{i xi S}]`` for ``j`` in ascending ``js`` (all ``>= i``); shape ``(B, len(js))``."""
        ch = self.chain
        z = ch.z
        js = [int(j) for j in js]
        if any(b < a for a, b in zip([i] + js, js)):
            raise ValueError(f"row sites must be ascending and >= {i}, got {js}")
        out = np.empty((len(self.xis), len(js)), dtype=complex)
        msg = self.alpha[i] * z[None, :]
        extra = np.zeros(len(self.xis))
        k = i
        for col, j in enumerate(js):
            while k < j:
                k += 1
                msg, s = _normalize(_matK(msg, ch.K[k - 1]) * ch.weight(k, self.xis))
                extra += s
            out[:, col] = np.sum(msg * z[None, :] * self.beta[k], axis=1) * self.scale(i, k, extra)
        return out


def _grid_tensor(chain, a, b, observables):
    """Product of observables evaluated on the tensor grid over sites ``a..b``."""
    z = chain.z
    w = b - a + 1
    if w > MAX_WINDOW:
        raise NonContiguousSupport(f"window of width {w} exceeds the supported maximum {MAX_WINDOW}")
    mesh = np.stack(np.meshgrid(*([z] * w), indexing="ij"), axis=-1) if w > 1 else z[:, None]
    T = np.ones(mesh.shape[:-1])
    for f in observables:
        cols = [s - a for s in f.support]
        T = T * f.fn(mesh[..., cols])
    return T


def _window_Y(chain, a, b, T):
    """Attach the in-window bond kernels to a grid tensor."""
    Y = T
    for k in range(a, b):
        shape = [1] * (b - a + 1)
        shape[k - a] = shape[k - a + 1] = len(chain.z)
        Y = Y * chain.K[k].reshape(shape)
    return Y


def _window_tensor(chain, a, b, observables):
    """Cached ``Y`` for a window; it does not depend on xi, so chunks share it."""
    cache = chain.__dict__.setdefault("_ycache", {})
    key = (a, b, tuple(id(f) for f in observables))
    hit = cache.get(key)
    if hit is not None and all(x is y for x, y in zip(hit[0], observables)):
        return hit[1]
    if len(cache) >= 8:
        cache.clear()
    Y = _window_Y(chain, a, b, _grid_tensor(chain, a, b, observables))
    cache[key] = (tuple(observables), Y)
    return Y


def _site_table(chain, f: Observable):
    sites, coeffs, phi = f.terms
    table = np.zeros((chain.N, len(chain.z)))
    vals = chain.z if phi is None else phi(chain.z)
    for s, c in zip(sites, coeffs):
        table[s] += c * vals
    return table


def _window_span(f: Observable, N):
    if not f.is_contiguous:
        raise NonContiguousSupport(f"{f!r} has non-contiguous support {f.support}")
    a, b = f.span
    if b >= N:
        raise IndexError(f"support of {f!r} exceeds N={N}")
    return a, b


def _single(p: _Pass, f: Observable):
    """``E[f e^{i xi S}]`` (relative to Z0) for one observable."""
    ch = p.chain
    if not f.support:
        return float(f.fn(np.zeros((1, 0)))[0]) * p.cf()
    if f.additive:
        return p.additive(_site_table(ch, f))
    a, b = _window_span(f, ch.N)
    return p.window(a, b, _window_tensor(ch, a, b, [f]))


def _pair(p: _Pass, f: Observable, g: Observable):
    """``E[f g e^{i xi S}]`` (relative to Z0)."""
    ch = p.chain
    if not f.support:
        return float(f.fn(np.zeros((1, 0)))[0]) * _single(p, g)
    if not g.support:
        return float(g.fn(np.zeros((1, 0)))[0]) * _single(p, f)
    if f.additive and g.additive:
        return p.additive_pair(_site_table(ch, f), _site_table(ch, g))
    if g.additive:
        f, g = g, f
    if f.additive:
        tf = _site_table(ch, f)
        a, b = _window_span(g, ch.N)
        Yg = _window_tensor(ch, a, b, [g])
        # F restricted to the window, as a grid tensor
        fwin = np.zeros([len(ch.z)] * (b - a + 1))
        for k in range(a, b + 1):
            shape = [1] * (b - a + 1)
            shape[k - a] = len(ch.z)
            fwin = fwin + tf[k].reshape(shape)
        left = p.window(a, b, Yg, left=p.left_partial_at(a, tf))
        inside = p.window(a, b, Yg * fwin)
        right = p.window(a, b, Yg, right=p.bwd_partial(tf)[b])
        return left + inside + right
    a, b = _window_span(f, ch.N)
    c, d = _window_span(g, ch.N)
    if c < a:
        (a, b, f), (c, d, g) = (c, d, g), (a, b, f)
    if c <= b:
        lo, hi = a, max(b, d)
        return p.window(lo, hi, _window_tensor(ch, lo, hi, [f, g]))
    Yf = _window_tensor(ch, a, b, [f])
    Yg = _window_tensor(ch, c, d, [g])
    return p.windows_disjoint(a, b, Yf, c, d, Yg)


class TransferEngine:
    """All transfer computations for one model on one grid, with per-sigma caches."""

    def __init__(self, spec: ModelSpec, grid: TransferGrid = DEFAULT_GRID, fourier: FourierQuadrature = DEFAULT_FOURIER):
        _require_nn(spec)
        self.spec = spec
        self.grid = grid
        self.fourier = fourier
        self._zero = {}
        self._sigma_of_m = {}

    # -- gce at xi = 0 ----------------------------------------------------

    def _at(self, sigma):
        """Cached ``(chain, pass at xi=0, log Z)`` for a field value."""
        sigma = float(sigma)
        hit = self._zero.get(sigma)
        if hit is not None:
            return hit
        chain = TiltedChain(self.spec, sigma, self.grid)
        xis = np.zeros(1)
        alpha, la = chain.forward(xis)
        z0 = np.sum(alpha[-1][0])
        if abs(z0.imag) > 1e-12 * abs(z0.real):
            raise FloatingPointError("untilted partition function is not real")
        log_z = float(la[-1][0] + chain.log_offset + math.log(z0.real))
        p = _Pass(chain, xis, log_z)
        means = p.site_tilted(np.tile(chain.z, (chain.N, 1)))[0].real
        chain = chain.with_centers(means)
        p = _Pass(chain, xis, log_z)
        if len(self._zero) > 256:
            self._zero.clear()
        out = self._zero[sigma] = (chain, p, log_z)
        return out

    def log_partition(self, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        return self._at(sigma)[2]

    def free_energy(self, sigma=None):
        return self.log_partition(sigma) / self.spec.N

    def site_means(self, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        return self._at(sigma)[0].centers.copy()

    def mean_spin(self, sigma=None):
        return float(np.mean(self.site_means(sigma)))

    def expectation(self, f: Observable, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        return float(_single(self._at(sigma)[1], f)[0].real)

    def covariance(self, i, j, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        i, j = sorted((int(i), int(j)))
        chain, p, _ = self._at(sigma)
        exy = p.row(i, [j])[0, 0].real
        return float(exy - chain.centers[i] * chain.centers[j])

    def covariance_row(self, i, js, sigma=None):
        """``cov_gce(X_i, X_j)`` for ascending ``js >= i``."""
        sigma = self.spec.sigma if sigma is None else sigma
        chain, p, _ = self._at(sigma)
        js = np.asarray(js)
        return p.row(int(i), js)[0].real - chain.centers[i] * chain.centers[js]

    def observable_covariance(self, f: Observable, g: Observable, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        p = self._at(sigma)[1]
        return float((_pair(p, f, g) - _single(p, f) * _single(p, g))[0].real)

    def sum_variance(self, sigma=None):
        """``var(sum_k X_k)`` from centred additive propagation."""
        sigma = self.spec.sigma if sigma is None else sigma
        chain, p, _ = self._at(sigma)
        t = chain.z[None, :] - chain.centers[:, None]
        return float(p.additive_pair(t, t)[0].real)

    # -- sigma <-> m --------------------------------------------------------

    def sigma_of_m(self, m, tol=1e-9, max_iter=200):
        """Safeguarded Newton on the increasing map ``sigma -> mean spin``."""
        m = float(m)
        if m in self._sigma_of_m:
            return self._sigma_of_m[m]
        N = self.spec.N

        def resid(s):
            return self.mean_spin(s) - m

        half = 10.0
        for _ in range(4):
            lo, hi = m - half, m + half
            rlo, rhi = resid(lo), resid(hi)
            if rlo < 0 < rhi:
                break
            half *= 2.0
        else:
            raise BracketNotFound(f"no sign change for mean {m} within sigma in [{m - half / 2}, {m + half / 2}]")
        s = m
        r = resid(s)
        for it in range(max_iter):
            if abs(r) < tol:
                break
            if r > 0:
                hi = s
            else:
                lo = s
            slope = self.sum_variance(s) / N
            step = s - r / slope if slope > 0 else 0.5 * (lo + hi)
            s = step if lo < step < hi else 0.5 * (lo + hi)
            r = resid(s)
        else:
            raise BracketNotFound(f"sigma(m) did not converge: residual {r:.3g}")
        if len(self._sigma_of_m) > 256:
            self._sigma_of_m.clear()
        self._sigma_of_m[m] = s
        return s

    # -- tilted quantities ---------------------------------------------------

    def _chunks(self, xis):
        B = max(1, min(128, _CHUNK_BUDGET // (self.spec.N * self.grid.n)))
        for start in range(0, len(xis), B):
            yield xis[start : start + B]

    def characteristic_function(self, xi, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        chain, _, log_z = self._at(sigma)
        xis = np.atleast_1d(np.asarray(xi, dtype=float))
        out = []
        for chunk in self._chunks(xis):
            tot, la = chain.forward_total(chunk)
            out.append(tot * np.exp(la + chain.log_offset - log_z))
        res = np.concatenate(out)
        return res if np.ndim(xi) else complex(res[0])

    def tilted_expectation(self, xi, f: Observable, sigma=None):
        sigma = self.spec.sigma if sigma is None else sigma
        chain, _, log_z = self._at(sigma)
        xis = np.atleast_1d(np.asarray(xi, dtype=float))
        res = np.concatenate([_single(_Pass(chain, c, log_z), f) for c in self._chunks(xis)])
        return res if np.ndim(xi) else complex(res[0])

    def _fourier_nodes(self, sigma):
        fq = self.fourier
        for attempt in range(fq.max_enlargements + 1):
            edge = np.abs(self.characteristic_function(np.array([-fq.xi_max, fq.xi_max]), sigma))
            if np.max(edge) <= fq.tail_tol:
                return fq.nodes()
            if attempt < fq.max_enlargements:
                log.info("enlarging xi range: |cf(%g)| = %.3g", fq.xi_max, np.max(edge))
                fq = fq.enlarged()
        raise FourierTruncationInsufficient(
            f"|cf(+-{fq.xi_max})| = {np.max(edge):.3g} > {fq.tail_tol} after {fq.max_enlargements} enlargements"
        )

    def _integrate(self, sigma, integrands, diagnostics_path=None):
        """Gauss-Legendre xi-integrals of ``integrands(pass) -> list of (B,) arrays``."""
        chain, _, log_z = self._at(sigma)
        xis, w = self._fourier_nodes(sigma)
        if diagnostics_path is None and _diagnostics["dir"] is not None:
            _diagnostics["count"] += 1
            d = _diagnostics["dir"]
            d.mkdir(parents=True, exist_ok=True)
            diagnostics_path = d / f"xi-N{self.spec.N}-{self.spec.digest()}-{_diagnostics['count']:04d}.csv"
        cols = None
        rows = []
        for chunk in self._chunks(xis):
            p = _Pass(chain, chunk, log_z)
            vals = integrands(p)
            cols = [[] for _ in vals] if cols is None else cols
            for k, v in enumerate(vals):
                cols[k].append(v)
            if diagnostics_path is not None:
                rows.append((chunk, p.cf()))
        if diagnostics_path is not None:
            write_xi_diagnostics(diagnostics_path, np.concatenate([r[0] for r in rows]), np.concatenate([r[1] for r in rows]))
        out = []
        for c in cols:
            v = np.concatenate(c, axis=0)
            wv = w.reshape((-1,) + (1,) * (v.ndim - 1)) * v
            if v.ndim == 1:
                out.append(complex(math.fsum(wv.real), math.fsum(wv.imag)))
            else:
                re = np.array([math.fsum(col) for col in wv.real.reshape(len(w), -1).T])
                im = np.array([math.fsum(col) for col in wv.imag.reshape(len(w), -1).T])
                out.append((re + 1j * im).reshape(v.shape[1:]))
        return out

    @staticmethod
    def _check_real(name, value, scale):
        bad = np.max(np.abs(np.imag(value))) if np.ndim(value) else abs(value.imag)
        if bad > 1e-9 * scale:
            log.warning("%s has imaginary residual %.3g (scale %.3g)", name, bad, scale)
        return np.real(value)

    def density_at_zero(self, sigma=None):
        """Density of ``N^{-1/2} sum (X_k - m_k)`` at 0 under the gce."""
        sigma = self.spec.sigma if sigma is None else sigma
        (I,) = self._integrate(sigma, lambda p: [p.cf()])
        if abs(I.imag) > 1e-10 * abs(I.real):
            log.warning("g(0) integral has imaginary residual %.3g", I.imag)
        return I.real / (2.0 * math.pi)

    def _matched(self, m, sigma):
        return self.sigma_of_m(m) if sigma is None else float(sigma)

    def ce_difference(self, m, f: Observable, sigma=None, diagnostics_path=None):
        """``E_ce[f] - E_gce[f]`` at the matched field."""
        sigma = self._matched(m, sigma)
        ef = self.expectation(f, sigma)
        den, num = self._integrate(sigma, lambda p: [p.cf(), _single(p, f) - ef * p.cf()], diagnostics_path)
        scale = abs(den) * (1.0 + abs(ef))
        den = self._check_real("cf integral", den, abs(den))
        num = self._check_real("numerator integral", num, scale)
        return float(num / den)

    def ce_expectation(self, m, f: Observable, sigma=None):
        sigma = self._matched(m, sigma)
        return self.expectation(f, sigma) + self.ce_difference(m, f, sigma)

    def ce_site_means(self, m, sigma=None):
        """All canonical site means at once."""
        sigma = self._matched(m, sigma)
        chain = self._at(sigma)[0]
        table = chain.z[None, :] - chain.centers[:, None]
        den, num = self._integrate(sigma, lambda p: [p.cf(), p.site_tilted(table)])
        den = self._check_real("cf integral", den, abs(den))
        num = self._check_real("site numerators", num, abs(den) * (1 + np.max(np.abs(chain.centers))))
        return chain.centers + num / den

    def ce_covariance_terms(self, m, f: Observable, g: Observable, sigma=None):
        """``(cov_ce, cov_gce, dE_f, dE_g)`` for two observables."""
        sigma = self._matched(m, sigma)
        p0 = self._at(sigma)[1]
        ef, eg = _single(p0, f)[0].real, _single(p0, g)[0].real
        cov_gce = (_pair(p0, f, g)[0].real - ef * eg)

        def integrands(p):
            cf = p.cf()
            sf, sg = _single(p, f), _single(p, g)
            return [cf, sf - ef * cf, sg - eg * cf, _pair(p, f, g) - eg * sf - ef * sg + ef * eg * cf]

        den, nf, ng, nfg = self._integrate(sigma, integrands)
        scale = abs(den) * (1.0 + abs(ef) + abs(eg)) ** 2
        den = self._check_real("cf integral", den, abs(den))
        df = self._check_real("f numerator", nf, scale) / den
        dg = self._check_real("g numerator", ng, scale) / den
        ratio = self._check_real("covariance numerator", nfg, scale) / den
        return float(ratio - df * dg), float(cov_gce), float(df), float(dg)

    def ce_covariance(self, m, f: Observable, g: Observable, sigma=None):
        return self.ce_covariance_terms(m, f, g, sigma)[0]

    def ce_covariance_row(self, m, i, js, sigma=None):
        """``cov_ce(X_i, X_j)`` for ascending ``js >= i``; returns ``(cov_ce, cov_gce)`` arrays."""
        sigma = self._matched(m, sigma)
        chain, p0, _ = self._at(sigma)
        js = np.asarray(js)
        mu = chain.centers
        table = chain.z[None, :] - mu[:, None]

        def integrands(p):
            cf = p.cf()
            t = p.site_tilted(table)  # E[(X_k - m_k) e]
            xx = p.row(i, js)  # E[X_i X_j e]
            # E[(X_i - m_i)(X_j - m_j) e] = E[X_i X_j e] - m_j E[X_i e] - m_i E[X_j e] + m_i m_j cf
            ex_i = t[:, i] + mu[i] * cf
            ex_j = t[:, js] + mu[js][None, :] * cf[:, None]
            cc = xx - mu[js][None, :] * ex_i[:, None] - mu[i] * ex_j + mu[i] * mu[js][None, :] * cf[:, None]
            return [cf, t, cc]

        den, t, cc = self._integrate(sigma, integrands)
        den = self._check_real("cf integral", den, abs(den))
        d = self._check_real("site numerators", t, abs(den) * (1 + np.max(np.abs(mu)))) / den
        ratio = self._check_real("row numerators", cc, abs(den) * (1 + np.max(np.abs(mu))) ** 2) / den
        cov_ce = ratio - d[i] * d[js]
        cov_gce = self.covariance_row(i, js, sigma)
        return cov_ce, cov_gce

    def density_derivatives(self, sigma=None, h=1e-3):
        """Finite-difference ``(g(0), dg/dsigma, d2g/dsigma2)``; diagnostic only."""
        sigma = self.spec.sigma if sigma is None else sigma
        g0 = self.density_at_zero(sigma)
        gp, gm = self.density_at_zero(sigma + h), self.density_at_zero(sigma - h)
        return g0, (gp - gm) / (2 * h), (gp - 2 * g0 + gm) / (h * h)


def write_xi_diagnostics(path, xis, cf):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xi", "re_cf", "im_cf"])
        for x, c in zip(xis, cf):
            w.writerow([f"{x:.17g}", f"{c.real:.17g}", f"{c.imag:.17g}"])


# -- functional surface --------------------------------------------------------


def _engine(spec, grid, fq=DEFAULT_FOURIER):
    return TransferEngine(spec, grid or DEFAULT_GRID, fq or DEFAULT_FOURIER)


def gce_log_partition(spec: ModelSpec, sigma=None, grid: TransferGrid = None):
    return _engine(spec, grid).log_partition(sigma)


def gce_site_means(spec: ModelSpec, sigma=None, grid: TransferGrid = None):
    return _engine(spec, grid).site_means(sigma)


def gce_covariance(spec: ModelSpec, sigma, grid: TransferGrid, i, j):
    return _engine(spec, grid).covariance(i, j, sigma)


def characteristic_function(spec: ModelSpec, sigma, grid: TransferGrid, xi):
    return _engine(spec, grid).characteristic_function(xi, sigma)


def tilted_expectation(spec: ModelSpec, sigma, grid: TransferGrid, xi, f: Observable):
    return _engine(spec, grid).tilted_expectation(xi, f, sigma)


def ce_expectation_fourier(spec: ModelSpec, m, grid: TransferGrid = None, fq: FourierQuadrature = None, f: Observable = None):
    return _engine(spec, grid, fq).ce_expectation(m, f)


def ce_covariance_fourier(spec: ModelSpec, m, grid: TransferGrid = None, fq: FourierQuadrature = None, f: Observable = None, g: Observable = None):
    return _engine(spec, grid, fq).ce_covariance(m, f, g)


def density_at_zero(spec: ModelSpec, sigma=None, grid: TransferGrid = None, fq: FourierQuadrature = None):
    return _engine(spec, grid, fq).density_at_zero(sigma)


def sigma_of_m_transfer(spec: ModelSpec, m, grid: TransferGrid = None):
    return _engine(spec, grid).sigma_of_m(m)
