"""Metropolis samplers for the gce (single-site) and the ce (pair exchange).

Random numbers follow a counter-based contract: chain ``(seed, chain_id)``
owns the Philox stream with key ``seed + (chain_id << 64)``, and sweep ``k``
consumes the fixed word range ``[k D, (k + 1) D)`` with ``D = 3N`` (gce: site,
proposal, acceptance per move) or ``D = 4N`` (ce: two sites, proposal,
acceptance). Every draw is therefore a function of
``(seed, chain_id, sweep, move)`` alone, independent of block sizes and of
adaptation.

Sweeps run in compiled blocks. Block boundaries are aligned with the end of
burn-in and with ce reprojection points.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
from scipy.special import ndtri

from .errors import ConstraintViolation, DriftTooLarge
from .model import ModelSpec, SpinConfig

GCE, CE = "gce", "ce"
DEFAULT_TARGET = {GCE: 0.44, CE: 0.30}
DRIFT_LIMIT = 1e-6
ADAPT_WINDOW = 100  # sweeps per Robbins-Monro update; fixed so blocking never changes a trajectory
_WORDS = {GCE: 3, CE: 4}
_U53 = 2.0**-53


@dataclass(frozen=True)
class SamplerConfig:
    """Run lengths count sweeps; ``n_sweeps`` includes burn-in."""

    n_sweeps: int
    burn_in_sweeps: Optional[int] = None
    thin: int = 1
    target_acceptance: Optional[float] = None
    seed: int = 0
    reproject_every: int = 1000
    chain_id: int = 0
    initial_step: float = 1.0
    block_sweeps: Optional[int] = None

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be positive")
        if self.burn_in_sweeps is None:
            object.__setattr__(self, "burn_in_sweeps", default_burn_in(self.n_sweeps))
        if not 0 <= self.burn_in_sweeps < self.n_sweeps:
            raise ValueError(f"burn-in {self.burn_in_sweeps} must lie in [0, n_sweeps={self.n_sweeps})")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.target_acceptance is not None and not 0 < self.target_acceptance < 1:
            raise ValueError("target acceptance must lie in (0, 1)")
        if self.reproject_every < 1:
            raise ValueError("reproject_every must be >= 1")
        if not self.initial_step > 0:
            raise ValueError("proposal width must be positive")

    def target(self, ensemble):
        return DEFAULT_TARGET[ensemble] if self.target_acceptance is None else self.target_acceptance


def default_burn_in(n_sweeps):
    """20% of the run, at least 10^4 sweeps when that still leaves samples."""
    b = int(math.ceil(0.2 * n_sweeps))
    return max(b, 10_000) if 10_000 < n_sweeps else b


@dataclass
class ChainState:
    config: np.ndarray
    step_sizes: np.ndarray
    ensemble: str
    m: Optional[float] = None
    seed: int = 0
    chain_id: int = 0
    sweep: int = 0
    burn_in: int = 0
    target: float = 0.44
    accepted: np.ndarray = None
    proposed: np.ndarray = None
    adapt_count: int = 0
    reprojections: int = 0
    max_displacement: float = 0.0
    log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if np.any(~(np.asarray(self.step_sizes) > 0)):
            raise ValueError("proposal widths must be strictly positive")
        if self.accepted is None:
            self.accepted = np.zeros(len(self.step_sizes), dtype=np.int64)
            self.proposed = np.zeros(len(self.step_sizes), dtype=np.int64)

    @property
    def N(self):
        return len(self.config)

    @property
    def in_burn_in(self):
        return self.sweep < self.burn_in

    @property
    def acceptance_rate(self):
        p = self.proposed.sum()
        return float(self.accepted.sum() / p) if p else float("nan")

    def spin_config(self):
        return SpinConfig(self.config.copy(), m=self.m if self.ensemble == CE else None)


def initialize(spec: ModelSpec, ensemble, config: SamplerConfig = None, m=None) -> ChainState:
    """gce chains start at 0, ce chains at the constant configuration ``m``."""
    config = config or SamplerConfig(n_sweeps=1, burn_in_sweeps=0)
    N = spec.N
    if ensemble == GCE:
        x = np.zeros(N)
        h = np.full(N, config.initial_step)
    elif ensemble == CE:
        if m is None:
            raise ValueError("ce chains need the mean spin m")
        x = np.full(N, float(m))
        h = np.full(1, config.initial_step)
    else:
        raise ValueError(f"unknown ensemble {ensemble!r}")
    return ChainState(
        config=x,
        step_sizes=h,
        ensemble=ensemble,
        m=None if m is None else float(m),
        seed=int(config.seed),
        chain_id=int(config.chain_id),
        burn_in=int(config.burn_in_sweeps),
        target=config.target(ensemble),
    )


# -- random stream -------------------------------------------------------------


def _raw_words(seed, chain_id, start, count):
    """Words ``[start, start + count)`` of the chain's Philox stream."""
    key = (int(seed) + (int(chain_id) << 64)) % (1 << 128)
    bg = np.random.Philox(key=key, counter=start // 4)
    skip = start % 4
    return bg.random_raw(count + skip)[skip:]


def stream_uniforms(seed, chain_id, start, count):
    """Open-interval uniforms ``((w >> 11) + 0.5) 2^-53`` from stream words."""
    w = _raw_words(seed, chain_id, start, count)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def sweep_draws(state: ChainState, n_sweeps):
    """Pre-converted draws for sweeps ``state.sweep .. +n_sweeps``.

    gce: ``(site, z, log u)``; ce: ``(i, j, z, log u)``; each shaped ``(B, N)``.
    """
    N = state.N
    D = _WORDS[state.ensemble] * N
    u = stream_uniforms(state.seed, state.chain_id, state.sweep * D, n_sweeps * D)
    u = u.reshape(n_sweeps, N, _WORDS[state.ensemble])
    if state.ensemble == GCE:
        site = np.minimum((u[..., 0] * N).astype(np.int64), N - 1)
        return site, ndtri(u[..., 1]), np.log(u[..., 2])
    i = np.minimum((u[..., 0] * N).astype(np.int64), N - 1)
    j = np.minimum((u[..., 1] * (N - 1)).astype(np.int64), N - 2)
    j = j + (j >= i)
    return i, j, ndtri(u[..., 2]), np.log(u[..., 3])


# -- compiled kernels ----------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _psi(kind, a, b, z):
    if kind == 0:
        return 0.0
    return a * math.cos(b * z)


@numba.njit(cache=True, inline="always")
def _nbr(x, upper, R, N, i):
    acc = 0.0
    for d in range(1, R + 1):
        if i + d < N:
            acc += upper[d - 1, i] * x[i + d]
        if i - d >= 0:
            acc += upper[d - 1, i - d] * x[i - d]
    return acc


@numba.njit(cache=True)
def _gce_block(x, upper, s, kind, a, b, sigma, h, site, z, logu, out, acc, prop):
    B, N = site.shape
    R = upper.shape[0]
    for t in range(B):
        for k in range(N):
            i = site[t, k]
            old = x[i]
            d = h[i] * z[t, k]
            new = old + d
            dh = (
                _psi(kind, a, b, new) - _psi(kind, a, b, old)
                + (s[i] - sigma) * d
                + 0.5 * (new * new - old * old)
                + d * _nbr(x, upper, R, N, i)
            )
            prop[i] += 1
            if dh <= 0.0 or logu[t, k] < -dh:
                x[i] = new
                acc[i] += 1
        out[t, :] = x


@numba.njit(cache=True)
def _ce_block(x, upper, s, kind, a, b, h, si, sj, z, logu, out, acc, prop):
    B, N = si.shape
    R = upper.shape[0]
    for t in range(B):
        for k in range(N):
            i = si[t, k]
            j = sj[t, k]
            eta = h * z[t, k]
            xi = x[i]
            xj = x[j]
            yi = xi + eta
            yj = xj - eta
            dh = (
                _psi(kind, a, b, yi) - _psi(kind, a, b, xi)
                + _psi(kind, a, b, yj) - _psi(kind, a, b, xj)
                + (s[i] - s[j]) * eta
                + 0.5 * (yi * yi - xi * xi + yj * yj - xj * xj)
                + eta * (_nbr(x, upper, R, N, i) - _nbr(x, upper, R, N, j))
            )
            dist = abs(i - j)
            if dist <= R:
                dh -= upper[dist - 1, min(i, j)] * eta * eta
            prop[0] += 1
            if dh <= 0.0 or logu[t, k] < -dh:
                x[i] = yi
                x[j] = yj
                acc[0] += 1
        out[t, :] = x


def _kernel_args(spec: ModelSpec):
    pot = spec.potential
    upper = np.ascontiguousarray(spec.interaction.upper, dtype=np.float64)
    if upper.shape[0] == 0:
        upper = np.zeros((1, spec.N))
    return upper, np.ascontiguousarray(spec.s, dtype=np.float64), pot.code(), float(pot.a), float(pot.b)


def advance(spec: ModelSpec, state: ChainState, n_sweeps, sigma=None, out=None):
    """Run ``n_sweeps`` sweeps in one compiled block; returns the per-sweep configurations."""
    n_sweeps = int(n_sweeps)
    out = np.empty((n_sweeps, state.N)) if out is None else out
    upper, s, kind, a, b = _kernel_args(spec)
    draws = sweep_draws(state, n_sweeps)
    if state.ensemble == GCE:
        sig = spec.sigma if sigma is None else float(sigma)
        _gce_block(state.config, upper, s, kind, a, b, sig, state.step_sizes, *draws, out, state.accepted, state.proposed)
    else:
        _ce_block(state.config, upper, s, kind, a, b, float(state.step_sizes[0]), *draws, out, state.accepted, state.proposed)
    state.sweep += n_sweeps
    return out


def gce_sweep(spec: ModelSpec, sigma, state: ChainState) -> ChainState:
    """One sweep of N random-scan single-site Metropolis updates."""
    if state.ensemble != GCE:
        raise ValueError("gce_sweep needs a gce chain")
    advance(spec, state, 1, sigma=sigma)
    return state


def ce_sweep(spec: ModelSpec, m, state: ChainState) -> ChainState:
    """One sweep of N pair-exchange updates; the total spin is invariant. Never reads sigma."""
    if state.ensemble != CE or state.m is None or abs(state.m - float(m)) > 0.0:
        raise ConstraintViolation(f"ce_sweep needs a chain tagged with mean spin {m}")
    advance(spec, state, 1)
    return state


def adapt(state: ChainState, window_acceptance):
    """Robbins-Monro step ``log h += k^-0.6 (acc - target)``.

    Active for windows ending at or before the end of burn-in; a no-op once
    any post-burn-in sweep has run, so recorded samples see frozen widths.
    """
    if state.sweep > state.burn_in:
        return state
    state.adapt_count += 1
    gamma = state.adapt_count**-0.6
    acc = np.asarray(window_acceptance, dtype=float)
    ok = np.isfinite(acc)
    h = state.step_sizes
    h[ok] = h[ok] * np.exp(gamma * (acc[ok] - state.target))
    return state


def reproject(state: ChainState, m=None):
    """Shift ``x`` by ``m - mean(x)`` to remove floating-point drift of the total spin."""
    m = state.m if m is None else float(m)
    shift = m - float(np.mean(state.config))
    if abs(shift) > DRIFT_LIMIT:
        raise DriftTooLarge(f"mean spin drifted by {shift:.3g} > {DRIFT_LIMIT}")
    state.config += shift
    state.reprojections += 1
    state.max_displacement = max(state.max_displacement, abs(shift))
    return state


# -- driver -------------------------------------------------------------------


@dataclass
class ChainResult:
    state: ChainState
    samples: Optional[np.ndarray]
    sweeps_kept: int
    acceptance: float
    step_sizes: np.ndarray


def _block_len(N, config):
    if config.block_sweeps:
        return int(config.block_sweeps)
    return int(max(8, min(512, 2**16 // max(N, 1))))


def run_chain(
    spec: ModelSpec,
    ensemble,
    config: SamplerConfig,
    m=None,
    sigma=None,
    observe: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    trace_path=None,
    state: ChainState = None,
) -> ChainResult:
    """Burn in with adaptation, then sample with frozen step sizes.

    ``observe`` maps a ``(B, N)`` block of post-burn-in configurations (after
    thinning) to a ``(B,)`` or ``(B, k)`` array; results are concatenated. The
    ``n_sweeps`` budget includes burn-in.
    """
    state = state or initialize(spec, ensemble, config, m)
    B = _block_len(spec.N, config)
    chunks = []
    tw = TraceWriter(trace_path, spec.N, config.thin) if trace_path else None
    kept = 0
    window_acc = state.accepted.copy()
    window_prop = state.proposed.copy()
    try:
        while state.sweep < config.n_sweeps:
            stop = config.n_sweeps
            if state.sweep < state.burn_in:
                stop = min(state.burn_in, (state.sweep // ADAPT_WINDOW + 1) * ADAPT_WINDOW)
            if ensemble == CE:
                stop = min(stop, (state.sweep // config.reproject_every + 1) * config.reproject_every)
            n = min(B, stop - state.sweep)
            first = state.sweep
            out = advance(spec, state, n, sigma=sigma)
            if ensemble == CE and state.sweep % config.reproject_every == 0:
                reproject(state)
            if first < state.burn_in:
                if state.sweep % ADAPT_WINDOW and state.sweep != state.burn_in:
                    continue
                dp = state.proposed - window_prop
                with np.errstate(invalid="ignore", divide="ignore"):
                    adapt(state, (state.accepted - window_acc) / np.where(dp > 0, dp, 0))
                window_acc, window_prop = state.accepted.copy(), state.proposed.copy()
                if state.sweep == state.burn_in:
                    state.accepted[:] = 0
                    state.proposed[:] = 0
                continue
            # sweep indices first+1..state.sweep were recorded; keep those divisible by thin
            idx = np.arange(first + 1, state.sweep + 1)
            sel = out[(idx - state.burn_in) % config.thin == 0]
            kept += len(sel)
            if tw:
                tw.write(sel)
            if observe is not None and len(sel):
                chunks.append(np.asarray(observe(sel)))
    finally:
        if tw:
            tw.close()
    samples = np.concatenate(chunks, axis=0) if chunks else None
    return ChainResult(state, samples, kept, state.acceptance_rate, state.step_sizes.copy())


# -- binary traces --------------------------------------------------------------

_HEADER = struct.Struct("<qqq")


class TraceWriter:
    """Little-endian float64 configurations after a header ``(N, stride, count)``."""

    def __init__(self, path, N, stride):
        self.fh = open(path, "wb")
        self.N, self.stride, self.count = int(N), int(stride), 0
        self.fh.write(_HEADER.pack(self.N, self.stride, 0))

    def write(self, configs):
        configs = np.ascontiguousarray(configs, dtype="<f8")
        self.fh.write(configs.tobytes())
        self.count += len(configs)

    def close(self):
        if self.fh.closed:
            return
        self.fh.seek(0)
        self.fh.write(_HEADER.pack(self.N, self.stride, self.count))
        self.fh.close()


def read_trace(path):
    """Return ``(configs, stride)`` from a binary trace."""
    with open(path, "rb") as fh:
        N, stride, count = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != N * count:
        raise ValueError(f"trace holds {data.size} values, header promises {N}x{count}")
    return data.reshape(count, N), stride
