"""Error bars, moment ratios and decay/power-law fits.

Everything here is a deterministic function of its input arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NonPositiveValue, TooFewPoints, TooFewSamples

MIN_SAMPLES = 100
DETERMINISTIC_FLOOR = 1e-11


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    std_error: float
    ess: float
    n: int

    def within(self, target, k=3.0, floor=0.0):
        """``|value - target| <= max(k SE, floor)``."""
        return abs(self.value - target) <= max(k * self.std_error, floor)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    r_squared: float
    points_used: int
    noise_floor: float

    @property
    def decaying(self):
        return self.rate > 0


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float
    slope_ci: tuple

    def __post_init__(self):
        object.__setattr__(self, "slope_ci", tuple(float(v) for v in self.slope_ci))


def _series(x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    return x


def _batches(n):
    b = int(math.ceil(math.sqrt(n)))
    return b, n // b


def batch_means(x):
    """Means of ``ceil(sqrt n)`` equal consecutive batches; a short tail is dropped."""
    b, size = _batches(len(x))
    return x[: b * size].reshape(b, size).mean(axis=1)


def autocorrelation(x):
    """Normalized autocorrelation ``rho_k`` for ``k = 0..n-1`` (FFT, biased estimator)."""
    n = len(x)
    y = x - x.mean()
    f = np.fft.rfft(y, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    if acov[0] <= 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def integrated_time(x):
    """Initial positive sequence estimate of ``tau = 1 + 2 sum_{k>=1} rho_k``."""
    rho = autocorrelation(x)
    n = len(rho)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return max(tau, 1.0 / n)


def effective_sample_size(x):
    x = np.asarray(x, dtype=float).ravel()
    return float(min(len(x), len(x) / integrated_time(x)))


def mc_mean(samples) -> MomentEstimate:
    """Mean with a batch-means standard error and initial-positive-sequence ESS."""
    x = _series(samples)
    bm = batch_means(x)
    se = float(np.std(bm, ddof=1) / math.sqrt(len(bm)))
    return MomentEstimate(float(np.mean(x)), se, effective_sample_size(x), x.size)


def mc_covariance(f, g) -> MomentEstimate:
    """Covariance ``mean(fg) - mean(f) mean(g)`` with a jackknife over batches."""
    f, g = _series(f), _series(g)
    if f.size != g.size:
        raise ValueError("streams must have equal length")
    n = f.size
    value = float(np.mean(f * g) - np.mean(f) * np.mean(g))
    b, size = _batches(n)
    use = b * size
    sf = f[:use].reshape(b, size).sum(axis=1)
    sg = g[:use].reshape(b, size).sum(axis=1)
    sfg = (f[:use] * g[:use]).reshape(b, size).sum(axis=1)
    m = use - size
    jf = (sf.sum() - sf) / m
    jg = (sg.sum() - sg) / m
    jfg = (sfg.sum() - sfg) / m
    theta = jfg - jf * jg
    se = float(math.sqrt((b - 1) / b * np.sum((theta - theta.mean()) ** 2)))
    ess = effective_sample_size((f - f.mean()) * (g - g.mean()))
    return MomentEstimate(value, se, ess, n)


def moment_ratio(block, k, size=None) -> MomentEstimate:
    """``E[(sum_A Y)^3] / |A|`` or ``E[(sum_A Y)^4] / |A|^2`` from centred samples.

    ``block`` is either an ``(n, |A|)`` array of centred site values or a 1-D
    stream of block sums, in which case ``size = |A|`` is required.
    """
    if k not in (3, 4):
        raise ValueError("order must be 3 or 4")
    y = np.asarray(block, dtype=float)
    if y.ndim == 2:
        size = y.shape[1]
        y = y.sum(axis=1)
    elif size is None:
        raise ValueError("size is required for a stream of block sums")
    denom = float(size) if k == 3 else float(size) ** 2
    return mc_mean(y**k / denom)


def fit_exponential_decay(distances, magnitudes, noise_floor=None, std_errors=None) -> DecayFit:
    """Fit ``c = A exp(-rate d)`` on points with ``|c|`` above the noise floor.

    The default floor is three times the largest standard error when
    ``std_errors`` are given (sampled inputs), else 1e-11.
    """
    d = np.asarray(distances, dtype=float)
    c = np.abs(np.asarray(magnitudes, dtype=float))
    if noise_floor is None:
        noise_floor = 3.0 * float(np.max(std_errors)) if std_errors is not None else DETERMINISTIC_FLOOR
    order = np.lexsort((c, d))
    d, c = d[order], c[order]
    keep = c > noise_floor
    if keep.sum() < 3:
        raise TooFewPoints(f"{int(keep.sum())} points above noise floor {noise_floor:.3g}; need 3")
    res = stats.linregress(d[keep], np.log(c[keep]))
    return DecayFit(-float(res.slope), float(math.exp(res.intercept)), float(res.rvalue**2), int(keep.sum()), float(noise_floor))


def fit_power_law(sizes, deltas) -> PowerLawFit:
    """Least squares on ``(log N, log Delta)`` with a 95% t-interval for the slope."""
    n = np.asarray(sizes, dtype=float)
    y = np.asarray(deltas, dtype=float)
    if n.size < 4:
        raise TooFewPoints(f"power-law fit needs at least 4 points, got {n.size}")
    if np.any(y <= 0) or np.any(n <= 0):
        raise NonPositiveValue("power-law fit needs positive sizes and values")
    order = np.lexsort((y, n))
    res = stats.linregress(np.log(n[order]), np.log(y[order]))
    half = float(stats.t.ppf(0.975, n.size - 2) * res.stderr)
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 1.0
    return PowerLawFit(float(res.slope), float(res.intercept), r2, (res.slope - half, res.slope + half))
