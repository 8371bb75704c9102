"""Lattice model: potentials, banded couplings, Hamiltonian and local energy updates.

Sites are indexed ``0 .. N-1``. The Hamiltonian is

    H(x) = sum_i [psi_b(x_i) + s_i x_i] + 1/2 x^T M x,     M_ii = 1,

and the grand canonical log-density is ``sigma * sum(x) - H(x)``, so the
effective linear field on site ``i`` is ``sigma - s_i``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    ConstraintViolation,
    DimensionMismatch,
    NonSymmetric,
    NotBanded,
    NotDiagonallyDominant,
    SameSite,
)

#: absolute tolerance on the mean for configurations tagged with a mean-spin constraint
CONSTRAINT_TOL = 1e-10


def _frozen_array(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SingleSitePotential:
    """Bounded perturbation ``psi_b`` of the harmonic single-site potential.

    Only two kinds exist: ``"zero"`` and ``"cosine"`` with
    ``psi_b(z) = a * cos(b * z)``. Both have bounded value and bounded first
    and second derivatives.
    """

    kind: str = "zero"
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "cosine"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "zero" and (self.a != 0.0 or self.b != 0.0):
            object.__setattr__(self, "a", 0.0)
            object.__setattr__(self, "b", 0.0)
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("potential parameters must be finite")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def cosine(cls, a=1.0, b=2.0):
        return cls("cosine", float(a), float(b))

    @property
    def is_zero(self):
        return self.kind == "zero" or self.a == 0.0

    def value(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        return self.a * np.cos(self.b * z)

    def d1(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        return -self.a * self.b * np.sin(self.b * z)

    def d2(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        return -self.a * self.b**2 * np.cos(self.b * z)

    def full(self, z):
        """The full single-site potential ``z**2/2 + psi_b(z)``."""
        z = np.asarray(z, dtype=float)
        return 0.5 * z * z + self.value(z)

    def sup_norms(self):
        """``(|psi_b|_inf, |psi_b'|_inf, |psi_b''|_inf)``."""
        if self.kind == "zero":
            return (0.0, 0.0, 0.0)
        a, b = abs(self.a), abs(self.b)
        return (a, a * b, a * b * b)

    def code(self):
        """Integer tag used by the compiled sampler kernels."""
        return 0 if self.is_zero else 1


class InteractionMatrix:
    """Banded symmetric coupling matrix with implicit unit diagonal.

    ``upper[d-1, i]`` holds ``M[i, i+d]`` and ``lower[d-1, i]`` holds
    ``M[i+d, i]`` for ``d = 1..R``; entries with ``i + d >= N`` are unused
    and kept at zero. The two bands are stored separately only so that
    asymmetric input can be detected and reported by :func:`validate_model`.
    """

    def __init__(self, N, R, upper, lower=None):
        N, R = int(N), int(R)
        if N < 1:
            raise ValueError("N must be positive")
        if R < 0:
            raise ValueError("R must be nonnegative")
        upper = np.zeros((R, N)) if upper is None else np.array(upper, dtype=float).reshape(R, N)
        lower = upper.copy() if lower is None else np.array(lower, dtype=float).reshape(R, N)
        for d in range(1, R + 1):
            upper[d - 1, max(N - d, 0):] = 0.0
            lower[d - 1, max(N - d, 0):] = 0.0
        self.N = N
        self.R = R
        self.upper = _frozen_array(upper)
        self.lower = _frozen_array(lower)

    # -- constructors -------------------------------------------------

    @classmethod
    def uniform(cls, N, R, coupling):
        """Translation-invariant couplings; ``coupling`` is a scalar or one value per distance."""
        c = np.broadcast_to(np.asarray(coupling, dtype=float), (R,)) if R > 0 else np.zeros(0)
        upper = np.repeat(c[:, None], N, axis=1) if R > 0 else np.zeros((0, N))
        return cls(N, R, upper)

    @classmethod
    def identity(cls, N):
        return cls(N, 1, np.zeros((1, N)))

    @classmethod
    def from_pairs(cls, N, R, pairs):
        """Build from ``{(i, j): M_ij}``. A pair given in one orientation only is mirrored."""
        upper = np.zeros((R, N))
        lower = np.zeros((R, N))
        seen_u = np.zeros((R, N), dtype=bool)
        seen_l = np.zeros((R, N), dtype=bool)
        for (i, j), v in pairs.items():
            i, j = int(i), int(j)
            if not (0 <= i < N and 0 <= j < N) or i == j:
                raise ValueError(f"invalid coupling index ({i}, {j}) for N={N}")
            d = abs(i - j)
            if d > R:
                raise NotBanded(i, j, R)
            if i < j:
                upper[d - 1, i] = v
                seen_u[d - 1, i] = True
            else:
                lower[d - 1, j] = v
                seen_l[d - 1, j] = True
        only_u = seen_u & ~seen_l
        only_l = seen_l & ~seen_u
        lower[only_u] = upper[only_u]
        upper[only_l] = lower[only_l]
        return cls(N, R, upper, lower)

    @classmethod
    def from_dense(cls, M, R=None):
        M = np.asarray(M, dtype=float)
        N = M.shape[0]
        if M.shape != (N, N):
            raise DimensionMismatch("coupling matrix", N, M.shape)
        off = np.argwhere((M != 0) & ~np.eye(N, dtype=bool))
        reach = int(np.max(np.abs(off[:, 0] - off[:, 1]))) if len(off) else 0
        if R is None:
            R = max(reach, 1)
        elif reach > R:
            i, j = next((int(a), int(b)) for a, b in off if abs(a - b) > R)
            raise NotBanded(i, j, R)
        diag = np.diag(M)
        if not np.allclose(diag, 1.0, rtol=0, atol=1e-14):
            bad = int(np.argmax(np.abs(diag - 1.0)))
            raise ValueError(f"diagonal must be 1 (M[{bad},{bad}]={diag[bad]!r})")
        upper = np.zeros((R, N))
        lower = np.zeros((R, N))
        for d in range(1, R + 1):
            upper[d - 1, : N - d] = np.diagonal(M, d)
            lower[d - 1, : N - d] = np.diagonal(M, -d)
        return cls(N, R, upper, lower)

    # -- views --------------------------------------------------------

    def bond(self, d=1):
        """Couplings ``M[i, i+d]`` for ``i = 0..N-d-1``."""
        return self.upper[d - 1, : self.N - d]

    def dense(self):
        M = np.eye(self.N)
        for d in range(1, self.R + 1):
            n = self.N - d
            if n <= 0:
                continue
            idx = np.arange(n)
            M[idx, idx + d] = self.upper[d - 1, :n]
            M[idx + d, idx] = self.lower[d - 1, :n]
        return M

    def banded_upper(self):
        """Upper banded form ``ab[R + i - j, j] = M[i, j]`` used by scipy banded solvers."""
        R, N = self.R, self.N
        ab = np.zeros((R + 1, N))
        ab[R] = 1.0
        for d in range(1, R + 1):
            if N - d > 0:
                ab[R - d, d:] = self.upper[d - 1, : N - d]
        return ab

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        y = x.copy()
        for d in range(1, self.R + 1):
            n = self.N - d
            if n <= 0:
                continue
            y[..., :n] += self.upper[d - 1, :n] * x[..., d:]
            y[..., d:] += self.lower[d - 1, :n] * x[..., :n]
        return y

    def offdiag_abs_row_sums(self):
        sums = np.zeros(self.N)
        for d in range(1, self.R + 1):
            n = self.N - d
            if n <= 0:
                continue
            sums[:n] += np.abs(self.upper[d - 1, :n])
            sums[d:] += np.abs(self.lower[d - 1, :n])
        return sums

    def is_uniform(self):
        return all(np.ptp(self.bond(d)) == 0.0 if self.N - d > 0 else True for d in range(1, self.R + 1))

    def to_dict(self):
        return {"N": self.N, "R": self.R, "upper": self.upper.tolist(), "lower": self.lower.tolist()}

    def __repr__(self):
        return f"InteractionMatrix(N={self.N}, R={self.R})"


@dataclass(frozen=True)
class ValidationReport:
    delta: float
    row_margins: np.ndarray = field(repr=False)
    sup_norms: tuple
    ok: bool = True


def validate_model(spec) -> ValidationReport:
    """Check symmetry, bandedness, strict diagonal dominance and field length.

    Raises the matching :mod:`spinchain.errors` exception naming the first
    offending index; returns the margin report otherwise.
    """
    J = spec.interaction
    N, R = J.N, J.R
    s = np.asarray(spec.s)
    if s.shape != (N,):
        raise DimensionMismatch("external field s", N, s.shape[0] if s.ndim else 0)
    if J.upper.shape != (R, N) or J.lower.shape != (R, N):
        raise DimensionMismatch("coupling bands", (R, N), J.upper.shape)
    for d in range(1, R + 1):
        n = N - d
        if n <= 0:
            continue
        diff = np.nonzero(J.upper[d - 1, :n] != J.lower[d - 1, :n])[0]
        if len(diff):
            i = int(diff[0])
            raise NonSymmetric(i, i + d, float(J.upper[d - 1, i]), float(J.lower[d - 1, i]))
    margins = 1.0 - J.offdiag_abs_row_sums()
    bad = np.nonzero(margins <= 0.0)[0]
    if len(bad):
        raise NotDiagonallyDominant(int(bad[0]), float(margins[bad[0]]))
    if not np.all(np.isfinite(s)):
        raise ValueError("external field must be finite")
    return ValidationReport(float(margins.min()), margins, spec.potential.sup_norms())


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Complete, validated model description.

    ``sigma`` is the grand canonical field; canonical computations never read it.
    """

    interaction: InteractionMatrix
    potential: SingleSitePotential = SingleSitePotential()
    s: np.ndarray = None
    sigma: float = 0.0
    report: ValidationReport = field(init=False, repr=False)

    def __post_init__(self):
        N = self.interaction.N
        s = np.zeros(N) if self.s is None else self.s
        object.__setattr__(self, "s", _frozen_array(np.atleast_1d(np.asarray(s, dtype=float))))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "report", validate_model(self))

    @property
    def N(self):
        return self.interaction.N

    @property
    def R(self):
        return self.interaction.R

    @property
    def delta(self):
        return self.report.delta

    def linear_field(self, sigma=None):
        """``sigma - s_i`` per site."""
        sigma = self.sigma if sigma is None else sigma
        return sigma - self.s

    def replace(self, **changes):
        kw = {"interaction": self.interaction, "potential": self.potential, "s": self.s, "sigma": self.sigma}
        kw.update(changes)
        return ModelSpec(**kw)

    def with_sigma(self, sigma):
        return self.replace(sigma=sigma)

    def to_dict(self):
        return {
            "N": self.N,
            "R": self.R,
            "interaction": self.interaction.to_dict(),
            "potential": dataclasses.asdict(self.potential),
            "s": self.s.tolist(),
            "sigma": self.sigma,
        }

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def is_symmetric_under_flip(self):
        """True when ``x -> -x`` leaves the gce invariant (zero fields, even potential)."""
        return self.sigma == 0.0 and not np.any(self.s)

    def __repr__(self):
        return (
            f"ModelSpec(N={self.N}, R={self.R}, potential={self.potential.kind}"
            f"({self.potential.a}, {self.potential.b}), sigma={self.sigma}, delta={self.delta:.4g})"
        )


@dataclass(frozen=True, eq=False)
class SpinConfig:
    """A point of R^N, optionally tagged as lying on the hyperplane ``mean(x) = m``."""

    x: np.ndarray
    m: Optional[float] = None

    def __post_init__(self):
        x = _frozen_array(np.atleast_1d(self.x))
        object.__setattr__(self, "x", x)
        if self.m is not None:
            err = abs(float(np.mean(x)) - self.m)
            if not err <= CONSTRAINT_TOL:
                raise ConstraintViolation(f"mean {np.mean(x)!r} differs from m={self.m!r} by {err:.3g}")

    @property
    def constrained(self):
        return self.m is not None

    def __len__(self):
        return len(self.x)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.x, dtype=dtype)


def _coords(x):
    if isinstance(x, SpinConfig):
        return x.x
    return np.asarray(x, dtype=float)


class Observable:
    """A function of the spins restricted to a finite support.

    ``fn`` is vectorized: it receives an array of shape ``(..., len(support))``
    holding the support coordinates in order and returns shape ``(...)``.
    Additive observables ``sum_k c_k phi(x_k)`` also carry their site terms so
    the transfer backend can propagate them without tensor windows.
    """

    def __init__(self, support, fn, grad_bound=np.inf, name="", terms=None):
        support = tuple(int(i) for i in support)
        if len(set(support)) != len(support):
            raise ValueError("support has repeated sites")
        self.support = support
        self.fn = fn
        self.grad_bound = float(grad_bound)
        self.name = name or "f"
        # (sites, coeffs, phi) for additive observables, else None
        self.terms = terms

    @classmethod
    def window(cls, support, fn, grad_bound=np.inf, name=""):
        return cls(support, fn, grad_bound, name)

    @classmethod
    def spin(cls, i):
        return cls((i,), lambda y: y[..., 0], 1.0, f"x{i}", terms=(np.array([i]), np.array([1.0]), None))

    @classmethod
    def site_sum(cls, sites, coeffs=None, phi=None, phi_grad_bound=1.0, name=""):
        """``sum_k coeffs[k] * phi(x[sites[k]])``; ``phi`` defaults to the identity."""
        sites = np.asarray(sites, dtype=int)
        coeffs = np.ones(len(sites)) if coeffs is None else np.asarray(coeffs, dtype=float)
        if coeffs.shape != sites.shape:
            raise DimensionMismatch("site_sum coefficients", len(sites), len(coeffs))
        order = np.argsort(sites)
        sites, coeffs = sites[order], coeffs[order]
        if phi is None:
            fn = lambda y: y @ coeffs  # noqa: E731
        else:
            fn = lambda y: phi(y) @ coeffs  # noqa: E731
        bound = float(np.sqrt(np.sum(coeffs**2))) * phi_grad_bound
        return cls(sites, fn, bound, name or "site_sum", terms=(sites, coeffs, phi))

    @classmethod
    def mean_spin(cls, N, sites=None):
        sites = np.arange(N) if sites is None else np.asarray(sites)
        return cls.site_sum(sites, np.full(len(sites), 1.0 / len(sites)), name="mean_spin")

    @classmethod
    def constant(cls, c=1.0):
        return cls((), lambda y: np.full(y.shape[:-1], float(c)), 0.0, f"const{c:g}")

    @property
    def additive(self):
        return self.terms is not None

    @property
    def is_contiguous(self):
        s = sorted(self.support)
        return not s or s[-1] - s[0] + 1 == len(s)

    @property
    def span(self):
        """``(first, last)`` site of the support, or None for constants."""
        if not self.support:
            return None
        return min(self.support), max(self.support)

    def phi_values(self, z):
        """Site-term values ``phi(z)`` on a grid (identity when phi is None)."""
        _, _, phi = self.terms
        z = np.asarray(z, dtype=float)
        return z if phi is None else phi(z)

    def __call__(self, x):
        x = _coords(x)
        return self.fn(x[..., list(self.support)])

    def __repr__(self):
        return f"Observable({self.name}, support={self.support})"


# -- energy ---------------------------------------------------------------


def hamiltonian(spec: ModelSpec, x):
    """Energy from the unit-diagonal band form; vectorized over leading axes."""
    x = _coords(x)
    if x.shape[-1] != spec.N:
        raise DimensionMismatch("configuration", spec.N, x.shape[-1])
    J = spec.interaction
    e = np.sum(spec.potential.value(x) + spec.s * x + 0.5 * x * x, axis=-1)
    for d in range(1, J.R + 1):
        n = J.N - d
        if n > 0:
            # 1/2 (M_ij + M_ji) x_i x_j over the pair; equal halves when symmetric
            c = 0.5 * (J.upper[d - 1, :n] + J.lower[d - 1, :n])
            e = e + np.sum(c * x[..., :n] * x[..., d:], axis=-1)
    return e


def gce_log_density_unnormalized(spec: ModelSpec, x, sigma=None):
    x = _coords(x)
    sigma = spec.sigma if sigma is None else sigma
    return sigma * np.sum(x, axis=-1) - hamiltonian(spec, x)


def _neighbor_field(spec, x, i):
    """``sum_{j != i} M_ij x_j``."""
    J = spec.interaction
    acc = 0.0
    for d in range(1, J.R + 1):
        if i + d < J.N:
            acc += J.upper[d - 1, i] * x[i + d]
        if i - d >= 0:
            acc += J.lower[d - 1, i - d] * x[i - d]
    return acc


def energy_delta_single(spec: ModelSpec, x, i, x_new, sigma=None):
    """Change of ``H - sigma*sum(x)`` when site ``i`` moves to ``x_new``; O(R) work."""
    x = _coords(x)
    i = int(i)
    if not 0 <= i < spec.N:
        raise IndexError(f"site {i} out of range")
    sigma = spec.sigma if sigma is None else sigma
    old = x[i]
    d = x_new - old
    pot = spec.potential
    return float(
        pot.value(x_new) - pot.value(old)
        + (spec.s[i] - sigma) * d
        + 0.5 * (x_new * x_new - old * old)
        + d * _neighbor_field(spec, x, i)
    )


def energy_delta_pair(spec: ModelSpec, x, i, j, eta):
    """Change of ``H`` under ``(x_i, x_j) -> (x_i + eta, x_j - eta)``; sigma never enters."""
    x = _coords(x)
    i, j = int(i), int(j)
    if i == j:
        raise SameSite(f"pair move needs two distinct sites, got {i} twice")
    pot = spec.potential
    xi, xj = x[i], x[j]
    yi, yj = xi + eta, xj - eta
    dh = (
        pot.value(yi) - pot.value(xi)
        + pot.value(yj) - pot.value(xj)
        + (spec.s[i] - spec.s[j]) * eta
        + 0.5 * (yi * yi - xi * xi + yj * yj - xj * xj)
        + eta * (_neighbor_field(spec, x, i) - _neighbor_field(spec, x, j))
    )
    dist = abs(i - j)
    if dist <= spec.R:
        lo = min(i, j)
        dh -= spec.interaction.upper[dist - 1, lo] * eta * eta
    return float(dh)


def hamiltonian_gradient(spec: ModelSpec, x):
    x = _coords(x)
    return spec.potential.d1(x) + spec.s + spec.interaction.matvec(x)


# -- convenience builders --------------------------------------------------


def alternating_field(N, amplitude):
    """``s_i = amplitude * (-1)**i``."""
    return amplitude * np.where(np.arange(N) % 2 == 0, 1.0, -1.0)


def chain_spec(N, coupling=0.0, R=1, potential=None, s=None, sigma=0.0) -> ModelSpec:
    """Uniform-coupling chain; ``s`` may be a scalar, an array, or None."""
    if s is None:
        s = np.zeros(N)
    elif np.ndim(s) == 0:
        s = np.full(N, float(s))
    return ModelSpec(
        InteractionMatrix.uniform(N, R, coupling),
        potential or SingleSitePotential.zero(),
        s,
        sigma,
    )


def exchangeable_spec(N, coupling, potential=None, s=0.0) -> ModelSpec:
    """Fully connected model ``M_ij = coupling`` for all ``i != j``; permutation invariant."""
    return chain_spec(N, coupling, R=max(N - 1, 1), potential=potential, s=s)

