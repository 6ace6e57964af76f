"""Lattice geometry, dispersion relation, and the shared spectral sums.

Everything lives on a periodic 1-dimensional lattice with an even number of
sites N and spacing a.  Physical coordinates are x = n*a with
n = -N/2+1, ..., N/2; internally sites are addressed by the offset index
n_off = n + N/2 - 1 in [0, N).  Momenta are p_k = 2*pi*k/L with
k = -N/2+1, ..., N/2 and L = N*a.

The two summation conventions used throughout,

    sum_x f = a * sum_n f(a n)          (site sum, carries the measure a)
    sum_p f = (1/L) * sum_k f(2 pi k/L) (momentum sum, carries 1/L)

are implemented here once (``site_sum``, ``momentum_sum``) and reused by the
other modules.  With these conventions sum_p exp(-i p (y-x)) equals the
dimensionful Kronecker delta (1/a) * delta_{m,n}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LatticeSpec",
    "MomentumGrid",
    "DivergentModeError",
    "dispersion",
    "dispersion_fft_order",
    "vacuum_energy",
    "two_point_s",
    "site_sum",
    "momentum_sum",
    "site_coordinates",
    "chunked_compensated_sum",
]


class DivergentModeError(ValueError):
    """A spectral sum contains a divergent momentum mode (mu = 0 with 1/sqrt(omega))."""


@dataclass(frozen=True)
class LatticeSpec:
    """Physical and numerical parameters of one lattice model.

    Parameters
    ----------
    n_sites : int
        Number of lattice sites N; must be even and >= 2 so the momentum
        grid k = -N/2+1 .. N/2 is symmetric under k -> -k up to the single
        endpoint k = N/2.
    spacing : float
        Lattice spacing a > 0.
    mu : float
        Mass parameter (inverse length), >= 0.
    coupling : float
        Cubic self-interaction strength lambda (inverse length squared),
        >= 0.  The dimensionless combination quoted in run configs is
        a^2 * lambda.
    m_max : int
        Fock-space truncation; this artifact supports 0, 1 or 2.
    """

    n_sites: int
    spacing: float = 1.0
    mu: float = 0.0
    coupling: float = 0.0
    m_max: int = 2

    def __post_init__(self):
        if self.n_sites < 2 or self.n_sites % 2 != 0:
            raise ValueError(f"n_sites must be even and >= 2, got {self.n_sites}")
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.coupling < 0:
            raise ValueError(f"coupling must be >= 0, got {self.coupling}")
        if not 0 <= self.m_max <= 2:
            raise ValueError(f"m_max must be 0, 1 or 2, got {self.m_max}")

    @property
    def length(self) -> float:
        """System size L = N*a (exact product, no rounding)."""
        return self.n_sites * self.spacing

    @property
    def momentum_grid(self) -> "MomentumGrid":
        return MomentumGrid.for_spec(self)


@dataclass(frozen=True)
class MomentumGrid:
    """The lattice momentum grid, stored as integer wave numbers.

    Keeping the integers k (rather than floats p = 2*pi*k/L) makes the
    p <-> -p pairing exact at any N; derived momenta are computed on demand.
    """

    n_sites: int
    length: float
    k_values: np.ndarray = field(repr=False)

    @classmethod
    def for_spec(cls, spec: LatticeSpec) -> "MomentumGrid":
        n = spec.n_sites
        k = np.arange(-n // 2 + 1, n // 2 + 1, dtype=np.int64)
        k.setflags(write=False)
        return cls(n_sites=n, length=spec.length, k_values=k)

    @property
    def values(self) -> np.ndarray:
        """Momenta p_k = 2*pi*k/L in grid order (k ascending)."""
        return 2.0 * np.pi * self.k_values / self.length

    def __len__(self) -> int:
        return self.n_sites


def dispersion(spec: LatticeSpec, p):
    """Single-particle energy omega_p = sqrt(mu^2 + (2 - 2 cos(a p))/a^2).

    Even in p, bounded below by mu, and total on the momentum grid.
    Accepts scalars or arrays.
    """
    a = spec.spacing
    return np.sqrt(spec.mu**2 + (2.0 - 2.0 * np.cos(a * np.asarray(p))) / a**2)


def _omega_of_k(spec: LatticeSpec, k):
    # 2 - 2 cos(2 pi k / N) evaluated via sin^2 for full relative precision
    # at small k/N; matters for the N ~ 1e8 deterministic sums.
    s = np.sin(np.pi * np.asarray(k, dtype=np.float64) / spec.n_sites)
    return np.sqrt(spec.mu**2 + 4.0 * s * s / spec.spacing**2)


def dispersion_fft_order(spec: LatticeSpec) -> np.ndarray:
    """omega_k arranged in numpy FFT frequency order (k = 0, 1, ..., -1).

    omega is even in k, so the k = -N/2 FFT slot and the grid endpoint
    k = +N/2 carry the same value.
    """
    k = np.fft.fftfreq(spec.n_sites, d=1.0 / spec.n_sites)
    return _omega_of_k(spec, k)


def site_sum(spec: LatticeSpec, values) -> complex | float:
    """Measure-weighted site sum: a * sum_n values[n]."""
    return spec.spacing * np.sum(values)


def momentum_sum(spec: LatticeSpec, values) -> complex | float:
    """Measure-weighted momentum sum: (1/L) * sum_k values[k]."""
    return np.sum(values) / spec.length


def site_coordinates(spec: LatticeSpec) -> np.ndarray:
    """Physical coordinates x = n*a, n = -N/2+1 .. N/2, indexed by offset site."""
    n = spec.n_sites
    return (np.arange(n) - (n // 2 - 1)) * spec.spacing


def vacuum_energy(spec: LatticeSpec) -> float:
    """Vacuum energy E0 = (1/2) L sum_p omega_p = (1/2) sum_k omega_k."""
    grid = spec.momentum_grid
    return 0.5 * math.fsum(_omega_of_k(spec, grid.k_values))


def two_point_s(spec: LatticeSpec) -> np.ndarray:
    """Two-point kernel S(n) = sum_p (2 omega_p)^(-1/2) exp(i p a n), n = 0..N-1.

    Real by the p <-> -p symmetry of the grid (the unpaired endpoint
    p = pi/a contributes a real cosine term) and reflection symmetric,
    S(n) = S(N-n).  Requires mu > 0: at mu = 0 the p = 0 mode diverges
    and no regularized massless version is defined here.
    """
    if spec.mu <= 0:
        raise DivergentModeError(
            "S(n) requires mu > 0; the zero-momentum mode (2*omega_0)^(-1/2) diverges"
        )
    w = dispersion_fft_order(spec)
    coeff = 1.0 / np.sqrt(2.0 * w)
    # (1/L) sum_k c_k exp(+2 pi i k n / N) = (N/L) ifft(c)
    s = np.fft.ifft(coeff) * (spec.n_sites / spec.length)
    imax = np.max(np.abs(s.imag))
    smax = np.max(np.abs(s.real))
    if imax > 1e-12 * smax:
        raise AssertionError(f"S(n) not real to tolerance: max|Im| = {imax:.3e}")
    return np.ascontiguousarray(s.real)


def chunked_compensated_sum(term_fn, n_terms: int, start: int = 1, chunk: int = 1 << 22):
    """Accumulate sum_{i=start}^{start+n_terms-1} term_fn(i_array) accurately.

    ``term_fn`` receives an int64 index array and returns one float64 array of
    partial terms.  Within a chunk numpy's pairwise summation is used; across
    chunks the partial sums are combined with math.fsum, which is exact.  The
    chunk size is fixed, so results are bitwise reproducible for a given
    (start, n_terms, chunk) regardless of platform threading.
    """
    partials = []
    i = start
    end = start + n_terms
    while i < end:
        j = min(i + chunk, end)
        idx = np.arange(i, j, dtype=np.int64)
        partials.append(float(np.sum(term_fn(idx))))
        i = j
    return math.fsum(partials)
