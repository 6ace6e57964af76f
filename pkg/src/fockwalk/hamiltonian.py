"""Hamiltonian kernels and matrix-free apply operations on the truncated Fock space.

All blocks are translation invariant, so the free parts act as circular
convolutions (diagonal in the discrete Fourier basis) and the cubic
interaction factorizes through the two-point kernel S.  The per-sector
operators are:

    one particle : (H psi)(y)  = a sum_x h1(y-x) psi(x) + E0 psi(y)
    two particle : h1 convolved over each coordinate on the full symmetric
                   N x N grid, plus 2 E0 psi
    1 <-> 2      : <y|H|x1 x2> = 2 lambda sum_x S(y-x) S(x1-x) S(x2-x)

The two-particle state is evolved on the full symmetric grid Psi2(x1, x2)
(no occupancy normalization factors); conversion to orthonormal ordered-pair
amplitudes, with the 1/sqrt(2) factor on the diagonal, happens only at the
jump-process and I/O boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fockconfig import SectorIndexer
from .lattice import LatticeSpec, dispersion_fft_order, two_point_s, vacuum_energy

__all__ = [
    "KernelTable",
    "HamiltonianBlocks",
    "build_h1",
    "massless_kernel",
    "build_blocks",
    "apply_h1",
    "apply_h2_free",
    "apply_interaction",
    "apply_full",
    "dense_configuration_hamiltonian",
]

_SYMMETRY_TOL = 1e-10


def massless_kernel(spec: LatticeSpec) -> np.ndarray:
    """Closed form of the massless jump kernel K(n) for n = 0 .. N-1.

    K(n) = (4/N) sin(pi/N) / (cos(2 pi n/N) - cos(pi/N)), equal to the
    direct momentum sum 4a sum_p |sin(a p / 2)| exp(i a p n).  The
    denominator is evaluated as the product
    -2 sin(pi (2n+1)/2N) sin(pi (2n-1)/2N), which is the same quantity
    without the catastrophic cancellation the difference of cosines
    suffers for n << N at large N.  K(-n) = K(n) and the denominator
    never vanishes at integer n.
    """
    n_sites = spec.n_sites
    n = np.arange(n_sites // 2 + 1, dtype=np.float64)
    den = -2.0 * np.sin(np.pi * (2 * n + 1) / (2 * n_sites)) * np.sin(
        np.pi * (2 * n - 1) / (2 * n_sites)
    )
    half = (4.0 / n_sites) * np.sin(np.pi / n_sites) / den
    full = np.empty(n_sites)
    full[: n_sites // 2 + 1] = half
    full[n_sites // 2 + 1 :] = half[1 : n_sites // 2][::-1]
    return full


def build_h1(spec: LatticeSpec) -> np.ndarray:
    """One-particle kernel h1(n) = sum_p omega_p exp(i p a n), n = 0 .. N-1.

    Real and reflection symmetric; excludes the E0 delta term.  For mu = 0
    it equals K(n) / (2 a^2).
    """
    w = dispersion_fft_order(spec)
    h = np.fft.ifft(w) * (spec.n_sites / spec.length)
    imax = np.max(np.abs(h.imag))
    if imax > 1e-12 * max(1.0, np.max(np.abs(h.real))):
        raise AssertionError(f"h1 not real to tolerance: max|Im| = {imax:.3e}")
    return np.ascontiguousarray(h.real)


@dataclass(frozen=True)
class KernelTable:
    """Precomputed translation-invariant kernels for one lattice spec.

    ``s`` is None when mu = 0 (the two-point kernel is undefined there and
    the interaction sector is unavailable).
    """

    spec: LatticeSpec
    h1: np.ndarray = field(repr=False)
    k_massless: np.ndarray = field(repr=False)
    s: np.ndarray | None = field(repr=False)


class HamiltonianBlocks:
    """Kernels plus the cached spectral data the apply operations consume.

    Immutable after construction; safe to share read-only across trajectory
    samplers.  The interaction element table ``w0`` and the Fourier gather
    indices are built eagerly when coupling > 0 (interacting runs use
    N <= ~1000, where the N x N tables are a few MB).
    """

    def __init__(self, spec: LatticeSpec):
        self.spec = spec
        self.e0 = vacuum_energy(spec)
        self.coupling = spec.coupling
        self.omega_fft = dispersion_fft_order(spec)
        s_kernel = two_point_s(spec) if spec.mu > 0 else None
        self.kernels = KernelTable(
            spec=spec, h1=build_h1(spec), k_massless=massless_kernel(spec), s=s_kernel
        )
        if spec.coupling > 0:
            if s_kernel is None:
                raise ValueError("interacting blocks require mu > 0 (S kernel undefined at mu = 0)")
            n = spec.n_sites
            self._s_coeff = 1.0 / np.sqrt(2.0 * self.omega_fft)  # (2 omega_k)^(-1/2)
            idx = np.arange(n)
            self._sum_idx = np.add.outer(idx, idx) % n
            self._diff_idx = np.subtract.outer(idx, idx) % n
            self.w0 = self._build_w0()
        else:
            self._s_coeff = None
            self._sum_idx = None
            self._diff_idx = None
            self.w0 = None

    def _build_w0(self) -> np.ndarray:
        # W0(u, v) = 2 lambda a sum_z S(z) S(u-z) S(v-z); Fourier:
        # fft2(W0) = (2 lambda / a^2) s(k1) s(k2) s((k1+k2) % N)
        s = self._s_coeff
        lam = self.spec.coupling
        a = self.spec.spacing
        what = (2.0 * lam / a**2) * np.outer(s, s) * s[self._sum_idx]
        w0 = np.fft.ifft2(what)
        assert np.max(np.abs(w0.imag)) <= 1e-10 * max(1.0, np.max(np.abs(w0.real)))
        return np.ascontiguousarray(w0.real)


def build_blocks(spec: LatticeSpec) -> HamiltonianBlocks:
    return HamiltonianBlocks(spec)


def apply_h1(psi1: np.ndarray, blocks: HamiltonianBlocks) -> np.ndarray:
    """One-particle sector apply: circular h1 convolution plus E0 psi."""
    if psi1.shape != (blocks.spec.n_sites,):
        raise ValueError(f"psi1 must have shape ({blocks.spec.n_sites},), got {psi1.shape}")
    out = np.fft.ifft(blocks.omega_fft * np.fft.fft(psi1))
    out += blocks.e0 * psi1
    return out


def _check_symmetric(psi2: np.ndarray) -> None:
    dev = np.max(np.abs(psi2 - psi2.T))
    scale = max(1.0, float(np.max(np.abs(psi2))))
    if dev > _SYMMETRY_TOL * scale:
        raise ValueError(f"two-particle amplitude grid not symmetric: deviation {dev:.3e}")


def apply_h2_free(psi2: np.ndarray, blocks: HamiltonianBlocks) -> np.ndarray:
    """Free two-particle apply on the full symmetric grid.

    h1 acts on each coordinate, plus 2 E0 psi (one vacuum constant per
    particle, matching the per-sector matrix-element convention).  Input
    symmetry is required and preserved.
    """
    n = blocks.spec.n_sites
    if psi2.shape != (n, n):
        raise ValueError(f"psi2 must have shape ({n}, {n}), got {psi2.shape}")
    _check_symmetric(psi2)
    w = blocks.omega_fft
    out = np.fft.ifft2((w[:, None] + w[None, :]) * np.fft.fft2(psi2))
    out += 2.0 * blocks.e0 * psi2
    return out


def apply_interaction(psi1: np.ndarray, psi2: np.ndarray, blocks: HamiltonianBlocks):
    """Cubic 1 <-> 2 coupling, factored through the S kernel.

    Returns (dpsi1, dpsi2) where dpsi1 collects the two-particle amplitude
    into the one-particle sector and dpsi2 the reverse.  Factoring the
    triple S sum through the Fourier basis makes one apply cost a couple of
    N x N transforms instead of the O(N^4) literal sums; the pair is the
    weighted adjoint of each other, so the combined operator is Hermitian
    under the physical inner product.
    """
    if blocks.spec.mu <= 0:
        raise ValueError("interaction apply requires mu > 0 (S kernel undefined)")
    lam = blocks.coupling
    n = blocks.spec.n_sites
    a = blocks.spec.spacing
    if lam == 0.0:
        return np.zeros(n, dtype=complex), np.zeros((n, n), dtype=complex)
    s = blocks._s_coeff
    # 2 -> 1:  dpsi1 = lambda * conv(S, G),  G = double S contraction of psi2
    psi2_hat = np.fft.fft2(psi2)
    k2 = blocks._diff_idx.T  # k2[k1, q] = (q - k1) % N
    gathered = s[:, None] * s[k2] * psi2_hat[np.arange(n)[:, None], k2]
    t_tilde = gathered.sum(axis=0)
    dpsi1 = (lam / n) * np.fft.ifft(s * t_tilde)
    # 1 -> 2:  dpsi2(x1, x2) = 2 lambda a sum_z S(x1-z) S(x2-z) (S conv psi1)(z)
    u = s * np.fft.fft(psi1)
    dpsi2 = np.fft.ifft2((2.0 * lam / a) * np.outer(s, s) * u[blocks._sum_idx])
    return dpsi1, dpsi2


def apply_full(psi1: np.ndarray, psi2: np.ndarray, blocks: HamiltonianBlocks):
    """Apply the full truncated-space Hamiltonian to (psi1, psi2).

    When the sectors couple (coupling > 0) both sectors carry the same
    vacuum constant E0: the constant is then a global energy shift, while
    any sector-relative constant would act as an artificial detuning of the
    1 <-> 2 transitions.  At coupling = 0 the sectors are decoupled, the
    relative constant is unobservable, and the per-sector conventions
    (E0 and 2 E0) are kept so the free applies and the exact free evolution
    agree state-for-state.
    """
    out1 = apply_h1(psi1, blocks)
    out2 = apply_h2_free(psi2, blocks)
    if blocks.coupling > 0:
        out2 -= blocks.e0 * psi2  # uniform constant across coupled sectors
        d1, d2 = apply_interaction(psi1, psi2, blocks)
        out1 += d1
        out2 += d2
    return out1, out2


def _norm_factors(indexer: SectorIndexer) -> np.ndarray:
    """Occupancy factors 1 or 1/sqrt(2) for the ordered-pair sector."""
    return np.array(
        [1.0 / np.sqrt(2.0) if c.sites[0] == c.sites[1] else 1.0
         for c in indexer.all_configurations()]
    )


def dense_configuration_hamiltonian(blocks: HamiltonianBlocks, max_sites: int = 64):
    """Dense Hamiltonian over the orthonormal configuration basis (small N).

    Basis order: the N one-particle states, then the N(N+1)/2 ordered pairs
    in lexicographic rank order.  Uses the same kernels as the matrix-free
    applies; intended for the full rate matrices of small ensemble runs,
    not for production evolution.  Sector constants follow
    :func:`apply_full`.
    """
    spec = blocks.spec
    n = spec.n_sites
    if n > max_sites:
        raise ValueError(f"dense build capped at {max_sites} sites, got {n}")
    a = spec.spacing
    h1 = blocks.kernels.h1
    pairs = SectorIndexer(m=2, n_sites=n)
    dim = n + pairs.dimension
    h = np.zeros((dim, dim))

    # one-particle block
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    h[:n, :n] = a * h1[(i - j) % n]

    pair_sites = np.array([c.sites for c in pairs.all_configurations()])
    nf = _norm_factors(pairs)

    # two-particle block: the four delta terms between ordered pairs
    t1 = pair_sites[:, 0][:, None]
    t2 = pair_sites[:, 1][:, None]
    x1 = pair_sites[:, 0][None, :]
    x2 = pair_sites[:, 1][None, :]
    elem = (
        h1[(t1 - x1) % n] * (t2 == x2)
        + h1[(t1 - x2) % n] * (t2 == x1)
        + h1[(t2 - x1) % n] * (t1 == x2)
        + h1[(t2 - x2) % n] * (t1 == x1)
    )
    h[n:, n:] = a * nf[:, None] * nf[None, :] * elem

    if blocks.coupling > 0:
        w0 = blocks.w0
        y = np.arange(n)[:, None]
        h12 = a**1.5 * nf[None, :] * w0[
            (pair_sites[:, 0][None, :] - y) % n, (pair_sites[:, 1][None, :] - y) % n
        ]
        h[:n, n:] = h12
        h[n:, :n] = h12.T
        const2 = blocks.e0
    else:
        const2 = 2.0 * blocks.e0

    h[:n, :n] += blocks.e0 * np.eye(n)
    h[n:, n:] += const2 * np.eye(pairs.dimension)
    return h
