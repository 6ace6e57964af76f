"""Particle configurations (sorted site multisets) and their integer indices.

A configuration of M bosons is a non-decreasing tuple of offset site indices
in [0, N).  Its configuration index is the base-N positional code

    c = sum_{m=0}^{M-1} N^m  +  sum_{i=1}^{M} n_i * N^(i-1),

so c = 0 is the vacuum, 1..N are the one-particle states and every
M-particle index is strictly larger than every (M-1)-particle index.  Only
sorted tuples are ever encoded, which gives each physical state exactly one
canonical index (permuted tuples would map to different, unused, values).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeSpec

__all__ = [
    "Configuration",
    "SectorIndexer",
    "MalformedIndexError",
    "CapacityError",
    "encode",
    "decode",
    "encode_pair_grid",
    "enumerate_sector",
    "normalization_constant",
]

_INT64_MAX = 2**63 - 1


class MalformedIndexError(ValueError):
    """Integer does not decode to a sorted configuration for this lattice."""


class CapacityError(OverflowError):
    """Configuration index would not fit the 64-bit output encoding."""


@dataclass(frozen=True)
class Configuration:
    """A sorted multiset of occupied sites.

    ``sites`` holds offset indices in [0, N), non-decreasing; the particle
    count M is its length.
    """

    sites: tuple[int, ...]

    def __post_init__(self):
        if any(b < a for a, b in zip(self.sites, self.sites[1:])):
            raise ValueError(f"sites must be sorted non-decreasing, got {self.sites}")
        if any(s < 0 for s in self.sites):
            raise ValueError(f"sites must be non-negative, got {self.sites}")

    @property
    def m(self) -> int:
        return len(self.sites)


def _check_sites(cfg: Configuration, spec: LatticeSpec) -> None:
    if cfg.m > spec.m_max:
        raise ValueError(f"configuration has {cfg.m} particles, spec allows m_max={spec.m_max}")
    if cfg.sites and cfg.sites[-1] >= spec.n_sites:
        raise ValueError(f"site {cfg.sites[-1]} outside lattice of {spec.n_sites} sites")


def encode(cfg: Configuration, spec: LatticeSpec) -> int:
    """Map a sorted configuration to its integer index (vacuum -> 0)."""
    _check_sites(cfg, spec)
    n = spec.n_sites
    if cfg.m > 0 and n**cfg.m > _INT64_MAX:
        raise CapacityError(f"N^M = {n}^{cfg.m} exceeds the 64-bit index range")
    c = 0
    base = 1
    for i, site in enumerate(cfg.sites):
        c += base  # threshold term N^i
        c += site * base
        base *= n
    return c


def decode(c: int, spec: LatticeSpec) -> Configuration:
    """Exact inverse of :func:`encode`.

    Recovers the particle count first by subtracting the thresholds
    1, N, N^2, ..., then reads base-N digits.  Raises
    :class:`MalformedIndexError` if the digits are not sorted or the value
    is out of range.
    """
    if c < 0:
        raise MalformedIndexError(f"negative index {c}")
    n = spec.n_sites
    remainder = c
    m = 0
    base = 1
    while m < spec.m_max and remainder >= base:
        remainder -= base
        base *= n
        m += 1
    if remainder >= base:
        raise MalformedIndexError(f"index {c} lies beyond the m_max={spec.m_max} sectors")
    sites = []
    for _ in range(m):
        sites.append(remainder % n)
        remainder //= n
    if remainder != 0:
        raise MalformedIndexError(f"index {c} has stray high digits")
    if any(b < a for a, b in zip(sites, sites[1:])):
        raise MalformedIndexError(f"index {c} decodes to unsorted sites {sites}")
    return Configuration(tuple(sites))


def encode_pair_grid(spec: LatticeSpec, n1, n2):
    """Vectorized two-particle encode: arrays of sorted site pairs -> indices."""
    n = spec.n_sites
    return 1 + n + np.asarray(n1, dtype=np.int64) + np.asarray(n2, dtype=np.int64) * n


@dataclass(frozen=True)
class SectorIndexer:
    """Dense rank <-> configuration bijection within one particle-number sector.

    Ranks run 0 .. dimension-1 in lexicographic order of the sorted site
    tuples; they address contiguous amplitude storage, unlike the sparse raw
    configuration indices.
    """

    m: int
    n_sites: int

    @property
    def dimension(self) -> int:
        if self.m == 0:
            return 1
        if self.m == 1:
            return self.n_sites
        return self.n_sites * (self.n_sites + 1) // 2

    def rank(self, cfg: Configuration) -> int:
        if cfg.m != self.m:
            raise ValueError(f"configuration has M={cfg.m}, sector expects M={self.m}")
        if self.m == 0:
            return 0
        if self.m == 1:
            return cfg.sites[0]
        n1, n2 = cfg.sites
        n = self.n_sites
        # pairs (n1, n2), n1 <= n2, listed lexicographically
        return n1 * n - n1 * (n1 - 1) // 2 + (n2 - n1)

    def unrank(self, r: int) -> Configuration:
        if not 0 <= r < self.dimension:
            raise ValueError(f"rank {r} outside sector of dimension {self.dimension}")
        if self.m == 0:
            return Configuration(())
        if self.m == 1:
            return Configuration((r,))
        n = self.n_sites
        n1 = 0
        row = n  # pairs with first site n1
        while r >= row:
            r -= row
            n1 += 1
            row -= 1
        return Configuration((n1, n1 + r))

    def all_configurations(self):
        """All configurations of the sector in rank order."""
        if self.m == 0:
            return [Configuration(())]
        if self.m == 1:
            return [Configuration((i,)) for i in range(self.n_sites)]
        return [
            Configuration((i, j))
            for i in range(self.n_sites)
            for j in range(i, self.n_sites)
        ]


def enumerate_sector(m: int, spec: LatticeSpec) -> SectorIndexer:
    """Sector indexer for the M-particle sector; M <= 2 in this artifact."""
    if m > 2:
        raise ValueError(f"sectors with M={m} > 2 are not supported")
    if m > spec.m_max:
        raise ValueError(f"sector M={m} exceeds spec m_max={spec.m_max}")
    return SectorIndexer(m=m, n_sites=spec.n_sites)


def normalization_constant(cfg: Configuration) -> float:
    """State normalization (prod_i occupancy_i!)^(-1/2).

    1 when all sites are distinct; 1/sqrt(2) for a doubly occupied site in
    the two-particle sector.
    """
    norm = 1.0
    run = 1
    for prev, cur in zip(cfg.sites, cfg.sites[1:]):
        run = run + 1 if cur == prev else 1
        norm *= run
    # product of running factorial factors equals prod occupancy!
    return 1.0 / math.sqrt(norm)
