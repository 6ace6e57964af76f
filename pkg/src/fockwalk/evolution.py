"""Wave-function evolution on the truncated configuration space.

Free sectors evolve exactly (pure phases in the Fourier basis).  The
interacting system is stepped with the Cayley form of the implicit midpoint
rule,

    (1 + i H dt/2) psi(t + dt) = (1 - i H dt/2) psi(t),

solved matrix-free with preconditioned GMRES.  The map is exactly unitary
for any dt, so the norm is conserved to solver tolerance, and because the
map is a rational function of H the energy expectation is conserved as
well.

Internally the constant part of the spectrum (the vacuum energy, which is
extensive and would otherwise dominate dt accuracy requirements by two
orders of magnitude) is removed before the solve and restored as an exact
analytic phase.

The physical norm is ||psi1||^2 weighted by a plus the ordered-pair norm of
the symmetric grid, a^2/2 ||Psi2||^2; all inner products here carry those
weights.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .hamiltonian import HamiltonianBlocks, apply_full
from .lattice import LatticeSpec

__all__ = [
    "StateVector",
    "EvolutionSchedule",
    "StepFailureError",
    "inner_product",
    "state_norm",
    "sector_probabilities",
    "energy_expectation",
    "evolve_free_exact",
    "step_implicit_midpoint",
    "evolve_stream",
    "save_checkpoint",
    "load_checkpoint",
]

_SYMMETRY_TOL = 1e-10


class StepFailureError(RuntimeError):
    """The inner linear solver of one implicit step did not converge."""


@dataclass(frozen=True)
class StateVector:
    """Amplitudes over the truncated basis: psi1 (N,) and the symmetric
    two-particle grid psi2 (N, N), at one instant of the shared clock.

    ``psi2 = None`` marks an identically empty two-particle sector; the
    non-interacting one-particle scenarios use it so that N ~ 1e5 lattices
    never allocate the N x N grid.  Snapshots are treated as immutable
    after construction; a single evolution owns the sequence and samplers
    only read.
    """

    psi1: np.ndarray = field(repr=False)
    psi2: np.ndarray | None = field(repr=False)
    time: float
    spacing: float

    def __post_init__(self):
        n = self.psi1.shape[0]
        if self.psi2 is None:
            return
        if self.psi2.shape != (n, n):
            raise ValueError(f"psi2 shape {self.psi2.shape} does not match psi1 length {n}")
        dev = np.max(np.abs(self.psi2 - self.psi2.T)) if n else 0.0
        scale = max(1.0, float(np.max(np.abs(self.psi2))) if n else 0.0)
        if dev > _SYMMETRY_TOL * scale:
            raise ValueError(f"psi2 not symmetric: deviation {dev:.3e}")

    @property
    def n_sites(self) -> int:
        return self.psi1.shape[0]

    def require_pair_sector(self) -> np.ndarray:
        if self.psi2 is None:
            raise ValueError("operation requires an allocated two-particle sector")
        return self.psi2


@dataclass(frozen=True)
class EvolutionSchedule:
    """Shared clock for wave function and jump sampling."""

    dt: float
    steps: int
    method: str = "implicit-midpoint"  # or "exact-free"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.method not in ("implicit-midpoint", "exact-free"):
            raise ValueError(f"unknown method {self.method!r}")


def inner_product(bra: StateVector, ket: StateVector) -> complex:
    a = ket.spacing
    one = a * np.vdot(bra.psi1, ket.psi1)
    if bra.psi2 is None or ket.psi2 is None:
        return complex(one)
    return complex(one + 0.5 * a * a * np.vdot(bra.psi2, ket.psi2))


def state_norm(state: StateVector) -> float:
    return float(np.sqrt(inner_product(state, state).real))


def sector_probabilities(state: StateVector) -> tuple[float, float]:
    """(P1, P2): probability weight of the one- and two-particle sectors."""
    a = state.spacing
    p1 = a * float(np.sum(np.abs(state.psi1) ** 2))
    p2 = 0.5 * a * a * float(np.sum(np.abs(state.psi2) ** 2))
    return p1, p2


def energy_expectation(state: StateVector, blocks: HamiltonianBlocks) -> float:
    """<psi|H|psi> / <psi|psi> with the sector conventions of apply_full."""
    h1, h2 = apply_full(state.psi1, state.psi2, blocks)
    a = state.spacing
    num = a * np.vdot(state.psi1, h1) + 0.5 * a * a * np.vdot(state.psi2, h2)
    den = inner_product(state, state).real
    val = complex(num) / den
    assert abs(val.imag) <= 1e-9 * max(1.0, abs(val.real)), "energy expectation not real"
    return val.real


def evolve_free_exact(state: StateVector, t: float, blocks: HamiltonianBlocks) -> StateVector:
    """Exact free evolution by time t (requires coupling = 0).

    Momentum modes pick up phases exp(-i (omega_p + E0) t) in the
    one-particle sector and exp(-i (omega_p1 + omega_p2 + 2 E0) t) for
    pairs; exactly unitary up to roundoff.
    """
    if blocks.coupling != 0:
        raise ValueError("evolve_free_exact called with coupling != 0")
    w = blocks.omega_fft
    e0 = blocks.e0
    f1 = np.fft.ifft(np.exp(-1j * (w + e0) * t) * np.fft.fft(state.psi1))
    ph2 = np.exp(-1j * ((w[:, None] + w[None, :]) + 2.0 * e0) * t)
    f2 = np.fft.ifft2(ph2 * np.fft.fft2(state.psi2))
    return replace(state, psi1=f1, psi2=f2, time=state.time + t)


class _CayleySolver:
    """Preconditioned GMRES solve of (1 + i eps H~) v = b for one fixed dt.

    Works in scaled coordinates v = (sqrt(a) psi1, (a/sqrt(2)) vec(psi2)),
    where H~ is Hermitian under the plain dot product.  H~ is the full
    Hamiltonian minus its per-sector constant, so its spectrum is the bare
    dispersion range plus the interaction; the free part is diagonal in
    the Fourier basis and supplies the preconditioner (exact inverse at
    coupling = 0).
    """

    def __init__(self, blocks: HamiltonianBlocks, dt: float,
                 rtol: float = 1e-12, maxiter: int = 200):
        self.blocks = blocks
        self.dt = dt
        self.rtol = rtol
        self.maxiter = maxiter
        spec = blocks.spec
        self.n = spec.n_sites
        self.a = spec.spacing
        w = blocks.omega_fft
        self.shift1 = blocks.e0
        self.shift2 = blocks.e0 if blocks.coupling > 0 else 2.0 * blocks.e0
        eps = 0.5 * dt
        self._pre1 = 1.0 / (1.0 + 1j * eps * w)
        self._pre2 = 1.0 / (1.0 + 1j * eps * (w[:, None] + w[None, :]))
        self.dim = self.n + self.n * self.n

    def _split(self, v):
        psi1 = v[: self.n] / np.sqrt(self.a)
        psi2 = v[self.n :].reshape(self.n, self.n) * (np.sqrt(2.0) / self.a)
        return psi1, psi2

    def _join(self, psi1, psi2):
        return np.concatenate(
            [np.sqrt(self.a) * psi1, (self.a / np.sqrt(2.0)) * psi2.ravel()]
        )

    def _h_shifted(self, v):
        psi1, psi2 = self._split(v)
        h1, h2 = apply_full(psi1, psi2, self.blocks)
        h1 -= self.shift1 * psi1
        h2 -= self.shift2 * psi2
        return self._join(h1, h2)

    def _matvec(self, v):
        return v + 0.5j * self.dt * self._h_shifted(v)

    def _rmatvec(self, v):
        return v - 0.5j * self.dt * self._h_shifted(v)

    def _precond(self, v):
        p1 = np.fft.ifft(self._pre1 * np.fft.fft(v[: self.n]))
        p2 = np.fft.ifft2(self._pre2 * np.fft.fft2(v[self.n :].reshape(self.n, self.n)))
        return np.concatenate([p1, p2.ravel()])

    def step(self, state: StateVector) -> StateVector:
        v = self._join(state.psi1, state.psi2)
        b = self._rmatvec(v)
        op = LinearOperator((self.dim, self.dim), matvec=self._matvec, dtype=complex)
        pre = LinearOperator((self.dim, self.dim), matvec=self._precond, dtype=complex)
        sol, info = gmres(op, b, rtol=self.rtol, atol=0.0, maxiter=self.maxiter,
                          restart=40, M=pre, x0=v)
        res = float(np.linalg.norm(self._matvec(sol) - b))
        bnorm = float(np.linalg.norm(b))
        if info != 0 or res > 10.0 * self.rtol * bnorm:
            raise StepFailureError(
                f"implicit step solver did not converge: info={info}, "
                f"residual={res:.3e}, rhs norm={bnorm:.3e}"
            )
        psi1, psi2 = self._split(sol)
        psi1 = psi1 * np.exp(-1j * self.shift1 * self.dt)
        psi2 = psi2 * np.exp(-1j * self.shift2 * self.dt)
        # resymmetrize to keep roundoff from accumulating over long runs
        psi2 = 0.5 * (psi2 + psi2.T)
        return replace(state, psi1=psi1, psi2=psi2, time=state.time + self.dt)


def step_implicit_midpoint(state: StateVector, dt: float, blocks: HamiltonianBlocks,
                           rtol: float = 1e-12, maxiter: int = 200) -> StateVector:
    """One Cayley / implicit-midpoint step of size dt.

    Norm preserved to solver tolerance per step; raises
    :class:`StepFailureError` with the residual when the inner GMRES solve
    fails.  For repeated stepping prefer :func:`evolve_stream`, which
    reuses the solver setup.
    """
    return _CayleySolver(blocks, dt, rtol=rtol, maxiter=maxiter).step(state)


def evolve_stream(state: StateVector, schedule: EvolutionSchedule,
                  blocks: HamiltonianBlocks, rtol: float = 1e-12, maxiter: int = 200):
    """Yield the state at every grid time t0, t0+dt, ..., t0+steps*dt.

    The initial state is yielded first; jump samplers consume this stream
    so wave function and configuration share one clock.
    """
    yield state
    if schedule.method == "exact-free":
        for _ in range(schedule.steps):
            state = evolve_free_exact(state, schedule.dt, blocks)
            yield state
    else:
        solver = _CayleySolver(blocks, schedule.dt, rtol=rtol, maxiter=maxiter)
        for _ in range(schedule.steps):
            state = solver.step(state)
            yield state


_CHECKPOINT_MAGIC = "fockwalk-checkpoint"


def save_checkpoint(path, state: StateVector, spec: LatticeSpec) -> None:
    """Write (spec, time, psi1, psi2) with an integrity digest.

    Layout: 8-byte little-endian header length, UTF-8 JSON header, then
    psi1 and psi2 as little-endian complex128 in C order.  The header
    records the sha256 of the payload; field order is fixed by this writer.
    """
    psi1 = np.ascontiguousarray(state.psi1, dtype="<c16")
    psi2 = np.ascontiguousarray(state.psi2, dtype="<c16")
    payload = psi1.tobytes() + psi2.tobytes()
    header = {
        "format": _CHECKPOINT_MAGIC,
        "version": 1,
        "n_sites": spec.n_sites,
        "spacing": spec.spacing,
        "mu": spec.mu,
        "coupling": spec.coupling,
        "m_max": spec.m_max,
        "time": state.time,
        "dtype": "complex128-le",
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[StateVector, LatticeSpec]:
    with open(path, "rb") as fh:
        hlen = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    if header.get("format") != _CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"checkpoint payload digest mismatch: {path}")
    n = header["n_sites"]
    psi1 = np.frombuffer(payload[: n * 16], dtype="<c16").copy()
    psi2 = np.frombuffer(payload[n * 16 :], dtype="<c16").reshape(n, n).copy()
    spec = LatticeSpec(
        n_sites=n, spacing=header["spacing"], mu=header["mu"],
        coupling=header["coupling"], m_max=header["m_max"],
    )
    state = StateVector(psi1=psi1, psi2=psi2, time=header["time"], spacing=spec.spacing)
    return state, spec
