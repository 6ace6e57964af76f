"""Stochastic configuration-jump process driven by the evolving wave function.

The transition rate from configuration c to c' is

    T(c', c) = max(0, 2 Im(psi*_c' <c'|H|c> psi_c)) / |psi_c|^2

with the diagonal excluded (H_cc is real, so its contribution vanishes
identically).  For every unordered pair at most one direction has a
positive rate, and an ensemble of walkers distributed as |psi_c|^2 stays
so distributed under the joint dynamics; that equivariance is the
correctness property the ensemble checker below measures.

Discrete time: within one grid interval dt the chain jumps with
probability rate * dt.  If dt * (total rate) exceeds ``p_cap`` the
interval is halved recursively (down to dt / 2**10) so the Bernoulli chain
stays a faithful first-order approximation of the continuous-time rates;
past that depth the trajectory aborts with a diagnostic rather than
inventing dynamics.  Rates diverge on nodes of the wave function, so a
configuration whose probability falls below ``eps_node`` (1e-12 of the
mean probability per configuration) also aborts.

Every trajectory owns a counter-based RNG stream derived from
(master seed, trajectory id); results are reproducible bit-for-bit for a
fixed scenario regardless of how trajectories are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .evolution import StateVector
from .fockconfig import decode, encode_pair_grid
from .hamiltonian import HamiltonianBlocks, dense_configuration_hamiltonian
from .lattice import LatticeSpec

__all__ = [
    "RateRow",
    "Trajectory",
    "NodeError",
    "SubstepRequiredError",
    "TrajectoryAbortError",
    "default_eps_node",
    "rates_from_state",
    "sample_step",
    "sample_initial_configuration",
    "run_trajectory",
    "run_ensemble",
    "run_stationary_ensemble",
    "configuration_amplitudes",
    "ensemble_equivariance_check",
    "minimal_image",
]

P_CAP = 0.1
MAX_HALVINGS = 10


class NodeError(RuntimeError):
    """Current configuration sits on a node of the wave function."""

    def __init__(self, config_index: int, prob: float, time: float | None = None):
        self.config_index = config_index
        self.prob = prob
        self.time = time
        super().__init__(
            f"node at configuration {config_index}: |psi_c|^2 = {prob:.3e}"
            + (f" at t = {time}" if time is not None else "")
        )


class SubstepRequiredError(RuntimeError):
    """dt * total rate exceeds the per-step probability cap."""


class TrajectoryAbortError(RuntimeError):
    """Trajectory stopped: substep limit exhausted or node reached."""


@dataclass
class RateRow:
    """Outgoing transitions of one configuration against one snapshot.

    Only strictly positive rates are kept.  For a given dt the stay
    probability is 1 - dt * sum(rates).
    """

    source: int
    targets: np.ndarray
    rates: np.ndarray
    prob: float  # |psi_c|^2 of the source

    @property
    def total(self) -> float:
        return float(self.rates.sum())

    def stay_probability(self, dt: float) -> float:
        return 1.0 - dt * self.total


@dataclass
class Trajectory:
    """Time-ordered jump records of one walker.

    ``events`` holds (time, configuration index) pairs, starting with the
    initial configuration; consecutive entries differ.  The sampling grid
    and scenario identification live in ``metadata``.
    """

    seed: object
    events: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.events])

    def configs(self) -> np.ndarray:
        return np.array([c for _, c in self.events], dtype=np.int64)


def minimal_image(d, n_sites: int):
    """Displacement folded into (-N/2, N/2] lattice units."""
    half = n_sites // 2
    return (np.asarray(d) + half - 1) % n_sites - (half - 1)


def default_eps_node(state: StateVector, spec: LatticeSpec) -> float:
    from .evolution import state_norm

    dim = spec.n_sites + spec.n_sites * (spec.n_sites + 1) // 2
    return 1e-12 * state_norm(state) ** 2 / dim


@lru_cache(maxsize=8)
def _pair_cache(n: int):
    iu = np.triu_indices(n)
    nf2 = np.where(iu[0] == iu[1], 0.5, 1.0)  # squared occupancy factor per ordered pair
    return iu, nf2


def rates_from_state(c: int, state: StateVector, blocks: HamiltonianBlocks,
                     eps_node: float | None = None) -> RateRow:
    """Enumerate every configuration reachable from c and its jump rate.

    One-particle sources reach every site, and (for coupling > 0) every
    ordered pair; two-particle sources reach the single-coordinate moves of
    either particle plus (coupling > 0) every one-particle state.
    """
    spec = blocks.spec
    n = spec.n_sites
    a = spec.spacing
    psi1, psi2 = state.psi1, state.psi2
    if eps_node is None:
        eps_node = default_eps_node(state, spec)
    cfg = decode(c, spec)
    h1 = blocks.kernels.h1

    targets = []
    rates = []
    if cfg.m == 1:
        x = cfg.sites[0]
        px = a * abs(psi1[x]) ** 2
        if px <= eps_node:
            raise NodeError(c, px, state.time)
        j1 = 2.0 * a * h1[(np.arange(n) - x) % n] * np.imag(np.conj(psi1) * psi1[x])
        j1[x] = 0.0
        r1 = np.maximum(0.0, j1) / (abs(psi1[x]) ** 2)
        keep = r1 > 0.0
        targets.append(np.flatnonzero(keep) + 1)  # encode(M=1, site y) = 1 + y
        rates.append(r1[keep])
        if blocks.coupling > 0:
            w0x = np.roll(np.roll(blocks.w0, x, axis=0), x, axis=1)
            iu, nf2 = _pair_cache(n)
            jc = 2.0 * a * a * np.imag(np.conj(psi2) * psi1[x]) * w0x
            rc = nf2 * np.maximum(0.0, jc[iu]) / (abs(psi1[x]) ** 2)
            keep = rc > 0.0
            if np.any(keep):
                pair_idx = encode_pair_grid(spec, iu[0][keep], iu[1][keep])
                targets.append(pair_idx)
                rates.append(rc[keep])
    elif cfg.m == 2:
        x1, x2 = cfg.sites
        nc2 = 0.5 if x1 == x2 else 1.0
        pc = a * a * nc2 * abs(psi2[x1, x2]) ** 2
        if pc <= eps_node:
            raise NodeError(c, pc, state.time)
        amp = psi2[x1, x2]
        den = nc2 * abs(amp) ** 2
        ys = np.arange(n)

        def move(fixed: int, moved: int):
            # target grid value is psi2[y, fixed]; at y == fixed that is the
            # doubly occupied pair, and the occupancy factors cancel so the
            # same expression covers it
            jm = (2.0 * a * h1[(ys - moved) % n]
                  * np.imag(np.conj(psi2[:, fixed]) * amp))
            jm[moved] = 0.0
            rm = np.maximum(0.0, jm) / den
            keep = rm > 0.0
            lo = np.minimum(ys[keep], fixed)
            hi = np.maximum(ys[keep], fixed)
            return encode_pair_grid(spec, lo, hi), rm[keep]

        if x1 == x2:
            t, r = move(x1, x1)
            targets.append(t)
            rates.append(r)
        else:
            for fixed, moved in ((x2, x1), (x1, x2)):
                t, r = move(fixed, moved)
                targets.append(t)
                rates.append(r)
        if blocks.coupling > 0:
            w0row = blocks.w0[(x1 - ys) % n, (x2 - ys) % n]
            ja = 2.0 * a * w0row * np.imag(np.conj(psi1) * amp)
            ra = np.maximum(0.0, ja) / (abs(amp) ** 2)
            keep = ra > 0.0
            if np.any(keep):
                targets.append(np.flatnonzero(keep) + 1)
                rates.append(ra[keep])
    else:
        raise ValueError(f"no dynamics defined for M={cfg.m} configurations")

    if targets:
        t_all = np.concatenate(targets)
        r_all = np.concatenate(rates)
    else:
        t_all = np.empty(0, dtype=np.int64)
        r_all = np.empty(0)
    prob = px if cfg.m == 1 else pc
    return RateRow(source=c, targets=t_all, rates=r_all, prob=prob)


def sample_step(row: RateRow, dt: float, rng: np.random.Generator,
                p_cap: float = P_CAP) -> int:
    """Draw the configuration after one interval dt: a target with
    probability rate * dt each, otherwise the source."""
    p_total = row.total * dt
    if p_total > p_cap:
        raise SubstepRequiredError(
            f"dt * total rate = {p_total:.3f} exceeds cap {p_cap}; shrink dt"
        )
    u = rng.random()
    if u >= p_total:
        return row.source
    cum = np.cumsum(row.rates) * dt
    return int(row.targets[np.searchsorted(cum, u, side="right")])


def _advance_interval(c: int, state: StateVector, blocks: HamiltonianBlocks,
                      t0: float, dt: float, rng: np.random.Generator,
                      eps_node: float, p_cap: float, events: list) -> int:
    """Advance one walker across [t0, t0 + dt) against a fixed snapshot,
    halving the substep until the probability cap holds."""
    remaining = dt
    t = t0
    row = None
    while remaining > 0.0:
        if row is None or row.source != c:
            try:
                row = rates_from_state(c, state, blocks, eps_node)
            except NodeError as err:
                err.time = t
                raise TrajectoryAbortError(
                    f"trajectory aborted at t={t:.6g}, config {c}: {err}"
                ) from err
        total = row.total
        if total * remaining <= p_cap:
            sub = remaining
        else:
            halvings = int(np.ceil(np.log2(total * remaining / p_cap)))
            if halvings > MAX_HALVINGS:
                raise TrajectoryAbortError(
                    f"substep limit exceeded at t={t:.6g}, config {c}: "
                    f"dt/2^{MAX_HALVINGS} still violates the probability cap"
                )
            sub = remaining / 2 ** halvings
        nxt = sample_step(row, sub, rng, p_cap)
        t += sub
        remaining -= sub
        if nxt != c:
            c = nxt
            events.append((t, c))
            row = None
    return c


def configuration_amplitudes(state: StateVector, spec: LatticeSpec):
    """Orthonormal-basis amplitudes psi_c over sites then ordered pairs.

    psi_c = sqrt(a) psi1(x) for sites; a * psi2(x1, x2) for x1 < x2 and
    (a/sqrt(2)) psi2(x, x) on the diagonal.  |psi_c|^2 sums to the state
    norm.  Also returns the raw configuration index of each entry.
    """
    n = spec.n_sites
    a = spec.spacing
    iu, nf2 = _pair_cache(n)
    amps = np.concatenate([
        np.sqrt(a) * state.psi1,
        a * np.sqrt(nf2) * state.psi2[iu],
    ])
    indices = np.concatenate([
        np.arange(1, n + 1, dtype=np.int64),
        encode_pair_grid(spec, iu[0], iu[1]),
    ])
    return amps, indices


def sample_initial_configuration(state: StateVector, spec: LatticeSpec,
                                 rng: np.random.Generator) -> int:
    """Draw a configuration from quantum equilibrium, P_c = |psi_c|^2."""
    amps, indices = configuration_amplitudes(state, spec)
    p = np.abs(amps) ** 2
    p = p / p.sum()
    return int(indices[rng.choice(p.size, p=p)])


def run_trajectory(initial, snapshots, blocks: HamiltonianBlocks, dt: float,
                   seed, p_cap: float = P_CAP, metadata: dict | None = None) -> Trajectory:
    """Sample one trajectory along a snapshot stream.

    ``snapshots`` yields the state at each grid time (initial state first);
    ``initial`` is a configuration index, or None to sample from
    |<c|Psi_0>|^2.  The RNG stream is Philox keyed by ``seed`` (any
    SeedSequence-compatible entropy, e.g. (master_seed, trajectory_id)).
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    it = iter(snapshots)
    state = next(it)
    spec = blocks.spec
    eps_node = default_eps_node(state, spec)
    c = sample_initial_configuration(state, spec, rng) if initial is None else int(initial)
    traj = Trajectory(seed=seed, events=[(state.time, c)],
                      metadata={"dt": dt, "p_cap": p_cap, **(metadata or {})})
    for nxt_state in it:
        c = _advance_interval(c, state, blocks, state.time, dt, rng,
                              eps_node, p_cap, traj.events)
        state = nxt_state
    traj.metadata["t_final"] = state.time
    return traj


def run_ensemble(initials, snapshots, blocks: HamiltonianBlocks, dt: float,
                 master_seed: int, p_cap: float = P_CAP,
                 metadata: dict | None = None) -> list[Trajectory]:
    """Sample many trajectories against one shared snapshot stream.

    All walkers advance in lockstep with the evolution, so the stream is
    consumed once and never stored.  ``initials`` is a sequence of
    configuration indices (None entries sample quantum equilibrium).
    Trajectory i uses the independent stream (master_seed, i).
    """
    it = iter(snapshots)
    state = next(it)
    spec = blocks.spec
    eps_node = default_eps_node(state, spec)
    rngs = [np.random.Generator(np.random.Philox(np.random.SeedSequence((master_seed, i))))
            for i in range(len(initials))]
    trajs = []
    for i, init in enumerate(initials):
        c = (sample_initial_configuration(state, spec, rngs[i])
             if init is None else int(init))
        trajs.append(Trajectory(seed=(master_seed, i), events=[(state.time, c)],
                                metadata={"dt": dt, "p_cap": p_cap,
                                          "trajectory_id": i, **(metadata or {})}))
    current = [t.events[0][1] for t in trajs]
    for nxt_state in it:
        for i, traj in enumerate(trajs):
            current[i] = _advance_interval(current[i], state, blocks, state.time,
                                           dt, rngs[i], eps_node, p_cap, traj.events)
        state = nxt_state
    for traj in trajs:
        traj.metadata["t_final"] = state.time
    return trajs


def run_stationary_ensemble(row: RateRow, dt: float, n_steps: int, n_traj: int,
                            master_seed: int, p_cap: float = P_CAP):
    """Jump records for a time-independent rate row (stationary snapshot).

    For an energy eigenstate the snapshot changes only by a global phase,
    so the rate row is constant and, by translation invariance, identical
    at every site up to relabeling.  Steps between jumps are then
    geometric, which lets long runs skip directly from jump to jump.

    Returns a list of (jump_step_indices, target_slots) pairs, one per
    trajectory, where target_slots index ``row.targets``.  Requires
    dt * total <= p_cap (choose dt accordingly; no substepping here).
    """
    p = row.total * dt
    if p > p_cap:
        raise SubstepRequiredError(f"dt * total rate = {p:.3f} exceeds cap {p_cap}")
    cum = np.cumsum(row.rates)
    cum /= cum[-1]
    out = []
    for i in range(n_traj):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((master_seed, i))))
        # expected number of jumps plus slack; top up in the rare shortfall
        jumps_expected = int(p * n_steps)
        steps = []
        pos = 0
        while True:
            batch = max(1024, int(1.2 * (jumps_expected + 64)))
            gaps = rng.geometric(p, size=batch)
            arrivals = pos + np.cumsum(gaps)
            inside = arrivals[arrivals <= n_steps]
            steps.append(inside)
            if inside.size < batch:
                break
            pos = int(arrivals[-1])
        jump_steps = np.concatenate(steps)
        slots = np.searchsorted(cum, rng.random(jump_steps.size), side="right")
        out.append((jump_steps, slots))
    return out


def ensemble_equivariance_check(state0: StateVector, snapshots, blocks: HamiltonianBlocks,
                                n_walkers: int, dt: float, seed: int,
                                p_cap: float = P_CAP):
    """Evolve a walker cloud jointly with the wave function and return the
    total-variation distance between the final walker histogram and
    |psi_c(t)|^2.

    Small systems only: the full rate matrix is rebuilt from the dense
    configuration-basis Hamiltonian at every step and walkers move by
    per-configuration multinomial draws.  One RNG stream drives the whole
    cloud (walkers are exchangeable here; per-walker streams belong to
    :func:`run_ensemble`).
    """
    spec = blocks.spec
    if spec.n_sites > 64:
        raise ValueError("equivariance check is restricted to N <= 64")
    h = dense_configuration_hamiltonian(blocks)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    amps0, _ = configuration_amplitudes(state0, spec)
    p0 = np.abs(amps0) ** 2
    p0 /= p0.sum()
    dim = p0.size
    counts = rng.multinomial(n_walkers, p0)

    state = state0
    it = iter(snapshots)
    first = next(it)
    assert first.time == state0.time
    eps = 1e-300
    for nxt_state in it:
        amps, _ = configuration_amplitudes(state, spec)
        j = 2.0 * np.imag(np.conj(amps)[:, None] * h * amps[None, :])
        np.fill_diagonal(j, 0.0)
        t_full = np.maximum(0.0, j) / np.maximum(np.abs(amps)[None, :] ** 2, eps)
        remaining = dt
        while remaining > 0.0:
            occupied = np.flatnonzero(counts)
            out_rate = t_full[:, occupied].sum(axis=0)
            worst = out_rate.max(initial=0.0)
            if worst * remaining <= p_cap:
                sub = remaining
            else:
                halvings = min(MAX_HALVINGS,
                               int(np.ceil(np.log2(worst * remaining / p_cap))))
                sub = remaining / 2 ** halvings
            new_counts = np.zeros_like(counts)
            for k, c_idx in enumerate(occupied):
                pvec = t_full[:, c_idx] * sub
                stay = 1.0 - pvec.sum()
                pvec[c_idx] = max(stay, 0.0)
                new_counts += rng.multinomial(counts[c_idx], pvec / pvec.sum())
            counts = new_counts
            remaining -= sub
        state = nxt_state

    amps_t, _ = configuration_amplitudes(state, spec)
    pt = np.abs(amps_t) ** 2
    pt /= pt.sum()
    return 0.5 * float(np.abs(counts / n_walkers - pt).sum())
