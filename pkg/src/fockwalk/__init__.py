"""Stochastic particle trajectories for a 1+1d lattice scalar field theory.

The wave function of the truncated (at most two particles) Fock space
evolves unitarily in the particle-configuration representation; particle
positions follow a Markov jump process whose rates are built from the
Hamiltonian matrix elements and the instantaneous wave function, so that an
equilibrium ensemble of walkers stays distributed as the configuration
probabilities for all times.
"""

from .lattice import LatticeSpec, MomentumGrid, dispersion, two_point_s, vacuum_energy
from .fockconfig import Configuration, SectorIndexer, decode, encode, enumerate_sector
from .hamiltonian import (
    HamiltonianBlocks,
    KernelTable,
    apply_full,
    apply_h1,
    apply_h2_free,
    apply_interaction,
    build_blocks,
    build_h1,
    massless_kernel,
)
from .evolution import (
    EvolutionSchedule,
    StateVector,
    evolve_free_exact,
    evolve_stream,
    sector_probabilities,
    state_norm,
    step_implicit_midpoint,
)
from .jumps import (
    RateRow,
    Trajectory,
    ensemble_equivariance_check,
    rates_from_state,
    run_ensemble,
    run_trajectory,
    sample_step,
)
from .experiments import (
    Scenario,
    VelocityStats,
    creation_event_stats,
    effective_velocity,
    jump_distance_cdf,
    nonrelativistic_velocity,
    plane_wave_velocity_moments,
)

__version__ = "0.1.0"
