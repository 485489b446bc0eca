"""Pseudo-spectral toolkit for rotating stratified flows in the fast-rotation limit.

Submodules:
    spectral          periodic grids, spectral fields and transforms
    operators         projectors, potential vorticity and the wave basis
    littlewood_paley  dyadic blocks and the Sobolev/Besov/mixed norm toolkit
    systems           right-hand sides of the full, limit, wave and error systems
    timestepper       integrating-factor RK4 and run records
    experiments       initial data, epsilon sweeps and dispersion probes
    cli               JSON-configured command line driver
"""

from .exceptions import *  # noqa: F401,F403
from .spectral import GridSpec, SpectralField, make_grid, load_snapshot, save_snapshot
from .operators import PhysParams, WaveBasis
from .timestepper import DtPolicy, FlowState, RunRecord, integrate, step_ifrk4
from .experiments import DataSpec, epsilon_sweep, strichartz_probe

__version__ = "0.1.0"
