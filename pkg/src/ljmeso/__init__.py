"""Moderately interacting Brownian particles with a free-parameter
Lennard-Jones force and their mean-field Fokker-Planck limit."""

from .kernel import (LJParams, MollifierSpec, Regime, build_mollified_kernel, exponent_windows,
                     kernel_constants, lj_force, lj_potential)
from .fields import GridSpec, ScalarField, VectorField
from .fokker_planck import PDEConfig, mild_march, picard_solve
from .meso import MesoParams, empirical_density, theoretical_rate
from .particles import SimulationConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "LJParams", "MollifierSpec", "Regime", "build_mollified_kernel", "exponent_windows",
    "kernel_constants", "lj_force", "lj_potential", "GridSpec", "ScalarField", "VectorField",
    "PDEConfig", "mild_march", "picard_solve", "MesoParams", "empirical_density",
    "theoretical_rate", "SimulationConfig", "simulate", "__version__",
]
