"""Spin-motion simulator for a single trapped ion in a running optical
lattice with a microwave drive: sideband spectra, Rabi tunability curves,
and ground-state sideband cooling."""

from .errors import ConfigError, FitError, IntegratorError, ResonanceError, SimError, TruncationError
from .hilbert import HilbertDims, JointState, expectation, thermal_distribution
from .model import ExpansionOrder, PhysicalConfig, lamb_dicke, paper_defaults
from .effective import EffectiveParams, SidebandBranch, effective_params, predicted_rabi_curve
from .dynamics import (
    EvolutionSpec,
    LatticeDrive,
    StaticHamiltonian,
    TrajectoryResult,
    evolve_density,
    evolve_pure,
    pi_time,
    thermal_average,
)
from .experiments import (
    CoolingResult,
    CoolingSchedule,
    FitResult,
    RabiScanResult,
    SpectrumResult,
    ThermometryResult,
    fit_damped_sinusoid,
    fit_thermal_rabi,
    optical_pumping_reset,
    rabi_trace,
    rabi_vs_lattice_frequency,
    sideband_asymmetry_thermometry,
    sideband_cooling,
    sideband_spectrum,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CoolingResult",
    "CoolingSchedule",
    "EffectiveParams",
    "EvolutionSpec",
    "ExpansionOrder",
    "FitError",
    "FitResult",
    "HilbertDims",
    "IntegratorError",
    "JointState",
    "LatticeDrive",
    "PhysicalConfig",
    "RabiScanResult",
    "ResonanceError",
    "SidebandBranch",
    "SimError",
    "SpectrumResult",
    "StaticHamiltonian",
    "ThermometryResult",
    "TrajectoryResult",
    "TruncationError",
    "effective_params",
    "evolve_density",
    "evolve_pure",
    "expectation",
    "fit_damped_sinusoid",
    "fit_thermal_rabi",
    "lamb_dicke",
    "optical_pumping_reset",
    "paper_defaults",
    "pi_time",
    "predicted_rabi_curve",
    "rabi_trace",
    "rabi_vs_lattice_frequency",
    "sideband_asymmetry_thermometry",
    "sideband_cooling",
    "sideband_spectrum",
    "thermal_average",
    "thermal_distribution",
]
