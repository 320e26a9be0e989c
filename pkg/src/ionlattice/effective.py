"""Closed-form effective Hamiltonians and Rabi-frequency predictions.

Near each resonance of the drive the fast oscillations average out and a
static operator remains: a pure spin rotation on the C1 carriers and
phonon-exchanging couplings on the sidebands, with the bare Lamb-Dicke
parameter replaced by a lattice-enhanced effective one. These are the
no-free-parameter theory curves the full integrator is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ResonanceError
from .hilbert import HilbertDims, identity_fock, ladder_operators, spin_operators
from .model import PhysicalConfig, lamb_dicke

# Effective formulas hold only away from omega_r = omega_z; inside this band
# the minus-branch denominators are meaninglessly large.
RESONANCE_GUARD = 2 * np.pi * 10e3


class SidebandBranch(Enum):
    """Which resonance the drive sits on.

    Minus/Plus selects the omega_z -+ omega_r denominator: the minus branch
    is the strong (resonantly enhanced) pair, the plus branch the weak one.
    """

    CARRIER_C1 = "c1"
    RED_MINUS = "r1-"
    RED_PLUS = "r1+"
    BLUE_MINUS = "b1-"
    BLUE_PLUS = "b1+"

    @property
    def is_red(self) -> bool:
        return self in (SidebandBranch.RED_MINUS, SidebandBranch.RED_PLUS)

    @property
    def is_blue(self) -> bool:
        return self in (SidebandBranch.BLUE_MINUS, SidebandBranch.BLUE_PLUS)

    @property
    def sign(self) -> int:
        """+1 for the omega_z + omega_r denominator, -1 for omega_z - omega_r."""
        if self is SidebandBranch.CARRIER_C1:
            raise ConfigError("carrier branch has no sideband denominator")
        return +1 if self in (SidebandBranch.RED_PLUS, SidebandBranch.BLUE_PLUS) else -1


@dataclass(frozen=True)
class EffectiveParams:
    """The derived coupling strengths at one operating point (rad/s)."""

    eta_eff_minus: float
    eta_eff_plus: float
    omega_c1: float
    rabi_minus: float
    rabi_plus: float


def _guard(cfg: PhysicalConfig):
    if abs(cfg.running_freq - cfg.omega_z) < RESONANCE_GUARD:
        raise ResonanceError(
            "running_freq within 2pi*10 kHz of the trap frequency; "
            "effective sideband model is singular there"
        )


def effective_lamb_dicke(cfg: PhysicalConfig, sign: int) -> float:
    """eta_eff = eta * stark_amplitude / (2 (omega_z +- running_freq)), signed."""
    if sign not in (+1, -1):
        raise ConfigError("sign must be +1 or -1")
    if sign == -1:
        _guard(cfg)
    denom = cfg.omega_z + sign * cfg.running_freq
    if denom == 0:
        raise ResonanceError("sideband denominator omega_z +- omega_r is zero")
    return lamb_dicke(cfg) * cfg.stark_amplitude / (2 * denom)


def carrier_rabi(cfg: PhysicalConfig) -> float:
    """Omega_C1 = stark_amplitude * microwave_rabi / (2 running_freq)."""
    if cfg.running_freq == 0:
        raise ConfigError("running_freq must be nonzero for the carrier coupling")
    return cfg.stark_amplitude * cfg.microwave_rabi / (2 * cfg.running_freq)


def effective_params(cfg: PhysicalConfig) -> EffectiveParams:
    em = effective_lamb_dicke(cfg, -1)
    ep = effective_lamb_dicke(cfg, +1)
    return EffectiveParams(
        eta_eff_minus=em,
        eta_eff_plus=ep,
        omega_c1=carrier_rabi(cfg),
        rabi_minus=abs(em) * cfg.microwave_rabi,
        rabi_plus=abs(ep) * cfg.microwave_rabi,
    )


def carrier_c1_hamiltonian(cfg: PhysicalConfig, dims: HilbertDims) -> np.ndarray:
    """Static C1 carrier operator: i Omega_C1/2 (sigma+ - sigma-) (x) identity.

    Population flops at Omega_C1 without touching the motional state.
    """
    s = spin_operators()
    coupling = 0.5 * carrier_rabi(cfg)  # = stark*rabi/(4 wr)
    h_spin = 1j * coupling * (s["+"] - s["-"])
    return np.kron(h_spin, identity_fock(dims.fock_levels))


def red_sideband_hamiltonian(cfg: PhysicalConfig, dims: HilbertDims, sign: int) -> np.ndarray:
    """Phonon-destroying flop |0,n> <-> |1,n-1> at eta_eff*Omega*sqrt(n)."""
    eta_eff = effective_lamb_dicke(cfg, sign)
    a, ad = ladder_operators(dims.fock_levels)
    s = spin_operators()
    g = -0.5 * eta_eff * cfg.microwave_rabi  # = -stark*eta*rabi/(4(wz+-wr))
    return g * (np.kron(s["+"], a) + np.kron(s["-"], ad))


def blue_sideband_hamiltonian(cfg: PhysicalConfig, dims: HilbertDims, sign: int) -> np.ndarray:
    """Phonon-creating flop |0,n> <-> |1,n+1> at eta_eff*Omega*sqrt(n+1)."""
    eta_eff = effective_lamb_dicke(cfg, sign)
    a, ad = ladder_operators(dims.fock_levels)
    s = spin_operators()
    g = +0.5 * eta_eff * cfg.microwave_rabi
    return g * (np.kron(s["-"], a) + np.kron(s["+"], ad))


def branch_hamiltonian(cfg: PhysicalConfig, dims: HilbertDims, branch: SidebandBranch) -> np.ndarray:
    if branch is SidebandBranch.CARRIER_C1:
        return carrier_c1_hamiltonian(cfg, dims)
    if branch.is_red:
        return red_sideband_hamiltonian(cfg, dims, branch.sign)
    return blue_sideband_hamiltonian(cfg, dims, branch.sign)


def branch_detuning(cfg: PhysicalConfig, branch: SidebandBranch) -> float:
    """Microwave detuning (rad/s) that puts the full model on this resonance."""
    wz, wr = cfg.omega_z, cfg.running_freq
    return {
        SidebandBranch.CARRIER_C1: wr,
        SidebandBranch.RED_MINUS: -(wz - wr),
        SidebandBranch.RED_PLUS: -(wz + wr),
        SidebandBranch.BLUE_MINUS: +(wz - wr),
        SidebandBranch.BLUE_PLUS: +(wz + wr),
    }[branch]


def branch_rabi(cfg: PhysicalConfig, branch: SidebandBranch) -> float:
    """Predicted n-independent Rabi prefactor for the branch (rad/s)."""
    if branch is SidebandBranch.CARRIER_C1:
        return abs(carrier_rabi(cfg))
    return abs(effective_lamb_dicke(cfg, branch.sign)) * cfg.microwave_rabi


@dataclass
class PredictedCurve:
    """Closed-form Rabi frequency along an omega_r grid.

    Singular grid points (resonance guard band for minus branches) carry
    NaN in ``rabi`` and an entry in ``failures`` instead of aborting the
    whole curve.
    """

    omega_r: np.ndarray
    rabi: np.ndarray
    branch: SidebandBranch
    failures: list


def predicted_rabi_curve(cfg: PhysicalConfig, omega_r_grid, branch: SidebandBranch) -> PredictedCurve:
    grid = np.asarray(omega_r_grid, dtype=float)
    rabi = np.full(grid.shape, np.nan)
    failures = []
    for i, wr in enumerate(grid):
        try:
            if wr <= 0:
                raise ConfigError("running_freq grid point must be positive")
            rabi[i] = branch_rabi(cfg.replace(running_freq=float(wr)), branch)
        except (ConfigError, ResonanceError) as exc:
            failures.append((i, str(exc)))
    return PredictedCurve(omega_r=grid, rabi=rabi, branch=branch, failures=failures)


def thermal_flop_populations(tau, rabi_prefactor: float, nbar: float, fock_levels: int, red: bool):
    """Upper-state probability of a thermal ensemble under one sideband.

    P(tau) = sum_n p_n sin^2(rabi*sqrt(n or n+1)*tau/2); the red branch sees
    sqrt(n) (its n=0 component is dark), the blue branch sqrt(n+1).
    """
    from .hilbert import thermal_distribution

    p = thermal_distribution(nbar, fock_levels)
    n = np.arange(fock_levels)
    root = np.sqrt(n) if red else np.sqrt(n + 1)
    tau = np.asarray(tau, dtype=float)
    return np.sin(0.5 * rabi_prefactor * np.multiply.outer(tau, root)) ** 2 @ p
