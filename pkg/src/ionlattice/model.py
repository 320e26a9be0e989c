"""Physical parameters and interaction-picture Hamiltonian construction.

Everything internal is angular frequency (rad/s); Hamiltonian matrices carry
units of rad/s (hbar divided out). Conversion to ordinary kHz/MHz happens
only at the CLI boundary. The lab-frame problem is never integrated: the
dynamics happen in the frame co-rotating with the qubit splitting and the
trap, where the drive terms oscillate at lattice and trap frequencies only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import constants

from .errors import ConfigError
from .hilbert import HilbertDims, embed, identity_fock, ladder_operators, spin_operators

ATOMIC_MASS_KG = constants.u
HBAR = constants.hbar


class ExpansionOrder(Enum):
    """How far the sine of the lattice phase is expanded in the ion position."""

    FIRST = "first"
    SECOND = "second"
    EXACT = "exact"


@dataclass(frozen=True)
class PhysicalConfig:
    """All experimental parameters. Frequencies are angular (rad/s).

    ``trap_freqs`` is (omega_x, omega_y, omega_z); only the z mode is
    evolved, the radial entries are carried for bookkeeping. The Stark
    amplitude and the microwave detuning are signed; everything else that
    is a frequency must be positive. ``coherence_time`` of 0 means no
    dephasing.
    """

    trap_freqs: tuple
    stark_amplitude: float
    running_freq: float
    microwave_rabi: float
    microwave_detuning: float = 0.0
    coherence_time: float = 0.0
    ion_mass: float = 171.0 * ATOMIC_MASS_KG
    lattice_wavelength: float = 377.2e-9
    lattice_geometry_factor: float = math.sqrt(2.0)

    def __post_init__(self):
        object.__setattr__(self, "trap_freqs", tuple(float(w) for w in self.trap_freqs))
        if len(self.trap_freqs) != 3:
            raise ConfigError("trap_freqs must be (omega_x, omega_y, omega_z)")
        if self.ion_mass <= 0:
            raise ConfigError("ion mass must be positive")
        if self.lattice_wavelength <= 0:
            raise ConfigError("lattice wavelength must be positive")
        for w in self.trap_freqs:
            if w <= 0:
                raise ConfigError("trap frequencies must be positive")
        if self.running_freq <= 0:
            raise ConfigError("running_freq must be positive")
        if self.microwave_rabi < 0:
            raise ConfigError("microwave_rabi must be nonnegative")
        if self.coherence_time < 0:
            raise ConfigError("coherence_time must be nonnegative")
        if self.lattice_geometry_factor < 0:
            raise ConfigError("lattice_geometry_factor must be nonnegative")

    @property
    def omega_z(self) -> float:
        return self.trap_freqs[2]

    def replace(self, **kw) -> "PhysicalConfig":
        from dataclasses import replace

        return replace(self, **kw)


def paper_defaults(**overrides) -> PhysicalConfig:
    """The apparatus operating point used throughout the demos and tests."""
    base = dict(
        trap_freqs=(2 * np.pi * 0.91e6, 2 * np.pi * 0.97e6, 2 * np.pi * 0.79e6),
        stark_amplitude=2 * np.pi * 310e3,
        running_freq=2 * np.pi * 300e3,
        microwave_rabi=2 * np.pi * 43e3,
        microwave_detuning=0.0,
        coherence_time=0.47e-3,
    )
    base.update(overrides)
    return PhysicalConfig(**base)


def delta_k(cfg: PhysicalConfig) -> float:
    """Effective lattice wavevector along z: g_k * 2 pi / lambda (1/m)."""
    return cfg.lattice_geometry_factor * 2 * np.pi / cfg.lattice_wavelength


def ground_state_size(cfg: PhysicalConfig) -> float:
    """z0 = sqrt(hbar / (2 m omega_z)) in meters."""
    return math.sqrt(HBAR / (2 * cfg.ion_mass * cfg.omega_z))


def lamb_dicke(cfg: PhysicalConfig) -> float:
    """eta = delta_k * z0, the spread of the wavepacket in lattice phase."""
    return delta_k(cfg) * ground_state_size(cfg)


def stark_profile(z: float, t: float, cfg: PhysicalConfig):
    """Differential Stark shift of the running lattice at position z, time t."""
    return cfg.stark_amplitude * np.sin(delta_k(cfg) * z - cfg.running_freq * t)


@lru_cache(maxsize=8)
def _position_eigensystem(fock_levels: int):
    """Eigenbasis of X0 = a + a^dag on the truncated space.

    X0 is real symmetric tridiagonal, so the basis is real orthogonal and
    time-independent; every expansion order of the lattice term is diagonal
    in it once the trap rotation is factored out.
    """
    a, ad = ladder_operators(fock_levels)
    x0 = (a + ad).real
    lam, w = np.linalg.eigh(x0)
    return lam, w


def lattice_phase_eigenvalues(cfg: PhysicalConfig, t, lam: np.ndarray, order: ExpansionOrder) -> np.ndarray:
    """Per-mode coefficient f_t(lambda) of the sigma_z lattice term (rad/s).

    In the frame where the trap rotation has been factored out, the lattice
    contribution is (stark_amplitude/2) * sigma_z * f_t(X0) with f the
    (possibly truncated) sine of eta*X0 - omega_r*t. Returns f including
    the amplitude/2 prefactor, broadcast over t.
    """
    eta = lamb_dicke(cfg)
    wr = cfg.running_freq
    half = 0.5 * cfg.stark_amplitude
    t = np.asarray(t, dtype=float)
    phase = wr * t
    if order is ExpansionOrder.FIRST:
        return half * (eta * np.multiply.outer(np.cos(phase), lam) - np.sin(phase)[..., None])
    if order is ExpansionOrder.SECOND:
        lin = eta * np.multiply.outer(np.cos(phase), lam)
        quad = 0.5 * eta**2 * np.multiply.outer(np.sin(phase), lam**2)
        return half * (lin + quad - np.sin(phase)[..., None])
    return half * np.sin(eta * lam - phase[..., None])


def require_exact_headroom(dims: HilbertDims, max_occupied: int):
    """Exact mode needs the cutoff well above the occupied band."""
    need = int(math.ceil(1.5 * max(max_occupied, 1)))
    if dims.fock_levels < need:
        raise ConfigError(
            f"exact lattice mode needs fock_levels >= {need} for occupation up to "
            f"n={max_occupied}, got {dims.fock_levels}"
        )


def interaction_hamiltonian(
    t: float,
    cfg: PhysicalConfig,
    dims: HilbertDims,
    order: ExpansionOrder = ExpansionOrder.FIRST,
    max_occupied: int | None = None,
) -> np.ndarray:
    """H(t)/hbar in rad/s on the joint space, in the co-rotating frame.

    The lattice part is (stark_amplitude/2) sigma_z (x) M(t) with
    M(t) = P(t)^dag f_t(X0) P(t) and P(t) the trap rotation; at first order
    this collapses to the familiar sum of e^{-i(omega_z +- omega_r) t}
    sideband terms plus the -sin(omega_r t) carrier modulation. The
    microwave adds (Omega/2)(sigma_+ e^{-i delta t} + h.c.).

    ``max_occupied`` lets callers that know their initial state enforce the
    exact-mode headroom rule (cutoff >= 1.5x the occupied band).
    """
    nf = dims.fock_levels
    if order is ExpansionOrder.EXACT and max_occupied is not None:
        require_exact_headroom(dims, max_occupied)
    lam, w = _position_eigensystem(nf)
    f = lattice_phase_eigenvalues(cfg, float(t), lam, order)
    rot = np.exp(-1j * cfg.omega_z * float(t) * np.arange(nf))
    # M = P^dag (W f W^T) P, P = diag(e^{-i omega_z t n}): a -> a e^{-i omega_z t}
    sym = w * f @ w.T
    sym = 0.5 * (sym + sym.T)
    m = sym * rot[None, :]
    m *= rot[:, None].conj()
    sz = np.array([[-1.0, 0.0], [0.0, 1.0]])
    h = np.kron(sz, m)
    s = spin_operators()
    mw = 0.5 * cfg.microwave_rabi * np.exp(-1j * cfg.microwave_detuning * float(t))
    h += np.kron(mw * s["+"] + np.conj(mw) * s["-"], identity_fock(nf))
    return 0.5 * (h + h.conj().T)


def validate_config(cfg: PhysicalConfig):
    """Regime checks. Returns a list of human-readable findings.

    Entries prefixed "warning:" flag regimes where the closed-form effective
    model degrades; "error:" entries mark configurations the effective layer
    will refuse (full integration still works). Hard nonphysical values
    raise instead (already enforced at construction).
    """
    findings = []
    eta = lamb_dicke(cfg)
    if eta >= 0.5:
        findings.append(
            f"warning: Lamb-Dicke parameter {eta:.3f} >= 0.5; first-order lattice expansion unreliable"
        )
    ratio = abs(cfg.stark_amplitude / cfg.running_freq)
    if ratio >= 0.5:
        findings.append(
            "warning: |stark_amplitude/running_freq| = "
            f"{ratio:.3f} >= 0.5; effective-model regime violated (higher-order carrier peaks grow)"
        )
    if cfg.running_freq == cfg.omega_z:
        findings.append(
            "error: running_freq equals the trap frequency; sideband denominators are singular"
        )
    return findings
