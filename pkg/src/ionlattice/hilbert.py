"""Joint spin-motion Hilbert space: dimensions, operators, states.

The joint space is a two-level (pseudo)spin tensored with a truncated
harmonic oscillator. Basis ordering is spin-major everywhere: the flat
index of |s, n> is ``i = s * fock_levels + n``, with s = 0 the lower spin
state. All operators are dense complex arrays; nothing here mutates its
inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

HERMITIAN_TOL = 1e-12
PURE_NORM_TOL = 1e-9
DENSITY_HERM_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-9
DENSITY_EIG_FLOOR = -1e-9
THERMAL_TAIL_WARN = 1e-6


@dataclass(frozen=True)
class HilbertDims:
    """Sizes of the joint space. ``fock_levels`` is the motional cutoff N."""

    fock_levels: int
    spin_levels: int = 2

    def __post_init__(self):
        if self.spin_levels != 2:
            raise ConfigError("only a two-level spin is supported")
        if self.fock_levels < 2:
            raise ConfigError("fock_levels must be at least 2")

    @property
    def total(self) -> int:
        return self.spin_levels * self.fock_levels

    def flat_index(self, spin: int, n: int) -> int:
        if not (0 <= spin < self.spin_levels):
            raise ConfigError(f"spin index {spin} out of range")
        if not (0 <= n < self.fock_levels):
            raise ConfigError(f"Fock index {n} out of range (N={self.fock_levels})")
        return spin * self.fock_levels + n


def require_hermitian(mat: np.ndarray, tol: float = HERMITIAN_TOL, what: str = "operator") -> np.ndarray:
    """Check hermiticity to ``tol`` (max abs deviation) and return the input."""
    dev = np.max(np.abs(mat - mat.conj().T))
    if dev > tol:
        raise ConfigError(f"{what} is not Hermitian (max deviation {dev:.3e})")
    return mat


def ladder_operators(fock_levels: int):
    """Annihilation and creation operators on the truncated oscillator.

    a|n> = sqrt(n)|n-1>. On the truncated space [a, a^dag] is the identity
    except for the last diagonal entry, which is 1 - N; callers that rely on
    the commutator must keep population away from the edge.
    """
    if fock_levels < 2:
        raise ConfigError("fock_levels must be at least 2")
    n = np.arange(1, fock_levels)
    a = np.zeros((fock_levels, fock_levels), dtype=complex)
    a[n - 1, n] = np.sqrt(n)
    return a, a.conj().T


def spin_operators():
    """Pauli and ladder matrices in the (s=0, s=1) basis.

    sigma_z = diag(-1, +1): the lower spin state carries eigenvalue -1.
    sigma_plus raises s=0 -> s=1.
    """
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[-1, 0], [0, 1]], dtype=complex)
    sp = np.array([[0, 0], [1, 0]], dtype=complex)
    sm = sp.conj().T
    return {"x": sx, "y": sy, "z": sz, "+": sp, "-": sm}


def identity_fock(fock_levels: int) -> np.ndarray:
    return np.eye(fock_levels, dtype=complex)


def embed(op_spin: np.ndarray, op_fock: np.ndarray, dims: HilbertDims) -> np.ndarray:
    """Lift spin (x) fock operators to the joint space (spin-major kron)."""
    if op_spin.shape != (dims.spin_levels, dims.spin_levels):
        raise ConfigError("spin operator has wrong shape")
    if op_fock.shape != (dims.fock_levels, dims.fock_levels):
        raise ConfigError("Fock operator has wrong shape")
    return np.kron(op_spin, op_fock)


def thermal_distribution(nbar: float, fock_levels: int) -> np.ndarray:
    """Renormalized thermal occupation probabilities on n = 0..N-1.

    The geometric distribution is truncated at the cutoff and renormalized.
    If the discarded tail weight exceeds 1e-6 a warning is issued so the
    caller can raise the cutoff.
    """
    if nbar < 0:
        raise ConfigError(f"mean occupation must be nonnegative, got {nbar}")
    if fock_levels < 1:
        raise ConfigError("fock_levels must be positive")
    if nbar == 0.0:
        p = np.zeros(fock_levels)
        p[0] = 1.0
        return p
    r = nbar / (1.0 + nbar)
    # log-domain to stay finite for large N * log(r)
    logp = np.arange(fock_levels) * np.log(r) - np.log1p(nbar)
    p = np.exp(logp)
    tail = r**fock_levels
    if tail > THERMAL_TAIL_WARN:
        warnings.warn(
            f"thermal tail weight {tail:.3e} beyond cutoff N={fock_levels} "
            f"(nbar={nbar}); consider a larger cutoff",
            stacklevel=2,
        )
    return p / p.sum()


def thermal_mean(p: np.ndarray) -> float:
    """Mean occupation of a distribution over n = 0..len(p)-1."""
    return float(np.dot(np.arange(len(p)), p))


@dataclass
class JointState:
    """A pure vector or density matrix on the joint space.

    ``kind`` is "pure" or "density". ``data`` is a length-2N complex vector
    or a 2N x 2N complex matrix.
    """

    dims: HilbertDims
    kind: str
    data: np.ndarray

    @classmethod
    def pure(cls, dims: HilbertDims, vec: np.ndarray) -> "JointState":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        state = cls(dims, "pure", vec)
        state.validate()
        return state

    @classmethod
    def density(cls, dims: HilbertDims, mat: np.ndarray) -> "JointState":
        mat = np.asarray(mat, dtype=complex)
        state = cls(dims, "density", mat)
        state.validate()
        return state

    @classmethod
    def basis(cls, dims: HilbertDims, spin: int, n: int) -> "JointState":
        vec = np.zeros(dims.total, dtype=complex)
        vec[dims.flat_index(spin, n)] = 1.0
        return cls(dims, "pure", vec)

    @classmethod
    def thermal(cls, dims: HilbertDims, nbar: float, spin: int = 0) -> "JointState":
        """Spin basis state tensored with a thermal motional mixture."""
        p = thermal_distribution(nbar, dims.fock_levels)
        diag = np.zeros(dims.total)
        offset = spin * dims.fock_levels
        diag[offset : offset + dims.fock_levels] = p
        return cls(dims, "density", np.diag(diag).astype(complex))

    def validate(self) -> "JointState":
        if self.kind == "pure":
            if self.data.shape != (self.dims.total,):
                raise ConfigError("pure state vector has wrong length")
            norm = np.linalg.norm(self.data)
            if abs(norm - 1.0) > PURE_NORM_TOL:
                raise ConfigError(f"pure state norm {norm!r} differs from 1 beyond 1e-9")
        elif self.kind == "density":
            if self.data.shape != (self.dims.total, self.dims.total):
                raise ConfigError("density matrix has wrong shape")
            herm_dev = np.max(np.abs(self.data - self.data.conj().T))
            if herm_dev > DENSITY_HERM_TOL:
                raise ConfigError(f"density matrix not Hermitian (dev {herm_dev:.3e})")
            tr = np.trace(self.data).real
            if abs(tr - 1.0) > DENSITY_TRACE_TOL:
                raise ConfigError(f"density trace {tr!r} differs from 1 beyond 1e-9")
            lo = np.linalg.eigvalsh(self.data).min()
            if lo < DENSITY_EIG_FLOOR:
                raise ConfigError(f"density matrix has negative eigenvalue {lo:.3e}")
        else:
            raise ConfigError(f"unknown state kind {self.kind!r}")
        return self

    def population_upper(self) -> float:
        """Probability of the upper spin state, traced over motion."""
        nf = self.dims.fock_levels
        if self.kind == "pure":
            return float(np.sum(np.abs(self.data[nf:]) ** 2))
        return float(np.trace(self.data[nf:, nf:]).real)

    def motional_populations(self) -> np.ndarray:
        """Populations over n, traced over spin."""
        nf = self.dims.fock_levels
        if self.kind == "pure":
            amp = self.data.reshape(2, nf)
            return np.sum(np.abs(amp) ** 2, axis=0)
        d = np.diag(self.data).real
        return d[:nf] + d[nf:]


def expectation(state: JointState, op: np.ndarray, hermitian: bool = True):
    """<O> for a pure or density state.

    With ``hermitian=True`` the imaginary residue must stay below 1e-9 and a
    real float is returned; otherwise the complex value is passed through.
    """
    if state.kind == "pure":
        val = np.vdot(state.data, op @ state.data)
    else:
        val = np.trace(op @ state.data)
    if hermitian:
        if abs(val.imag) >= 1e-9:
            raise ConfigError(
                f"imaginary residue {val.imag:.3e} too large for a Hermitian expectation"
            )
        return float(val.real)
    return complex(val)
