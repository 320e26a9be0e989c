"""Time-evolution engines.

Three Hamiltonian sources are supported: the full time-dependent lattice
drive, a static (effective) operator, and an arbitrary callable t -> matrix.
The workhorse is the lattice path: in the frame co-rotating with the trap,
every expansion order of the lattice term is diagonal in the fixed
eigenbasis of the position quadrature, so a step factors into per-mode 2x2
spin mixes plus one basis-chaining matrix product. Substeps are exact
exponentials of interval-averaged generators, composed as a 4th-order
triple jump; each step is unitary to roundoff, which is what lets the
norm budget (1e-8 per simulated millisecond) hold at the default step.

Dephasing is a sigma_z Lindblad term with rate gamma' = 1/(2 T2), applied
by Strang splitting around the unitary step: spin coherences decay as
e^{-t/T2}, populations are untouched when the Hamiltonian vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IntegratorError
from .hilbert import HilbertDims, JointState, thermal_distribution
from .model import (
    ExpansionOrder,
    PhysicalConfig,
    _position_eigensystem,
    lamb_dicke,
    require_exact_headroom,
)

NORM_BUDGET_PER_MS = 1e-8
DEFAULT_SAMPLES = 200

# 4th-order triple jump: S4(h) = S2(g1 h) S2(g2 h) S2(g1 h), g2 < 0.
_G1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_G2 = 1.0 - 2.0 * _G1
_SUB_LEN = (_G1, _G2, _G1)          # signed substep lengths, units of h
_SUB_START = (0.0, _G1, _G1 + _G2)  # substep start offsets, units of h
_LAST_MID = _SUB_START[2] + 0.5 * _SUB_LEN[2]  # ~0.3244


class LatticeDrive:
    """Full interaction-picture Hamiltonian of lattice plus microwave.

    ``matrix(t)`` produces the dense operator for inspection and for the
    generic integration path; the fast path consumes the structure
    directly and never builds it.
    """

    def __init__(self, cfg: PhysicalConfig, dims: HilbertDims, order: ExpansionOrder = ExpansionOrder.FIRST):
        self.cfg = cfg
        self.dims = dims
        self.order = order

    def matrix(self, t: float) -> np.ndarray:
        from .model import interaction_hamiltonian

        return interaction_hamiltonian(t, self.cfg, self.dims, self.order)

    def default_dt(self) -> float:
        """1/20 of the shortest coefficient period in the drive."""
        cfg = self.cfg
        fastest = cfg.omega_z + cfg.running_freq
        fastest = max(fastest, abs(cfg.microwave_detuning))
        if self.order is not ExpansionOrder.FIRST:
            fastest = max(fastest, 2 * cfg.omega_z + cfg.running_freq)
        return 2 * np.pi / fastest / 20.0


class StaticHamiltonian:
    """A constant Hermitian operator (the effective-model case)."""

    def __init__(self, h: np.ndarray, dims: HilbertDims):
        h = np.asarray(h, dtype=complex)
        if h.shape != (dims.total, dims.total):
            raise ConfigError("static Hamiltonian has wrong shape")
        self.dims = dims
        self._h = h
        self._eigs = None
        self._props: dict = {}

    def matrix(self, t: float) -> np.ndarray:
        return self._h

    def eigensystem(self):
        if self._eigs is None:
            e, v = np.linalg.eigh(self._h)
            self._eigs = (e, v)
        return self._eigs

    def propagator(self, span: float) -> np.ndarray:
        key = round(span, 18)
        u = self._props.get(key)
        if u is None:
            e, v = self.eigensystem()
            u = (v * np.exp(-1j * e * span)) @ v.conj().T
            self._props[key] = u
        return u

    def norm_scale(self) -> float:
        e, _ = self.eigensystem()
        return float(np.max(np.abs(e))) if len(e) else 0.0


class CallableHamiltonian:
    """Arbitrary time-dependent source, dense at every substep (slow path)."""

    def __init__(self, fn, dims: HilbertDims, dt: float):
        self.fn = fn
        self.dims = dims
        self._dt = dt

    def matrix(self, t: float) -> np.ndarray:
        return np.asarray(self.fn(t), dtype=complex)

    def default_dt(self) -> float:
        return self._dt


@dataclass
class EvolutionSpec:
    """What to evolve under, for how long, and how carefully."""

    hamiltonian: object
    duration: float
    dephasing_T2: float | None = None
    tolerance: float = 1e-8
    method: str = "fixed"
    sample_times: np.ndarray | None = None
    dt: float | None = None

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("duration must be nonnegative")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.method not in ("fixed", "adaptive"):
            raise ConfigError(f"unknown method {self.method!r}")

    def resolved_samples(self) -> np.ndarray:
        if self.sample_times is None:
            return np.linspace(0.0, self.duration, DEFAULT_SAMPLES)
        t = np.asarray(self.sample_times, dtype=float)
        if t.ndim != 1 or len(t) == 0:
            raise ConfigError("sample_times must be a nonempty 1-d array")
        if np.any(np.diff(t) < 0):
            raise ConfigError("sample_times must be nondecreasing")
        if t[0] < 0 or t[-1] > self.duration * (1 + 1e-12) + 1e-30:
            raise ConfigError("sample_times must lie within [0, duration]")
        return t

    def gamma_prime(self) -> float:
        t2 = self.dephasing_T2
        if t2 is None or t2 == 0 or math.isinf(t2):
            return 0.0
        if t2 < 0:
            raise ConfigError("dephasing_T2 must be nonnegative")
        return 1.0 / (2.0 * t2)

    def resolved_dt(self) -> float:
        if self.dt is not None:
            if self.dt <= 0:
                raise ConfigError("dt must be positive")
            return self.dt
        default = getattr(self.hamiltonian, "default_dt", None)
        if default is not None:
            return default()
        # static operators: resolve the step from the spectral radius
        scale = self.hamiltonian.norm_scale()
        if scale <= 0:
            return max(self.duration, 1e-9)
        return 2 * np.pi / scale / 20.0


@dataclass
class TrajectoryResult:
    """Sampled upper-state populations plus the final state."""

    times: np.ndarray
    populations: np.ndarray
    final_state: JointState
    diagnostics: dict = field(default_factory=dict)


def pi_time(coupling: float) -> float:
    """Duration of a full population transfer at the given Rabi frequency."""
    if coupling <= 0:
        raise ConfigError("coupling must be positive for a pi time")
    return math.pi / coupling


# ---------------------------------------------------------------------------
# lattice fast path
# ---------------------------------------------------------------------------


def _phase_integrals(cfg: PhysicalConfig, order: ExpansionOrder, lam: np.ndarray, ta: float, tb: float) -> np.ndarray:
    """Exact time integral of the per-mode lattice coefficient over [ta, tb].

    Written as antiderivative differences so a reversed interval (tb < ta,
    the middle triple-jump substep) yields the negated phase automatically.
    """
    eta = lamb_dicke(cfg)
    wr = cfg.running_freq
    half = 0.5 * cfg.stark_amplitude
    if order is ExpansionOrder.EXACT:
        arg = eta * lam
        return half * (np.cos(arg - wr * tb) - np.cos(arg - wr * ta)) / wr
    cos_int = (math.sin(wr * tb) - math.sin(wr * ta)) / wr
    sin_int = (math.cos(wr * ta) - math.cos(wr * tb)) / wr
    theta = half * (eta * lam * cos_int - sin_int)
    if order is ExpansionOrder.SECOND:
        theta = theta + half * 0.5 * eta**2 * lam**2 * sin_int
    return theta


def _microwave_integral(cfg: PhysicalConfig, deltas: np.ndarray, ta: float, tb: float) -> np.ndarray:
    """Integral of (Omega/2) e^{-i delta t} over the substep, per detuning."""
    s = tb - ta
    mid = 0.5 * (ta + tb)
    window = np.sinc(deltas * s / (2 * np.pi))  # sin(x)/x at x = delta*s/2
    return 0.5 * cfg.microwave_rabi * s * window * np.exp(-1j * deltas * mid)


class _SpinMixer:
    """Applies exp(-i [[-T, M*], [M, T]]) per mode to a (2, N, P, B) block."""

    def __init__(self, n_modes: int, n_points: int, n_batch: int):
        self._u = np.empty((n_modes, n_points, n_batch), dtype=complex)

    def apply(self, state: np.ndarray, theta: np.ndarray, m: np.ndarray):
        """state: (2, N, P, B); theta: (N,) real; m: (P,) complex."""
        th = theta[:, None]
        ang = np.sqrt(th**2 + (m.real**2 + m.imag**2)[None, :])
        cos = np.cos(ang)
        snc = np.sinc(ang / np.pi)  # sin(ang)/ang, exact 1 at 0
        tilt = 1j * th * snc
        a00 = cos + tilt
        a11 = cos - tilt
        a01 = (-1j * snc) * np.conj(m)[None, :]
        a10 = (-1j * snc) * m[None, :]
        s0, s1 = state[0], state[1]
        u = self._u
        np.multiply(a00[..., None], s0, out=u)
        u += a01[..., None] * s1
        s1 *= a11[..., None]
        s1 += a10[..., None] * s0
        s0[...] = u


class _LatticeEngine:
    """Batched triple-jump integrator in the quadrature eigenframe.

    State layout: (2, N, P, B) — spin, motional mode, detuning point,
    batch column. All points share the step size; the microwave detuning
    is the only per-point quantity. Between substeps the frame is advanced
    by a precomputed basis-chaining matrix; the state is kept in-frame
    across a whole run and only transformed out when a lab-frame state is
    requested.
    """

    def __init__(self, drive: LatticeDrive, deltas: np.ndarray, n_points: int, n_batch: int):
        self.drive = drive
        self.cfg = drive.cfg
        self.nf = drive.dims.fock_levels
        self.deltas = np.asarray(deltas, dtype=float)
        if self.deltas.shape != (n_points,):
            raise ConfigError("deltas must have one entry per grid point")
        self.n_points = n_points
        self.n_batch = n_batch
        self.lam, self.w = _position_eigensystem(self.nf)
        self.mixer = _SpinMixer(self.nf, n_points, n_batch)
        self._scratch = np.empty((self.nf, n_points * n_batch), dtype=complex)
        self._g_cache: dict = {}

    def _g(self, dtau: float) -> np.ndarray:
        key = round(dtau, 18)
        g = self._g_cache.get(key)
        if g is None:
            n = np.arange(self.nf)
            ph = np.exp(-1j * self.cfg.omega_z * dtau * n)
            g = (self.w.T * ph) @ self.w
            self._g_cache[key] = g
        return g

    def _apply_fock(self, state: np.ndarray, mat: np.ndarray):
        flat = state.reshape(2, self.nf, -1)
        scratch = self._scratch
        if scratch.shape[1] != flat.shape[2]:
            scratch = np.empty((self.nf, flat.shape[2]), dtype=complex)
        for s in range(2):
            np.matmul(mat, flat[s], out=scratch)
            flat[s][...] = scratch

    def shift_frame(self, state: np.ndarray, dtau: float):
        self._apply_fock(state, self._g(dtau))

    def enter_frame(self, state_lab: np.ndarray, tau: float) -> np.ndarray:
        ph = np.exp(-1j * self.cfg.omega_z * tau * np.arange(self.nf))
        state = state_lab * ph[None, :, None, None]
        self._apply_fock(state, self.w.T.astype(complex))
        return state

    def exit_frame(self, state: np.ndarray, tau: float) -> np.ndarray:
        out = state.copy()
        self._apply_fock(out, self.w.astype(complex))
        ph = np.exp(1j * self.cfg.omega_z * tau * np.arange(self.nf))
        out *= ph[None, :, None, None]
        return out

    @staticmethod
    def plan(t0: float, t1: float, h_target: float):
        """(n_steps, h, first midpoint, last midpoint) for a segment."""
        span = t1 - t0
        n = max(1, math.ceil(span / h_target - 1e-9))
        h = span / n
        return n, h, t0 + 0.5 * _G1 * h, t1 - h + _LAST_MID * h

    def run_segment(self, state: np.ndarray, t0: float, t1: float, h_target: float, accum=None):
        """Advance in-frame state from t0 to t1 with uniform steps.

        The state must enter in the frame of the segment's first substep
        midpoint and leaves in the frame of its last one.
        """
        n_steps, h, _, _ = self.plan(t0, t1, h_target)
        g_inner = self._g((_SUB_START[1] + 0.5 * _SUB_LEN[1]) * h - 0.5 * _G1 * h)
        g_bound = self._g(_G1 * h)
        cfg, order, lam = self.cfg, self.drive.order, self.lam
        for j in range(n_steps):
            t = t0 + j * h
            for i in range(3):
                ta = t + _SUB_START[i] * h
                tb = ta + _SUB_LEN[i] * h
                theta = _phase_integrals(cfg, order, lam, ta, tb)
                m = _microwave_integral(cfg, self.deltas, ta, tb)
                self.mixer.apply(state, theta, m)
                if i < 2:
                    self._apply_fock(state, g_inner)
            if j < n_steps - 1:
                self._apply_fock(state, g_bound)
            if accum is not None:
                accum.step_done(t + h, state)
        return state


def _block_populations(state: np.ndarray) -> np.ndarray:
    """Upper-spin population per (P, B) column; frame-invariant."""
    return np.sum(state[1].real**2 + state[1].imag**2, axis=0)


def _column_norms(state: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(state.real**2 + state.imag**2, axis=(0, 1)))


class _RunningMean:
    """Trapezoid accumulator of P1 over the integration grid, per column.

    Feeds the dephasing envelope: the damped trace relaxes toward its own
    time average, which is the correct asymptote for both driven and dark
    components.
    """

    def __init__(self, p0: np.ndarray, stride: int = 4):
        self.acc = np.zeros_like(p0)
        self.last_t = 0.0
        self.last_p = p0.copy()
        self.stride = max(1, stride)
        self._count = 0

    def step_done(self, t: float, state: np.ndarray):
        self._count += 1
        if self._count % self.stride:
            return
        self._record(t, _block_populations(state))

    def _record(self, t: float, p: np.ndarray):
        if t > self.last_t:
            self.acc += 0.5 * (self.last_p + p) * (t - self.last_t)
            self.last_t = t
            self.last_p = p

    def record_sample(self, t: float, p: np.ndarray):
        self._record(t, p)

    def mean(self, t: float) -> np.ndarray:
        if t <= 0 or self.last_t <= 0:
            return self.last_p.copy()
        return self.acc / self.last_t


def lattice_batch_populations(
    drive: LatticeDrive,
    initial_cols: np.ndarray,
    deltas: np.ndarray,
    sample_times: np.ndarray,
    h_target: float,
    track_mean: bool = False,
    want_final: bool = False,
):
    """Evolve a (2, N, P, B) batch, sampling P1 at the given times.

    Returns (p1 samples (S, P, B), running-mean samples or None, final
    lab-frame columns or None). Norm drift past ten times the budget
    raises IntegratorError; the stepper is unitary, so this trips only on
    genuinely broken input (NaN, wild step overrides).
    """
    state = np.array(initial_cols, dtype=complex)
    if state.ndim != 4:
        raise ConfigError("initial columns must be (2, N, P, B)")
    _, nf, n_points, n_batch = state.shape
    engine = _LatticeEngine(drive, deltas, n_points, n_batch)
    times = np.asarray(sample_times, dtype=float)
    p_out = np.empty((len(times), n_points, n_batch))
    mean_out = np.empty_like(p_out) if track_mean else None

    accum = _RunningMean(_block_populations(state)) if track_mean else None
    in_frame = False
    cur_t = 0.0
    cur_tau = 0.0
    for si, ts in enumerate(times):
        if ts > cur_t:
            _, _, tau_in, tau_out = engine.plan(cur_t, ts, h_target)
            if not in_frame:
                state = engine.enter_frame(state, tau_in)
                in_frame = True
            else:
                engine.shift_frame(state, tau_in - cur_tau)
            engine.run_segment(state, cur_t, ts, h_target, accum)
            cur_t, cur_tau = ts, tau_out
        p = _block_populations(state)
        if accum is not None:
            accum.record_sample(cur_t, p)
            mean_out[si] = accum.mean(cur_t)
        p_out[si] = p
        drift = float(np.max(np.abs(_column_norms(state) - 1.0)))
        budget = max(NORM_BUDGET_PER_MS * (cur_t / 1e-3), 1e-13)
        if not np.isfinite(drift) or drift > 10 * budget:
            raise IntegratorError(
                "norm drift exceeded ten times the budget",
                {"time": cur_t, "drift": drift, "budget": budget, "dt": h_target},
            )
    if want_final:
        final = engine.exit_frame(state, cur_tau) if in_frame else state.copy()
    else:
        final = None
    return p_out, mean_out, final


# ---------------------------------------------------------------------------
# generic and static paths
# ---------------------------------------------------------------------------


def _expm_apply(h: np.ndarray, s: float, vec: np.ndarray) -> np.ndarray:
    e, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * e * s)) @ (v.conj().T @ vec)


def _generic_step(source, t: float, h: float, vec: np.ndarray) -> np.ndarray:
    """One triple-jump step with midpoint-sampled exact exponentials."""
    for i in range(3):
        ta = t + _SUB_START[i] * h
        s = _SUB_LEN[i] * h
        vec = _expm_apply(source.matrix(ta + 0.5 * s), s, vec)
    return vec


def _generic_step_matrix(source, t: float, h: float) -> np.ndarray:
    """The same step as a dense unitary (for density evolution)."""
    u = None
    for i in range(3):
        ta = t + _SUB_START[i] * h
        s = _SUB_LEN[i] * h
        e, v = np.linalg.eigh(source.matrix(ta + 0.5 * s))
        ui = (v * np.exp(-1j * e * s)) @ v.conj().T
        u = ui if u is None else ui @ u
    return u


def _evolve_generic_pure(source, vec, sample_times, h_target, tolerance, adaptive):
    times = np.asarray(sample_times, dtype=float)
    p_out = np.empty(len(times))
    nf = source.dims.fock_levels
    cur = 0.0
    for si, ts in enumerate(times):
        if ts > cur:
            if adaptive:
                vec = _adaptive_advance(source, vec, cur, ts, h_target, tolerance)
            else:
                n = max(1, math.ceil((ts - cur) / h_target - 1e-9))
                h = (ts - cur) / n
                for j in range(n):
                    vec = _generic_step(source, cur + j * h, h, vec)
            cur = ts
        p_out[si] = float(np.sum(np.abs(vec[nf:]) ** 2))
    return p_out, vec


def _adaptive_advance(source, vec, t0, t1, h_start, tol):
    """Step-doubling error control on the triple-jump stepper."""
    t = t0
    h = min(h_start, max(t1 - t0, 1e-30))
    while t < t1 - 1e-15 * max(1.0, abs(t1)):
        h = min(h, t1 - t)
        coarse = _generic_step(source, t, h, vec)
        half = _generic_step(source, t, 0.5 * h, vec)
        fine = _generic_step(source, t + 0.5 * h, 0.5 * h, half)
        err = float(np.linalg.norm(coarse - fine))
        if err <= tol or h <= 1e-12 * max(1.0, abs(t1)):
            vec = fine
            t += h
            h *= min(2.0, max(0.5, 0.9 * (tol / err) ** 0.2 if err > 0 else 2.0))
        else:
            h *= max(0.3, 0.9 * (tol / err) ** 0.2)
    return vec


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _as_source(spec: EvolutionSpec):
    h = spec.hamiltonian
    if isinstance(h, (LatticeDrive, StaticHamiltonian, CallableHamiltonian)):
        return h
    raise ConfigError("hamiltonian must be a LatticeDrive, StaticHamiltonian, or CallableHamiltonian")


def _max_occupied(vec: np.ndarray, nf: int) -> int:
    amp = np.abs(vec.reshape(2, nf)) ** 2
    occ = np.nonzero(amp.sum(axis=0) > 1e-24)[0]
    return int(occ[-1]) if len(occ) else 0


def _check_exact_guard(source, occupied: int):
    if isinstance(source, LatticeDrive) and source.order is ExpansionOrder.EXACT:
        require_exact_headroom(source.dims, occupied)


def evolve_pure(spec: EvolutionSpec, psi0: JointState) -> TrajectoryResult:
    """Integrate the Schrodinger equation for a pure state.

    Populations are sampled at ``spec.sample_times`` (default 200 uniform
    points); the final state is returned in the interaction picture.
    """
    if spec.gamma_prime() != 0.0:
        raise ConfigError("evolve_pure does not support dephasing; use evolve_density")
    if psi0.kind != "pure":
        raise ConfigError("evolve_pure needs a pure state")
    psi0.validate()
    source = _as_source(spec)
    nf = source.dims.fock_levels
    times = spec.resolved_samples()
    h_target = spec.resolved_dt()
    _check_exact_guard(source, _max_occupied(psi0.data, nf))

    if isinstance(source, LatticeDrive) and spec.method == "fixed":
        cols = psi0.data.reshape(2, nf, 1, 1)
        p_cols, _, final = lattice_batch_populations(
            source, cols, np.array([source.cfg.microwave_detuning]), times, h_target, want_final=True
        )
        p, vec = p_cols[:, 0, 0], final.reshape(-1)
    elif isinstance(source, StaticHamiltonian):
        vec = psi0.data.copy()
        p = np.empty(len(times))
        cur = 0.0
        for si, ts in enumerate(times):
            span = ts - cur
            if span > 0:
                vec = source.propagator(span) @ vec
                cur = ts
            p[si] = float(np.sum(np.abs(vec[nf:]) ** 2))
    else:
        if isinstance(source, LatticeDrive):  # adaptive on the full model
            source = CallableHamiltonian(source.matrix, source.dims, h_target)
        p, vec = _evolve_generic_pure(
            source, psi0.data.copy(), times, h_target, spec.tolerance, spec.method == "adaptive"
        )

    norm = float(np.linalg.norm(vec))
    drift = abs(norm - 1.0)
    budget = max(NORM_BUDGET_PER_MS * (spec.duration / 1e-3), 1e-13)
    if not np.isfinite(drift) or drift > 10 * budget:
        raise IntegratorError(
            "norm drift exceeded ten times the budget",
            {"time": spec.duration, "drift": drift, "budget": budget, "dt": h_target},
        )
    dims = _as_source(spec).dims
    return TrajectoryResult(
        times=times,
        populations=np.clip(p, 0.0, 1.0),
        final_state=JointState.pure(dims, vec / norm),
        diagnostics={"norm_drift": drift, "dt": h_target},
    )


def _spin_block_scale(rho: np.ndarray, nf: int, factor: float):
    rho[:nf, nf:] *= factor
    rho[nf:, :nf] *= factor


def _lattice_density_step(engine: _LatticeEngine, rho: np.ndarray, t: float, h: float) -> np.ndarray:
    """rho -> U rho U^dag for one fixed step; rho in the lab frame."""
    nf = engine.nf
    dim = 2 * nf
    for side in range(2):
        mat = rho if side == 0 else rho.conj().T
        cols = np.ascontiguousarray(mat.reshape(2, nf, 1, dim))
        _, _, tau_in, tau_out = engine.plan(t, t + h, h)
        state = engine.enter_frame(cols, tau_in)
        engine.run_segment(state, t, t + h, h)
        rho = engine.exit_frame(state, tau_out).reshape(dim, dim)
    return rho.conj().T


def evolve_density(spec: EvolutionSpec, rho0: JointState) -> TrajectoryResult:
    """Lindblad evolution with pure spin dephasing at gamma' = 1/(2 T2).

    Strang splitting: half a dephasing step, one unitary step, half a
    dephasing step. With no dephasing this reduces to the unitary engine
    acting on both indices of rho, which is what the pure/density
    cross-check leans on.
    """
    if rho0.kind != "density":
        raise ConfigError("evolve_density needs a density matrix")
    rho0.validate()
    source = _as_source(spec)
    nf = source.dims.fock_levels
    times = spec.resolved_samples()
    h_target = spec.resolved_dt()
    gamma = spec.gamma_prime()
    occupied = np.nonzero(np.abs(np.diag(rho0.data)) > 1e-24)[0]
    _check_exact_guard(source, int(np.max(occupied % nf)) if len(occupied) else 0)

    rho = rho0.data.copy()
    p_out = np.empty(len(times))
    cur = 0.0
    eig_check_every = max(1, len(times) // 8)
    engine = (
        _LatticeEngine(source, np.array([source.cfg.microwave_detuning]), 1, 2 * nf)
        if isinstance(source, LatticeDrive) and spec.method == "fixed"
        else None
    )

    for si, ts in enumerate(times):
        span = ts - cur
        if span > 0:
            n = max(1, math.ceil(span / h_target - 1e-9))
            h = span / n
            half_decay = math.exp(-gamma * h) if gamma else 1.0  # e^{-2 gamma (h/2)}
            u_static = source.propagator(h) if isinstance(source, StaticHamiltonian) else None
            for j in range(n):
                t = cur + j * h
                if gamma:
                    _spin_block_scale(rho, nf, half_decay)
                if engine is not None:
                    rho = _lattice_density_step(engine, rho, t, h)
                elif u_static is not None:
                    rho = u_static @ rho @ u_static.conj().T
                else:
                    u = _generic_step_matrix(source, t, h)
                    rho = u @ rho @ u.conj().T
                if gamma:
                    _spin_block_scale(rho, nf, half_decay)
            cur = ts
            rho = 0.5 * (rho + rho.conj().T)
        p_out[si] = float(np.trace(rho[nf:, nf:]).real)
        tr = float(np.trace(rho).real)
        budget = max(NORM_BUDGET_PER_MS * (cur / 1e-3), 1e-12)
        if not np.isfinite(tr) or abs(tr - 1.0) > 10 * budget:
            raise IntegratorError(
                "trace drift exceeded ten times the budget",
                {"time": cur, "trace": tr, "budget": budget, "dt": h_target},
            )
        if si % eig_check_every == 0 or si == len(times) - 1:
            lo = float(np.linalg.eigvalsh(rho).min())
            if lo < -1e-6:
                raise IntegratorError(
                    "density matrix developed a negative eigenvalue",
                    {"time": cur, "min_eigenvalue": lo, "dt": h_target},
                )
    rho = rho / np.trace(rho).real
    return TrajectoryResult(
        times=times,
        populations=np.clip(p_out, 0.0, 1.0),
        final_state=JointState.density(source.dims, rho),
        diagnostics={"dt": h_target, "gamma_prime": gamma},
    )


def thermal_average(spec: EvolutionSpec, nbar: float, spin0: int = 0, dephasing_path: str = "fast") -> TrajectoryResult:
    """Thermal-ensemble average of the upper-state population.

    Per-Fock pure trajectories weighted by the thermal distribution. With
    dephasing requested, the fast path damps each component's oscillation
    around its own running time average with the e^{-t/(2 T2)} contrast
    envelope of the dephasing channel (a component that never moves stays
    put exactly); the reference path evolves the full density matrix
    instead. The final state is the weighted mixture of the per-component
    finals (fast path: unitary finals, coherence damping not folded in).
    """
    if nbar < 0:
        raise ConfigError("nbar must be nonnegative")
    if dephasing_path not in ("fast", "reference"):
        raise ConfigError("dephasing_path must be 'fast' or 'reference'")
    source = _as_source(spec)
    nf = source.dims.fock_levels
    gamma = spec.gamma_prime()
    times = spec.resolved_samples()

    if gamma and dephasing_path == "reference":
        return evolve_density(spec, JointState.thermal(source.dims, nbar, spin=spin0))

    weights = thermal_distribution(nbar, nf)
    h_target = spec.resolved_dt()
    if isinstance(source, LatticeDrive) and source.order is ExpansionOrder.EXACT:
        # headroom rule against the populated band, not the full cutoff
        band = int(np.nonzero(weights > 1e-9)[0][-1])
        require_exact_headroom(source.dims, band)

    if isinstance(source, LatticeDrive) and spec.method == "fixed":
        cols = np.zeros((2, nf, 1, nf), dtype=complex)
        cols[spin0, np.arange(nf), 0, np.arange(nf)] = 1.0
        p_cols, mean_cols, final_cols = lattice_batch_populations(
            source,
            cols,
            np.array([source.cfg.microwave_detuning]),
            times,
            h_target,
            track_mean=bool(gamma),
            want_final=True,
        )
        p_comp = p_cols[:, 0, :]
        mean_comp = mean_cols[:, 0, :] if gamma else None
        finals = final_cols.reshape(2 * nf, nf)
    else:
        p_comp = np.empty((len(times), nf))
        mean_comp = np.empty((len(times), nf)) if gamma else None
        finals = np.empty((2 * nf, nf), dtype=complex)
        sub = EvolutionSpec(
            hamiltonian=spec.hamiltonian,
            duration=spec.duration,
            tolerance=spec.tolerance,
            method=spec.method,
            sample_times=times,
            dt=spec.dt,
        )
        for n in range(nf):
            vec = np.zeros(source.dims.total, dtype=complex)
            vec[spin0 * nf + n] = 1.0
            traj = evolve_pure(sub, JointState.pure(source.dims, vec))
            p_comp[:, n] = traj.populations
            finals[:, n] = traj.final_state.data
            if gamma:
                mean_comp[:, n] = _running_mean_from_samples(times, traj.populations)

    if gamma:
        env = np.exp(-gamma * times)[:, None]
        p_comp = mean_comp + (p_comp - mean_comp) * env
    p_avg = np.clip(p_comp @ weights, 0.0, 1.0)

    rho_final = (finals * weights) @ finals.conj().T
    rho_final = 0.5 * (rho_final + rho_final.conj().T)
    rho_final /= np.trace(rho_final).real
    return TrajectoryResult(
        times=times,
        populations=p_avg,
        final_state=JointState.density(source.dims, rho_final),
        diagnostics={
            "weights_tail": float(max(0.0, 1.0 - float(weights.sum()))),
            "dephasing_path": dephasing_path if gamma else "none",
        },
    )


def _running_mean_from_samples(times: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Trapezoid running mean of a sampled trace (fallback combine path)."""
    out = np.empty_like(p)
    out[0] = p[0]
    if len(times) == 1:
        return out
    seg = 0.5 * (p[1:] + p[:-1]) * np.diff(times)
    csum = np.cumsum(seg)
    span = times[1:] - times[0]
    good = span > 0
    out[1:][good] = csum[good] / span[good]
    out[1:][~good] = p[0]
    return out
