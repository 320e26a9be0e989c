"""Sideband spectra, Rabi tuning curves, pulsed cooling, and thermometry.

Three measurement campaigns built on the dynamics engine:

* ``sideband_spectrum``: thermal-ensemble response P1(delta) after a fixed
  probe pulse, swept over a detuning grid with peak detection
* ``rabi_vs_lattice_frequency``: full-model traces fitted per lattice beat
  frequency and paired with the closed-form predictions
* ``sideband_cooling``: pulsed red-sideband cooling with optical-pumping
  resets, plus sideband-asymmetry thermometry on the result

Grid sweeps batch many (detuning, Fock component) columns through a single
time loop.  Large thermal ensembles are summed over a strided set of Fock
support nodes with monotone interpolation in sqrt(n); dense summation is
used below the stride threshold and everywhere in ``rabi_trace``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .dynamics import (
    EvolutionSpec,
    LatticeDrive,
    StaticHamiltonian,
    TrajectoryResult,
    lattice_batch_populations,
    thermal_average,
)
from .effective import (
    SidebandBranch,
    branch_detuning,
    branch_hamiltonian,
    branch_rabi,
)
from .errors import ConfigError, IntegratorError, ResonanceError, TruncationError
from .hilbert import (
    HilbertDims,
    JointState,
    embed,
    identity_fock,
    spin_operators,
    thermal_distribution,
    thermal_mean,
)
from .model import ExpansionOrder, PhysicalConfig, require_exact_headroom

DEFAULT_PROBE_DURATION = 75e-6
DEFAULT_PROMINENCE = 0.05
PROJECTION_SHOTS = 100
# thermal support handling: everything below the threshold is summed densely
STRIDE_THRESHOLD = 48
DENSE_SUPPORT = 12
SPREAD_NODES = 26
TRUNCATION_TAIL_LIMIT = 1e-2


def default_fock_levels(nbar0: float) -> int:
    """Truncation that keeps the thermal tail negligible (capped at 160)."""
    if nbar0 <= 0:
        return 16
    return int(min(160, max(32, math.ceil(9.0 * nbar0))))


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PulseSpec:
    """A single probe pulse: where to drive, for how long, with which model."""

    detuning: float
    duration: float
    model: str = "full"
    branch: SidebandBranch | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("pulse duration must be positive")
        if self.model not in ("full", "effective"):
            raise ConfigError(f"unknown pulse model {self.model!r}")
        if self.model == "effective" and self.branch is None:
            raise ConfigError("effective pulses need a sideband branch")


@dataclass
class SpectrumResult:
    """P1 over a detuning grid after one probe pulse, with detected peaks.

    ``peak_indices`` are the raw local maxima above the prominence. An
    over-driven line rings, so maxima closer than the merge radius are
    grouped into one feature whose center is the height-weighted centroid
    of its members; ``feature_centers`` is what peak-position checks use.
    """

    detunings: np.ndarray
    populations: np.ndarray
    pulse_duration: float
    cfg: PhysicalConfig
    peak_indices: np.ndarray
    prominence: float
    feature_centers: np.ndarray = field(default_factory=lambda: np.empty(0))
    feature_heights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        d = np.asarray(self.detunings, dtype=float)
        p = np.asarray(self.populations, dtype=float)
        if d.ndim != 1 or p.shape != d.shape:
            raise ConfigError("detunings and populations must be matching 1-d arrays")
        if len(d) > 1 and np.any(np.diff(d) <= 0):
            raise ConfigError("detuning grid must be strictly increasing")
        if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
            raise ConfigError("populations outside [0, 1]")
        self.detunings = d
        self.populations = np.clip(p, 0.0, 1.0)

    @property
    def peak_detunings(self) -> np.ndarray:
        return self.detunings[self.peak_indices]

    def feature_height_at(self, detuning: float, tol: float) -> float:
        """Height of the detected feature nearest the given detuning.

        Raises if no feature center lies within the tolerance.
        """
        if len(self.feature_centers) == 0:
            raise ConfigError("no features detected")
        k = int(np.argmin(np.abs(self.feature_centers - detuning)))
        if abs(self.feature_centers[k] - detuning) > tol:
            raise ConfigError(f"no feature within {tol:g} rad/s of {detuning:g}")
        return float(self.feature_heights[k])


@dataclass(frozen=True)
class CoolingSchedule:
    """Pulse-train bookkeeping: linear duration ramp plus repump resets."""

    pulse_count: int = 200
    start_duration: float = 60e-6
    end_duration: float = 230e-6
    repump_duration: float = 5e-6
    detuning: float | None = None  # None: first red sideband of the config

    def __post_init__(self):
        if self.pulse_count < 1:
            raise ConfigError("pulse_count must be at least 1")
        for name in ("start_duration", "end_duration", "repump_duration"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def durations(self) -> np.ndarray:
        return np.linspace(self.start_duration, self.end_duration, self.pulse_count)

    def resolve_detuning(self, cfg: PhysicalConfig) -> float:
        if self.detuning is not None:
            return float(self.detuning)
        return cfg.running_freq - cfg.omega_z


@dataclass
class CoolingResult:
    """Mean occupation after each cooling pulse plus the final state."""

    nbar_initial: float
    nbar_history: np.ndarray
    final_populations: np.ndarray
    final_state: JointState
    schedule: CoolingSchedule
    mode: str

    @property
    def nbar_final(self) -> float:
        return float(self.nbar_history[-1])


@dataclass
class FitResult:
    """Point estimates with 1-sigma uncertainties and honest convergence."""

    estimates: dict
    sigmas: dict
    residual_norm: float
    converged: bool
    iterations: int
    flag: str = ""


@dataclass
class ThermometryResult:
    """Mean occupation inferred from the red/blue sideband asymmetry."""

    nbar: float
    ratio: float
    flag: str = ""


@dataclass
class RabiScanPoint:
    omega_r: float
    branch: SidebandBranch
    predicted: float
    measured: float
    fit: FitResult | None = None
    note: str = ""


@dataclass
class RabiScanResult:
    """Measured-vs-predicted coupling strengths over a lattice-frequency grid."""

    points: list = field(default_factory=list)

    def table(self, branch: SidebandBranch) -> np.ndarray:
        rows = [
            (pt.omega_r, pt.measured, pt.predicted)
            for pt in self.points
            if pt.branch is branch
        ]
        return np.array(rows, dtype=float).reshape(-1, 3)


# ---------------------------------------------------------------------------
# batched thermal sweeps
# ---------------------------------------------------------------------------


def _support_nodes(fock_levels: int) -> np.ndarray:
    """Fock indices evolved explicitly; the rest are interpolated."""
    if fock_levels <= STRIDE_THRESHOLD:
        return np.arange(fock_levels)
    xs = np.linspace(
        math.sqrt(DENSE_SUPPORT), math.sqrt(fock_levels - 1), SPREAD_NODES
    )
    tail = np.unique(np.round(xs**2).astype(int))
    return np.concatenate([np.arange(DENSE_SUPPORT), tail])


def _combine_support(p_nodes: np.ndarray, nodes: np.ndarray, weights: np.ndarray):
    """Thermal sum over all levels from populations at the support nodes.

    Monotone cubic interpolation in sqrt(n): flop phases scale with the
    square root of the occupation, so the per-level response is smooth on
    that axis while curving hard on n itself.
    """
    nf = len(weights)
    if len(nodes) == nf:
        return np.clip(p_nodes @ weights, 0.0, 1.0)
    dense = nodes < DENSE_SUPPORT
    out = p_nodes[..., dense] @ weights[nodes[dense]]
    xs = np.sqrt(nodes[~dense].astype(float))
    interp = PchipInterpolator(xs, p_nodes[..., ~dense], axis=-1, extrapolate=False)
    n_tail = np.arange(DENSE_SUPPORT, nf)
    vals = np.clip(interp(np.sqrt(n_tail.astype(float))), 0.0, 1.0)
    out = out + vals @ weights[DENSE_SUPPORT:]
    return np.clip(out, 0.0, 1.0)


def _sweep_dt(cfg: PhysicalConfig, deltas: np.ndarray, order: ExpansionOrder) -> float:
    """One conservative step for a whole sweep (1/20 of the fastest period)."""
    fastest = cfg.omega_z + cfg.running_freq
    if len(deltas):
        fastest = max(fastest, float(np.max(np.abs(deltas))))
    if order is not ExpansionOrder.FIRST:
        fastest = max(fastest, 2 * cfg.omega_z + cfg.running_freq)
    return 2 * np.pi / fastest / 20.0


def _thermal_sweep(
    cfg: PhysicalConfig,
    deltas: np.ndarray,
    times: np.ndarray,
    nbar0: float,
    fock_levels: int,
    order: ExpansionOrder = ExpansionOrder.FIRST,
    max_columns: int = 2048,
    dt: float | None = None,
):
    """P1(t, delta) of a thermal ensemble under the full drive.

    Batches (detuning point, support node) columns through one time loop
    per chunk; dephasing applies the contrast envelope around each
    component's running mean.  Returns an (S, P) array.  ``dt`` pins the
    step so split sweeps stay consistent with a single-shot run.
    """
    dims = HilbertDims(fock_levels)
    weights = thermal_distribution(nbar0, fock_levels)
    nodes = _support_nodes(fock_levels)
    drive = LatticeDrive(cfg, dims, order)
    if order is ExpansionOrder.EXACT:
        band = int(np.nonzero(weights > 1e-9)[0][-1])
        require_exact_headroom(dims, band)
    t2 = cfg.coherence_time
    gamma = 1.0 / (2.0 * t2) if t2 else 0.0
    h = dt if dt is not None else _sweep_dt(cfg, deltas, order)

    n_nodes = len(nodes)
    out = np.empty((len(times), len(deltas)))
    step = max(1, max_columns // n_nodes)
    env = np.exp(-gamma * np.asarray(times))[:, None, None] if gamma else None
    for start in range(0, len(deltas), step):
        dl = np.asarray(deltas[start : start + step], dtype=float)
        cols = np.zeros((2, fock_levels, len(dl), n_nodes), dtype=complex)
        for b, n in enumerate(nodes):
            cols[0, n, :, b] = 1.0
        try:
            p, mean, _ = lattice_batch_populations(
                drive, cols, dl, times, h, track_mean=bool(gamma)
            )
        except IntegratorError as err:
            err.diagnostics.setdefault("detuning_window", (float(dl[0]), float(dl[-1])))
            raise
        if gamma:
            p = mean + (p - mean) * env
        out[:, start : start + len(dl)] = _combine_support(p, nodes, weights)
    return out


# ---------------------------------------------------------------------------
# spectrum and traces
# ---------------------------------------------------------------------------


def _sweep_job(args):
    # module level so a process pool can pickle it
    cfg, deltas, times, nbar0, nf, order, dt = args
    return _thermal_sweep(cfg, deltas, times, nbar0, nf, order, dt=dt)


def _gridded_sweep(cfg, grid, times, nbar0, nf, order, jobs):
    """Sweep the grid, fanning contiguous chunks over worker processes.

    The step size is fixed from the whole grid up front so the split is
    invisible to the physics; chunks come back in submission order.
    """
    if jobs <= 1 or len(grid) < 4:
        return _thermal_sweep(cfg, grid, times, nbar0, nf, order)
    from concurrent.futures import ProcessPoolExecutor

    dt = _sweep_dt(cfg, grid, order)
    chunks = np.array_split(grid, min(4 * jobs, len(grid)))
    work = [(cfg, c, times, nbar0, nf, order, dt) for c in chunks if len(c)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_sweep_job, work))
    return np.concatenate(parts, axis=1)


def _merge_features(detunings, populations, idx, radius, top_fraction=0.5):
    """Group raw maxima closer than the radius into one feature each.

    The feature position is the height-weighted centroid of the group's
    top members (height >= top_fraction of the group maximum), so an
    over-driven line with a center dip lands between its two horns while
    a one-sided ring shoulder cannot drag the center off the line.
    """
    centers, heights = [], []
    group: list = []

    def close(g):
        g = np.asarray(g)
        top = populations[g].max()
        sel = g[populations[g] >= top_fraction * top]
        centers.append(np.average(detunings[sel], weights=populations[sel]))
        heights.append(float(top))

    for i in idx:
        if group and detunings[i] - detunings[group[-1]] > radius:
            close(group)
            group = []
        group.append(i)
    if group:
        close(group)
    return np.asarray(centers), np.asarray(heights)


def sideband_spectrum(
    cfg: PhysicalConfig,
    grid,
    pulse_duration: float = DEFAULT_PROBE_DURATION,
    nbar0: float = 18.0,
    *,
    fock_levels: int | None = None,
    expansion_order: ExpansionOrder = ExpansionOrder.FIRST,
    prominence: float = DEFAULT_PROMINENCE,
    merge_radius: float | None = None,
    jobs: int = 1,
) -> SpectrumResult:
    """Thermal P1 after one probe pulse at every detuning on the grid.

    Peaks are local maxima above the given absolute prominence; ringing
    lobes of one over-driven line are merged into a single feature (see
    SpectrumResult).  The default merge radius stays well inside the line
    spacing of the comb while bridging the fringe spacing of the probe.
    Integrator failures carry the offending detuning window in their
    diagnostics.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or not np.all(np.isfinite(grid)):
        raise ConfigError("detuning grid must be a finite 1-d array")
    if len(grid) > 1 and np.any(np.diff(grid) <= 0):
        raise ConfigError("detuning grid must be strictly increasing")
    if pulse_duration <= 0:
        raise ConfigError("pulse_duration must be positive")
    if nbar0 < 0:
        raise ConfigError("nbar0 must be nonnegative")
    nf = fock_levels or default_fock_levels(nbar0)
    p = _gridded_sweep(
        cfg, grid, np.array([pulse_duration]), nbar0, nf, expansion_order, jobs
    )[0]
    peaks, _ = find_peaks(p, prominence=prominence)
    if merge_radius is None:
        # ring lobes of one line are spaced by the probe fringe 2 pi / tau;
        # distinct comb lines sit several fringes apart
        merge_radius = min(
            0.45 * cfg.running_freq, 1.6 * 2 * np.pi / pulse_duration
        )
    centers, heights = _merge_features(grid, p, peaks, merge_radius)
    return SpectrumResult(
        detunings=grid,
        populations=p,
        pulse_duration=pulse_duration,
        cfg=cfg,
        peak_indices=peaks,
        prominence=prominence,
        feature_centers=centers,
        feature_heights=heights,
    )


def rabi_trace(
    cfg: PhysicalConfig,
    detuning: float,
    times,
    nbar0: float = 0.0,
    model: str = "full",
    *,
    branch: SidebandBranch | None = None,
    fock_levels: int | None = None,
    expansion_order: ExpansionOrder = ExpansionOrder.FIRST,
    dephasing_path: str = "fast",
) -> TrajectoryResult:
    """Thermal-averaged P1 on a duration grid at a fixed drive detuning.

    ``model='full'`` drives the complete lattice Hamiltonian;
    ``model='effective'`` uses the static branch Hamiltonian plus the
    detuning offset from that branch's resonance.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ConfigError("times must be a nonempty 1-d array")
    nf = fock_levels or default_fock_levels(nbar0)
    dims = HilbertDims(nf)
    if model == "full":
        source = LatticeDrive(
            cfg.replace(microwave_detuning=float(detuning)), dims, expansion_order
        )
    elif model == "effective":
        if branch is None:
            raise ConfigError("effective model needs a sideband branch")
        h = branch_hamiltonian(cfg, dims, branch)
        off = branch_detuning(cfg, branch) - float(detuning)
        if off:
            h = h + 0.5 * off * embed(spin_operators()["z"], identity_fock(nf), dims)
        source = StaticHamiltonian(h, dims)
    else:
        raise ConfigError(f"unknown model {model!r}")
    spec = EvolutionSpec(
        hamiltonian=source,
        duration=float(times[-1]),
        dephasing_T2=cfg.coherence_time or None,
        sample_times=times,
    )
    return thermal_average(spec, nbar0, dephasing_path=dephasing_path)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _trace_arrays(trace):
    if isinstance(trace, TrajectoryResult):
        t, y = trace.times, trace.populations
    else:
        t, y = trace
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.ndim != 1 or y.shape != t.shape:
        raise ConfigError("trace must provide matching 1-d times and values")
    if len(t) < 10:
        raise ConfigError("trace needs at least 10 samples")
    return t, y


def _flagged(names, guesses, y, flag) -> FitResult:
    est = dict(zip(names, (float(g) for g in guesses)))
    sig = dict.fromkeys(names, float("inf"))
    return FitResult(
        estimates=est,
        sigmas=sig,
        residual_norm=float(np.linalg.norm(y - np.mean(y))),
        converged=False,
        iterations=0,
        flag=flag,
    )


def _finish_fit(res, names, lb=None, ub=None) -> FitResult:
    resid = float(np.linalg.norm(res.fun))
    m = res.fun.size
    dof = max(m - len(names), 1)
    jtj = res.jac.T @ res.jac
    cov = np.linalg.pinv(jtj) * (resid**2 / dof)
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    # convergence means the residual is numerically orthogonal to the
    # jacobian range (KKT-projected at active bounds), or plain zero;
    # solver success alone is not enough
    grad = res.jac.T @ res.fun
    keep = np.ones(len(res.x), dtype=bool)
    if lb is not None:
        keep &= ~((res.x <= np.asarray(lb) + 1e-12) & (grad > 0))
    if ub is not None:
        keep &= ~((res.x >= np.asarray(ub) - 1e-12) & (grad < 0))
    col = np.linalg.norm(res.jac, axis=0) * resid
    cosg = np.divide(np.abs(grad), col, out=np.zeros_like(grad), where=col > 0)
    worst = float(np.max(cosg[keep])) if keep.any() else 0.0
    converged = bool(res.success) and (
        res.status == 1  # the solver's own scaled-gradient threshold fired
        or resid < 1e-8 * math.sqrt(m)
        or worst < 1e-3
    )
    return FitResult(
        estimates=dict(zip(names, (float(v) for v in res.x))),
        sigmas=dict(zip(names, (float(s) for s in sig))),
        residual_norm=resid,
        converged=converged,
        iterations=int(res.nfev),
        flag="" if converged else "no convergence",
    )


def _thermal_weights(nbar: float, nf: int) -> np.ndarray:
    # truncated absolute weights; the lost tail is negligible at 18*nbar
    if nbar <= 0:
        w = np.zeros(nf)
        w[0] = 1.0
        return w
    r = nbar / (1.0 + nbar)
    return (1.0 - r) * r ** np.arange(nf)


def fit_thermal_rabi(
    trace,
    rabi_guess: float,
    nbar_guess: float,
    *,
    red: bool = False,
    fock_levels: int | None = None,
    nbar_bounds: tuple | None = None,
) -> FitResult:
    """Fit a thermal mixture of flops: P(t) = sum_n p_n sin^2(O sqrt(n+1) t/2).

    Red traces use sqrt(n) (the ground component stays dark).  Returns
    estimates for the coupling prefactor ``rabi`` and the thermal mean
    ``nbar``; degenerate flat traces come back flagged, not raised.

    Once the trace has collapsed, the model is nearly invariant under
    (rabi, nbar) -> (rabi/b, b^2 nbar), so distorted traces can fit best
    at a rescaled wrong basin.  Pass ``nbar_bounds`` when the preparation
    temperature is known to pin the fit to the physical branch.
    """
    t, y = _trace_arrays(trace)
    if rabi_guess <= 0 or nbar_guess < 0:
        raise ConfigError("guesses must be positive rabi, nonnegative nbar")
    if (t[-1] - t[0]) * rabi_guess < 2 * np.pi:
        raise ConfigError("trace must span at least one oscillation")
    names = ("rabi", "nbar")
    if np.ptp(y) < 1e-3:
        return _flagged(names, (rabi_guess, nbar_guess), y, "degenerate: flat trace")
    nf = fock_levels or max(64, int(math.ceil(18.0 * max(nbar_guess, 1.0))))
    root = np.sqrt(np.arange(nf) if red else np.arange(1, nf + 1))

    def residual(x):
        om, nb = x
        w = _thermal_weights(nb, nf)
        return np.sin(0.5 * om * np.outer(t, root)) ** 2 @ w - y

    # the objective is multi-modal in the prefactor (oscillation aliasing),
    # so refine from a few spread starts and keep the best basin
    lb, ub = np.array([0.0, 0.0]), np.array([np.inf, np.inf])
    if nbar_bounds is not None:
        lo, hi = float(nbar_bounds[0]), float(nbar_bounds[1])
        if not 0.0 <= lo < hi:
            raise ConfigError("nbar_bounds must satisfy 0 <= low < high")
        lb[1], ub[1] = lo, hi
        nbar_guess = float(np.clip(nbar_guess, lo, hi))
    best = None
    for factor in (0.5, 0.7, 1.0, 1.4, 2.0):
        res = least_squares(
            residual,
            [factor * rabi_guess, nbar_guess],
            bounds=(lb, ub),
            x_scale=[max(rabi_guess, 1.0), max(nbar_guess, 0.1)],
            max_nfev=400,
        )
        if best is None or res.cost < best.cost:
            best = res
    return _finish_fit(best, names, lb, ub)


def fit_damped_sinusoid(trace) -> FitResult:
    """Fit P(t) = A exp(-t/tau) cos(Omega t + phi) + C.

    The decay is parametrized by the rate k = 1/tau (bounded at zero), so
    undamped data fits cleanly; reported ``decay_time`` is then infinite.
    Frequency seeding comes from the windowed spectrum of the trace.
    """
    t, y = _trace_arrays(trace)
    names = ("amplitude", "decay_rate", "frequency", "phase", "offset")
    out_names = ("amplitude", "decay_time", "frequency", "phase", "offset")
    if np.ptp(y) < 1e-3:
        return _flagged(out_names, (0.0, float("inf"), 0.0, 0.0, float(np.mean(y))), y, "degenerate: flat trace")
    span = t[-1] - t[0]
    c0 = float(np.mean(y))
    a0 = 0.5 * float(np.ptp(y))
    tu = np.linspace(t[0], t[-1], len(t))
    yu = np.interp(tu, t, y - c0)
    power = np.abs(np.fft.rfft(yu * np.hanning(len(yu))))
    freqs = np.fft.rfftfreq(len(yu), tu[1] - tu[0])
    om0 = 2 * np.pi * freqs[int(np.argmax(power[1:])) + 1]
    ph0 = math.acos(min(1.0, max(-1.0, (y[0] - c0) / a0)))
    if len(y) > 1 and y[1] > y[0]:
        ph0 = -ph0

    def residual(x):
        a, k, om, ph, c = x
        return a * np.exp(-k * t) * np.cos(om * t + ph) + c - y

    lb = np.array([0.0, 0.0, 0.0, -2 * np.pi, -np.inf])
    ub = np.array([np.inf] * 5)
    res = least_squares(
        residual,
        [a0, 0.5 / span, om0, ph0, c0],
        bounds=(lb, ub),
        x_scale=[max(a0, 0.1), 1.0 / span, max(om0, 1.0 / span), 1.0, 1.0],
        max_nfev=800,
    )
    fit = _finish_fit(res, names, lb, ub)
    k = fit.estimates.pop("decay_rate")
    sk = fit.sigmas.pop("decay_rate")
    fit.estimates["decay_time"] = 1.0 / k if k > 0 else float("inf")
    fit.sigmas["decay_time"] = sk / k**2 if k > 0 else float("inf")
    return fit


# ---------------------------------------------------------------------------
# tuning curves
# ---------------------------------------------------------------------------


def rabi_vs_lattice_frequency(
    cfg: PhysicalConfig,
    omega_r_grid,
    branches=(SidebandBranch.BLUE_MINUS, SidebandBranch.CARRIER_C1),
    nbar0: float = 18.0,
    *,
    fock_levels: int | None = None,
    expansion_order: ExpansionOrder = ExpansionOrder.FIRST,
    periods: float = 2.5,
    samples: int = 72,
) -> RabiScanResult:
    """Fit full-model traces per lattice frequency against the predictions.

    Sideband branches get the thermal-mixture fit, the carrier gets the
    damped sinusoid.  Per-point failures (guard band, integrator, fit) are
    recorded on the point rather than raised.
    """
    grid = np.asarray(omega_r_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ConfigError("omega_r grid must be a nonempty 1-d array")
    nf = fock_levels or default_fock_levels(nbar0)
    result = RabiScanResult()
    for wr in grid:
        cfg2 = cfg.replace(running_freq=float(wr))
        for br in branches:
            try:
                pred = branch_rabi(cfg2, br)
            except ResonanceError as err:
                result.points.append(
                    RabiScanPoint(wr, br, float("nan"), float("nan"), None, str(err))
                )
                continue
            span = periods * 2 * np.pi / pred
            if br is SidebandBranch.CARRIER_C1:
                span = max(span, 0.4e-3)
            times = np.linspace(0.0, span, samples)
            delta = branch_detuning(cfg2, br)
            try:
                p = _thermal_sweep(
                    cfg2, np.array([delta]), times, nbar0, nf, expansion_order
                )[:, 0]
            except IntegratorError as err:
                result.points.append(
                    RabiScanPoint(
                        wr, br, pred, float("nan"), None, f"integrator: {err}"
                    )
                )
                continue
            if br is SidebandBranch.CARRIER_C1:
                fit = fit_damped_sinusoid((times, p))
                measured = fit.estimates["frequency"]
            else:
                # the scan prepared the state itself, so the temperature is
                # known; bound nbar to keep the fit off the rescaled basin
                bounds = (0.5 * nbar0, 2.0 * nbar0) if nbar0 > 0 else None
                fit = fit_thermal_rabi(
                    (times, p), rabi_guess=pred, nbar_guess=max(nbar0, 0.1),
                    red=br.is_red, nbar_bounds=bounds,
                )
                measured = fit.estimates["rabi"]
            note = "" if fit.converged else (fit.flag or "fit did not converge")
            result.points.append(RabiScanPoint(wr, br, pred, measured, fit, note))
    return result


# ---------------------------------------------------------------------------
# cooling
# ---------------------------------------------------------------------------


def optical_pumping_reset(state):
    """Pump the spin back to |0>, keeping motional populations only.

    Accepts a JointState (returns a diagonal density matrix) or a plain
    population array, (2, N) or (N,), returning the merged (N,) vector.
    Coherences are dropped entirely; recoil heating is neglected.
    """
    if isinstance(state, JointState):
        nf = state.dims.fock_levels
        p = state.motional_populations()
        rho = np.zeros((state.dims.total, state.dims.total), dtype=complex)
        rho[np.arange(nf), np.arange(nf)] = p
        return JointState.density(state.dims, rho)
    arr = np.asarray(state, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 2:
        return arr.sum(axis=0)
    if arr.ndim == 1:
        return arr.copy()
    raise ConfigError("state must be a JointState or a population array")


def _pair_flip_amplitudes(pref: float, detune_off: float, gamma: float, nf: int):
    """Spectral data of each cooling ladder pair's exact dephasing dynamics.

    Pair n couples |0,n> to |1,n-1> at pref*sqrt(n)/2 with the pulse
    detuned by detune_off from the sideband; pure dephasing acts at rate
    gamma on the pair's sigma_z.  Returns (rates, coeffs) of shape (nf, 4)
    such that the flip probability after a pulse of length tau is
    Re sum_k coeffs[n, k] exp(rates[n, k] tau).
    """
    i2 = np.eye(2)
    sz = np.diag([1.0, -1.0])
    deph = gamma * (np.kron(sz, sz) - np.eye(4))
    v0 = np.array([1.0, 0.0, 0.0, 0.0], dtype=complex)
    rates = np.zeros((nf, 4), dtype=complex)
    coeffs = np.zeros((nf, 4), dtype=complex)
    for n in range(1, nf):
        g = 0.5 * pref * math.sqrt(n)
        h = np.array([[0.5 * detune_off, g], [g, -0.5 * detune_off]])
        gen = -1j * (np.kron(h, i2) - np.kron(i2, h.T)) + deph
        w, v = np.linalg.eig(gen)
        coef = np.linalg.solve(v, v0)
        rates[n] = w
        coeffs[n] = v[3] * coef
    return rates, coeffs


def sideband_cooling(
    cfg: PhysicalConfig,
    schedule: CoolingSchedule | None = None,
    nbar0: float = 18.0,
    *,
    model: str = "effective",
    fock_levels: int | None = None,
    expansion_order: ExpansionOrder = ExpansionOrder.FIRST,
) -> CoolingResult:
    """Pulsed red-sideband cooling from a thermal start.

    Effective mode solves each ladder pair's two-level dephasing dynamics
    exactly and updates classical populations per pulse (the repump drops
    coherences anyway).  Full mode drives the complete Hamiltonian per
    pulse, which also covers detunings with no effective form (for example
    the second red sideband); it neglects in-pulse dephasing and is meant
    for short validation runs.
    """
    schedule = schedule or CoolingSchedule()
    if nbar0 < 0:
        raise ConfigError("nbar0 must be nonnegative")
    nf = fock_levels or default_fock_levels(nbar0)
    if nbar0 > 0:
        tail = (nbar0 / (1.0 + nbar0)) ** nf
        if tail > TRUNCATION_TAIL_LIMIT:
            raise TruncationError(
                f"initial nbar {nbar0:g} overflows {nf} levels (tail {tail:.2e})"
            )
    p = thermal_distribution(nbar0, nf)
    delta = schedule.resolve_detuning(cfg)
    taus = schedule.durations()
    t2 = cfg.coherence_time
    gamma = 1.0 / (2.0 * t2) if t2 else 0.0
    history = np.empty(schedule.pulse_count)

    if model == "effective":
        pref = abs(branch_rabi(cfg, SidebandBranch.RED_MINUS))
        off = delta - branch_detuning(cfg, SidebandBranch.RED_MINUS)
        if abs(off) > 2 * np.pi * 50e3:
            raise ConfigError(
                "detuning too far from the first red sideband for the "
                "effective model; use model='full'"
            )
        rates, coeffs = _pair_flip_amplitudes(pref, off, gamma, nf)
        for k, tau in enumerate(taus):
            flip = np.einsum("nj,nj->n", coeffs, np.exp(rates * tau)).real
            np.clip(flip, 0.0, 1.0, out=flip)
            moved = p[1:] * flip[1:]
            p[1:] -= moved
            p[:-1] += moved
            history[k] = thermal_mean(p)
    elif model == "full":
        dims = HilbertDims(nf)
        drive = LatticeDrive(cfg, dims, expansion_order)
        h = _sweep_dt(cfg, np.array([delta]), expansion_order)
        dvec = np.array([delta], dtype=float)
        for k, tau in enumerate(taus):
            active = np.nonzero(p > 1e-12)[0]
            if expansion_order is ExpansionOrder.EXACT:
                require_exact_headroom(dims, int(active[-1]))
            cols = np.zeros((2, nf, 1, len(active)), dtype=complex)
            cols[0, active, 0, np.arange(len(active))] = 1.0
            _, _, final = lattice_batch_populations(
                drive, cols, dvec, np.array([tau]), h, want_final=True
            )
            q = np.abs(final[:, :, 0, :]) ** 2  # (2, nf, B)
            p = (q[0] + q[1]) @ p[active]
            if p[-1] > 1e-3:
                raise TruncationError("population reached the Fock cutoff")
            history[k] = thermal_mean(p)
    else:
        raise ConfigError(f"unknown cooling model {model!r}")

    p = np.clip(p, 0.0, None)
    p /= p.sum()
    total = 2 * nf
    rho = np.zeros((total, total), dtype=complex)
    rho[np.arange(nf), np.arange(nf)] = p
    return CoolingResult(
        nbar_initial=float(thermal_mean(thermal_distribution(nbar0, nf))),
        nbar_history=history,
        final_populations=p,
        final_state=JointState.density(HilbertDims(nf), rho),
        schedule=schedule,
        mode=model,
    )


# ---------------------------------------------------------------------------
# thermometry
# ---------------------------------------------------------------------------


def flop_populations(
    populations,
    rabi_prefactor: float,
    tau: float,
    *,
    red: bool = False,
    detuning_offset: float = 0.0,
) -> float:
    """Spin-flip probability of one matched sideband pulse on a population
    vector: the generalized flop of each ladder pair, thermally weighted."""
    p = np.asarray(populations, dtype=float)
    n = np.arange(len(p))
    om = rabi_prefactor * (np.sqrt(n) if red else np.sqrt(n + 1))
    w2 = om**2 + detuning_offset**2
    frac = np.divide(om**2, w2, out=np.zeros_like(w2), where=w2 > 0)
    return float(p @ (frac * np.sin(0.5 * np.sqrt(w2) * tau) ** 2))


def sideband_profile(
    populations, rabi_prefactor: float, tau: float, offsets, *, red: bool = False
) -> np.ndarray:
    """Sideband line shape over detuning offsets (plot-data helper)."""
    return np.array(
        [
            flop_populations(
                populations, rabi_prefactor, tau, red=red, detuning_offset=o
            )
            for o in np.asarray(offsets, dtype=float)
        ]
    )


def sideband_asymmetry_thermometry(p_red: float, p_blue: float) -> ThermometryResult:
    """Infer the thermal mean from matched red/blue sideband responses.

    r = P_red / P_blue equals nbar/(nbar+1) for a thermal state under
    matched pulses (index-shift identity of the thermal weights), so
    nbar = r/(1-r).  Inputs outside that regime come back flagged with a
    NaN estimate instead of raising.
    """
    if not (0.0 <= p_red <= 1.0) or not (0.0 <= p_blue <= 1.0):
        return ThermometryResult(float("nan"), float("nan"), "out of range")
    if p_blue <= 0.0:
        return ThermometryResult(float("nan"), float("nan"), "undefined: no blue response")
    r = p_red / p_blue
    if r >= 1.0:
        return ThermometryResult(float("nan"), r, "non-thermal: red >= blue")
    return ThermometryResult(r / (1.0 - r), r, "")


def add_projection_noise(values, rng, shots: int = PROJECTION_SHOTS):
    """Shot-count noise: Gaussian approximation of the binomial spread."""
    v = np.asarray(values, dtype=float)
    sig = np.sqrt(np.clip(v * (1.0 - v), 0.0, None) / shots)
    return np.clip(v + rng.normal(0.0, 1.0, v.shape) * sig, 0.0, 1.0)
