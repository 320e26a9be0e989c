"""Command line front end: config parsing, dispatch, CSV/plot-file output.

Config files are flat sectioned key = value text::

    [experiment]
    kind = spectrum          # spectrum | rabi | rabi-scan | cool | thermometry
    seed = 1                 # synthetic-noise seed, recorded in the sidecar
    noise = off              # on: add projection noise to population columns
    shots = 100
    out = myrun              # output stem, default: the kind

    [physical]
    omega_x = 910 khz        # frequencies are ordinary (not angular) and
    omega_y = 970 khz        # must carry a unit: hz, khz, mhz
    omega_z = 790 khz
    stark_shift = 310 khz
    omega_r = 300 khz        # running-lattice beat frequency
    microwave_rabi = 43 khz
    microwave_detuning = 0 hz
    t2 = 0.47 ms             # times carry s / ms / us; 0 s disables dephasing
    mass = 171 u
    wavelength = 377.2 nm
    geometry = 1.4142135623730951

    [spectrum]               # only the section of the selected kind is used
    detuning_min = -1200 khz
    detuning_max = 1200 khz
    detuning_step = 5 khz
    pulse_duration = 75 us
    nbar0 = 18
    fock_levels = 0          # 0: pick automatically from nbar0
    expansion_order = first
    prominence = 0.05

Every key has a default matching the reference operating point, so a
config may set only what it changes.  Unknown keys, missing unit
suffixes and out-of-range values are reported with the key path and
line number.  All output files are LF-terminated and byte-stable for a
fixed config and seed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace as _dc_replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import pi_time
from .effective import SidebandBranch, branch_rabi
from .errors import ConfigError, SimError
from .experiments import (
    CoolingSchedule,
    add_projection_noise,
    default_fock_levels,
    flop_populations,
    rabi_trace,
    rabi_vs_lattice_frequency,
    sideband_asymmetry_thermometry,
    sideband_cooling,
    sideband_profile,
    sideband_spectrum,
)
from .hilbert import thermal_distribution
from .model import ATOMIC_MASS_KG, ExpansionOrder, PhysicalConfig

_TWO_PI = 2.0 * math.pi

_FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6}
_LENGTH_UNITS = {"m": 1.0, "um": 1e-6, "nm": 1e-9}
_MASS_UNITS = {"u": 1.0}

_KINDS = ("spectrum", "rabi", "rabi-scan", "cool", "thermometry")
_BRANCH_TOKENS = tuple(b.value for b in SidebandBranch)
_ORDER_TOKENS = tuple(o.value for o in ExpansionOrder)


@dataclass(frozen=True)
class _Key:
    """One schema entry: value kind, default, optional range/choice check."""

    kind: str
    default: object
    lo: float | None = None
    hi: float | None = None
    choices: tuple | None = None
    lo_open: bool = False


# fmt: off
_SCHEMA: dict[str, dict[str, _Key]] = {
    "experiment": {
        "kind":  _Key("str", None, choices=_KINDS + ("thermo",)),
        "seed":  _Key("int", 0, lo=0),
        "noise": _Key("onoff", False),
        "shots": _Key("int", 100, lo=1),
        "out":   _Key("str", None),
    },
    "physical": {
        "omega_x":            _Key("freq", 910e3, lo=0, lo_open=True),
        "omega_y":            _Key("freq", 970e3, lo=0, lo_open=True),
        "omega_z":            _Key("freq", 790e3, lo=0, lo_open=True),
        "stark_shift":        _Key("freq", 310e3),
        "omega_r":            _Key("freq", 300e3, lo=0, lo_open=True),
        "microwave_rabi":     _Key("freq", 43e3, lo=0),
        "microwave_detuning": _Key("freq", 0.0),
        "t2":                 _Key("time", 0.47e-3, lo=0),
        "mass":               _Key("mass", 171.0, lo=0, lo_open=True),
        "wavelength":         _Key("length", 377.2e-9, lo=0, lo_open=True),
        "geometry":           _Key("float", math.sqrt(2.0), lo=0, lo_open=True),
    },
    "spectrum": {
        "detuning_min":    _Key("freq", -1200e3),
        "detuning_max":    _Key("freq", 1200e3),
        "detuning_step":   _Key("freq", 5e3, lo=0, lo_open=True),
        "pulse_duration":  _Key("time", 75e-6, lo=0, lo_open=True),
        "nbar0":           _Key("float", 18.0, lo=0),
        "fock_levels":     _Key("int", 0, lo=0),
        "expansion_order": _Key("str", "first", choices=_ORDER_TOKENS),
        "prominence":      _Key("float", 0.05, lo=0, hi=1, lo_open=True),
    },
    "rabi": {
        "detuning":        _Key("freq", 490e3),
        "duration":        _Key("time", 1.0e-3, lo=0, lo_open=True),
        "samples":         _Key("int", 101, lo=2),
        "nbar0":           _Key("float", 18.0, lo=0),
        "model":           _Key("str", "full", choices=("full", "effective")),
        "branch":          _Key("str", "b1-", choices=_BRANCH_TOKENS),
        "fock_levels":     _Key("int", 0, lo=0),
        "expansion_order": _Key("str", "first", choices=_ORDER_TOKENS),
    },
    "rabi-scan": {
        "lattice_freqs":   _Key("freq_list", (300e3, 500e3, 600e3, 700e3)),
        "branches":        _Key("str_list", ("b1-", "c1"), choices=_BRANCH_TOKENS),
        "nbar0":           _Key("float", 18.0, lo=0),
        "fock_levels":     _Key("int", 0, lo=0),
        "expansion_order": _Key("str", "first", choices=_ORDER_TOKENS),
        "periods":         _Key("float", 2.5, lo=0, lo_open=True),
        "samples":         _Key("int", 72, lo=8),
    },
    "cool": {
        "pulse_count":     _Key("int", 200, lo=1),
        "pulse_start":     _Key("time", 60e-6, lo=0, lo_open=True),
        "pulse_end":       _Key("time", 230e-6, lo=0, lo_open=True),
        "repump":          _Key("time", 5e-6, lo=0, lo_open=True),
        "detuning":        _Key("freq_or_auto", None),
        "nbar0":           _Key("float", 18.0, lo=0),
        "model":           _Key("str", "effective", choices=("effective", "full")),
        "fock_levels":     _Key("int", 0, lo=0),
        "expansion_order": _Key("str", "first", choices=_ORDER_TOKENS),
    },
    "thermometry": {
        "nbar0":          _Key("float", 0.02, lo=0),
        "probe_rabi":     _Key("freq", 2e3, lo=0, lo_open=True),
        "probe_duration": _Key("time", 250e-6, lo=0, lo_open=True),
        "fock_levels":    _Key("int", 0, lo=0),
    },
}
# fmt: on

_UNIT_TABLES = {
    "freq": _FREQ_UNITS,
    "time": _TIME_UNITS,
    "length": _LENGTH_UNITS,
    "mass": _MASS_UNITS,
}


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved run: selector, physics, and experiment knobs.

    Frequencies are stored in ordinary Hz and times in seconds exactly as
    parsed; the angular-frequency conversion happens once, in
    ``physical`` / at dispatch, so a config echo re-parses to an equal
    RunConfig bit for bit.
    """

    kind: str
    seed: int
    noise: bool
    shots: int
    out_stem: str
    physical_values: tuple
    params: tuple
    declared_kind: str | None = field(default=None, compare=False)

    @cached_property
    def physical(self) -> PhysicalConfig:
        d = dict(self.physical_values)
        return PhysicalConfig(
            trap_freqs=(
                _TWO_PI * d["omega_x"],
                _TWO_PI * d["omega_y"],
                _TWO_PI * d["omega_z"],
            ),
            stark_amplitude=_TWO_PI * d["stark_shift"],
            running_freq=_TWO_PI * d["omega_r"],
            microwave_rabi=_TWO_PI * d["microwave_rabi"],
            microwave_detuning=_TWO_PI * d["microwave_detuning"],
            coherence_time=d["t2"],
            ion_mass=d["mass"] * ATOMIC_MASS_KG,
            lattice_wavelength=d["wavelength"],
            lattice_geometry_factor=d["geometry"],
        )


@dataclass
class ResultBundle:
    """What a run produced: the table, its provenance, and plot payloads."""

    kind: str
    header: tuple
    rows: tuple
    echo: str
    version: str
    wall_seconds: float
    seed: int
    jobs: int
    stem: str
    notes: tuple = ()
    extras: dict = field(default_factory=dict)
    files: tuple = ()


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _number(token: str, path: str, line: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise ConfigError(f"not a number: {token!r}", key=path, line=line) from None
    if not math.isfinite(v):
        raise ConfigError(f"value must be finite, got {token!r}", key=path, line=line)
    return v


def _united(text: str, table: dict, path: str, line: int) -> float:
    toks = text.split()
    if len(toks) != 2 or toks[1].lower() not in table:
        allowed = "/".join(table)
        raise ConfigError(
            f"missing unit suffix (expected '<number> {allowed}', got {text!r})",
            key=path,
            line=line,
        )
    return _number(toks[0], path, line) * table[toks[1].lower()]


def _check_range(v, key: _Key, path: str, line: int):
    bad = False
    if key.lo is not None:
        bad = v < key.lo or (key.lo_open and v == key.lo)
    if not bad and key.hi is not None:
        bad = v > key.hi
    if bad:
        lo = "" if key.lo is None else (">" if key.lo_open else ">=") + f" {key.lo:g}"
        hi = "" if key.hi is None else f"<= {key.hi:g}"
        rng = " and ".join(s for s in (lo, hi) if s)
        raise ConfigError(f"value {v!r} out of range ({rng})", key=path, line=line)
    return v


def _parse_value(text: str, key: _Key, path: str, line: int):
    if key.kind in _UNIT_TABLES:
        return _check_range(_united(text, _UNIT_TABLES[key.kind], path, line), key, path, line)
    if key.kind == "freq_or_auto":
        if text.strip().lower() == "auto":
            return None
        return _united(text, _FREQ_UNITS, path, line)
    if key.kind == "float":
        return _check_range(_number(text, path, line), key, path, line)
    if key.kind == "int":
        v = _number(text, path, line)
        if v != int(v):
            raise ConfigError(f"expected an integer, got {text!r}", key=path, line=line)
        return int(_check_range(v, key, path, line))
    if key.kind == "onoff":
        t = text.strip().lower()
        if t not in ("on", "off"):
            raise ConfigError(f"expected on/off, got {text!r}", key=path, line=line)
        return t == "on"
    if key.kind == "str":
        t = text.strip()
        if key.choices and t not in key.choices:
            raise ConfigError(
                f"expected one of {', '.join(key.choices)}; got {t!r}",
                key=path,
                line=line,
            )
        return t
    if key.kind == "freq_list":
        items = [s.strip() for s in text.split(",")]
        split = [it.split() for it in items]
        if not all(split):
            raise ConfigError("empty list item", key=path, line=line)
        # a single trailing unit distributes over bare earlier entries
        tail_unit = split[-1][1].lower() if len(split[-1]) == 2 else None
        vals = []
        for toks in split:
            if len(toks) == 2:
                vals.append(_united(" ".join(toks), _FREQ_UNITS, path, line))
            elif len(toks) == 1 and tail_unit:
                vals.append(_united(f"{toks[0]} {tail_unit}", _FREQ_UNITS, path, line))
            else:
                raise ConfigError(
                    f"missing unit suffix on list entry {' '.join(toks)!r}",
                    key=path,
                    line=line,
                )
        if any(v <= 0 for v in vals):
            raise ConfigError("frequencies must be positive", key=path, line=line)
        return tuple(vals)
    if key.kind == "str_list":
        vals = tuple(s.strip() for s in text.split(","))
        for v in vals:
            if not v or (key.choices and v not in key.choices):
                raise ConfigError(
                    f"expected entries from {', '.join(key.choices or ())}; got {v!r}",
                    key=path,
                    line=line,
                )
        return vals
    raise AssertionError(f"unhandled schema kind {key.kind}")


def _scan(text: str) -> dict:
    """Raw pass: section/key/value strings with their line numbers."""
    entries: dict[tuple[str, str], tuple[str, int]] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", line=no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=no)
        if section is None:
            raise ConfigError("key before any [section] header", line=no)
        k, v = line.split("=", 1)
        k, v = k.strip().lower(), v.strip()
        path = f"{section}.{k}"
        if k not in _SCHEMA[section]:
            raise ConfigError("unknown key", key=path, line=no)
        if (section, k) in entries:
            raise ConfigError("duplicate key", key=path, line=no)
        if not v:
            raise ConfigError("empty value", key=path, line=no)
        entries[(section, k)] = (v, no)
    return entries


def _resolve_section(entries: dict, section: str) -> dict:
    out = {}
    for name, key in _SCHEMA[section].items():
        got = entries.get((section, name))
        if got is None:
            out[name] = key.default
        else:
            out[name] = _parse_value(got[0], key, f"{section}.{name}", got[1])
    return out


def _cross_checks(kind: str, d: dict, entries: dict):
    def line_of(name):
        got = entries.get((kind, name))
        return got[1] if got else None

    if kind == "spectrum":
        span = d["detuning_max"] - d["detuning_min"]
        if span <= 0:
            raise ConfigError(
                "detuning_max must exceed detuning_min",
                key="spectrum.detuning_max",
                line=line_of("detuning_max"),
            )
        steps = span / d["detuning_step"]
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigError(
                "grid span is not a whole number of steps",
                key="spectrum.detuning_step",
                line=line_of("detuning_step"),
            )
    for name in ("fock_levels",):
        if name in d and d[name] and d[name] < 8:
            raise ConfigError(
                "fock_levels must be 0 (automatic) or at least 8",
                key=f"{kind}.{name}",
                line=line_of(name),
            )


def parse_config(text: str, *, selector: str | None = None) -> RunConfig:
    """Parse flat sectioned key = value text into a validated RunConfig.

    ``selector`` (the CLI subcommand) takes precedence over the config's
    own kind; without either, a missing kind is an error.  Every omitted
    key falls back to the reference operating point.
    """
    entries = _scan(text)
    exp = _resolve_section(entries, "experiment")
    phys = _resolve_section(entries, "physical")
    declared = exp["kind"]
    if declared == "thermo":
        declared = "thermometry"
    kind = selector or declared
    if kind is None:
        # surface value errors in the remaining sections first
        for sec in _SCHEMA:
            if sec not in ("experiment", "physical"):
                _cross_checks(sec, _resolve_section(entries, sec), entries)
        raise ConfigError(
            "missing experiment selector 'kind' (one of "
            + ", ".join(_KINDS)
            + ")",
            key="experiment.kind",
        )
    if kind == "thermo":
        kind = "thermometry"
    params = _resolve_section(entries, kind)
    _cross_checks(kind, params, entries)
    # validate any sections the selector is not using, so errors never hide
    for sec in _SCHEMA:
        if sec not in ("experiment", "physical", kind):
            _cross_checks(sec, _resolve_section(entries, sec), entries)
    return RunConfig(
        kind=kind,
        seed=exp["seed"],
        noise=exp["noise"],
        shots=exp["shots"],
        out_stem=exp["out"] or kind,
        physical_values=tuple(phys.items()),
        params=tuple(params.items()),
        declared_kind=declared,
    )


# ---------------------------------------------------------------------------
# echo
# ---------------------------------------------------------------------------

_ECHO_UNIT = {"freq": "hz", "time": "s", "length": "m", "mass": "u"}


def _echo_value(key: _Key, v) -> str:
    if key.kind in _ECHO_UNIT:
        return f"{v!r} {_ECHO_UNIT[key.kind]}"
    if key.kind == "freq_or_auto":
        return "auto" if v is None else f"{v!r} hz"
    if key.kind == "freq_list":
        return ", ".join(f"{x!r} hz" for x in v)
    if key.kind == "str_list":
        return ", ".join(v)
    if key.kind == "onoff":
        return "on" if v else "off"
    if key.kind == "float":
        return repr(v)
    return str(v)


def echo_config(rc: RunConfig) -> str:
    """Canonical text for a RunConfig: every key, resolved, base units.

    Base units (hz, s) keep the echo exact: the printed floats are the
    stored ones, so re-parsing reproduces an equal RunConfig.
    """
    lines = [
        "[experiment]",
        f"kind = {rc.kind}",
        f"seed = {rc.seed}",
        f"noise = {'on' if rc.noise else 'off'}",
        f"shots = {rc.shots}",
        f"out = {rc.out_stem}",
        "",
        "[physical]",
    ]
    for name, v in rc.physical_values:
        lines.append(f"{name} = {_echo_value(_SCHEMA['physical'][name], v)}")
    lines += ["", f"[{rc.kind}]"]
    for name, v in rc.params:
        lines.append(f"{name} = {_echo_value(_SCHEMA[rc.kind][name], v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _order(d):
    return ExpansionOrder(d["expansion_order"]) if "expansion_order" in d else ExpansionOrder.FIRST


def _grid_hz(d: dict) -> np.ndarray:
    n = int(round((d["detuning_max"] - d["detuning_min"]) / d["detuning_step"])) + 1
    return d["detuning_min"] + d["detuning_step"] * np.arange(n)


def _run_spectrum(rc: RunConfig, jobs: int, rng, notes: list):
    d = dict(rc.params)
    hz = _grid_hz(d)
    res = sideband_spectrum(
        rc.physical,
        _TWO_PI * hz,
        d["pulse_duration"],
        d["nbar0"],
        fock_levels=d["fock_levels"] or None,
        expansion_order=_order(d),
        prominence=d["prominence"],
        jobs=jobs,
    )
    p = res.populations
    if rc.noise:
        p = add_projection_noise(p, rng, rc.shots)
    rows = [(float(f / 1e3), float(v)) for f, v in zip(hz, p)]
    return ("detuning_khz", "p1"), rows, {"spectrum": res, "written": p}


def _run_rabi(rc: RunConfig, jobs: int, rng, notes: list):
    d = dict(rc.params)
    times = np.linspace(0.0, d["duration"], d["samples"])
    branch = SidebandBranch(d["branch"]) if d["model"] == "effective" else None
    traj = rabi_trace(
        rc.physical,
        _TWO_PI * d["detuning"],
        times,
        d["nbar0"],
        d["model"],
        branch=branch,
        fock_levels=d["fock_levels"] or None,
        expansion_order=_order(d),
    )
    p = np.asarray(traj.populations, dtype=float)
    if rc.noise:
        p = add_projection_noise(p, rng, rc.shots)
    rows = [(float(t * 1e6), float(v)) for t, v in zip(times, p)]
    return ("time_us", "p1"), rows, {"trace": traj, "written": p}


def _run_scan(rc: RunConfig, jobs: int, rng, notes: list):
    d = dict(rc.params)
    res = rabi_vs_lattice_frequency(
        rc.physical,
        _TWO_PI * np.asarray(d["lattice_freqs"]),
        branches=tuple(SidebandBranch(b) for b in d["branches"]),
        nbar0=d["nbar0"],
        fock_levels=d["fock_levels"] or None,
        expansion_order=_order(d),
        periods=d["periods"],
        samples=d["samples"],
    )
    rows = []
    for pt in res.points:
        rows.append(
            (
                float(pt.omega_r / (_TWO_PI * 1e3)),
                pt.branch.value,
                float(pt.predicted / (_TWO_PI * 1e3)),
                float(pt.measured / (_TWO_PI * 1e3)),
                (pt.note or "").replace(",", ";"),
            )
        )
    header = ("omega_r_khz", "branch", "predicted_khz", "measured_khz", "note")
    return header, rows, {"scan": res}


def _run_cool(rc: RunConfig, jobs: int, rng, notes: list):
    d = dict(rc.params)
    sched = CoolingSchedule(
        pulse_count=d["pulse_count"],
        start_duration=d["pulse_start"],
        end_duration=d["pulse_end"],
        repump_duration=d["repump"],
        detuning=None if d["detuning"] is None else _TWO_PI * d["detuning"],
    )
    res = sideband_cooling(
        rc.physical,
        sched,
        d["nbar0"],
        model=d["model"],
        fock_levels=d["fock_levels"] or None,
        expansion_order=_order(d),
    )
    rows = [(k + 1, float(nb)) for k, nb in enumerate(res.nbar_history)]

    # sideband pair before/after, for the plot files
    pref = abs(branch_rabi(rc.physical, SidebandBranch.RED_MINUS))
    tau = pi_time(pref)
    offsets = _TWO_PI * np.linspace(-15e3, 15e3, 61)
    nf = len(res.final_populations)
    before = thermal_distribution(d["nbar0"], nf)
    profiles = {
        "offsets_khz": offsets / (_TWO_PI * 1e3),
        "before": (
            sideband_profile(before, pref, tau, offsets, red=True),
            sideband_profile(before, pref, tau, offsets, red=False),
        ),
        "after": (
            sideband_profile(res.final_populations, pref, tau, offsets, red=True),
            sideband_profile(res.final_populations, pref, tau, offsets, red=False),
        ),
    }
    return ("pulse_index", "nbar"), rows, {"cooling": res, "profiles": profiles}


def _run_thermo(rc: RunConfig, jobs: int, rng, notes: list):
    d = dict(rc.params)
    nf = d["fock_levels"] or max(64, default_fock_levels(d["nbar0"]) * 4)
    pops = thermal_distribution(d["nbar0"], nf)
    pref = _TWO_PI * d["probe_rabi"]
    tau = d["probe_duration"]
    p_red = flop_populations(pops, pref, tau, red=True)
    p_blue = flop_populations(pops, pref, tau, red=False)
    if rc.noise:
        p_red, p_blue = add_projection_noise(np.array([p_red, p_blue]), rng, rc.shots)
    th = sideband_asymmetry_thermometry(float(p_red), float(p_blue))
    if th.flag:
        notes.append(f"thermometry: {th.flag}")
    rows = [(float(p_red), float(p_blue), float(th.ratio), float(th.nbar))]
    return ("p_red", "p_blue", "ratio", "nbar"), rows, {"thermometry": th}


_DISPATCH = {
    "spectrum": _run_spectrum,
    "rabi": _run_rabi,
    "rabi-scan": _run_scan,
    "cool": _run_cool,
    "thermometry": _run_thermo,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_lines(path: Path, lines):
    with open(path, "w", newline="") as f:
        for line in lines:
            f.write(line + "\n")


def run(config: RunConfig, *, jobs: int = 1, out_dir=".", notes=()) -> ResultBundle:
    """Execute one configured experiment; write the CSV and its sidecar.

    The CSV is comma-delimited with a unit-bearing header row; the
    sidecar is the full resolved config echo behind comment lines, so it
    re-runs as a config file.  Bytes depend only on config and seed.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    note_list = list(notes)
    header, rows, extras = _DISPATCH[config.kind](config, max(1, int(jobs)), rng, note_list)
    wall = time.perf_counter() - t0

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{config.out_stem}.csv"
    _write_lines(
        csv_path,
        [",".join(header)] + [",".join(_fmt(x) for x in r) for r in rows],
    )
    echo = echo_config(config)
    meta = [
        "# sim run metadata",
        f"# version: {__version__}",
        f"# kind: {config.kind}",
        f"# seed: {config.seed}",
        f"# rows: {len(rows)}",
    ]
    meta += [f"# note: {n}" for n in note_list]
    meta += ["", *echo.splitlines()]
    meta_path = out / f"{config.out_stem}.meta"
    _write_lines(meta_path, meta)

    return ResultBundle(
        kind=config.kind,
        header=tuple(header),
        rows=tuple(tuple(r) for r in rows),
        echo=echo,
        version=__version__,
        wall_seconds=wall,
        seed=config.seed,
        jobs=int(jobs),
        stem=config.out_stem,
        notes=tuple(note_list),
        extras=extras,
        files=(str(csv_path), str(meta_path)),
    )


def _branch_tag(token: str) -> str:
    return token.replace("+", "_plus").replace("-", "_minus")


def emit_plot_data(bundle: ResultBundle, out_dir=".") -> tuple:
    """Write whitespace-delimited plot files, one per curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = bundle.stem
    paths = []

    def dat(name, rows):
        p = out / f"{stem}_{name}.dat"
        _write_lines(p, [" ".join(_fmt(x) for x in r) for r in rows])
        paths.append(str(p))

    if bundle.kind == "spectrum":
        dat("spectrum", bundle.rows)
    elif bundle.kind == "rabi":
        dat("trace", bundle.rows)
    elif bundle.kind == "rabi-scan":
        tokens = []
        for r in bundle.rows:
            if r[1] not in tokens:
                tokens.append(r[1])
        for tok in tokens:
            sel = [r for r in bundle.rows if r[1] == tok]
            dat(f"{_branch_tag(tok)}_measured", [(r[0], r[3]) for r in sel])
            dat(f"{_branch_tag(tok)}_predicted", [(r[0], r[2]) for r in sel])
    elif bundle.kind == "cool":
        dat("nbar", bundle.rows)
        prof = bundle.extras.get("profiles")
        if prof:
            off = prof["offsets_khz"]
            for label in ("before", "after"):
                red, blue = prof[label]
                dat(
                    f"sideband_{label}",
                    [
                        (float(o), float(r), float(b))
                        for o, r, b in zip(off, red, blue)
                    ],
                )
    elif bundle.kind == "thermometry":
        row = bundle.rows[0]
        dat("sidebands", [(-1, row[0]), (1, row[1])])
    return tuple(paths)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sim",
        description="Trapped-ion spin-motion simulator: spectra, Rabi traces, "
        "lattice-frequency scans, sideband cooling, thermometry.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("spectrum", "P1 versus microwave detuning after one probe pulse"),
        ("rabi", "P1 versus pulse duration at a fixed detuning"),
        ("rabi-scan", "fitted versus predicted Rabi rates over lattice frequency"),
        ("cool", "pulsed sideband cooling trajectory"),
        ("thermo", "sideband-asymmetry thermometry of a thermal state"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="config file path")
        sp.add_argument(
            "--jobs",
            type=int,
            default=os.cpu_count() or 1,
            help="worker processes for grid sweeps (default: machine cores)",
        )
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", default=".", help="output directory")
    return ap


def main(argv=None) -> int:
    ns = _build_parser().parse_args(argv)
    kind = "thermometry" if ns.command == "thermo" else ns.command
    try:
        text = Path(ns.config).read_text()
    except OSError as err:
        print(f"sim: {err}", file=sys.stderr)
        return 1
    try:
        rc = parse_config(text, selector=kind)
        notes = []
        if rc.declared_kind is not None and rc.declared_kind != kind:
            notes.append(
                f"command '{ns.command}' overrides config kind '{rc.declared_kind}'"
            )
        if ns.seed is not None and ns.seed != rc.seed:
            notes.append(f"seed {ns.seed} from the command line")
            rc = _dc_replace(rc, seed=ns.seed)
        bundle = run(rc, jobs=ns.jobs, out_dir=ns.out, notes=notes)
        plot_paths = emit_plot_data(bundle, ns.out)
    except ConfigError as err:
        print(f"sim: config error: {err}", file=sys.stderr)
        return 2
    except SimError as err:
        print(f"sim: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"sim: {err}", file=sys.stderr)
        return 1
    files = ", ".join(bundle.files + plot_paths)
    print(
        f"{bundle.kind}: {len(bundle.rows)} rows in {bundle.wall_seconds:.1f} s -> {files}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
