import math

import numpy as np
import pytest

from ionlattice.errors import ConfigError, ResonanceError
from ionlattice.hilbert import HilbertDims, thermal_distribution
from ionlattice.effective import (
    SidebandBranch,
    branch_detuning,
    branch_hamiltonian,
    branch_rabi,
    carrier_rabi,
    effective_lamb_dicke,
    effective_params,
    predicted_rabi_curve,
    thermal_flop_populations,
)
from ionlattice.experiments import sideband_asymmetry_thermometry
from ionlattice.model import paper_defaults

TWO_PI = 2 * math.pi

# frozen coupling oracles at the default operating point
ETA_EFF_MINUS = 0.04557806
ETA_EFF_PLUS = 0.02048922
OMEGA_C1 = TWO_PI * 22.216667e3
RABI_MINUS = TWO_PI * 1.9598564e3


def test_carrier_rabi_closed_form(cfg):
    assert carrier_rabi(cfg) == pytest.approx(
        cfg.stark_amplitude * cfg.microwave_rabi / (2 * cfg.running_freq), rel=1e-12
    )
    assert carrier_rabi(cfg) == pytest.approx(OMEGA_C1, rel=1e-6)


def test_effective_lamb_dicke_values(cfg):
    assert effective_lamb_dicke(cfg, -1) == pytest.approx(ETA_EFF_MINUS, rel=1e-6)
    assert effective_lamb_dicke(cfg, +1) == pytest.approx(ETA_EFF_PLUS, rel=1e-6)
    with pytest.raises(ConfigError):
        effective_lamb_dicke(cfg, 0)


def test_resonance_guard(cfg):
    near = cfg.replace(running_freq=cfg.omega_z + TWO_PI * 5e3)
    with pytest.raises(ResonanceError):
        effective_lamb_dicke(near, -1)
    # the plus branch does not care about the omega_z - omega_r pole
    effective_lamb_dicke(near, +1)


def test_effective_params_bundle(cfg):
    p = effective_params(cfg)
    assert p.rabi_minus == pytest.approx(RABI_MINUS, rel=1e-6)
    assert p.rabi_minus == pytest.approx(abs(p.eta_eff_minus) * cfg.microwave_rabi)
    assert p.rabi_plus == pytest.approx(abs(p.eta_eff_plus) * cfg.microwave_rabi)
    assert p.omega_c1 == pytest.approx(OMEGA_C1, rel=1e-6)


def test_branch_detunings(cfg):
    wz, wr = cfg.omega_z, cfg.running_freq
    assert branch_detuning(cfg, SidebandBranch.CARRIER_C1) == pytest.approx(wr)
    assert branch_detuning(cfg, SidebandBranch.RED_MINUS) == pytest.approx(-(wz - wr))
    assert branch_detuning(cfg, SidebandBranch.BLUE_MINUS) == pytest.approx(wz - wr)
    assert branch_detuning(cfg, SidebandBranch.BLUE_PLUS) == pytest.approx(wz + wr)
    assert branch_detuning(cfg, SidebandBranch.RED_MINUS) == pytest.approx(-TWO_PI * 490e3)
    assert branch_detuning(cfg, SidebandBranch.BLUE_PLUS) == pytest.approx(TWO_PI * 1090e3)


def test_branch_hamiltonian_matrix_elements(cfg):
    nf = 6
    dims = HilbertDims(nf)
    hr = branch_hamiltonian(cfg, dims, SidebandBranch.RED_MINUS)
    g = branch_rabi(cfg, SidebandBranch.RED_MINUS)
    # |0,n> couples to |1,n-1> with strength g*sqrt(n)/2
    for n in range(1, nf):
        el = abs(hr[dims.flat_index(1, n - 1), dims.flat_index(0, n)])
        assert el == pytest.approx(0.5 * g * math.sqrt(n), rel=1e-12)
    assert np.allclose(hr, hr.conj().T)
    # the ground pair is dark on the red branch
    col = hr[:, dims.flat_index(0, 0)]
    assert np.allclose(col, 0.0)

    hb = branch_hamiltonian(cfg, dims, SidebandBranch.BLUE_MINUS)
    gb = branch_rabi(cfg, SidebandBranch.BLUE_MINUS)
    for n in range(nf - 1):
        el = abs(hb[dims.flat_index(1, n + 1), dims.flat_index(0, n)])
        assert el == pytest.approx(0.5 * gb * math.sqrt(n + 1), rel=1e-12)

    hc = branch_hamiltonian(cfg, dims, SidebandBranch.CARRIER_C1)
    el = abs(hc[dims.flat_index(1, 2), dims.flat_index(0, 2)])
    assert el == pytest.approx(0.5 * carrier_rabi(cfg), rel=1e-12)
    # carrier never changes n
    assert abs(hc[dims.flat_index(1, 3), dims.flat_index(0, 2)]) == 0.0


def test_predicted_curve_divergence(cfg):
    grid = TWO_PI * np.array([300e3, 500e3, 600e3, 700e3])
    curve = predicted_rabi_curve(cfg, grid, SidebandBranch.BLUE_MINUS)
    assert curve.failures == []
    assert np.all(np.isfinite(curve.rabi))
    # resonant enhancement toward omega_z from below
    assert np.all(np.diff(curve.rabi) > 0)
    assert curve.rabi[-1] > curve.rabi[0]


def test_predicted_curve_guard_band(cfg):
    grid = TWO_PI * np.array([500e3, 785e3, 900e3])
    curve = predicted_rabi_curve(cfg, grid, SidebandBranch.BLUE_MINUS)
    assert len(curve.failures) == 1
    assert curve.failures[0][0] == 1
    assert math.isnan(curve.rabi[1])
    assert np.isfinite(curve.rabi[0]) and np.isfinite(curve.rabi[2])


def test_predicted_curve_carrier_scaling(cfg):
    grid = TWO_PI * np.array([200e3, 400e3, 800e3])
    curve = predicted_rabi_curve(cfg, grid, SidebandBranch.CARRIER_C1)
    # inverse scaling with the lattice frequency
    assert curve.rabi[0] == pytest.approx(2 * curve.rabi[1], rel=1e-12)
    assert curve.rabi[1] == pytest.approx(2 * curve.rabi[2], rel=1e-12)


def test_thermal_flop_ground_state(cfg):
    om = RABI_MINUS
    t = np.linspace(0, 500e-6, 64)
    blue = thermal_flop_populations(t, om, 0.0, 16, red=False)
    assert np.allclose(blue, np.sin(0.5 * om * t) ** 2, atol=1e-12)
    red = thermal_flop_populations(t, om, 0.0, 16, red=True)
    assert np.allclose(red, 0.0)


def test_thermal_flop_matches_direct_sum():
    om = TWO_PI * 2e3
    nbar, nf = 5.0, 200
    t = np.array([37e-6, 140e-6])
    p = thermal_distribution(nbar, nf)
    direct = np.zeros_like(t)
    for n in range(nf):
        direct += p[n] * np.sin(0.5 * om * math.sqrt(n + 1) * t) ** 2
    assert np.allclose(thermal_flop_populations(t, om, nbar, nf, red=False), direct)


@pytest.mark.parametrize("nbar", [0.02, 1.0, 18.0])
def test_sideband_ratio_identity(nbar):
    # matched-pulse red/blue ratio equals nbar/(nbar+1) exactly; the
    # truncation just has to be deep enough for the index-shift identity
    om = TWO_PI * 2e3
    nf = 2000
    for tau in (40e-6, 125e-6, 333e-6):
        pr = thermal_flop_populations(tau, om, nbar, nf, red=True)
        pb = thermal_flop_populations(tau, om, nbar, nf, red=False)
        assert pr / pb == pytest.approx(nbar / (nbar + 1.0), abs=1e-9)


def test_thermometry_inverse_trivial():
    res = sideband_asymmetry_thermometry(0.25, 0.5)
    assert res.nbar == pytest.approx(1.0)
    assert res.flag == ""
    res0 = sideband_asymmetry_thermometry(0.0, 0.6)
    assert res0.nbar == pytest.approx(0.0)


def test_thermometry_flags():
    assert sideband_asymmetry_thermometry(1.2, 0.5).flag == "out of range"
    assert "no blue" in sideband_asymmetry_thermometry(0.0, 0.0).flag
    bad = sideband_asymmetry_thermometry(0.6, 0.5)
    assert "non-thermal" in bad.flag
    assert math.isnan(bad.nbar)


@pytest.mark.parametrize("nbar", [0.02, 0.5, 4.0, 18.0])
def test_thermometry_round_trip(nbar):
    r = nbar / (nbar + 1.0)
    res = sideband_asymmetry_thermometry(0.8 * r, 0.8)
    assert res.nbar == pytest.approx(nbar, rel=1e-6)


def test_thermometry_closed_loop_cold():
    # simulate both sidebands of a cold thermal state with matched pulses
    om = TWO_PI * 2e3
    nbar, nf = 0.02, 64
    tau = math.pi / om
    pr = thermal_flop_populations(tau, om, nbar, nf, red=True)
    pb = thermal_flop_populations(tau, om, nbar, nf, red=False)
    res = sideband_asymmetry_thermometry(float(pr), float(pb))
    assert res.nbar == pytest.approx(nbar, abs=0.005)
