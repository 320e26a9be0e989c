"""Pulsed sideband cooling to the motional ground state, then thermometry.

Runs the 200-pulse schedule (60 to 230 us ramp, repump reset after each
pulse) on the first red sideband from a thermal start at nbar = 18, in
the per-pair effective mode.  The endpoint is then read back the way an
experiment would: matched probe pulses on the red and blue sidebands and
the asymmetry ratio, which equals nbar/(nbar+1) for a thermal state.
"""

import numpy as np

from ionlattice import (
    SidebandBranch,
    paper_defaults,
    pi_time,
    sideband_asymmetry_thermometry,
    sideband_cooling,
)
from ionlattice.effective import branch_rabi
from ionlattice.experiments import flop_populations

cfg = paper_defaults()
res = sideband_cooling(cfg, nbar0=18.0)

h = res.nbar_history
print(f"nbar: {res.nbar_initial:.1f} start, {h[9]:.2f} after 10 pulses, "
      f"{h[49]:.3f} after 50, {res.nbar_final:.4f} after {len(h)}")

# read the endpoint back through the sideband pair
pref = abs(branch_rabi(cfg, SidebandBranch.RED_MINUS))
tau = pi_time(pref)  # pi pulse for the n=1 -> 0 transfer
p_red = flop_populations(res.final_populations, pref, tau, red=True)
p_blue = flop_populations(res.final_populations, pref, tau, red=False)
th = sideband_asymmetry_thermometry(p_red, p_blue)
print(f"thermometry: P_red = {p_red:.4f}, P_blue = {p_blue:.4f} -> "
      f"nbar = {th.nbar:.4f}" + (f" ({th.flag})" if th.flag else ""))
print(f"direct population mean for comparison: {res.nbar_final:.4f}")

occ = res.final_populations
print(f"ground-state fraction: {occ[0]:.4f}")
print("occupations 0..4:", np.array2string(occ[:5], precision=4))
