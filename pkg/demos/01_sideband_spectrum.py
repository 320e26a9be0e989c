"""Sideband spectrum of the driven ion: the microwave acquires a comb.

Sweeps the microwave detuning across the strong lines with a thermal ion
(nbar = 18) and prints the detected features.  With the lattice running
at omega_r the carrier picks up sidebands at multiples of omega_r (C1,
C2, ...) and the motional sidebands split to omega_z -+ omega_r.

The default window covers the first carrier sideband and the strong
motional pair on the blue side, about a minute of compute.  Pass --full
for the complete -1200..1200 kHz sweep (several minutes).
"""

import argparse
import time

import numpy as np

from ionlattice import paper_defaults, sideband_spectrum

ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
ap.add_argument("--full", action="store_true", help="sweep -1200..1200 kHz")
ap.add_argument("--nbar", type=float, default=18.0)
args = ap.parse_args()

cfg = paper_defaults()
if args.full:
    lo, hi, step = -1200e3, 1200e3, 5e3
else:
    lo, hi, step = 250e3, 650e3, 10e3

grid = 2 * np.pi * np.arange(lo, hi + step / 2, step)
print(f"{len(grid)} detuning points, nbar0 = {args.nbar:g} ...")
t0 = time.time()
res = sideband_spectrum(cfg, grid, pulse_duration=75e-6, nbar0=args.nbar)
print(f"done in {time.time() - t0:.0f} s\n")

print("features (ring lobes of one line merged):")
for c, h in zip(res.feature_centers, res.feature_heights):
    print(f"  {c / (2 * np.pi * 1e3):+9.1f} kHz   P1 = {h:.3f}")

wz = cfg.omega_z / (2 * np.pi * 1e3)
wr = cfg.running_freq / (2 * np.pi * 1e3)
print(f"\nexpected: C1 at {wr:.0f}, C2 at {2 * wr:.0f}, "
      f"strong sideband at {wz - wr:.0f}, weak at {wz + wr:.0f} kHz")
