# # Single-cell action potentials and restitution
#
# Pace one TP06 cell at 1 Hz for each of the three restitution variants, then
# pace it faster and faster to build dynamic restitution curves. The
# heart-failure remodelling flattens every curve.

import csv
from pathlib import Path

from cardiomech.cell import dynamic_restitution, pace_cell, params_for_variant

out = Path("demo_out")
out.mkdir(exist_ok=True)

# ## Three beats at a cycle length of 1000 ms

for variant in ("control-1.1", "control-1.4", "control-1.8", "hf-1.1"):
    r = pace_cell(params_for_variant(variant), 1000.0, 3, dt=0.02)
    print(f"{variant:12s} APD90 {r.apd90[-1]:6.1f} ms  peak {r.peaks[-1]:5.1f} mV  "
          f"peak tension {r.Ta.max():5.2f} kPa")

# Save the control trace so it can be plotted with any tool.
r = pace_cell(params_for_variant("control-1.1"), 1000.0, 1, dt=0.02)
with open(out / "ap_control_1.1.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["t_ms", "V_mV", "Ta_kPa"])
    w.writerows(zip(r.t[::10], r.V[::10], r.Ta[::10]))

# ## Dynamic restitution
#
# The state carries over from one cycle length to the next; the slope is the
# steepest segment of APD90 against the preceding diastolic interval.

# Steep segments sit between 340 and 220 ms, so sample that range finely.
cycle_lengths = [1000, 800, 600, 500, 450, 400, 380, 360, 340, 330, 320, 310, 300, 290, 280, 270, 260, 250,
                 240, 230, 220]
for variant in ("control-1.1", "control-1.8", "hf-1.8"):
    curve = dynamic_restitution(params_for_variant(variant), cycle_lengths, beats=15)
    print(f"{variant:12s} max restitution slope {curve.max_slope:.2f}")
