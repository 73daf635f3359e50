"""Decoupling error as the antennas shrink.

The receiver current from the decoupled model approaches the full solve as the
antenna volume goes to zero.

Run from the repository root::

    python demos/small_antennas.py
"""

from pathlib import Path

import numpy as np

from mimo_scatter import load_scene
from mimo_scatter.checks import scaled_antennas
from mimo_scatter.decouple import lemma2_error

scene = load_scene(Path(__file__).with_name("desk_scene.json"))
rows = []
for s in (1.0, 0.5, 0.25, 0.125):
    r = lemma2_error(scaled_antennas(scene, s), scene.frequency)
    rows.append((np.sqrt(r["volume"]), r["error"]))
    print(f"scale {s:5.3f}  sqrt(volume) {rows[-1][0]:.3e}  error {r['error']:.3e}")
x, y = np.log(np.array(rows)).T
print(f"fitted slope: {np.polyfit(x, y, 1)[0]:.2f}")
