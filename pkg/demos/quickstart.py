"""Transfer matrix and capacity for the desk scene in three modes.

Run from the repository root::

    python demos/quickstart.py
"""

import logging
from pathlib import Path

import numpy as np

from mimo_scatter import capacity, load_scene, transfer_matrix

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

scene = load_scene(Path(__file__).with_name("desk_scene.json"))
f = scene.frequency

results = {mode: transfer_matrix(scene, f, mode) for mode in ("full", "decoupled", "spread-farfield")}
full = results["full"].entries
for mode, H in results.items():
    rel = np.abs(H.entries - full).max() / np.abs(full).max()
    print(f"{mode:16s} H = {H.entries.ravel()}  rel. diff to full = {rel:.2e}")

for snr in (1.0, 10.0, 100.0):
    print(f"snr {snr:6.1f}: capacity {capacity(full, snr):.4e} bit/s/Hz")
