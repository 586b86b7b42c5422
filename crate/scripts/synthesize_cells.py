#!/usr/bin/env python3
"""Generate data/cells.csv, the bundled capacity dataset.

The public NASA PCoE battery files are not redistributable inside this
repository, so the bundled dataset is a deterministic synthetic stand-in
shaped after the published behavior of cells B0005/B0006/B0007 cycled
together on one rig: matching start/end capacities, B0006 fading fastest
from the very first cycles, and shared capacity-regeneration events
(including the prominent one near cycle 89 that is clearest on B0007).

Construction: every cell is a level plus a per-cell gain on one shared
degradation signal, plus a shared environment signal (regeneration jumps and
slow drift) with a gain that scales with how hard the cell is degrading,
plus a small individual wobble and measurement noise. Cells aging together
really do look like scaled copies of a common signal, and that shared
structure is what a joint model can exploit while a per-cell linear
extrapolation cannot.

Run from the repository root:

    python3 scripts/synthesize_cells.py > data/cells.csv

The output is committed; regenerating it reproduces the same bytes.
To run the tooling on the original measurements instead, convert them with
scripts/convert_nasa.py.
"""

import numpy as np

N_CYCLES = 168
SEED = 20260809


def fade_shape(x):
    """Shared degradation shape on x in (0, 1]: fast early settling plus
    accelerating late-life loss. Strongly non-linear at both ends."""
    return 0.42 * (1.0 - np.exp(-2.2 * x)) + 0.58 * x * x


# Shared regeneration events (partial capacity recovery after rest periods):
# peak cycle, height (Ah), rise constant and relaxation constant (cycles).
REGEN_EVENTS = [
    (32, 0.030, 3.0, 16.0),
    (62, 0.025, 3.0, 16.0),
    (89, 0.045, 4.0, 20.0),
    (123, 0.022, 3.0, 14.0),
    (150, 0.018, 3.0, 14.0),
]


def environment(n):
    """Regeneration events plus slow shared drift (thermal and rig effects).
    Events rise over a few cycles and relax exponentially."""
    total = np.zeros_like(n, dtype=float)
    for peak, height, rise, tau in REGEN_EVENTS:
        before = height * np.exp(-((n - peak) ** 2) / (2.0 * rise * rise))
        after = height * np.exp(-(n - peak) / tau)
        total = total + np.where(n < peak, before, after)
    total = total + 0.010 * np.sin(2.0 * np.pi * n / 47.0 + 0.4)
    total = total + 0.007 * np.sin(2.0 * np.pi * n / 83.0 + 1.7)
    return total


def shared_texture(n, rng):
    """Dense micro-scale structure shared by all cells: the small rest-period
    regeneration events that make real capacity curves wiggle in unison every
    few cycles. Smoothed seeded noise with a ~6-cycle correlation length."""
    pad = 20
    raw = rng.normal(0.0, 1.0, len(n) + 2 * pad)
    offsets = np.arange(-18, 19)
    weights = np.exp(-(offsets**2) / (2.0 * 6.0 * 6.0))
    weights /= weights.sum()
    smooth = np.convolve(raw, weights, mode="same")[pad:-pad]
    return 0.014 * smooth / smooth.std()


# Per-cell: starting level (Ah), fade depth (Ah over the full test), and the
# phase of a small individual wobble. Environment gain scales with fade
# depth: cells that degrade harder also regenerate harder.
CELLS = {
    "B0005": dict(level=1.856, depth=0.557, wobble_phase=0.9),
    "B0006": dict(level=2.035, depth=0.929, wobble_phase=3.6),
    "B0007": dict(level=1.891, depth=0.473, wobble_phase=5.1),
}

ENV_GAIN_PER_DEPTH = 1.0 / 0.557  # B0005 carries the pattern at unit gain
WOBBLE_AH = 0.004
NOISE_SD = 0.006  # Ah, measurement scatter


def main():
    rng = np.random.default_rng(SEED)
    n = np.arange(1, N_CYCLES + 1)
    x = n / N_CYCLES
    shared = environment(n) + shared_texture(n, rng)
    print("cell_id,cycle,capacity_ah")
    for cell_id, w in CELLS.items():
        cap = (
            w["level"]
            - w["depth"] * fade_shape(x)
            + w["depth"] * ENV_GAIN_PER_DEPTH * shared
            + WOBBLE_AH * np.sin(2.0 * np.pi * 1.3 * x + w["wobble_phase"])
            + rng.normal(0.0, NOISE_SD, N_CYCLES)
        )
        for cycle, value in zip(n, cap):
            print(f"{cell_id},{cycle},{value:.6f}")


if __name__ == "__main__":
    main()
