#!/usr/bin/env python3
"""Convert NASA PCoE battery .mat files to the capacity CSV schema.

The library ingests `cell_id,cycle,capacity_ah` CSV; this script is the
documented bridge from the original distribution (one MATLAB file per cell,
e.g. B0005.mat from the NASA Prognostics Center of Excellence data
repository). It extracts the measured capacity of every discharge cycle.

Usage:

    python3 scripts/convert_nasa.py B0005.mat B0006.mat B0007.mat > cells.csv

Requires scipy. This is an auxiliary tool outside the library's tested
surface; the repository's tests run against the bundled synthetic dataset
instead (see scripts/synthesize_cells.py).
"""

import sys

import scipy.io


def extract(path):
    mat = scipy.io.loadmat(path, simplify_cells=True)
    # Top-level key is the cell name, e.g. "B0005".
    cell_id = next(k for k in mat if not k.startswith("__"))
    rows = []
    cycle_number = 0
    for entry in mat[cell_id]["cycle"]:
        if entry["type"] != "discharge":
            continue
        cycle_number += 1
        capacity = float(entry["data"]["Capacity"])
        rows.append((cell_id, cycle_number, capacity))
    return rows


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    print("cell_id,cycle,capacity_ah")
    for path in sys.argv[1:]:
        for cell_id, cycle, capacity in extract(path):
            print(f"{cell_id},{cycle},{capacity}")


if __name__ == "__main__":
    main()
