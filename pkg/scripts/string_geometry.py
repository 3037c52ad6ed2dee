"""Equilibrium positions, radial modes and thermal Rabi reduction of the ten-ion string."""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from ionnode.constants import TWO_PI
from ionnode.mechanics import (
    OMEGA_LOWEST_RADIAL, OMEGA_RADIAL_LOW, OMEGA_Z_MEASURED, TrapConfiguration, axial_frequency_from_radial,
    reference_comparison, thermal_rabi_profile, write_modes_csv,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/string")
    ap.add_argument("--omega-z-khz", type=float, help="axial COM frequency / 2pi; default from the radial spectrum")
    ap.add_argument("--nbar", type=float, default=10.0, help="occupation of the highest radial COM mode")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    wz_modes = axial_frequency_from_radial(10, OMEGA_RADIAL_LOW, OMEGA_LOWEST_RADIAL)
    wz = TWO_PI * args.omega_z_khz * 1e3 if args.omega_z_khz else wz_modes
    print(f"w_z/2pi consistent with the radial spectrum: {wz_modes / TWO_PI / 1e3:.2f} kHz")

    for label, cfg in (("measured", TrapConfiguration.ten_ion_node(OMEGA_Z_MEASURED)),
                       ("model", TrapConfiguration.ten_ion_node(wz))):
        prof = thermal_rabi_profile(cfg, args.nbar)
        print(f"{label:8s} w_z/2pi = {cfg.omega_z / TWO_PI / 1e3:7.2f} kHz  span = {prof.string.span * 1e6:.2f} um")
        write_modes_csv(out / f"modes_{label}.csv", prof.modes)
        with open(out / f"ions_{label}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ion", "position_um", "rabi_factor"])
            for i, (z, f) in enumerate(zip(prof.string.positions, prof.factors), 1):
                w.writerow([i, f"{z * 1e6:.4f}", f"{f:.5f}"])

    prof = thermal_rabi_profile(TrapConfiguration.ten_ion_node(wz), args.nbar)
    cold = thermal_rabi_profile(TrapConfiguration.ten_ion_node(wz), cooled=True)
    print("Omega_r/Omega thermal:", np.round(prof.factors, 3))
    print("Omega_r/Omega cooled: ", np.round(cold.factors, 3))

    ref = reference_comparison(TrapConfiguration.ten_ion_node(OMEGA_Z_MEASURED))
    (out / "reference_comparison.json").write_text(json.dumps(ref, indent=1) + "\n")
    print(json.dumps(ref, indent=1))


if __name__ == "__main__":
    main()
