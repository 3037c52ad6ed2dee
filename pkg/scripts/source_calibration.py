"""Scan the effective coupling scale against the thermal-profile and ground-state-cooling targets."""

import argparse
import csv
from pathlib import Path

import numpy as np

from ionnode import source
from ionnode.mechanics import (
    OMEGA_LOWEST_RADIAL, OMEGA_RADIAL_LOW, TrapConfiguration, axial_frequency_from_radial, thermal_rabi_profile,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/source")
    ap.add_argument("--scales", type=float, nargs="+", default=[0.2, 0.26, 0.32, 0.4, 0.5])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = TrapConfiguration.ten_ion_node(axial_frequency_from_radial(10, OMEGA_RADIAL_LOW, OMEGA_LOWEST_RADIAL))
    warm = thermal_rabi_profile(cfg).factors
    cold = thermal_rabi_profile(cfg, cooled=True).factors

    rows = []
    for scale in args.scales:
        model = source.PhotonSourceModel(coupling_scale=scale)
        p = np.array([w.probability for w in source.ion_efficiencies(model, warm)])
        pg = np.array([w.probability for w in source.ion_efficiencies(model, cold)])
        rows.append((scale, p[4] / p[0], pg.mean() / p.mean(), p.mean()))
        print(f"scale {scale:.3f}: P_c(5)/P_c(1) = {rows[-1][1]:.4f}  cooling gain = {rows[-1][2]:.4f}  "
              f"mean P_c = {rows[-1][3]:.4f}")
    with open(out / "coupling_scan.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coupling_scale", "ratio_ion5_ion1", "cooling_gain", "mean_P_c"])
        w.writerows([[f"{x:.6g}" for x in r] for r in rows])

    model = source.PhotonSourceModel()
    z = np.linspace(0, 0.3e-6, 7)
    source.write_efficiency_curve_csv(out / "displacement_efficiency.csv", z,
                                      source.efficiency_vs_displacement(model, z, warm[0]))
    source.write_wavepacket_csv(out / "wavepacket_ion1.csv",
                                source.simulate_photon_generation(model, source.IonDriveContext(warm[0])))


if __name__ == "__main__":
    main()
