"""Ion-qubit phases from the field gradient during shuttling, and Bell fidelity versus storage time."""

import argparse
from pathlib import Path

import numpy as np

from ionnode import coherence as co
from ionnode.mechanics import TrapConfiguration, equilibrium_positions
from ionnode.pipeline import RunConfig
from ionnode.states import bell_state, density


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/phases")
    ap.add_argument("--gradient", type=float, default=4.4, help="G/m")
    ap.add_argument("--miscalibration-ug", type=float, default=48.0)
    ap.add_argument("--sigma-ms", type=float, default=5.5)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sched = co.ShuttleSchedule()
    u = equilibrium_positions(TrapConfiguration.ten_ion_node(RunConfig().mode_omega_z)).positions
    res = co.accumulate_phases(sched, co.FieldModel(args.gradient, args.miscalibration_ug * 1e-6),
                               co.positions_per_centre(u))
    co.write_angles_csv(out / "angles.csv", res.angles)
    fid = co.fidelity_vs_ion_index(density(bell_state()), sched.storage_times, args.sigma_ms * 1e-3)
    co.write_fidelity_curve_csv(out / "fidelity.csv", fid)
    for i, (a, t, f) in enumerate(zip(res.unwrapped, sched.storage_times, fid), 1):
        print(f"ion {i:2d}  storage {t * 1e6:7.1f} us  phase {a:+8.3f} rad  F {f:.4f}")


if __name__ == "__main__":
    main()
