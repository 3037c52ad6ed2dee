"""Command-line entry point: ``ionnode <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import coherence, pipeline, shuttling, source
from .errors import DataError, IonNodeError


def _read_columns(path, *names):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [n for n in names if n not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return [np.array([float(r[n]) for r in rows]) for n in names]


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def cmd_simulate(args) -> None:
    cfg = pipeline.RunConfig.load(args.config)
    if args.seed is not None:
        cfg = pipeline.RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    clicks, outcomes, art = pipeline.simulate(cfg)
    manifest = pipeline.emit_report(art, args.out, clicks, outcomes)
    _emit({"out": str(args.out), "config_sha256": manifest["config_sha256"],
           "window_counts": manifest["window_counts"], "xi_fit": manifest["xi_fit"]})


def cmd_analyze(args) -> None:
    cfg = pipeline.RunConfig.load(args.config) if args.config else pipeline.RunConfig()
    clicks = pipeline.ClickLog.read_csv(args.clicks)
    outcomes = pipeline.IonOutcomes.read_csv(args.outcomes)
    if outcomes.bits.shape[1] != cfg.n_ions:
        raise DataError("outcome file and configuration disagree on the number of ions")
    per = np.bincount(outcomes.setting, minlength=9)
    if per.min() == 0:
        raise DataError("outcome file lacks some tomography settings")
    model = pipeline.build_model(cfg) if args.config else None
    art = pipeline.analyze_run(cfg, clicks, outcomes, model)
    manifest = pipeline.emit_report(art, args.out, displacement_curve=model is not None)
    _emit({"out": str(args.out), "window_counts": manifest["window_counts"],
           "multi_event_windows": manifest["multi_event_windows"]})


def _parse_filters(text: str):
    specs = []
    for item in filter(None, text.split(",")):
        order, _, khz = item.partition(":")
        specs.append(shuttling.FilterSpec(int(order), float(khz) * 1e3))
    return tuple(specs)


def _read_steps(path) -> tuple[float, ...]:
    text = Path(path).read_text()
    try:
        values = json.loads(text)
    except json.JSONDecodeError:
        values = [float(x) for x in text.replace(",", " ").split()]
    return tuple(float(v) for v in values)


def cmd_shuttle(args) -> None:
    steps = _read_steps(args.steps_file) if args.steps_file else shuttling.NODE_VOLTAGES
    omega_z = 2 * np.pi * args.omega_z_khz * 1e3
    interval = args.tp_us * 1e-6 if args.tp_us else shuttling.constructive_interval(omega_z)
    program = shuttling.VoltageStepProgram(steps, interval=interval, resolution=0.0)
    filters = _parse_filters(args.filters)
    dt = shuttling.default_dt(omega_z, filters + ((shuttling.FilterSpec(1, args.extra_cutoff_khz * 1e3),)
                                                   if args.extra_cutoff_khz else ()))
    sig = shuttling.synthesize_waveform(program, dt, program.interval * program.n_steps
                                        + shuttling.SETTLE_WAIT + 1.5 * 2 * np.pi / omega_z)
    cmd = shuttling.apply_filter_chain(sig, filters)
    traj = shuttling.com_trajectory(cmd, omega_z)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stride = max(1, int(round(0.1e-6 / dt)))
    shuttling.write_waveform_csv(out / "waveform.csv", sig)
    shuttling.write_trajectory_csv(out / "trajectory.csv", traj, stride)
    summary = {"a_com_um": traj.amplitude * 1e6, "offset_um": traj.offset * 1e6,
               "step_interval_us": interval * 1e6,
               "a_com_after_step_um": (shuttling.amplitudes_after_steps(program, omega_z, filters, dt)
                                       * 1e6).tolist() if program.n_steps > 1 else None}
    if args.extra_cutoff_khz:
        rep = shuttling.evaluate_extra_filter(omega_z, shuttling.FilterSpec(1, args.extra_cutoff_khz * 1e3),
                                              filters, worst=program)
        summary["extra_filter"] = {"single_reduction": rep.single_reduction, "worst_reduction": rep.worst_reduction,
                                   "settling_factor": rep.settling_factor}
    with open(out / "shuttle.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _emit(summary)


def cmd_fit(args) -> None:
    if args.kind == "xi":
        pd, pc = _read_columns(args.inp, "P_measured", "P_c")
        fit = source.fit_detection_efficiency(pd, pc)
        _emit({"xi": fit.xi, "raw": fit.raw, "clamped": fit.clamped, "xi_max": pipeline.XI_MAX})
    elif args.kind == "ramsey":
        t, c = _read_columns(args.inp, "t_ms", "contrast")
        fit = coherence.ramsey_contrast_fit(t * 1e-3, c)
        _emit({"sigma_ms": fit.sigma * 1e3, "sigma_err_ms": fit.stderr * 1e3})
    else:
        z, v = _read_columns(args.inp, "position_um", "voltage_v")
        fit = shuttling.voltage_position_fit(z * 1e3, v * 1e3)  # nm against mV
        _emit({"gradient_nm_per_mV": fit.gradient, "gradient_err_nm_per_mV": fit.gradient_stderr,
               "intercept_nm": fit.intercept,
               "ripple_amplitude_nm": shuttling.ripple_amplitude(fit.gradient, shuttling.RIPPLE_PEAK_TO_PEAK * 1e3)})


def cmd_report(args) -> None:
    root = Path(args.artifacts)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{root} has no manifest.json") from exc
    bad = [name for name, digest in manifest["files"].items()
           if not (root / name).exists() or pipeline._sha256(root / name) != digest]
    if bad:
        raise DataError(f"artifacts changed since the manifest was written: {bad}")
    conc = {}
    with open(root / "concurrence_grid.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["concurrence"]:
                conc[(int(row["ion_index"]), int(row["photon_window"]))] = float(row["concurrence"])
    with open(root / "fidelity.csv", newline="") as fh:
        fid = [float(r["fidelity"]) for r in csv.DictReader(fh)]
    matched = [v for (i, j), v in conc.items() if i == j]
    unmatched = [v for (i, j), v in conc.items() if i != j]
    attempts = manifest["attempts"]
    _emit({
        "attempts": attempts,
        "detection_probabilities": [c / attempts for c in manifest["window_counts"]],
        "multi_event_windows": manifest["multi_event_windows"],
        "xi_fit": manifest["xi_fit"], "xi_max": manifest["xi_max"],
        "matched_concurrence_min": min(matched) if matched else None,
        "unmatched_concurrence_max": max(unmatched) if unmatched else None,
        "bell_fidelity_range": [min(fid), max(fid)],
        "files_verified": len(manifest["files"]),
    })


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ionnode", description="Ten-ion quantum network node model.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthetic run plus full analysis")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="analyze click and ion-outcome logs")
    a.add_argument("--clicks", required=True)
    a.add_argument("--outcomes", required=True)
    a.add_argument("--config", help="run configuration; adds model columns when given")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    sh = sub.add_parser("shuttle", help="filtered step waveform and COM excitation")
    sh.add_argument("--steps-file", help="JSON list or whitespace-separated input voltages (V)")
    sh.add_argument("--tp-us", type=float, help="step interval; default is the constructive one near 156 us")
    sh.add_argument("--filters", default="1:35,2:80", help="order:cutoff_kHz list")
    sh.add_argument("--extra-cutoff-khz", type=float)
    sh.add_argument("--omega-z-khz", type=float, default=358.0, help="axial COM frequency / 2pi")
    sh.add_argument("--out", required=True)
    sh.set_defaults(func=cmd_shuttle)

    f = sub.add_parser("fit", help="calibration fits from CSV input")
    f.add_argument("kind", choices=("xi", "ramsey", "voltage"))
    f.add_argument("--in", dest="inp", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="verify and summarize a report directory")
    r.add_argument("--artifacts", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except IonNodeError as exc:
        json.dump({"error": exc.code, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (OSError, ValueError) as exc:
        code = "io" if isinstance(exc, OSError) else "validation"
        json.dump({"error": code, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
