"""Acceptance criteria 1-14, each at its stated tolerance.

Every check prints one ``criterion <id>: PASS|FAIL`` line before asserting.
Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import filecmp
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ionnode import cli, coherence, pipeline, shuttling, source, tomography
from ionnode.constants import TWO_PI
from ionnode.mechanics import (
    OMEGA_LOWEST_RADIAL, OMEGA_RADIAL_HIGH, OMEGA_RADIAL_LOW, REFERENCE_LOWEST_MODE_ETA, TrapConfiguration,
    axial_frequency_from_radial, equilibrium_positions, normal_modes, thermal_occupations, thermal_rabi_profile,
)
from ionnode.states import bell_state, concurrence, density, fidelity, werner

WZ_MEASURED = TWO_PI * 358e3
WZ_MODES = axial_frequency_from_radial(10, OMEGA_RADIAL_LOW, OMEGA_LOWEST_RADIAL)


def check(tag, ok, detail):
    line = f"criterion {tag}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line, flush=True)
    assert ok, line


def within(x, target, tol):
    return abs(x - target) <= tol


# -- 1-3: string ---------------------------------------------------------------


def test_c01_thermal_occupation():
    nbar = thermal_occupations(OMEGA_RADIAL_HIGH, 10.0, np.array([OMEGA_LOWEST_RADIAL])).nbar[0]
    check("1", within(nbar, 19.0, 0.5), f"nbar(1.1273 MHz) = {nbar:.3f}  [19.0 +/- 0.5]")


def test_c02_string_geometry():
    span = equilibrium_positions(TrapConfiguration.ten_ion_node(WZ_MEASURED)).span * 1e6
    sep = equilibrium_positions(TrapConfiguration(2, TWO_PI * 0.96e6)).span * 1e6
    alt = equilibrium_positions(TrapConfiguration.ten_ion_node(WZ_MODES)).span * 1e6
    check("2", within(span, 49.0, 1.0) and within(sep, 5.74, 0.05),
          f"10-ion span = {span:.2f} um [49 +/- 1]; 2-ion separation = {sep:.3f} um [5.74 +/- 0.05]; "
          f"span at w_z = 2pi x {WZ_MODES / TWO_PI / 1e3:.2f} kHz would be {alt:.2f} um")


def test_c03_mode_structure():
    cfg = TrapConfiguration.ten_ion_node()
    s = equilibrium_positions(cfg)
    modes = [normal_modes(s, cfg, b) for b in ("radial-x", "radial-y")]
    low = min(modes, key=lambda m: m.frequencies[0])
    b = np.abs(low.vectors[:, 0])
    b /= b.max()
    reference = np.array(REFERENCE_LOWEST_MODE_ETA)
    ref = reference / reference.max()
    sel = reference >= 0.016
    rel = np.abs(b[sel] / ref[sel] - 1)
    check("3", bool(np.all(rel <= 0.10)), f"max relative deviation over {sel.sum()} entries = {rel.max():.3%} [<= 10%]")


# -- 4-6: shuttling ------------------------------------------------------------


def test_c04_settling():
    r = shuttling.residual_settling(4.1e-6, 60e-6)
    check("4", within(r, 4.3e-7, 0.2e-7), f"exp(-60/4.1) = {r:.3e}  [(4.3 +/- 0.2)e-7]")


def test_c05a_single_step():
    a = shuttling.simulate_program(shuttling.VoltageStepProgram.single_step(), WZ_MEASURED).amplitude * 1e6
    check("5a", within(a, 0.02, 0.005), f"single filtered {shuttling.SINGLE_STEP * 1e6:.1f} um step "
                                          f"A_com = {a:.4f} um [0.02 +/- 0.005]")


def test_c05b_worst_case():
    prog = shuttling.VoltageStepProgram.ten_ion_node(shuttling.constructive_interval(WZ_MEASURED))
    a = shuttling.simulate_program(prog, WZ_MEASURED).amplitude * 1e6
    check("5b", within(a, 0.21, 0.02), f"nine steps at t_p = {prog.interval * 1e6:.2f} us "
                                         f"A_com = {a:.4f} um [0.21 +/- 0.02]")


@pytest.fixture(scope="module")
def extra_filter():
    return shuttling.evaluate_extra_filter(WZ_MEASURED)


def test_c05c_extra_filter_reduction(extra_filter):
    r = extra_filter
    check("5c", r.single_reduction >= 10 and r.worst_reduction >= 10,
          f"40 kHz stage reduction single = {r.single_reduction:.2f}x, worst case = {r.worst_reduction:.2f}x [>= 10x]")


def test_c05d_extra_filter_settling(extra_filter):
    f = extra_filter.settling_factor
    check("5d", f <= 1.15, f"settling-time factor = {f:.3f} [<= 1.15]")


def test_c06_voltage_calibration():
    model_cfg = pipeline.RunConfig()
    u = equilibrium_positions(TrapConfiguration.ten_ion_node(model_cfg.mode_omega_z)).positions
    fit = shuttling.voltage_position_fit((u - u[0]) * 1e9, model_cfg.program.differential * 1e3)
    g = abs(fit.gradient)
    ripple = shuttling.ripple_amplitude(g, 85.0)
    check("6", within(g, 2.899, 0.05) and within(ripple, 123, 3),
          f"gradient = {g:.4f} nm/mV [2.899 +/- 0.05]; 42.5 mV amplitude -> {ripple:.2f} nm [123 +/- 3]")


# -- 7-9: photon source --------------------------------------------------------


def test_c07_cavity():
    t2 = source.transmission_from_escape(54e3, 0.78)
    cav = source.cavity_derived_params(30e3, source.CAVITY_LENGTH, t2)
    k = cav.kappa / TWO_PI / 1e3
    check("7", within(k, 126, 2) and within(cav.escape, 0.43, 0.01),
          f"kappa = 2pi x {k:.2f} kHz [126 +/- 2]; P_esc = {cav.escape:.4f} [0.43 +/- 0.01]")


@pytest.fixture(scope="module")
def profile():
    return thermal_rabi_profile(TrapConfiguration.ten_ion_node(WZ_MODES))


def test_c08a_static_displacement(profile):
    model = source.PhotonSourceModel()
    eff = np.array([source.efficiency_vs_displacement(model, [0.2e-6, 0.1e-6], f) for f in profile.factors[:5]])
    ok = bool(np.all((eff[:, 0] >= 0.87) & (eff[:, 0] <= 0.92)) and np.all(1 - eff[:, 1] < 0.015))
    check("8a", ok, f"z=0.2 um: {np.round(eff[:, 0], 4).tolist()} [0.87, 0.92]; "
                    f"z=0.1 um drop max {1 - eff[:, 1].min():.4f} [< 0.015]")


def test_c08b_oscillation(profile):
    model = source.PhotonSourceModel()
    f = profile.factors[0]
    a = source.efficiency_with_oscillation(model, 0.2e-6, 0.0, f, WZ_MEASURED)
    b = source.efficiency_with_oscillation(model, 0.2e-6, 0.2e-6, f, WZ_MEASURED)
    check("8b", within(a, 0.98, 0.01) and within(b, 0.85, 0.03),
          f"(A=0.2, z0=0) -> {a:.4f} [0.98 +/- 0.01]; (0.2, 0.2) -> {b:.4f} [0.85 +/- 0.03]")


def test_c09_thermal_profile(profile):
    model = source.PhotonSourceModel()
    cold = thermal_rabi_profile(TrapConfiguration.ten_ion_node(WZ_MODES), cooled=True)
    p = np.array([w.probability for w in source.ion_efficiencies(model, profile.factors)])
    pg = np.array([w.probability for w in source.ion_efficiencies(model, cold.factors)])
    ratio, gain = p[4] / p[0], pg.mean() / p.mean()
    check("9", within(ratio, 0.87, 0.05) and within(gain, 1.17, 0.05),
          f"P_c(5)/P_c(1) = {ratio:.4f} [0.87 +/- 0.05]; ground-state gain = {gain:.4f} [1.17 +/- 0.05]")


# -- 10-11: coherence and tomography -------------------------------------------


def test_c10_decoherence():
    s = coherence.ShuttleSchedule()
    f = coherence.fidelity_vs_ion_index(density(bell_state()), s.storage_times, 5.5e-3)
    drop = f[-1] - f[0]
    span = s.storage_times[0] - s.storage_times[-1]
    f14 = np.real(bell_state().conj() @ coherence.dephase(density(bell_state()), 1.4e-3, 5.5e-3) @ bell_state())
    check("10", within(drop, 0.02, 0.005) and within(f14, 0.984, 0.001),
          f"drop over {span * 1e3:.3f} ms = {drop:.4f} [0.02 +/- 0.005]; F(1.4 ms) = {f14:.4f} [0.984 +/- 0.001]")


def test_c11_tomography_oracles():
    cases = {
        "psi(0)": (density(bell_state()), 1.0, 1.0),
        "I/4": (np.eye(4) / 4, 0.0, 0.25),
        "product": (density(np.kron([1, 0], [np.cos(0.4), np.sin(0.4)])), 0.0, 0.5 * np.cos(0.4) ** 2),
    }
    for p in (0.0, 1 / 3, 0.8, 1.0):
        cases[f"werner {p:.3g}"] = (werner(p), max(0.0, (3 * p - 1) / 2), (3 * p + 1) / 4)
    worst = 0.0
    for rho, c, f in cases.values():
        est = tomography.reconstruct(tomography.synthesize_counts(rho, 10**4))
        worst = max(worst, abs(concurrence(est) - c), abs(fidelity(est, bell_state()) - f))
    rng = np.random.default_rng(11)
    counts = np.array([rng.multinomial(10**6, p) for p in tomography.born_probabilities(density(bell_state()))])
    est = tomography.reconstruct(counts)
    fb, cb = fidelity(est, bell_state()), concurrence(est)
    check("11", worst <= 0.01 and fb >= 0.995 and cb >= 0.99,
          f"max noiseless deviation = {worst:.2e} [<= 0.01]; 1e6 shots: F = {fb:.4f} [>= 0.995], "
          f"C = {cb:.4f} [>= 0.99]")


# -- 12-14: end to end ---------------------------------------------------------


@pytest.fixture(scope="module")
def full_run():
    cfg = pipeline.RunConfig(attempts_per_setting=54000)
    model = pipeline.build_model(cfg)
    clicks, outcomes = pipeline.run_experiment(cfg, model)
    return cfg, model, pipeline.analyze_run(cfg, clicks, outcomes, model)


@pytest.mark.slow
def test_c12_phase_model(full_run):
    cfg, model, art = full_run
    d = np.diff(model.angles.unwrapped)
    monotone = bool(np.all(d > 0) or np.all(d < 0))
    recovered = coherence.wrap_angle(-art.result.z_angles)
    offset = coherence.align_offset(model.angles.unwrapped, recovered)
    err = np.abs(coherence.wrap_angle(recovered - model.angles.with_offset(offset).angles)).max()
    check("12", monotone and err <= 0.05, f"monotone = {monotone}; max |recovered - model| = {err:.4f} rad [<= 0.05]")


@pytest.mark.slow
def test_c13_statistical_closure(full_run):
    cfg, model, art = full_run
    expected = cfg.xi * model.p_c
    se = np.sqrt(expected * (1 - expected) / art.attempts)
    z = np.abs(art.probabilities - expected) / se
    c, err = art.result.concurrence, art.result.concurrence_err
    off = ~np.eye(len(c), dtype=bool)
    matched = np.diag(c)
    unmatched_ok = bool(np.all((c[off] == 0) | (c[off] < 3 * err[off])))
    check("13", bool(np.all(z <= 3)) and bool(np.all(matched > 0.8)) and unmatched_ok,
          f"max |P - xi P_c| / SE = {z.max():.2f} [<= 3]; matched C min = {matched.min():.3f} [> 0.8]; "
          f"unmatched C max = {np.nanmax(c[off]):.3f}, all < 3 sigma = {unmatched_ok}")


@pytest.mark.slow
def test_c14_determinism(tmp_path):
    cfg = pipeline.RunConfig(attempts_per_setting=2000, seed=3)
    cfg.dump(tmp_path / "cfg.json")
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert cli.main(["simulate", "--config", str(tmp_path / "cfg.json"), "--out", str(d)]) == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    check("14", not mismatch and not errors and len(match) == len(names),
          f"{len(match)}/{len(names)} output files byte-identical across two runs")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
