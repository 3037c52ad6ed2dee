import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionnode.constants import TWO_PI
from ionnode.errors import ConvergenceError, UnstableConfigurationError
from ionnode.mechanics import (
    OMEGA_LOWEST_RADIAL, OMEGA_RADIAL_HIGH, OMEGA_RADIAL_LOW, LambDickeTable, ThermalState, TrapConfiguration,
    axial_frequency_from_radial, equilibrium_positions, lamb_dicke_factors, length_scale, normal_modes,
    read_modes_csv, reduced_rabi, reference_comparison, solve_dimensionless, thermal_occupations, thermal_rabi_profile,
    write_modes_csv,
)

WZ = TWO_PI * 1e6


def test_two_and_three_ion_closed_forms():
    ell = length_scale(WZ)
    two = equilibrium_positions(TrapConfiguration(2, WZ, 5 * WZ, 5 * WZ))
    assert two.span == pytest.approx(ell * 2 ** (1 / 3), rel=1e-12)
    three = equilibrium_positions(TrapConfiguration(3, WZ, 5 * WZ, 5 * WZ))
    np.testing.assert_allclose(three.dimensionless, [-(5 / 4) ** (1 / 3), 0, (5 / 4) ** (1 / 3)], atol=1e-12)


@given(st.integers(2, 14))
def test_positions_symmetric_and_force_free(n):
    u = solve_dimensionless(n)
    np.testing.assert_allclose(u, -u[::-1], atol=1e-12)
    assert np.all(np.diff(u) > 0)


@given(st.integers(2, 12))
def test_axial_com_and_stretch(n):
    cfg = TrapConfiguration(n, WZ, 10 * WZ, 10 * WZ)
    modes = normal_modes(equilibrium_positions(cfg), cfg, "axial")
    assert modes.frequencies[0] == pytest.approx(WZ, rel=1e-9)
    assert modes.frequencies[1] == pytest.approx(np.sqrt(3) * WZ, rel=1e-9)
    np.testing.assert_allclose(modes.vectors.T @ modes.vectors, np.eye(n), atol=1e-10)


def test_radial_com_is_trap_frequency():
    cfg = TrapConfiguration.ten_ion_node()
    modes = normal_modes(equilibrium_positions(cfg), cfg, "radial-x")
    assert modes.frequencies[-1] == pytest.approx(cfg.omega_rx, rel=1e-9)
    com = modes.vectors[:, -1]
    np.testing.assert_allclose(np.abs(com), 1 / np.sqrt(10), atol=1e-9)


def test_axial_from_radial_round_trip():
    wz = axial_frequency_from_radial(10, OMEGA_RADIAL_LOW, OMEGA_LOWEST_RADIAL)
    cfg = TrapConfiguration(10, wz, OMEGA_RADIAL_HIGH, OMEGA_RADIAL_LOW)
    low = normal_modes(equilibrium_positions(cfg), cfg, "radial-y").frequencies[0]
    assert low == pytest.approx(OMEGA_LOWEST_RADIAL, rel=1e-10)
    assert wz / TWO_PI == pytest.approx(371.76e3, abs=50)


def test_zigzag_is_rejected():
    cfg = TrapConfiguration(10, WZ, 2 * WZ, 2 * WZ)
    with pytest.raises(UnstableConfigurationError):
        normal_modes(equilibrium_positions(cfg), cfg, "radial-x")


@given(st.floats(0.5, 50), st.floats(0.2, 0.99))
def test_occupation_reference_and_ordering(nbar, ratio):
    ref = TWO_PI * 2e6
    th = thermal_occupations(ref, nbar, np.array([ref, ratio * ref]))
    assert th.nbar[0] == pytest.approx(nbar, rel=1e-10)
    assert th.nbar[1] > th.nbar[0]


def _single_mode_table(eta):
    return LambDickeTable(np.array([[eta]]), np.array([WZ]), 393e-9, 0.0, 1.0)


def test_ground_state_carrier_factor():
    eta = 0.1
    r = reduced_rabi(1.0, _single_mode_table(eta), ThermalState(np.array([0.0]), 0.0))
    assert r[0] == pytest.approx(np.exp(-eta**2 / 2), rel=1e-12)


@given(st.floats(1e-3, 0.03), st.floats(0, 20))
def test_laguerre_matches_product_in_lamb_dicke_limit(eta, nbar):
    table = _single_mode_table(eta)
    th = ThermalState(np.array([nbar]), 0.0)
    exact = reduced_rabi(1.0, table, th)[0]
    approx = reduced_rabi(1.0, table, th, method="lamb-dicke-product")[0]
    # the product form omits the zero-point term eta^2 / 2
    assert exact == pytest.approx(approx - eta**2 / 2, abs=2 * eta**4 * (nbar + 1) ** 2 + 5e-8)  # series tail 1e-8


def test_thermal_sum_budget_exceeded():
    with pytest.raises(ConvergenceError):
        reduced_rabi(1.0, _single_mode_table(0.05), ThermalState(np.array([1e6]), 0.0), max_terms=100)


def test_mass_convention_scales_eta():
    cfg = TrapConfiguration.ten_ion_node()
    modes = normal_modes(equilibrium_positions(cfg), cfg, "radial-x")
    ion = lamb_dicke_factors(modes, mass="ion").eta
    string = lamb_dicke_factors(modes, mass="string").eta
    np.testing.assert_allclose(ion, string * np.sqrt(10), rtol=1e-12)


def test_centre_ions_are_slowed_most():
    prof = thermal_rabi_profile(TrapConfiguration.ten_ion_node())
    f = prof.factors
    np.testing.assert_allclose(f, f[::-1], rtol=1e-9)
    assert f[4] < f[0] < 1
    cold = thermal_rabi_profile(TrapConfiguration.ten_ion_node(), cooled=True).factors
    assert np.all(cold > f)


def test_modes_csv_round_trip(tmp_path):
    cfg = TrapConfiguration(4, WZ, 5 * WZ, 4 * WZ)
    s = equilibrium_positions(cfg)
    sets = [normal_modes(s, cfg, b) for b in ("axial", "radial-x")]
    write_modes_csv(tmp_path / "m.csv", sets)
    back = read_modes_csv(tmp_path / "m.csv")
    for a, b in zip(sets, back):
        assert a.branch == b.branch
        np.testing.assert_allclose(a.frequencies, b.frequencies, rtol=1e-12)
        np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-12)


def test_invalid_configuration():
    with pytest.raises(ValueError):
        TrapConfiguration(0, WZ)
    with pytest.raises(ValueError):
        TrapConfiguration(3, -WZ)


def test_reference_comparison_reports_both_conventions():
    rep = reference_comparison()
    assert rep["com_eta_ion_mass"] == pytest.approx(rep["com_eta_string_mass"] * np.sqrt(10))
    assert rep["ratio_ion_mass"] == pytest.approx(rep["com_eta_ion_mass"] / 0.0028)
    assert rep["lowest_radial_relative_error"] > 0
