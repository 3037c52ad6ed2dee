import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionnode import coherence as co
from ionnode.errors import FitError
from ionnode.mechanics import TrapConfiguration, equilibrium_positions
from ionnode.states import bell_state, density

MU_B_HZ_PER_G = 1.399624e6


def test_zeeman_coefficients():
    assert co.D_TO_DPRIME.coefficient == pytest.approx(1.2 * MU_B_HZ_PER_G, rel=1e-6)
    assert co.S_TO_D.coefficient == pytest.approx(-2.0 * MU_B_HZ_PER_G, rel=1e-6)
    assert co.S_TO_DPRIME.coefficient == pytest.approx(-0.8 * MU_B_HZ_PER_G, rel=1e-6)


def test_schedule_times():
    s = co.ShuttleSchedule()
    assert s.readout_time == pytest.approx(1560e-6)
    np.testing.assert_allclose(s.preparation_times, 156e-6 * np.arange(10))
    np.testing.assert_allclose(s.storage_times, 1560e-6 - 156e-6 * np.arange(10))
    segs = s.segments()
    assert [k for k, *_ in segs] == list(range(10)) + [0]
    assert all(a[2] == pytest.approx(b[1]) for a, b in zip(segs, segs[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        co.ShuttleSchedule(transport=200e-6)
    with pytest.raises(ValueError):
        co.ShuttleSchedule(n_positions=0)


def _positions():
    return co.positions_per_centre(equilibrium_positions(TrapConfiguration.ten_ion_node()).positions)


def test_positions_put_ion_k_at_waist():
    x = _positions()
    np.testing.assert_allclose(np.diag(x), 0.0)
    np.testing.assert_allclose(x[0, -1], -x[-1, 0])


def test_no_field_no_phase():
    res = co.accumulate_phases(co.ShuttleSchedule(), co.FieldModel(0.0, 0.0), _positions())
    np.testing.assert_allclose(res.unwrapped, 0.0)


@given(st.floats(-1e-3, 1e-3))
def test_uniform_offset_tracks_storage_time(b):
    s = co.ShuttleSchedule()
    res = co.accumulate_phases(s, co.FieldModel(0.0, b), _positions())
    expected = 2 * np.pi * co.D_TO_DPRIME.coefficient * b * s.storage_times
    np.testing.assert_allclose(res.unwrapped, expected, rtol=1e-10, atol=1e-12)


@given(st.floats(-10, 10), st.floats(-1e-4, 1e-4), st.floats(-3, 3))
def test_phases_linear_in_field(g, b, k):
    x, s = _positions(), co.ShuttleSchedule()
    one = co.accumulate_phases(s, co.FieldModel(g, b), x).unwrapped
    scaled = co.accumulate_phases(s, co.FieldModel(k * g, k * b), x).unwrapped
    np.testing.assert_allclose(scaled, k * one, atol=1e-9)


def test_default_field_gives_monotone_angles():
    res = co.accumulate_phases(co.ShuttleSchedule(), co.FieldModel(), _positions())
    d = np.diff(res.unwrapped)
    assert np.all(d > 0) or np.all(d < 0)


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = co.wrap_angle(a)
    assert -np.pi < w <= np.pi
    assert np.exp(1j * w) == pytest.approx(np.exp(1j * a))


def test_align_offset_recovers_shift():
    model = np.linspace(0, 4, 10)
    assert co.align_offset(model, co.wrap_angle(model + 2.5)) == pytest.approx(2.5)


def test_dephasing_closed_form():
    rho = density(bell_state())
    f = np.real(bell_state().conj() @ co.dephase(rho, 1.4e-3, 5.5e-3) @ bell_state())
    assert f == pytest.approx((1 + np.exp(-(1.4 / 5.5) ** 2 / 2)) / 2, rel=1e-12)


def test_kraus_complete_and_equivalent(rng):
    ch = co.DephasingChannel(5.5e-3)
    k0, k1 = ch.kraus(2e-3)
    np.testing.assert_allclose(k0.conj().T @ k0 + k1.conj().T @ k1, np.eye(4), atol=1e-12)
    rho = density(bell_state(0.3))
    np.testing.assert_allclose(k0 @ rho @ k0.conj().T + k1 @ rho @ k1.conj().T, ch(rho, 2e-3), atol=1e-12)


def test_infinite_coherence():
    assert co.dephasing_factor(1.0, np.inf) == 1.0
    with pytest.raises(ValueError):
        co.DephasingChannel(0.0)


def test_fidelity_curve_decreases_with_storage():
    s = co.ShuttleSchedule()
    f = co.fidelity_vs_ion_index(density(bell_state()), s.storage_times, 5.5e-3)
    assert f[-1] == pytest.approx(1.0)
    assert np.all(np.diff(f) > 0)


def test_ramsey_fit_recovers_sigma():
    t = np.linspace(0, 12e-3, 15)
    c = np.exp(-t**2 / (2 * 5.5e-3**2))
    fit = co.ramsey_contrast_fit(t, c)
    assert fit.sigma == pytest.approx(5.5e-3, rel=1e-6)
    with pytest.raises(FitError):
        co.ramsey_contrast_fit([0, 1], [1, 0.5])
    with pytest.raises(FitError):
        co.ramsey_contrast_fit(t, c + 0.5)


def test_angles_csv(tmp_path):
    co.write_angles_csv(tmp_path / "a.csv", [0.1, -0.2])
    assert (tmp_path / "a.csv").read_text().splitlines() == ["ion_index,angle_rad", "1,0.1", "2,-0.2"]
