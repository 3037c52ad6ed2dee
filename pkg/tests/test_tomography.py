import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionnode import tomography as tm
from ionnode.errors import DegenerateDataError, IncompleteDataError
from ionnode.states import bell_state, concurrence, density, fidelity, ion_z_rotation, photon_unitary, werner
from conftest import random_state


def test_setting_ids():
    assert [tm.setting_bases(s) for s in (0, 4, 5, 8)] == [(0, 0), (1, 1), (1, 2), (2, 2)]


def test_projectors_resolve_identity():
    for s in range(tm.N_SETTINGS):
        total = sum(np.outer(k, k.conj()) for k in tm.PROJECTORS[s])
        np.testing.assert_allclose(total, np.eye(4), atol=1e-12)


def test_bell_state_correlations():
    p = tm.born_probabilities(density(bell_state()))
    # ZZ: only equal bits; XX: equal bits; YY: opposite bits
    np.testing.assert_allclose(p[8], [0.5, 0, 0, 0.5], atol=1e-12)
    np.testing.assert_allclose(p[0], [0.5, 0, 0, 0.5], atol=1e-12)
    np.testing.assert_allclose(p[4], [0, 0.5, 0.5, 0], atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_noiseless_inversion_is_exact(seed, rank):
    rho = random_state(np.random.default_rng(seed), rank)
    est = tm.linear_inversion(tm.synthesize_counts(rho, 1000))
    np.testing.assert_allclose(est, rho, atol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_projection_yields_state(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = h + h.conj().T
    rho = tm.project_physical(h / np.trace(h).real if abs(np.trace(h)) > 0.1 else h + 4 * np.eye(4))
    w = np.linalg.eigvalsh(rho)
    assert w.min() > -1e-12
    assert np.trace(rho).real == pytest.approx(1.0)


def test_projection_keeps_physical_states(rng):
    rho = random_state(rng, 3)
    np.testing.assert_allclose(tm.project_physical(rho), rho, atol=1e-12)


def test_projection_batched(rng):
    batch = np.array([random_state(rng) for _ in range(3)])
    np.testing.assert_allclose(tm.project_physical(batch)[1], tm.project_physical(batch[1]), atol=1e-12)


@pytest.mark.parametrize("p", [0.0, 1 / 3, 0.8, 1.0])
def test_werner_oracle(p):
    rho = werner(p)
    est = tm.reconstruct(tm.synthesize_counts(rho, 1e4))
    assert concurrence(est) == pytest.approx(max(0, (3 * p - 1) / 2), abs=1e-6)
    assert fidelity(est, bell_state()) == pytest.approx((3 * p + 1) / 4, abs=1e-6)


def test_mle_agrees_on_noiseless_data():
    rho = werner(0.8, 0.5)
    est = tm.reconstruct(tm.synthesize_counts(rho, 1e4), method="mle")
    assert fidelity(est, rho) > 0.9999


def test_photon_efficiency_correction():
    rho = werner(0.9)
    p = tm.born_probabilities(rho)
    eff = np.array([1.0, 0.7])
    biased = 1e4 * p * eff[tm._OUTCOME_BITS[:, 1]]
    est = tm.linear_inversion(biased, photon_efficiency=eff)
    np.testing.assert_allclose(est, rho, atol=1e-10)


def test_missing_setting_rejected():
    c = tm.synthesize_counts(werner(0.5), 100)
    c[3] = 0
    with pytest.raises(IncompleteDataError):
        tm.reconstruct(c)
    with pytest.raises(DegenerateDataError):
        tm.reconstruct(np.zeros((9, 4)))
    with pytest.raises(IncompleteDataError):
        tm.reconstruct(np.ones((8, 4)))


def test_sampled_bell_state_high_quality():
    rng = np.random.default_rng(3)
    p = tm.born_probabilities(density(bell_state()))
    counts = np.array([rng.multinomial(10**6, row) for row in p])
    est = tm.reconstruct(counts)
    assert fidelity(est, bell_state()) >= 0.995
    assert concurrence(est) >= 0.99


def _rotated_family(angles, unitary=np.eye(4), p=0.9):
    return np.array([unitary @ ion_z_rotation(a) @ werner(p) @ ion_z_rotation(a).conj().T @ unitary.conj().T
                     for a in angles])


def test_rotate_ion_z_matches_matrix():
    rho = werner(0.7, 0.2)
    u = ion_z_rotation(0.9)
    np.testing.assert_allclose(tm.rotate_ion_z(rho, 0.9), u @ rho @ u.conj().T, atol=1e-14)


def test_z_rotations_recovered_up_to_gauge():
    true = np.array([0.0, 0.4, -1.1, 2.0, 2.9])
    fit = tm.optimize_z_rotations(_rotated_family(true), starts=4)
    # applying the fitted angles undoes the relative rotations
    rel = np.angle(np.exp(1j * (fit.angles + true)))
    np.testing.assert_allclose(rel - rel[0], 0.0, atol=1e-4)
    assert fit.objective == pytest.approx(5 * 4, rel=1e-6)


def test_objective_is_gauge_invariant():
    states = _rotated_family([0.1, 0.5, 0.9], p=0.6)
    a = np.array([0.0, 0.3, -0.2])
    assert tm.z_rotation_objective(states, a) == pytest.approx(tm.z_rotation_objective(states, a + 1.3))


def test_photon_unitary_recovered():
    u = photon_unitary((0.3, 0.8, -0.5))
    states = _rotated_family(np.zeros(3), u, p=0.95)
    fit = tm.optimize_photon_unitary(states, starts=4)
    np.testing.assert_allclose(fit.fidelities, (3 * 0.95 + 1) / 4, atol=1e-8)


def _table(states, shots, rng=None):
    n = len(states)
    counts = np.zeros((9, n, n, 4))
    for i in range(n):
        for j in range(n):
            rho = states[i] if i == j else np.kron(np.trace(states[i].reshape(2, 2, 2, 2), axis1=1, axis2=3),
                                                   np.eye(2) / 2)
            p = tm.born_probabilities(rho)
            counts[:, i, j] = [rng.multinomial(shots, r) for r in p] if rng else np.round(shots * p)
    return tm.CountTable(counts.astype(int))


def test_analyze_aligns_matched_pairs():
    true = np.array([0.0, 0.7, 1.5, -2.0])
    res = tm.analyze(_table(_rotated_family(true, p=0.9), 10**6), starts=3)
    np.testing.assert_allclose(res.fidelities, (3 * 0.9 + 1) / 4, atol=1e-3)
    off = ~np.eye(4, dtype=bool)
    assert np.all(res.concurrence[off] < 1e-3)
    assert np.all(np.diag(res.concurrence) > 0.84)


def test_monte_carlo_errors_shrink_with_counts():
    rng = np.random.default_rng(0)
    states = _rotated_family([0.0, 1.0], p=0.9)
    small = tm.analyze(_table(states, 200, rng), starts=2, replicates=50)
    large = tm.analyze(_table(states, 20000, rng), starts=2, replicates=50)
    assert np.all(large.fidelity_err < small.fidelity_err)
    assert np.all(np.isfinite(small.concurrence_err))
    with pytest.raises(ValueError):
        tm.monte_carlo_errors(_table(states, 100), replicates=1)


def test_matched_pair_without_data_rejected():
    table = _table(_rotated_family([0.0, 1.0]), 100)
    table.counts[2, 1, 1] = 0
    with pytest.raises(IncompleteDataError):
        tm.analyze(table)


def test_count_table_checks():
    with pytest.raises(ValueError):
        tm.CountTable(np.zeros((8, 2, 2, 4)))
    with pytest.raises(ValueError):
        tm.CountTable(np.ones((9, 1, 1, 4)) * 10, attempts=np.full(9, 5))
    t = tm.CountTable.empty(3, 2)
    assert t.shape == (3, 2) and t.pair(3, 2).shape == (9, 4)


def test_count_csv_round_trip(tmp_path):
    table = _table(_rotated_family([0.0, 1.0, 2.0]), 50, np.random.default_rng(1))
    tm.write_count_csv(tmp_path / "c.csv", table)
    back = tm.read_count_csv(tmp_path / "c.csv")
    assert np.array_equal(back.counts, table.counts)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(IncompleteDataError):
        tm.read_count_csv(tmp_path / "bad.csv")


def test_result_json(tmp_path):
    res = tm.analyze(_table(_rotated_family([0.0, 1.0]), 1000), starts=2)
    tm.write_result_json(tmp_path / "r.json", res, {"note": 1})
    import json
    data = json.loads((tmp_path / "r.json").read_text())
    assert set(data["rho"]) == {"1,1", "1,2", "2,1", "2,2"}
    assert len(data["rho"]["1,1"]) == 16 and data["note"] == 1
