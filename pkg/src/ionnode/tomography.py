"""Ion-photon state tomography over nine Pauli settings.

Setting id = 3 a + b for ion basis a and photon basis b, with X, Y, Z = 0, 1, 2.
Outcome index = 2 ion_bit + photon_bit, bit 0 being the +1 eigenvalue.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateDataError, IncompleteDataError, OptimizationError
from .states import PAULIS, bell_state, concurrence, photon_unitary, psd_sqrt

N_SETTINGS = 9
N_IONS = 10
BASES = "XYZ"

_EIG = {
    0: np.array([[1, 1], [1, -1]], complex) / np.sqrt(2),
    1: np.array([[1, 1j], [1, -1j]], complex) / np.sqrt(2),
    2: np.eye(2, dtype=complex),
}  # rows are the +1 and -1 eigenvectors
_SIGN = np.array([1, -1])
_OUTCOME_BITS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])


def setting_bases(setting_id: int) -> tuple[int, int]:
    return divmod(int(setting_id), 3)


def _projectors() -> np.ndarray:
    """(9, 4, 4) product kets |e_ion> |e_photon> per setting and outcome."""
    out = np.empty((N_SETTINGS, 4, 4), complex)
    for s in range(N_SETTINGS):
        a, b = setting_bases(s)
        for o, (i, p) in enumerate(_OUTCOME_BITS):
            out[s, o] = np.kron(_EIG[a][i], _EIG[b][p])
    return out


PROJECTORS = _projectors()


def born_probabilities(rho: np.ndarray) -> np.ndarray:
    """Outcome probabilities, shape (..., 9, 4)."""
    rho = np.asarray(rho, complex)
    kets = PROJECTORS
    p = np.einsum("sok,...kl,sol->...so", kets.conj(), rho, kets).real
    return np.clip(p, 0, None)


@dataclass
class CountTable:
    """counts[setting, ion, photon_window, outcome]; ion and window are 0-based here."""

    counts: np.ndarray
    attempts: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, np.int64)
        if self.counts.ndim != 4 or self.counts.shape[0] != N_SETTINGS or self.counts.shape[3] != 4:
            raise ValueError("counts must have shape (9, ions, windows, 4)")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if self.attempts is not None:
            self.attempts = np.asarray(self.attempts, np.int64)
            totals = self.counts.sum(axis=3).max(axis=(1, 2))
            if np.any(totals > self.attempts):
                raise ValueError("a setting has more detections than attempts")

    @classmethod
    def empty(cls, n_ions: int = N_IONS, n_windows: int = N_IONS, attempts=None) -> "CountTable":
        return cls(np.zeros((N_SETTINGS, n_ions, n_windows, 4), np.int64), attempts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape[1], self.counts.shape[2]

    def pair(self, ion: int, window: int) -> np.ndarray:
        """(9, 4) counts for ion ``ion`` and photon window ``window`` (both 1-based)."""
        return self.counts[:, ion - 1, window - 1, :]


def synthesize_counts(rho: np.ndarray, shots: int) -> np.ndarray:
    """Noiseless (9, 4) counts proportional to the Born probabilities; may be fractional."""
    return shots * born_probabilities(rho)


def _expectations(counts: np.ndarray, photon_efficiency=None) -> np.ndarray:
    """(..., 4, 4) Pauli expectation table T[k, l] from (..., 9, 4) counts."""
    c = np.asarray(counts, float)
    if photon_efficiency is not None:
        eff = np.asarray(photon_efficiency, float)
        c = c / eff[_OUTCOME_BITS[:, 1]]
    c = c.reshape(c.shape[:-2] + (3, 3, 4))  # ion basis, photon basis, outcome
    si = _SIGN[_OUTCOME_BITS[:, 0]]
    sp = _SIGN[_OUTCOME_BITS[:, 1]]
    tot = c.sum(axis=-1)
    if np.any(tot == 0):
        raise IncompleteDataError("every setting needs at least one detected event")
    t = np.zeros(c.shape[:-3] + (4, 4))
    t[..., 0, 0] = 1.0
    t[..., 1:, 1:] = (c * (si * sp)).sum(axis=-1) / tot
    t[..., 1:, 0] = (c * si).sum(axis=(-1, -2)) / tot.sum(axis=-1)
    t[..., 0, 1:] = (c * sp).sum(axis=(-1, -3)) / tot.sum(axis=-2)
    return t


_PAULI_BASIS = np.array([np.kron(a, b) for a in PAULIS for b in PAULIS]).reshape(4, 4, 4, 4)


def linear_inversion(counts: np.ndarray, photon_efficiency=None) -> np.ndarray:
    t = _expectations(counts, photon_efficiency)
    return 0.25 * np.einsum("...kl,klab->...ab", t, _PAULI_BASIS)


def project_physical(rho: np.ndarray) -> np.ndarray:
    """Closest unit-trace PSD matrix by clipping eigenvalues and sharing the deficit uniformly."""
    rho = np.asarray(rho, complex)
    herm = 0.5 * (rho + np.swapaxes(rho.conj(), -1, -2))
    w, v = np.linalg.eigh(herm)
    w = w[..., ::-1]
    v = v[..., ::-1]
    w = w / w.sum(axis=-1, keepdims=True)
    d = w.shape[-1]
    flat_w = w.reshape(-1, d).copy()
    for row in flat_w:
        acc = 0.0
        i = d - 1
        while i >= 0 and row[i] + acc / (i + 1) < 0:
            acc += row[i]
            row[i] = 0.0
            i -= 1
        row[: i + 1] += acc / (i + 1)
    w = flat_w.reshape(w.shape)
    return np.einsum("...ak,...k,...bk->...ab", v, w, v.conj())


def maximum_likelihood(counts: np.ndarray, iterations: int = 2000, tol: float = 1e-12) -> np.ndarray:
    """Iterative R rho R estimate for one (9, 4) count block."""
    c = np.asarray(counts, float)
    if np.any(c.sum(axis=-1) == 0):
        raise IncompleteDataError("every setting needs at least one detected event")
    f = c / c.sum(axis=-1, keepdims=True)
    proj = np.einsum("soa,sob->soab", PROJECTORS, PROJECTORS.conj())
    rho = np.eye(4, dtype=complex) / 4
    for _ in range(iterations):
        p = np.einsum("soab,ba->so", proj, rho).real
        r = np.einsum("so,soab->ab", np.where(p > 0, f / np.maximum(p, 1e-300), 0.0), proj)
        new = r @ rho @ r
        new /= np.trace(new).real
        if np.abs(new - rho).max() < tol:
            return new
        rho = new
    return rho


def reconstruct(counts, method: str = "linear", photon_efficiency=None) -> np.ndarray:
    """Density matrix from (..., 9, 4) counts: linear inversion plus physical projection."""
    c = np.asarray(counts, float)
    if c.shape[-2:] != (N_SETTINGS, 4):
        raise IncompleteDataError(f"need counts for all 9 settings, got shape {c.shape}")
    if np.all(c == 0):
        raise DegenerateDataError("all counts are zero")
    if method == "mle":
        if c.ndim != 2:
            raise ValueError("maximum likelihood works on one pair at a time")
        return maximum_likelihood(c)
    if method != "linear":
        raise ValueError(f"unknown method {method!r}")
    return project_physical(linear_inversion(c, photon_efficiency))


# -- rotation optimization -------------------------------------------------


def _batched_fidelity(sqrt_a: np.ndarray, sqrt_b: np.ndarray) -> np.ndarray:
    # nuclear norm of sqrt(a) sqrt(b): smooth even for rank-deficient states
    return np.sum(np.linalg.svd(sqrt_a @ sqrt_b, compute_uv=False), axis=-1) ** 2


def _ion_phase_diag(phi) -> np.ndarray:
    e = np.exp(1j * np.asarray(phi, float))
    one = np.ones_like(e)
    return np.stack([one, one, e, e], axis=-1)


def rotate_ion_z(rho: np.ndarray, phi) -> np.ndarray:
    """U_z(phi) rho U_z(phi)^dagger, broadcasting over leading axes."""
    d = _ion_phase_diag(phi)
    return d[..., :, None] * rho * d[..., None, :].conj()


def _rotate_columns(m: np.ndarray, phi) -> np.ndarray:
    return _ion_phase_diag(phi)[..., :, None] * m


@dataclass(frozen=True)
class ZRotationFit:
    angles: np.ndarray  # to apply to each state, first fixed at 0
    objective: float
    starts: int


def z_rotation_objective(states: np.ndarray, angles) -> float:
    """Sum over ordered pairs m != n of F(U_m rho_m U_m^+, U_n rho_n U_n^+)."""
    states = np.asarray(states, complex)
    m, n = np.triu_indices(len(states), 1)
    sq = np.array([psd_sqrt(r) for r in states])
    a = np.asarray(angles, float)
    return float(2 * _batched_fidelity(sq[m], rotate_ion_z(sq[n], a[n] - a[m])).sum())


def optimize_z_rotations(states, starts: int = 8, seed: int = 0, tol: float = 1e-8) -> ZRotationFit:
    """Ion z-rotations that make the states mutually closest, multi-start Nelder-Mead."""
    states = np.asarray(states, complex)
    k = len(states)
    if k < 2:
        raise ValueError("need at least two states")
    if starts < 1:
        raise ValueError("need at least one start")
    m, n = np.triu_indices(k, 1)
    sq = np.array([psd_sqrt(r) for r in states])
    sq_m, sq_n = sq[m], sq[n]

    def cost(x):
        a = np.concatenate([[0.0], x])
        # sqrt(U rho U^+) = U sqrt(rho) U^+, and the trailing U^+ leaves singular values alone
        return -2 * _batched_fidelity(sq_m, _rotate_columns(sq_n, a[n] - a[m])).sum()

    rng = np.random.default_rng(np.random.SeedSequence([seed, k, 0x2]))
    inits = [np.zeros(k - 1)] + [rng.uniform(-np.pi, np.pi, k - 1) for _ in range(starts - 1)]
    best, ok = None, False
    for x0 in inits:
        res = minimize(cost, x0, method="Nelder-Mead",
                       options={"xatol": tol, "fatol": tol, "maxiter": 4000 * k, "maxfev": 4000 * k,
                                "adaptive": True})
        ok |= bool(res.success)
        if best is None or res.fun < best.fun - 1e-12:
            best = res
    if not ok:
        raise OptimizationError("z-rotation search stagnated from every start")
    angles = np.concatenate([[0.0], np.pi - np.mod(np.pi - best.x, 2 * np.pi)])
    return ZRotationFit(angles, float(-best.fun), starts)


@dataclass(frozen=True)
class PhotonFit:
    params: np.ndarray
    unitary: np.ndarray  # 4x4, identity on the ion
    fidelities: np.ndarray


def bell_fidelities(states, unitary=None, theta: float = 0.0) -> np.ndarray:
    psi = bell_state(theta)
    if unitary is not None:
        psi = unitary.conj().T @ psi
    return np.clip(np.einsum("a,kab,b->k", psi.conj(), np.asarray(states, complex), psi).real, 0, 1)


def optimize_photon_unitary(states, starts: int = 8, seed: int = 0, tol: float = 1e-10) -> PhotonFit:
    """Single photon-qubit rotation maximizing the summed Bell fidelity."""
    states = np.asarray(states, complex)
    mean = states.mean(axis=0)
    psi = bell_state()

    def cost(x):
        phi = photon_unitary(x).conj().T @ psi
        return -np.real(phi.conj() @ mean @ phi)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x3]))
    inits = [np.zeros(3)] + [rng.uniform(-np.pi, np.pi, 3) for _ in range(starts - 1)]
    results = [minimize(cost, x0, method="Nelder-Mead", options={"xatol": tol, "fatol": tol, "maxiter": 20000})
               for x0 in inits]
    if not any(r.success for r in results):
        raise OptimizationError("photon-unitary search stagnated from every start")
    best = min(results, key=lambda r: r.fun)
    u = photon_unitary(best.x)
    return PhotonFit(best.x, u, bell_fidelities(states, u))


# -- full analysis ---------------------------------------------------------


@dataclass
class TomographyResult:
    rho: np.ndarray  # (ions, windows, 4, 4), NaN where data were missing
    concurrence: np.ndarray
    fidelities: np.ndarray  # matched pairs after rotation
    z_angles: np.ndarray
    photon_params: np.ndarray
    concurrence_err: np.ndarray | None = None
    fidelity_err: np.ndarray | None = None
    missing: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def to_json(self) -> dict:
        def cplx(m):
            return [[float(z.real), float(z.imag)] for z in np.asarray(m).ravel()]

        def arr(a):
            return None if a is None else np.where(np.isfinite(a), a, None).tolist()

        ni, nw = self.concurrence.shape
        return {
            "basis": ["D'V", "D'H", "DV", "DH"],
            "rho": {f"{i + 1},{j + 1}": cplx(self.rho[i, j]) for i in range(ni) for j in range(nw)
                    if not self.missing[i, j]},
            "concurrence": arr(self.concurrence),
            "concurrence_err": arr(self.concurrence_err),
            "fidelity": arr(self.fidelities),
            "fidelity_err": arr(self.fidelity_err),
            "z_angles_rad": arr(self.z_angles),
            "photon_unitary_zyz": arr(self.photon_params),
        }


def _reconstruct_grid(counts: np.ndarray):
    """Reconstruct every pair of a (9, I, J, 4) array; pairs with an empty setting are NaN."""
    c = np.moveaxis(counts, 0, 2).astype(float)  # (I, J, 9, 4)
    missing = np.any(c.sum(axis=-1) == 0, axis=-1)
    rho = np.full(c.shape[:2] + (4, 4), np.nan, complex)
    if (~missing).any():
        rho[~missing] = project_physical(linear_inversion(c[~missing]))
    return rho, missing


def _concurrence_grid(rho, missing):
    out = np.full(missing.shape, np.nan)
    for idx in zip(*np.nonzero(~missing)):
        out[idx] = concurrence(rho[idx])
    return out


def _matched_fidelities(rho, angles, unitary):
    diag = np.array([rho[k, k] for k in range(len(angles))])
    return bell_fidelities(rotate_ion_z(diag, angles), unitary)


def analyze(table: CountTable, starts: int = 8, seed: int = 0, replicates: int = 0) -> TomographyResult:
    """Reconstruct all pairs, align the matched ones and optionally attach Monte Carlo errors."""
    rho, missing = _reconstruct_grid(table.counts)
    k = min(table.shape)
    if any(missing[i, i] for i in range(k)):
        raise IncompleteDataError("a matched ion-photon pair lacks data in some setting")
    diag = np.array([rho[i, i] for i in range(k)])
    zfit = optimize_z_rotations(diag, starts, seed)
    pfit = optimize_photon_unitary(rotate_ion_z(diag, zfit.angles), starts, seed)
    result = TomographyResult(rho, _concurrence_grid(rho, missing), pfit.fidelities, zfit.angles,
                              pfit.params, missing=missing)
    if replicates:
        c_err, f_err = monte_carlo_errors(table, replicates, seed, zfit.angles, pfit.unitary)
        result.concurrence_err, result.fidelity_err = c_err, f_err
    return result


def monte_carlo_errors(table: CountTable, replicates: int = 200, seed: int = 0,
                       z_angles=None, photon=None):
    """Standard deviations of concurrence (grid) and matched Bell fidelity.

    Each replicate redraws every setting's outcomes from the multinomial of the
    observed frequencies. Rotations are held at the nominal fit; pairs with an
    empty setting yield NaN.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    counts = table.counts
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n[..., None] > 0, counts / np.maximum(n[..., None], 1), 0.25)
    k = min(table.shape)
    if z_angles is None or photon is None:
        nominal = analyze(table, seed=seed)
        z_angles = nominal.z_angles
        photon = photon_unitary(nominal.photon_params)
    conc, fid = [], []
    for r in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r, 0x4C]))
        sample = rng.multinomial(n, p)
        rho, missing = _reconstruct_grid(sample)
        conc.append(_concurrence_grid(rho, missing))
        diag = np.array([rho[i, i] for i in range(k)])
        f = np.full(k, np.nan)
        ok = ~np.array([missing[i, i] for i in range(k)])
        if ok.any():
            f[ok] = bell_fidelities(rotate_ion_z(diag[ok], np.asarray(z_angles)[ok]), photon)
        fid.append(f)
    with np.errstate(invalid="ignore"):
        return np.std(conc, axis=0, ddof=1), np.std(fid, axis=0, ddof=1)


# -- I/O -------------------------------------------------------------------


COUNT_HEADER = ["setting_id", "ion_index", "photon_window", "outcome", "count"]


def write_count_csv(path, table: CountTable) -> None:
    ni, nw = table.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COUNT_HEADER)
        for s, i, j, o in product(range(N_SETTINGS), range(ni), range(nw), range(4)):
            w.writerow([s, i + 1, j + 1, o, int(table.counts[s, i, j, o])])


def read_count_csv(path, attempts=None) -> CountTable:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COUNT_HEADER:
            raise IncompleteDataError(f"unexpected count-table header {reader.fieldnames}")
        for row in reader:
            rows.append([int(row[k]) for k in COUNT_HEADER])
    if not rows:
        raise IncompleteDataError("count table is empty")
    a = np.array(rows)
    ni, nw = a[:, 1].max(), a[:, 2].max()
    counts = np.zeros((N_SETTINGS, ni, nw, 4), np.int64)
    np.add.at(counts, (a[:, 0], a[:, 1] - 1, a[:, 2] - 1, a[:, 3]), a[:, 4])
    return CountTable(counts, attempts)


def write_result_json(path, result: TomographyResult, extra: dict | None = None) -> None:
    payload = result.to_json()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
