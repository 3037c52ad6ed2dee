"""Linear ion-crystal mechanics.

Equilibrium positions, normal modes, thermal occupations, Lamb-Dicke factors
and the thermally reduced carrier Rabi frequency of each ion.

Positions are solved in the dimensionless units u = z / l with
l = (e^2 / (4 pi eps0 m w_z^2))^(1/3), where the force on ion i reads

    F_i = -u_i + sum_{j != i} sign(u_i - u_j) / (u_i - u_j)^2 .
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import CONSTANTS, TWO_PI, PhysicalConstants
from .errors import ConvergenceError, SolverError, UnstableConfigurationError

BRANCHES = ("axial", "radial-x", "radial-y")

# measured ten-ion trap frequencies (rad/s)
OMEGA_Z_MEASURED = TWO_PI * 358e3
OMEGA_RADIAL_HIGH = TWO_PI * 2.0940e6
OMEGA_RADIAL_LOW = TWO_PI * 2.0469e6
OMEGA_LOWEST_RADIAL = TWO_PI * 1.1273e6

# reference per-ion Lamb-Dicke factors of the lowest radial mode, ions 1..10
REFERENCE_LOWEST_MODE_ETA = (0.0002, 0.003, 0.016, 0.044, 0.071,
                           0.071, 0.044, 0.016, 0.003, 0.0002)
REFERENCE_COM_ETA = 0.0028

LAMB_DICKE_WARN = 0.3


@dataclass(frozen=True)
class TrapConfiguration:
    n_ions: int
    omega_z: float
    omega_rx: float = OMEGA_RADIAL_HIGH
    omega_ry: float = OMEGA_RADIAL_LOW

    def __post_init__(self):
        if int(self.n_ions) != self.n_ions or self.n_ions < 1:
            raise ValueError(f"n_ions must be a positive integer, got {self.n_ions}")
        for name in ("omega_z", "omega_rx", "omega_ry"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def radial(self, branch: str) -> float:
        return {"radial-x": self.omega_rx, "radial-y": self.omega_ry}[branch]

    @classmethod
    def ten_ion_node(cls, omega_z: float = OMEGA_Z_MEASURED) -> "TrapConfiguration":
        return cls(10, omega_z, OMEGA_RADIAL_HIGH, OMEGA_RADIAL_LOW)


@dataclass(frozen=True)
class IonString:
    positions: np.ndarray  # m, ascending
    length_scale: float  # m
    residual: float = 0.0  # max |dimensionless force|

    @property
    def n_ions(self) -> int:
        return len(self.positions)

    @property
    def span(self) -> float:
        return float(self.positions[-1] - self.positions[0])

    @property
    def dimensionless(self) -> np.ndarray:
        return self.positions / self.length_scale


@dataclass(frozen=True)
class ModeSet:
    branch: str
    frequencies: np.ndarray  # rad/s, ascending
    vectors: np.ndarray  # vectors[i, m] = b_{i,m}

    def __len__(self):
        return len(self.frequencies)


@dataclass(frozen=True)
class ThermalState:
    nbar: np.ndarray
    temperature: float


@dataclass(frozen=True)
class LambDickeTable:
    eta: np.ndarray  # eta[i, m], magnitudes
    frequencies: np.ndarray  # rad/s per column
    wavelength: float
    angle: float
    mass: float
    outside_lamb_dicke: bool = field(default=False)


def length_scale(omega_z: float, constants: PhysicalConstants = CONSTANTS) -> float:
    c = constants
    return (c.electron_charge**2 * c.coulomb_constant
            / (c.ion_mass * omega_z**2)) ** (1 / 3)


def _pair_terms(u):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return d


def _force(u):
    d = _pair_terms(u)
    return -u + np.sum(np.sign(d) / d**2, axis=1)


def _coulomb_curvature(u):
    """Matrix K_ij = 1/|u_i-u_j|^3 off the diagonal, zero on it."""
    d = _pair_terms(u)
    return 1.0 / np.abs(d) ** 3


def _axial_hessian(u):
    k = _coulomb_curvature(u)
    return np.diag(1 + 2 * k.sum(axis=1)) - 2 * k


def solve_dimensionless(n: int, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Damped Newton iteration for the dimensionless equilibrium positions."""
    if n == 1:
        return np.zeros(1)
    # approximate span from the large-N density, refined by Newton
    u = np.linspace(-1.0, 1.0, n) * 1.05 * n**0.56
    f = _force(u)
    for _ in range(max_iter):
        if np.max(np.abs(f)) < tol:
            break
        step = np.linalg.solve(_axial_hessian(u), f)
        lam = 1.0
        norm = np.linalg.norm(f)
        while lam > 1e-6:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0):
                f_trial = _force(trial)
                if np.linalg.norm(f_trial) < norm:
                    break
            lam *= 0.5
        else:
            raise SolverError("equilibrium line search stalled")
        u, f = trial, f_trial
    else:
        raise SolverError(f"equilibrium did not converge in {max_iter} iterations")
    u = np.sort(u)
    # enforce exact mirror symmetry
    u = 0.5 * (u - u[::-1])
    return u


def equilibrium_positions(config: TrapConfiguration,
                          constants: PhysicalConstants = CONSTANTS) -> IonString:
    u = solve_dimensionless(config.n_ions)
    residual = float(np.max(np.abs(_force(u)))) if config.n_ions > 1 else 0.0
    if residual > 1e-9:
        raise SolverError(f"residual force {residual:.2e} above tolerance")
    ell = length_scale(config.omega_z, constants)
    return IonString(positions=u * ell, length_scale=ell, residual=residual)


def _fix_signs(vectors):
    out = vectors.copy()
    for m in range(out.shape[1]):
        col = out[:, m]
        k = np.argmax(np.abs(col) > np.abs(col).max() * (1 - 1e-9))
        if col[k] < 0:
            out[:, m] = -col
    return out


def normal_modes(string: IonString, config: TrapConfiguration, branch: str = "axial") -> ModeSet:
    """Diagonalize the potential Hessian of one motional branch."""
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}")
    u = string.dimensionless
    if branch == "axial":
        mat = _axial_hessian(u)
    else:
        k = _coulomb_curvature(u)
        ratio = (config.radial(branch) / config.omega_z) ** 2
        mat = np.diag(ratio - k.sum(axis=1)) + k
    w2, vecs = np.linalg.eigh(mat)
    if w2[0] <= 0:
        raise UnstableConfigurationError(
            f"{branch} Hessian has eigenvalue {w2[0]:.3g}: linear string unstable")
    return ModeSet(branch, np.sqrt(w2) * config.omega_z, _fix_signs(vecs))


def axial_frequency_from_radial(n_ions: int, radial_com: float, lowest_radial: float) -> float:
    """Axial COM frequency for which the radial branch with COM frequency
    ``radial_com`` has its lowest mode at ``lowest_radial``.

    The radial Hessian is (w_r/w_z)^2 I + K with K fixed by the dimensionless
    geometry, so w_low^2 = w_r^2 + k_min w_z^2 holds exactly.
    """
    if n_ions < 2:
        raise ValueError("need at least two ions")
    k = _coulomb_curvature(solve_dimensionless(n_ions))
    k_min = np.linalg.eigvalsh(np.diag(-k.sum(axis=1)) + k)[0]
    wz2 = (lowest_radial**2 - radial_com**2) / k_min
    if not 0 < lowest_radial < radial_com:
        raise ValueError("lowest radial frequency must lie below the radial COM")
    return float(np.sqrt(wz2))


def thermal_occupations(reference_omega: float, reference_nbar: float,
                        modes: ModeSet | Sequence[ModeSet] | np.ndarray,
                        constants: PhysicalConstants = CONSTANTS) -> ThermalState:
    """Bose-Einstein occupations at the temperature fixed by one reference mode."""
    if not reference_nbar > 0:
        raise ValueError("reference occupation must be positive")
    omegas = _frequencies(modes)
    x_ref = np.log1p(1.0 / reference_nbar)  # hbar w_ref / kT
    temperature = constants.hbar * reference_omega / (constants.boltzmann * x_ref)
    x = omegas * (x_ref / reference_omega)
    return ThermalState(nbar=1.0 / np.expm1(x), temperature=float(temperature))


def _frequencies(modes):
    if isinstance(modes, ModeSet):
        return np.asarray(modes.frequencies, float)
    if isinstance(modes, np.ndarray):
        return modes.astype(float)
    return np.concatenate([m.frequencies for m in modes])


def _vectors(modes):
    if isinstance(modes, ModeSet):
        return modes.vectors
    return np.concatenate([m.vectors for m in modes], axis=1)


def lamb_dicke_factors(modes: ModeSet | Sequence[ModeSet], wavelength: float = 393e-9,
                       angle: float = np.pi / 4, constants: PhysicalConstants = CONSTANTS,
                       mass: str | float = "string") -> LambDickeTable:
    """eta_{i,m} = (2 pi / lambda) |b_{i,m}| sqrt(hbar / 2 M w_m) |cos(angle)|.

    ``mass`` selects M: "string" for the total string mass N m, "ion" for the
    single-ion mass m (the usual convention for normalized eigenvectors), or an
    explicit value in kg.
    """
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    vecs = _vectors(modes)
    omegas = _frequencies(modes)
    n = vecs.shape[0]
    if mass == "string":
        m_eff = n * constants.ion_mass
    elif mass == "ion":
        m_eff = constants.ion_mass
    else:
        m_eff = float(mass)
    cos_k = np.cos(angle)
    if abs(cos_k) < 1e-15:
        cos_k = 0.0
    eta = (TWO_PI / wavelength) * np.abs(vecs) * np.sqrt(constants.hbar / (2 * m_eff * omegas)) * abs(cos_k)
    flag = bool(np.any(eta > LAMB_DICKE_WARN))
    if flag:
        warnings.warn("Lamb-Dicke factor above 0.3; product formula unreliable", RuntimeWarning)
    return LambDickeTable(eta, omegas, wavelength, angle, m_eff, flag)


def _thermal_carrier_factor(eta: float, nbar: float, tail_tol: float, max_terms: int) -> float:
    """<exp(-eta^2/2) L_n(eta^2)> over a geometric phonon distribution."""
    x = eta * eta
    if nbar <= 0:
        return float(np.exp(-x / 2))
    q = nbar / (nbar + 1)
    n_terms = int(np.ceil(np.log(tail_tol) / np.log(q)))
    if n_terms > max_terms:
        raise ConvergenceError(f"thermal sum needs {n_terms} terms (nbar={nbar:.3g})")
    n_terms = max(n_terms, 1)
    lag = np.empty(n_terms)
    lag[0] = 1.0
    if n_terms > 1:
        lag[1] = 1.0 - x
    for k in range(1, n_terms - 1):
        lag[k + 1] = ((2 * k + 1 - x) * lag[k] - k * lag[k - 1]) / (k + 1)
    weights = (1 - q) * q ** np.arange(n_terms)
    return float(np.exp(-x / 2) * np.dot(weights, lag))


def reduced_rabi(omega: float, table: LambDickeTable, thermal: ThermalState,
                 method: str = "laguerre-thermal", tail_tol: float = 1e-8,
                 max_terms: int = 1_000_000) -> np.ndarray:
    """Per-ion carrier Rabi frequency reduced by thermal radial motion."""
    eta = table.eta
    nbar = np.asarray(thermal.nbar, float)
    if eta.shape[1] != len(nbar):
        raise ValueError("Lamb-Dicke table and thermal state cover different modes")
    if method == "lamb-dicke-product":
        return omega * np.prod(1 - eta**2 * nbar[None, :], axis=1)
    if method == "laguerre-thermal":
        factors = np.array([[_thermal_carrier_factor(e, nb, tail_tol, max_terms)
                             for e, nb in zip(row, nbar)] for row in eta])
        return omega * np.prod(factors, axis=1)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class RabiProfile:
    """Everything that feeds the per-ion reduced Rabi frequency."""

    string: IonString
    modes: tuple
    thermal: ThermalState
    table: LambDickeTable
    factors: np.ndarray  # Omega_r / Omega per ion


def thermal_rabi_profile(config: TrapConfiguration, reference_nbar: float = 10.0,
                         mass: str | float = "ion", method: str = "laguerre-thermal",
                         wavelength: float = 393e-9, angle: float = np.pi / 4,
                         cooled: bool = False,
                         constants: PhysicalConstants = CONSTANTS) -> RabiProfile:
    """Chain string -> radial modes -> occupations -> eta -> Omega_r / Omega.

    The temperature is fixed by ``reference_nbar`` in the highest radial COM
    mode. ``cooled=True`` sets every occupation to zero.
    """
    string = equilibrium_positions(config, constants)
    modes = tuple(normal_modes(string, config, b) for b in ("radial-x", "radial-y"))
    ref = max(config.omega_rx, config.omega_ry)
    thermal = thermal_occupations(ref, reference_nbar, modes, constants)
    if cooled:
        thermal = ThermalState(np.zeros_like(thermal.nbar), 0.0)
    table = lamb_dicke_factors(modes, wavelength, angle, constants, mass)
    factors = reduced_rabi(1.0, table, thermal, method)
    return RabiProfile(string, modes, thermal, table, factors)


def reference_comparison(config: TrapConfiguration = TrapConfiguration.ten_ion_node(),
                         wavelength: float = 393e-9, angle: float = np.pi / 4,
                         constants: PhysicalConstants = CONSTANTS) -> dict:
    """Model values next to the measured reference numbers they should reproduce.

    Covers the per-ion COM Lamb-Dicke factor of the highest radial branch under
    both mass conventions, and the lowest radial mode frequency.
    """
    string = equilibrium_positions(config, constants)
    branch = "radial-x" if config.omega_rx >= config.omega_ry else "radial-y"
    modes = normal_modes(string, config, branch)
    com = ModeSet(branch, modes.frequencies[-1:], modes.vectors[:, -1:])
    eta = {m: float(lamb_dicke_factors(com, wavelength, angle, constants, m).eta[0, 0]) for m in ("string", "ion")}
    lowest = min(normal_modes(string, config, b).frequencies[0] for b in ("radial-x", "radial-y"))
    return {
        "com_eta_string_mass": eta["string"],
        "com_eta_ion_mass": eta["ion"],
        "com_eta_reference": REFERENCE_COM_ETA,
        "ratio_string_mass": eta["string"] / REFERENCE_COM_ETA,
        "ratio_ion_mass": eta["ion"] / REFERENCE_COM_ETA,
        "lowest_radial_hz": float(lowest / TWO_PI),
        "lowest_radial_reference_hz": float(OMEGA_LOWEST_RADIAL / TWO_PI),
        "lowest_radial_relative_error": float(lowest / OMEGA_LOWEST_RADIAL - 1),
    }


def write_modes_csv(path, mode_sets: Sequence[ModeSet]) -> None:
    """CSV with columns branch, mode_index, freq_hz, b_1..b_N."""
    mode_sets = list(mode_sets)
    n = mode_sets[0].vectors.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch", "mode_index", "freq_hz"] + [f"b_{i + 1}" for i in range(n)])
        for ms in mode_sets:
            for m, freq in enumerate(ms.frequencies):
                w.writerow([ms.branch, m + 1, repr(float(freq / TWO_PI))]
                           + [repr(float(b)) for b in ms.vectors[:, m]])


def read_modes_csv(path) -> list[ModeSet]:
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["branch"], []).append(row)
    out = []
    for branch, items in rows.items():
        items.sort(key=lambda r: int(r["mode_index"]))
        freqs = np.array([float(r["freq_hz"]) for r in items]) * TWO_PI
        keys = [k for k in items[0] if k.startswith("b_")]
        vecs = np.array([[float(r[k]) for k in keys] for r in items]).T
        out.append(ModeSet(branch, freqs, vecs))
    return out
