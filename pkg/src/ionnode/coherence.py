"""Ion-qubit phases from a field gradient during shuttling, and dephasing.

The qubit is stored in D5/2 (m = -5/2, -3/2). While the trap centre sits at
X_k, ion j sees B_grad (x_kj - x_ref) + B_mis relative to the field the
analysis lasers were calibrated on, and its superposition picks up phase at
the corresponding D-D' Zeeman detuning. The string is assumed to follow the
trap centre rigidly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .constants import CONSTANTS, G_D52, G_S12, TWO_PI
from .errors import FitError
from .states import Z, I2, bell_state

_GAUSS = 1e-4  # T


@dataclass(frozen=True)
class ZeemanSensitivity:
    tag: str
    m_lower: float
    g_lower: float
    m_upper: float
    g_upper: float

    @property
    def coefficient(self) -> float:
        """Frequency shift per gauss (Hz/G)."""
        mu = CONSTANTS.bohr_magneton / CONSTANTS.planck * _GAUSS
        return (self.m_upper * self.g_upper - self.m_lower * self.g_lower) * mu


S_TO_D = ZeemanSensitivity("S->D", -0.5, G_S12, -2.5, G_D52)
S_TO_DPRIME = ZeemanSensitivity("S->D'", -0.5, G_S12, -1.5, G_D52)
D_TO_DPRIME = ZeemanSensitivity("D->D'", -2.5, G_D52, -1.5, G_D52)


def zeeman_frequency(sensitivity: ZeemanSensitivity, field_gauss):
    return sensitivity.coefficient * np.asarray(field_gauss, float)


@dataclass(frozen=True)
class FieldModel:
    gradient: float = 4.4  # G/m
    miscalibration: float = 48e-6  # G, mean over the string at the start position

    def __post_init__(self):
        if not (np.isfinite(self.gradient) and np.isfinite(self.miscalibration)):
            raise ValueError("field parameters must be finite")


@dataclass(frozen=True)
class ShuttleSchedule:
    """Trap-centre dwell sequence X_1, X_2, ..., X_N, back to X_1.

    Each dwell at X_n (n > 1) includes ``transport`` after arrival before the
    ion at the waist is prepared; ion 1 is prepared at t = 0.
    """

    n_positions: int = 10
    initial_dwell: float = 126e-6
    dwell: float = 156e-6
    final_dwell: float = 30e-6
    transport: float = 30e-6

    def __post_init__(self):
        if self.n_positions < 1:
            raise ValueError("need at least one trap position")
        if min(self.initial_dwell, self.dwell, self.final_dwell) <= 0 or self.transport < 0:
            raise ValueError("dwell times must be positive")
        if self.transport >= self.dwell:
            raise ValueError("transport time must be shorter than a dwell")

    def segments(self) -> list[tuple[int, float, float]]:
        """(centre index, start, end) for every dwell, centre 0 = X_1."""
        segs = [(0, 0.0, self.initial_dwell)]
        t = self.initial_dwell
        for k in range(1, self.n_positions):
            segs.append((k, t, t + self.dwell))
            t += self.dwell
        segs.append((0, t, t + self.final_dwell))
        return segs

    @property
    def readout_time(self) -> float:
        return self.segments()[-1][2]

    @property
    def preparation_times(self) -> np.ndarray:
        segs = self.segments()
        return np.array([0.0] + [segs[k][1] + self.transport for k in range(1, self.n_positions)])

    @property
    def storage_times(self) -> np.ndarray:
        return self.readout_time - self.preparation_times

    def scaled(self, factor: float) -> "ShuttleSchedule":
        return ShuttleSchedule(self.n_positions, factor * self.initial_dwell, factor * self.dwell,
                               factor * self.final_dwell, factor * self.transport)


def positions_per_centre(string_positions: Sequence[float]) -> np.ndarray:
    """x[k, j]: position of ion j with ion k at the waist (x = 0)."""
    u = np.sort(np.asarray(string_positions, float))
    return u[None, :] - u[:, None]


@dataclass(frozen=True)
class PhaseResult:
    unwrapped: np.ndarray
    offset: float = 0.0

    @property
    def angles(self) -> np.ndarray:
        """Wrapped to (-pi, pi]."""
        return wrap_angle(self.unwrapped + self.offset)

    def with_offset(self, offset: float) -> "PhaseResult":
        return PhaseResult(self.unwrapped, offset)


def wrap_angle(a):
    a = np.asarray(a, float)
    return np.pi - np.mod(np.pi - a, TWO_PI)


def accumulate_phases(schedule: ShuttleSchedule, field: FieldModel, positions: np.ndarray,
                      sensitivity: ZeemanSensitivity = D_TO_DPRIME) -> PhaseResult:
    """Phase picked up by each ion between its preparation and readout."""
    positions = np.asarray(positions, float)
    n = schedule.n_positions
    if positions.shape != (n, n):
        raise ValueError(f"positions must be ({n}, {n}), got {positions.shape}")
    x_ref = positions[0].mean()
    detuning = zeeman_frequency(sensitivity, field.gradient * (positions - x_ref) + field.miscalibration)
    prep = schedule.preparation_times
    phases = np.zeros(n)
    for k, t0, t1 in schedule.segments():
        overlap = np.clip(t1 - np.maximum(prep, t0), 0, None)
        phases += TWO_PI * overlap * detuning[k]
    return PhaseResult(phases)


def align_offset(model: Sequence[float], measured: Sequence[float]) -> float:
    """Global offset that best maps model angles onto measured ones on the circle."""
    d = np.asarray(measured, float) - np.asarray(model, float)
    return float(np.angle(np.mean(np.exp(1j * d))))


def dephasing_factor(t: float, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if np.isinf(sigma):
        return 1.0
    return float(np.exp(-t * t / (2 * sigma * sigma)))


@dataclass(frozen=True)
class DephasingChannel:
    sigma: float = 5.5e-3

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def kraus(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        p = dephasing_factor(t, self.sigma)
        return np.sqrt((1 + p) / 2) * np.eye(4), np.sqrt((1 - p) / 2) * np.kron(Z, I2)

    def __call__(self, rho: np.ndarray, t: float) -> np.ndarray:
        return dephase(rho, t, self.sigma)


_ZI = np.kron(Z, I2)


def dephase(rho: np.ndarray, t: float, sigma: float) -> np.ndarray:
    """Phase-flip channel on the ion qubit with coherence factor exp(-t^2 / 2 sigma^2)."""
    p = dephasing_factor(t, sigma)
    return 0.5 * (1 + p) * rho + 0.5 * (1 - p) * (_ZI @ rho @ _ZI)


def fidelity_vs_ion_index(rho_last: np.ndarray, storage_times: Sequence[float], sigma: float,
                          theta: float = 0.0) -> np.ndarray:
    """Bell fidelity per ion, each dephased for its storage time beyond the shortest one."""
    t = np.asarray(storage_times, float)
    psi = bell_state(theta)
    tau = np.abs(t - t.min())
    return np.array([np.real(psi.conj() @ dephase(rho_last, x, sigma) @ psi) for x in tau])


@dataclass(frozen=True)
class RamseyFit:
    sigma: float
    stderr: float


def _contrast(t, sigma):
    return np.exp(-t * t / (2 * sigma * sigma))


def ramsey_contrast_fit(times: Sequence[float], contrasts: Sequence[float],
                        weights: Sequence[float] | None = None) -> RamseyFit:
    t = np.asarray(times, float)
    c = np.asarray(contrasts, float)
    if t.size < 3 or t.shape != c.shape:
        raise FitError("need at least three matching points")
    if np.any((c < 0) | (c > 1)):
        raise FitError("contrasts must lie in [0, 1]")
    # initial guess from the log-linearized curve
    ok = (c > 0.05) & (c < 0.999) & (t > 0)
    guess = np.sqrt(np.mean(t[ok] ** 2 / (-2 * np.log(c[ok])))) if ok.any() else np.ptp(t)
    sig = None if weights is None else 1 / np.sqrt(np.asarray(weights, float))
    try:
        (s,), cov = curve_fit(_contrast, t, c, p0=(guess,), sigma=sig, xtol=1e-14, ftol=1e-14)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"Ramsey fit did not converge: {exc}") from exc
    err = float(np.sqrt(cov[0, 0])) if np.isfinite(cov[0, 0]) else float("nan")
    return RamseyFit(abs(float(s)), err)


def write_angles_csv(path, angles: Sequence[float], column: str = "angle_rad") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ion_index", column])
        for i, a in enumerate(angles, 1):
            w.writerow([i, repr(float(a))])


def write_fidelity_curve_csv(path, fidelities: Sequence[float]) -> None:
    write_angles_csv(path, fidelities, "fidelity")
