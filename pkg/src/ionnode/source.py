"""Single-photon generation by a cavity-mediated Raman transition.

The laser-atom-cavity system is reduced to an effective Lambda system with the
excited P manifold adiabatically eliminated. Basis of the density matrix:

    0  |S>            ground state
    1  |D, H, 1>      photon in the H cavity mode
    2  |D', V, 1>     photon in the V cavity mode
    3  |D, 0>         H photon has left the cavity mode
    4  |D', 0>        V photon has left the cavity mode
    5  |lost>         scattered out of the Raman channel

Each branch of the bichromatic drive couples |S> to one photon mode with
amplitude g_eff / sqrt(2), g_eff = s g(z) Omega_r(z) / (2 Delta), where s lumps
Clebsch-Gordan and bichromatic power-splitting factors. The cavity field decays
at rate kappa (energy at 2 kappa) and a fraction P_esc of that leaves through
the output mirror. Off-resonant scattering from |S> removes population at
Gamma_eff Omega(z)^2 / (4 Delta^2). The Raman resonance is set for an ion at
z = 0, so a displaced ion sees a two-photon detuning equal to the change of
the ground-state light shift, (Omega(z)^2 - Omega^2) / (4 Delta).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .constants import CONSTANTS, P32_BRANCHING, P32_LIFETIME, TWO_PI
from .errors import CalibrationError, ConvergenceError, DataError

# calibration values of the ten-ion node
STARK_SHIFT = TWO_PI * 1.26e6
RAMAN_RABI = TWO_PI * 53.2e6
CAVITY_COUPLING = TWO_PI * 1.53e6
FINESSE_OLD, ESCAPE_OLD = 54e3, 0.78
FINESSE = 30e3
CAVITY_LENGTH = 19.906e-3


@dataclass(frozen=True)
class CavityGeometry:
    waist: float = 12.31e-6
    angle: float = np.deg2rad(4.1)  # string axis to cavity-normal complement
    wavelength: float = 854e-9
    length: float = CAVITY_LENGTH
    mirror_roc: float = 9.984e-3

    def __post_init__(self):
        if not 0 < self.angle < np.pi / 2:
            raise ValueError("angle must lie in (0, pi/2)")
        if not self.waist > 0:
            raise ValueError("waist must be positive")


@dataclass(frozen=True)
class CavityParams:
    finesse: float
    loss: float
    kappa: float
    escape: float
    t2: float


@dataclass(frozen=True)
class RamanBeam:
    wavelength: float = 393e-9
    waist: float = 1.3e-6
    rabi: float = RAMAN_RABI
    detuning: float | None = None
    phase: float = 0.0

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError("waist must be positive")
        if self.rabi < 0:
            raise ValueError("rabi frequency must be non-negative")


def cavity_derived_params(finesse: float, length: float, t2: float,
                          c: float = CONSTANTS.speed_of_light) -> CavityParams:
    """Round-trip loss, field decay rate and escape probability."""
    if not (finesse > 0 and length > 0):
        raise ValueError("finesse and length must be positive")
    loss = TWO_PI / finesse
    if t2 < 0:
        raise ValueError("transmission must be non-negative")
    if t2 > loss:
        raise CalibrationError(f"T2={t2:.3g} exceeds total loss {loss:.3g}: unphysical escape")
    return CavityParams(finesse, loss, c * loss / (4 * length), t2 / loss, t2)


def transmission_from_escape(finesse: float, escape: float) -> float:
    return escape * TWO_PI / finesse


def stark_calibrate_detuning(rabi: float, stark_shift: float) -> float:
    """Detuning from a measured light shift, shift = Omega^2 / (4 Delta)."""
    if not stark_shift > 0:
        raise CalibrationError("light shift must be positive")
    return rabi**2 / (4 * stark_shift)


def spatial_coupling(z, beam: RamanBeam, geom: CavityGeometry, g: float = CAVITY_COUPLING):
    """Raman Rabi frequency and cavity coupling along the string axis."""
    z = np.asarray(z, float)
    k = TWO_PI / geom.wavelength
    rabi = beam.rabi * np.exp(-z**2 / beam.waist**2)
    gz = g * np.cos(k * z * np.sin(geom.angle)) * np.exp(-(z * np.cos(geom.angle) / geom.waist) ** 2)
    return rabi, gz


def _default_cavity() -> CavityParams:
    t2 = transmission_from_escape(FINESSE_OLD, ESCAPE_OLD)
    return cavity_derived_params(FINESSE, CAVITY_LENGTH, t2)


@dataclass(frozen=True)
class PhotonSourceModel:
    g: float = CAVITY_COUPLING
    kappa: float = field(default_factory=lambda: _default_cavity().kappa)
    escape: float = field(default_factory=lambda: _default_cavity().escape)
    detuning: float = field(default_factory=lambda: stark_calibrate_detuning(RAMAN_RABI, STARK_SHIFT))
    scatter_linewidth: float = 1.0 / P32_LIFETIME
    loss_fraction: float = P32_BRANCHING[1] + P32_BRANCHING[2]
    rayleigh_dephasing: bool = False
    coupling_scale: float = 0.32
    jitter: float = TWO_PI * 10e3
    pulse: float = 80e-6
    bin_width: float = 0.2e-6
    shots: int = 8
    rtol: float = 1e-8

    def __post_init__(self):
        for name in ("g", "kappa", "scatter_linewidth", "coupling_scale", "jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 <= self.escape <= 1:
            raise ValueError("escape probability must lie in [0, 1]")
        if not self.pulse > 0:
            raise ValueError("pulse duration must be positive")
        n_bins = self.pulse / self.bin_width
        if abs(n_bins - round(n_bins)) > 1e-6:
            raise ValueError("bin width must divide the pulse duration")

    @property
    def gamma_eff(self) -> float:
        return self.scatter_linewidth * self.loss_fraction

    @property
    def n_bins(self) -> int:
        return int(round(self.pulse / self.bin_width))


@dataclass(frozen=True)
class IonDriveContext:
    rabi_factor: float = 1.0  # Omega_r / Omega
    displacement: float = 0.0  # static z0 (m)
    oscillation: float = 0.0  # A_com (m)
    omega_z: float = TWO_PI * 358e3
    ripple: float = 0.0  # A_50 (m), quasi-static

    def __post_init__(self):
        if self.rabi_factor < 0 or self.oscillation < 0 or self.ripple < 0:
            raise ValueError("amplitudes must be non-negative")


@dataclass(frozen=True)
class Wavepacket:
    times: np.ndarray  # bin start times (s)
    density: np.ndarray  # emission probability density (1/s)
    probability: float  # P_c
    bin_width: float

    @property
    def peak_time(self) -> float:
        return float(self.times[np.argmax(self.density)] + self.bin_width / 2)

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.density) * self.bin_width


_DIM = 6


def _ket(i):
    v = np.zeros((_DIM, 1))
    v[i] = 1.0
    return v


def _commutator_super(h):
    eye = np.eye(_DIM)
    # column-stacked vec: vec(A X B) = (B^T kron A) vec(X)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def _dissipator_super(jump):
    eye = np.eye(_DIM)
    jj = jump.conj().T @ jump
    return (np.kron(jump.conj(), jump) - 0.5 * np.kron(eye, jj) - 0.5 * np.kron(jj.T, eye))


def _superoperators(kappa):
    s, h1, v1, h0, v0, lost = (_ket(i) for i in range(_DIM))
    parts = {
        "stark": _commutator_super(s @ s.T),
        "cavity": _commutator_super(h1 @ h1.T + v1 @ v1.T),
        "raman": _commutator_super(s @ (h1 + v1).T + (h1 + v1) @ s.T),
        "loss": _dissipator_super(lost @ s.T),
        "dephase": _dissipator_super(s @ s.T),
    }
    parts["decay"] = 2 * kappa * (_dissipator_super(h0 @ h1.T) + _dissipator_super(v0 @ v1.T))
    return parts


class _Generator:
    """Liouvillian L(t) = sum_k c_k(t) L_k for one shot."""

    def __init__(self, model, ctx, geom, beam, cavity_detuning, extra_z):
        delta = model.detuning if beam.detuning is None else beam.detuning
        self.parts = _superoperators(model.kappa)
        self.k_c = TWO_PI / geom.wavelength * np.sin(geom.angle)
        self.inv_w0 = np.cos(geom.angle) / geom.waist
        self.inv_sig2 = 1.0 / beam.waist**2
        self.amp = ctx.oscillation
        self.wz = ctx.omega_z
        self.z0 = ctx.displacement + extra_z
        self.gscale = model.coupling_scale * model.g * ctx.rabi_factor * beam.rabi / (2 * delta) / np.sqrt(2)
        self.stark0 = beam.rabi**2 / (4 * delta)
        scat = model.scatter_linewidth * beam.rabi**2 / (4 * delta**2)
        self.gl = scat * model.loss_fraction
        self.gd = scat * (1 - model.loss_fraction) if model.rayleigh_dephasing else 0.0
        self.base = self.parts["decay"] + cavity_detuning * self.parts["cavity"]
        self.static = self.amp == 0.0

    def __call__(self, t=0.0):
        p = self.parts
        z = self.z0 + self.amp * np.sin(self.wz * t)
        prof = np.exp(-z * z * self.inv_sig2)
        geff = self.gscale * prof * np.cos(self.k_c * z) * np.exp(-(z * self.inv_w0) ** 2)
        i2 = prof * prof
        return (self.base + geff * p["raman"] + self.stark0 * (i2 - 1.0) * p["stark"]
                + self.gl * i2 * p["loss"] + self.gd * i2 * p["dephase"])


def _max_step(model, ctx):
    steps = [model.bin_width, 0.25 / max(model.kappa, 1.0)]
    if ctx.oscillation > 0:
        steps.append(TWO_PI / ctx.omega_z / 20)
    return min(steps)


def _integrate_shot(model, ctx, geom, beam, cavity_detuning, extra_z, max_step, method="auto"):
    """Density matrices at every bin edge, shape (n_bins + 1, 6, 6)."""
    gen = _Generator(model, ctx, geom, beam, cavity_detuning, extra_z)
    rho0 = np.zeros((_DIM, _DIM), complex)
    rho0[0, 0] = 1.0
    v0 = rho0.reshape(-1, order="F")
    n = model.n_bins
    if method == "auto":
        method = "exact" if gen.static else "rk45"
    if method == "exact":
        if not gen.static:
            raise ValueError("exact propagation needs a time-independent drive")
        prop = expm(gen() * model.bin_width)
        out = np.empty((n + 1, _DIM * _DIM), complex)
        out[0] = v0
        for k in range(n):
            out[k + 1] = prop @ out[k]
    else:
        fixed = gen() if gen.static else None

        def rhs(t, y):
            return (fixed if fixed is not None else gen(t)) @ y

        edges = np.arange(n + 1) * model.bin_width
        sol = solve_ivp(rhs, (0.0, model.pulse), v0, method="RK45", t_eval=edges,
                        rtol=model.rtol, atol=model.rtol * 1e-3, max_step=max_step)
        if not sol.success:
            raise ConvergenceError(f"master equation integration failed: {sol.message}")
        out = sol.y.T
    return out.reshape(-1, _DIM, _DIM).transpose(0, 2, 1)


def emitted_fraction(rhos: np.ndarray, escape: float) -> np.ndarray:
    return escape * (rhos[:, 3, 3].real + rhos[:, 4, 4].real)


def simulate_photon_generation(model: PhotonSourceModel, ctx: IonDriveContext = IonDriveContext(),
                               geom: CavityGeometry = CavityGeometry(), beam: RamanBeam = RamanBeam(),
                               seed: int = 0, shots: int | None = None, stream: int = 0,
                               check_convergence: bool = False, return_states: bool = False):
    """Emission wavepacket and total exit probability for one ion.

    Cavity-frequency jitter is a static Gaussian detuning per shot and 50 Hz
    ripple a static displacement A_50 sin(phase) with a random phase per shot;
    the returned wavepacket is the shot average. With neither active a single
    deterministic shot is run.
    """
    shots = model.shots if shots is None else shots
    random_shots = model.jitter > 0 or ctx.ripple > 0
    n = max(int(shots), 1) if random_shots else 1
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), 0x50C]))
    detunings = rng.normal(0.0, model.jitter, n) if model.jitter > 0 else np.zeros(n)
    phases = rng.uniform(0, TWO_PI, n) if ctx.ripple > 0 else np.zeros(n)
    max_step = _max_step(model, ctx)

    cum = np.zeros(model.n_bins + 1)
    last = []
    for dc, ph in zip(detunings, phases):
        extra = ctx.ripple * np.sin(ph)
        rhos = _integrate_shot(model, ctx, geom, beam, dc, extra, max_step)
        cum += emitted_fraction(rhos, model.escape)
        last.append(rhos)
        if check_convergence:
            fine = _integrate_shot(model, ctx, geom, beam, dc, extra, max_step / 2)
            a, b = emitted_fraction(rhos, model.escape)[-1], emitted_fraction(fine, model.escape)[-1]
            if abs(a - b) > 5e-3 * max(abs(b), 1e-300):
                raise ConvergenceError(f"step halving changed P_c by {abs(a - b) / b:.2%}")
            check_convergence = False
    cum /= n
    cum[0] = 0.0
    density = np.diff(cum) / model.bin_width
    density = np.clip(density, 0.0, None)
    wp = Wavepacket(np.arange(model.n_bins) * model.bin_width, density,
                    float(np.sum(density) * model.bin_width), model.bin_width)
    if return_states:
        return wp, last
    return wp


def _mean_pm(fn, z):
    if z == 0:
        return fn(0.0)
    return 0.5 * (fn(z) + fn(-z))


def efficiency_vs_displacement(model: PhotonSourceModel, z_grid: Sequence[float],
                               rabi_factor: float = 1.0, geom: CavityGeometry = CavityGeometry(),
                               beam: RamanBeam = RamanBeam(), seed: int = 0) -> np.ndarray:
    """P_c(z) / P_c(0) for a static displacement, averaged over +z and -z."""
    def pc(z):
        ctx = IonDriveContext(rabi_factor=rabi_factor, displacement=z)
        return simulate_photon_generation(model, ctx, geom, beam, seed).probability
    ref = pc(0.0)
    if ref == 0:
        return np.zeros(len(z_grid))
    return np.array([_mean_pm(pc, float(z)) / ref for z in z_grid])


def efficiency_with_oscillation(model: PhotonSourceModel, amplitude: float, displacement: float = 0.0,
                                rabi_factor: float = 1.0, omega_z: float = TWO_PI * 358e3,
                                geom: CavityGeometry = CavityGeometry(), beam: RamanBeam = RamanBeam(),
                                seed: int = 0) -> float:
    """P_c with z(t) = A sin(w_z t) + z0 relative to A = z0 = 0."""
    if amplitude < 0 or displacement < 0:
        raise ValueError("amplitude and displacement must be non-negative")

    def pc(z0, a):
        ctx = IonDriveContext(rabi_factor=rabi_factor, displacement=z0, oscillation=a, omega_z=omega_z)
        return simulate_photon_generation(model, ctx, geom, beam, seed).probability
    ref = pc(0.0, 0.0)
    if ref == 0:
        return 0.0
    return _mean_pm(lambda z: pc(z, amplitude), displacement) / ref


def efficiency_with_ripple(model: PhotonSourceModel, ripple: float, rabi_factor: float = 1.0,
                           geom: CavityGeometry = CavityGeometry(), beam: RamanBeam = RamanBeam(),
                           points: int = 16) -> float:
    """Quasi-static 50 Hz ripple: static efficiency averaged over the ripple phase."""
    quiet = replace(model, jitter=0.0)
    phases = (np.arange(points) + 0.5) * TWO_PI / points

    def pc(z):
        return simulate_photon_generation(quiet, IonDriveContext(rabi_factor, displacement=z),
                                          geom, beam).probability
    ref = pc(0.0)
    return float(np.mean([pc(ripple * np.sin(p)) for p in phases]) / ref)


@dataclass(frozen=True)
class XiFit:
    xi: float
    clamped: bool
    raw: float


def fit_detection_efficiency(detected: Sequence[float], generated: Sequence[float]) -> XiFit:
    """Least-squares xi minimizing sum_i (P_d,i - xi P_c,i)^2."""
    pd = np.asarray(detected, float)
    pc = np.asarray(generated, float)
    if pd.shape != pc.shape or pd.size == 0:
        raise DataError("need equally long, non-empty probability lists")
    den = np.dot(pc, pc)
    if den == 0:
        raise DataError("all model probabilities are zero: degenerate fit")
    raw = float(np.dot(pd, pc) / den)
    xi = min(max(raw, 0.0), 1.0)
    return XiFit(xi, xi != raw, raw)


def detection_budget(paths: Sequence[Sequence[float]]):
    """Per-path product of stage efficiencies and their mean."""
    totals = []
    for stages in paths:
        stages = np.asarray(stages, float)
        if np.any((stages < 0) | (stages > 1)):
            raise ValueError("stage efficiencies must lie in [0, 1]")
        totals.append(float(np.prod(stages)))
    return totals, float(np.mean(totals))


DETECTION_PATHS = ((0.96, 0.84, 0.73, 0.80), (0.96, 0.84, 0.68, 0.88))


def ion_efficiencies(model: PhotonSourceModel, rabi_factors: Sequence[float],
                     contexts: Sequence[IonDriveContext] | None = None,
                     geom: CavityGeometry = CavityGeometry(), beam: RamanBeam = RamanBeam(),
                     seed: int = 0) -> list[Wavepacket]:
    """One wavepacket per ion; shot streams are derived from (seed, ion)."""
    out = []
    for i, f in enumerate(rabi_factors):
        ctx = replace(contexts[i], rabi_factor=float(f)) if contexts else IonDriveContext(float(f))
        out.append(simulate_photon_generation(model, ctx, geom, beam, seed=seed, stream=i))
    return out


def write_wavepacket_csv(path, wp: Wavepacket) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_us", "density_per_us"])
        for t, d in zip(wp.times, wp.density):
            w.writerow([f"{t * 1e6:.1f}", repr(float(d * 1e-6))])


def write_efficiency_curve_csv(path, z_grid, efficiency) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z_um", "fractional_efficiency"])
        for z, e in zip(z_grid, efficiency):
            w.writerow([repr(float(z * 1e6)), repr(float(e))])
