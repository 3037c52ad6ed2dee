"""Endcap voltage chain, trap-centre command and classical COM excitation.

The amplifier drives the endcaps at V_bias +/- g V_in(t). Trap-centre motion is
taken to follow the differential voltage linearly, so a program of step
voltages maps onto a step signal in position, normalized so that the full
sequence spans the string length. Low-pass stages turn the steps into the
command c(t); the string's axial COM then obeys z'' = -w_z^2 (z - c(t)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import signal, stats
from scipy.optimize import curve_fit

from .constants import TWO_PI
from .errors import ConvergenceError, DomainError, FitError, SamplingError

NODE_VOLTAGES = (4.450, 3.900, 3.400, 2.950, 2.550, 2.120, 1.700, 1.250, 0.750, 0.200)
STRING_LENGTH = 49e-6
STEP_INTERVAL = 156e-6
SETTLE_WAIT = 60e-6
SINGLE_STEP = 4.6e-6  # transport step used for the single-step checks
AOD_CONVERSION = 3.03e-12  # m per Hz of deflector frequency
RIPPLE_PEAK_TO_PEAK = 85e-3  # V, differential amplifier output at 50 Hz


@dataclass(frozen=True)
class VoltageStepProgram:
    """Input voltages V_in,j; the first-to-last span maps onto ``span`` metres."""

    values: tuple[float, ...]
    interval: float = STEP_INTERVAL
    gain: float = 4.0
    bias: float = 160.0
    resolution: float = 1e-3
    span: float = STRING_LENGTH

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) < 1:
            raise ValueError("program needs at least one voltage")
        if not self.interval > 0:
            raise ValueError("step interval must be positive")
        if self.resolution > 0:
            q = np.round(np.asarray(self.values) / self.resolution) * self.resolution
            if np.any(np.abs(q - self.values) > 1e-9):
                raise ValueError("values are finer than the generator resolution")

    @classmethod
    def ten_ion_node(cls, interval: float = STEP_INTERVAL) -> "VoltageStepProgram":
        return cls(NODE_VOLTAGES, interval=interval)

    @classmethod
    def single_step(cls, size: float = SINGLE_STEP, volts_per_metre: float | None = None,
                    interval: float = STEP_INTERVAL) -> "VoltageStepProgram":
        """Two-level program moving the trap centre by ``size``."""
        node = cls.ten_ion_node()
        k = volts_per_metre if volts_per_metre is not None else 1.0 / node.metres_per_volt
        dv = size * k / node.gain
        return cls((dv, 0.0), interval=interval, resolution=0.0, span=size)

    @property
    def outputs(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.gain * np.asarray(self.values)
        return self.bias + v, self.bias - v

    @property
    def differential(self) -> np.ndarray:
        return self.gain * np.asarray(self.values)

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def metres_per_volt(self) -> float:
        """Trap-centre displacement per volt of differential output g V_in."""
        d = self.differential
        total = abs(d[-1] - d[0])
        if total == 0:
            return 0.0
        return self.span / total

    @property
    def step_sizes(self) -> np.ndarray:
        return -np.diff(self.differential) * self.metres_per_volt

    @property
    def step_times(self) -> np.ndarray:
        return self.interval * np.arange(1, self.n_steps + 1)


@dataclass(frozen=True)
class StepSignal:
    times: np.ndarray
    volts: np.ndarray  # differential output g V_in(t)
    position: np.ndarray  # s(t)
    dt: float


@dataclass(frozen=True)
class FilterSpec:
    order: int
    cutoff: float  # Hz

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("filter order must be 1 or 2")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")

    @property
    def tau(self) -> float:
        return 1.0 / (TWO_PI * self.cutoff)


NODE_FILTERS = (FilterSpec(1, 35e3), FilterSpec(2, 80e3))
EXTRA_FILTER = FilterSpec(1, 40e3)


@dataclass(frozen=True)
class PositionCommand:
    times: np.ndarray
    values: np.ndarray
    dt: float
    step_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class ComTrajectory:
    times: np.ndarray
    z: np.ndarray
    amplitude: float
    offset: float  # window centre minus final command


def default_dt(omega_z: float, filters: Sequence[FilterSpec] = NODE_FILTERS) -> float:
    """Step that puts 200 samples in a trap period and 20 in every filter time constant."""
    period = TWO_PI / omega_z
    dt = period / 200
    taus = [f.tau for f in filters]
    if taus and min(taus) / 20 < dt:
        dt = period / (200 * int(np.ceil(dt * 20 / min(taus))))
    return dt


def synthesize_waveform(program: VoltageStepProgram, dt: float, duration: float | None = None) -> StepSignal:
    """Piecewise-constant differential voltage and normalized position, steps at j t_p."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if duration is None:
        duration = program.interval * program.n_steps + SETTLE_WAIT + program.interval
    n = int(round(duration / dt)) + 1
    times = np.arange(n) * dt
    idx = np.searchsorted(program.step_times, times + 0.5 * dt, side="right")
    volts = program.differential[idx]
    position = (program.differential[0] - volts) * program.metres_per_volt
    return StepSignal(times, volts, position, dt)


def _stage_coefficients(spec: FilterSpec, dt: float):
    w = TWO_PI * spec.cutoff
    if spec.order == 1:
        a = np.exp(-w * dt)
        return np.array([0.0, 1.0 - a]), np.array([1.0, -a])
    num, den = [w * w], [1.0, 2 * w, w * w]  # critically damped double pole
    b, a, _ = signal.cont2discrete((num, den), dt, method="zoh")
    b = np.ravel(b)
    return b * (np.sum(a) / np.sum(b)), a


def apply_filter_chain(sig: StepSignal, filters: Sequence[FilterSpec]) -> PositionCommand:
    """Filters in sequence, each started in steady state; DC gain is one."""
    x = np.asarray(sig.position, float)
    for spec in filters:
        if spec.tau < 20 * sig.dt:
            raise SamplingError(f"dt={sig.dt:.3g}s under-resolves the {spec.cutoff:.3g} Hz stage")
        b, a = _stage_coefficients(spec, sig.dt)
        zi = signal.lfilter_zi(b, a) * x[0]
        x, _ = signal.lfilter(b, a, x, zi=zi)
    step_times = np.flatnonzero(np.diff(sig.position)) * sig.dt + sig.dt
    return PositionCommand(sig.times, x, sig.dt, step_times)


def residual_settling(tau: float, t: float) -> float:
    """Fraction of a voltage step still to come a time t after it starts."""
    if not tau > 0 or t < 0:
        raise ValueError("need tau > 0 and t >= 0")
    return float(np.exp(-t / tau))


def tau_from_rise_time(t_rise: float) -> float:
    """First-order time constant from a 10-90% rise time."""
    return t_rise / np.log(9.0)


def bandwidth_from_rise_time(t_rise: float) -> float:
    return 0.35 / t_rise


def rise_time(times: np.ndarray, response: np.ndarray) -> float:
    """10-90% rise time of a monotone step response, linearly interpolated."""
    lo, hi = response[0], response[-1]
    if hi == lo:
        raise ValueError("response has no step")
    y = (response - lo) / (hi - lo)
    return float(np.interp(0.9, y, times) - np.interp(0.1, y, times))


def com_trajectory(command: PositionCommand, omega_z: float, settle: float = SETTLE_WAIT) -> ComTrajectory:
    """Driven COM motion from rest at c(0).

    The command is linearly interpolated between samples, which the LTI
    propagator integrates exactly. A_com is half the peak-to-peak of z - c_final
    over one trap period starting ``settle`` after the last step.
    """
    if not omega_z > 0:
        raise ValueError("omega_z must be positive")
    period = TWO_PI / omega_z
    if command.dt > period / 200:
        raise SamplingError("dt must be at most a 200th of the trap period")
    sys = signal.StateSpace([[0.0, 1.0], [-omega_z**2, 0.0]], [[0.0], [omega_z**2]],
                            [[1.0, 0.0]], [[0.0]])
    _, z, _ = signal.lsim(sys, command.values, command.times, X0=[command.values[0], 0.0])
    if not np.all(np.isfinite(z)):
        raise ConvergenceError("COM integration diverged")
    last = command.step_times[-1] if command.step_times.size else 0.0
    start = last + settle
    mask = (command.times >= start) & (command.times <= start + period)
    if np.count_nonzero(mask) < 50:
        raise ValueError("trajectory too short for the extraction window")
    dev = z[mask] - command.final
    amp = 0.5 * float(dev.max() - dev.min())
    return ComTrajectory(command.times, z, amp, 0.5 * float(dev.max() + dev.min()))


def fourier_amplitude(command: PositionCommand, omega_z: float) -> float:
    """|integral of c'(t) exp(-i w_z t) dt|: free-oscillation amplitude once c(t) is flat."""
    dc = np.diff(command.values)
    tm = command.times[:-1] + 0.5 * command.dt
    return float(abs(np.sum(dc * np.exp(-1j * omega_z * tm))))


def simulate_program(program: VoltageStepProgram, omega_z: float,
                     filters: Sequence[FilterSpec] = NODE_FILTERS, dt: float | None = None,
                     settle: float = SETTLE_WAIT) -> ComTrajectory:
    dt = default_dt(omega_z, filters) if dt is None else dt
    duration = program.interval * program.n_steps + settle + 1.5 * TWO_PI / omega_z
    cmd = apply_filter_chain(synthesize_waveform(program, dt, duration), filters)
    return com_trajectory(cmd, omega_z, settle)


def amplitudes_after_steps(program: VoltageStepProgram, omega_z: float,
                           filters: Sequence[FilterSpec] = NODE_FILTERS, dt: float | None = None,
                           settle: float = SETTLE_WAIT) -> np.ndarray:
    """A_com seen ``settle`` after each step, one entry per program level (first is 0)."""
    period = TWO_PI / omega_z
    if settle + period > program.interval and program.n_steps > 1:
        raise ValueError("extraction window overlaps the next step")
    dt = default_dt(omega_z, filters) if dt is None else dt
    duration = program.interval * program.n_steps + settle + 1.5 * period
    cmd = apply_filter_chain(synthesize_waveform(program, dt, duration), filters)
    traj = com_trajectory(cmd, omega_z, settle)
    out = [0.0]
    for t_step in program.step_times:
        start = t_step + settle
        mask = (cmd.times >= start) & (cmd.times <= start + period)
        dev = traj.z[mask] - cmd.values[mask]
        out.append(0.5 * float(dev.max() - dev.min()))
    return np.array(out)


def constructive_interval(omega_z: float, near: float = STEP_INTERVAL) -> float:
    """Integer number of trap periods closest to ``near``."""
    period = TWO_PI / omega_z
    return max(round(near / period), 1) * period


def scan_step_timing(program: VoltageStepProgram, omega_z: float, tp_grid: Sequence[float],
                     filters: Sequence[FilterSpec] = NODE_FILTERS, dt: float | None = None) -> np.ndarray:
    """A_com for every inter-step interval in the grid."""
    tp_grid = np.asarray(tp_grid, float)
    if np.any(tp_grid <= 0):
        raise ValueError("step intervals must be positive")
    return np.array([simulate_program(replace(program, interval=float(tp)), omega_z, filters, dt).amplitude
                     for tp in tp_grid])


def settling_time(command: PositionCommand, level: float, after: float = 0.0) -> float:
    """First time after ``after`` beyond which |c - c_final| stays below ``level``."""
    dev = np.abs(command.values - command.final)
    above = np.flatnonzero(dev > level)
    if above.size == 0:
        return after
    k = above[-1]
    if k + 1 >= dev.size:
        raise ValueError("command never settles to the requested level")
    # interpolate the crossing in log space, where the tail is exponential
    t0, t1 = command.times[k], command.times[k + 1]
    l0, l1 = np.log(dev[k]), np.log(max(dev[k + 1], 1e-300))
    t = t0 + (np.log(level) - l0) / (l1 - l0) * (t1 - t0)
    return float(t - after)


@dataclass(frozen=True)
class ExtraFilterReport:
    single_reduction: float
    worst_reduction: float
    settling_factor: float
    single: tuple[float, float]  # A_com without / with the extra stage
    worst: tuple[float, float]


def evaluate_extra_filter(omega_z: float, extra: FilterSpec = EXTRA_FILTER,
                          filters: Sequence[FilterSpec] = NODE_FILTERS,
                          single: VoltageStepProgram | None = None,
                          worst: VoltageStepProgram | None = None,
                          settle: float = SETTLE_WAIT) -> ExtraFilterReport:
    """A_com reduction from one more stage, and the stretch of the settling time.

    The settling factor compares the times at which a single-step command comes
    within the residual the plain chain reaches after ``settle``.
    """
    single = single or VoltageStepProgram.single_step()
    worst = worst or VoltageStepProgram.ten_ion_node(constructive_interval(omega_z))
    chain = tuple(filters)
    longer = chain + (extra,)
    dt = default_dt(omega_z, longer)

    a_single = (simulate_program(single, omega_z, chain, dt).amplitude,
                simulate_program(single, omega_z, longer, dt).amplitude)
    a_worst = (simulate_program(worst, omega_z, chain, dt).amplitude,
               simulate_program(worst, omega_z, longer, dt).amplitude)

    duration = single.interval + 4 * settle
    sig = synthesize_waveform(single, dt, duration)
    base = apply_filter_chain(sig, chain)
    step_at = single.step_times[0]
    i = int(round((step_at + settle) / dt))
    level = abs(base.values[i] - base.final)
    stretched = settling_time(apply_filter_chain(sig, longer), level, step_at)
    return ExtraFilterReport(a_single[0] / a_single[1], a_worst[0] / a_worst[1],
                             stretched / settle, a_single, a_worst)


@dataclass(frozen=True)
class LinearFit:
    gradient: float
    intercept: float
    gradient_stderr: float


def voltage_position_fit(positions: Sequence[float], voltages: Sequence[float]) -> LinearFit:
    """Ordinary least squares positions = gradient * voltages + intercept."""
    x = np.asarray(voltages, float)
    y = np.asarray(positions, float)
    if x.shape != y.shape or x.size < 2:
        raise FitError("need at least two matching points")
    if np.ptp(x) == 0:
        raise FitError("voltages are all equal: rank-deficient fit")
    res = stats.linregress(x, y)
    err = float(res.stderr) if x.size > 2 else 0.0
    return LinearFit(float(res.slope), float(res.intercept), err)


def ripple_amplitude(gradient: float, peak_to_peak: float = RIPPLE_PEAK_TO_PEAK) -> float:
    """Axial oscillation amplitude from a peak-to-peak voltage ripple."""
    return abs(gradient) * peak_to_peak / 2


@dataclass(frozen=True)
class GaussianFit:
    p0: float
    f0: float
    tau: float

    def __post_init__(self):
        if not (0 < self.p0 <= 1 and self.tau > 0):
            raise FitError(f"unphysical profile fit P0={self.p0:.3g}, tau={self.tau:.3g}")

    def __call__(self, f):
        return self.p0 * np.exp(-((np.asarray(f) - self.f0) ** 2) / (2 * self.tau**2))

    def invert(self, p, side: int = 1):
        """Deflector frequency on one flank of the profile where P_dark = p."""
        r = np.asarray(p, float) / self.p0
        if np.any((r <= 0) | (r > 1)):
            raise DomainError("P_dark / P0 must lie in (0, 1]")
        return self.f0 + side * np.sqrt(-2 * self.tau**2 * np.log(r))


@dataclass(frozen=True)
class SinusoidFit:
    amplitude: float
    offset: float
    phase: float


@dataclass(frozen=True)
class DarkStateScan:
    frequencies: np.ndarray
    p_dark: np.ndarray
    profile: GaussianFit
    oscillation: SinusoidFit

    def __post_init__(self):
        p = np.asarray(self.p_dark)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("P_dark values must lie in [0, 1]")


def _gauss(f, p0, f0, tau):
    return p0 * np.exp(-((f - f0) ** 2) / (2 * tau**2))


def fit_gaussian_profile(freqs: Sequence[float], p_dark: Sequence[float]) -> GaussianFit:
    f = np.asarray(freqs, float)
    p = np.asarray(p_dark, float)
    guess = (p.max(), f[np.argmax(p)], 0.25 * np.ptp(f))
    try:
        (p0, f0, tau), _ = curve_fit(_gauss, f, p, p0=guess, maxfev=10000)
    except RuntimeError as exc:
        raise FitError(str(exc)) from exc
    return GaussianFit(float(p0), float(f0), float(abs(tau)))


def fit_sinusoid(times: Sequence[float], p_dark: Sequence[float], omega: float) -> SinusoidFit:
    """Linear least squares for A sin(w t + phi) + P_offset at known w."""
    t = np.asarray(times, float)
    design = np.column_stack([np.sin(omega * t), np.cos(omega * t), np.ones_like(t)])
    (s, c, off), *_ = np.linalg.lstsq(design, np.asarray(p_dark, float), rcond=None)
    return SinusoidFit(float(np.hypot(s, c)), float(off), float(np.arctan2(c, s)))


def amplitude_from_darkstate_scan(scan: DarkStateScan, conversion: float = AOD_CONVERSION) -> float:
    """A_com from the oscillation of P_dark on a flank of the beam profile.

    The frequency amplitude is the half difference of the inverted profile at
    P_offset +/- A_P.
    """
    osc = scan.oscillation
    hi, lo = scan.profile.invert([osc.offset + osc.amplitude, osc.offset - osc.amplitude])
    return conversion * abs(hi - lo) / 2


def synthetic_darkstate_scan(amplitude: float, omega_z: float, profile: GaussianFit = GaussianFit(0.8, 0.0, 0.5e6),
                             conversion: float = AOD_CONVERSION, points: int = 41,
                             delays: np.ndarray | None = None) -> DarkStateScan:
    """Noise-free scan of an ion oscillating with amplitude A on the half-height flank."""
    f = profile.f0 + np.linspace(-3, 3, points) * profile.tau
    p_profile = profile(f)
    fit = fit_gaussian_profile(f, p_profile)
    f_side = float(fit.invert(fit.p0 / 2))
    if delays is None:
        delays = np.linspace(0, 2 * TWO_PI / omega_z, 64, endpoint=False)
    shift = amplitude * np.sin(omega_z * delays) / conversion
    osc = fit_sinusoid(delays, profile(f_side + shift), omega_z)
    return DarkStateScan(f, p_profile, fit, osc)


def write_waveform_csv(path, sig: StepSignal) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "v_volts"])
        for t, v in zip(sig.times, sig.volts):
            w.writerow([repr(float(t * 1e6)), repr(float(v))])


def write_trajectory_csv(path, traj: ComTrajectory, stride: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "z_um"])
        for t, z in zip(traj.times[::stride], traj.z[::stride]):
            w.writerow([repr(float(t * 1e6)), repr(float(z * 1e6))])
