"""End-to-end synthetic runs of the ten-ion node and their analysis.

A run repeats the node sequence (generate a photon from ion n, shuttle, ...)
for each of the nine tomography settings. Every ion-photon pair is modeled as
the ideal Bell state rotated by its field-gradient phase, dephased for its
storage time, depolarized by a fixed floor and sent through a fiber unitary.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import coherence, mechanics, shuttling, source, tomography
from .constants import TWO_PI
from .errors import ConfigError, IonNodeError, JoinError
from .states import bell_state, density, ion_z_rotation, photon_unitary

TICK_US = 0.2
XI_MAX = source.detection_budget(source.DETECTION_PATHS)[1]


@dataclass(frozen=True)
class RunConfig:
    n_ions: int = 10
    axial_2pi_khz: float = 358.0
    mode_axial_2pi_khz: float | None = None  # None: derived from the radial spectrum
    radial_com_2pi_mhz: float = 2.0469
    lowest_radial_2pi_mhz: float = 1.1273
    reference_radial_2pi_mhz: float = 2.094
    reference_nbar: float = 10.0
    rabi_method: str = "laguerre-thermal"
    coupling_scale: float = 0.32
    cavity_jitter_2pi_khz: float = 10.0
    cavity_finesse: float = 30e3
    jitter_shots: int = 8
    displacement_um: float = 0.0
    a_com_um: tuple[float, ...] | None = None  # None: from the shuttling model
    ripple_nm: float | None = None  # None: from the voltage calibration
    step_voltages_v: tuple[float, ...] = shuttling.NODE_VOLTAGES
    step_interval_us: float = 156.0
    filters_order_khz: tuple[tuple[int, float], ...] = ((1, 35.0), (2, 80.0))
    doppler_ms: float = 8.0
    pump_us: float = 40.0
    wait_us: float = 60.0
    raman_us: float = 80.0
    transport_wait_us: float = 60.0
    transport_split_us: float = 30.0
    pi_pulse_us: float = 6.4
    detection_ms: float = 5.0
    window_us: float = 80.0
    attempts_per_setting: int = 6000
    xi: float = 0.36
    dark_count_hz: float = 0.0
    depolarizing: float = 0.04
    sigma_ms: float = 5.5
    gradient_g_per_m: float = 4.4
    miscalibration_ug: float = 48.0
    fiber_zyz_rad: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mc_replicates: int = 50
    tomography_starts: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("a_com_um", "step_voltages_v", "fiber_zyz_rad"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))
        object.__setattr__(self, "filters_order_khz",
                           tuple((int(o), float(c)) for o, c in self.filters_order_khz))
        durations = ("doppler_ms", "pump_us", "wait_us", "raman_us", "transport_wait_us", "pi_pulse_us",
                     "detection_ms", "window_us", "step_interval_us", "sigma_ms")
        for name in durations:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.attempts_per_setting < 1 or self.n_ions < 1:
            raise ConfigError("attempts and ion number must be at least 1")
        if not 0 <= self.xi <= 1:
            raise ConfigError("xi must lie in [0, 1]")
        if not 0 <= self.depolarizing <= 1:
            raise ConfigError("depolarizing floor must lie in [0, 1]")
        if self.dark_count_hz < 0:
            raise ConfigError("dark count rate must be non-negative")
        if self.window_us > self.step_interval_us:
            raise ConfigError("photon windows would overlap: window longer than the step interval")
        if self.raman_us > self.window_us:
            raise ConfigError("Raman pulse outlasts its photon window")
        if self.raman_us + self.transport_wait_us > self.step_interval_us:
            raise ConfigError("Raman pulse plus transport wait exceed the step interval")
        if abs(self.window_us / TICK_US - round(self.window_us / TICK_US)) > 1e-9:
            raise ConfigError("window must be a whole number of 0.2 us ticks")
        if len(self.step_voltages_v) != self.n_ions:
            raise ConfigError("need one step voltage per ion")
        if self.a_com_um is not None and len(self.a_com_um) != self.n_ions:
            raise ConfigError("need one A_com per ion")
        if self.mc_replicates and self.mc_replicates < 50:
            raise ConfigError("Monte Carlo errors need at least 50 replicates (or 0 to skip)")

    # JSON round trip ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(map(list, v)) if k == "filters_order_khz" else list(v) if isinstance(v, tuple) else v)
                for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.canonical_json() + "\n")

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # derived quantities -----------------------------------------------------

    @property
    def omega_z(self) -> float:
        return TWO_PI * self.axial_2pi_khz * 1e3

    @property
    def mode_omega_z(self) -> float:
        if self.mode_axial_2pi_khz is not None:
            return TWO_PI * self.mode_axial_2pi_khz * 1e3
        return mechanics.axial_frequency_from_radial(
            self.n_ions, TWO_PI * self.radial_com_2pi_mhz * 1e6, TWO_PI * self.lowest_radial_2pi_mhz * 1e6)

    @property
    def program(self) -> shuttling.VoltageStepProgram:
        return shuttling.VoltageStepProgram(self.step_voltages_v, interval=self.step_interval_us * 1e-6)

    @property
    def filters(self) -> tuple[shuttling.FilterSpec, ...]:
        return tuple(shuttling.FilterSpec(o, c * 1e3) for o, c in self.filters_order_khz)

    @property
    def schedule(self) -> coherence.ShuttleSchedule:
        tp = self.step_interval_us * 1e-6
        split = self.transport_split_us * 1e-6
        return coherence.ShuttleSchedule(self.n_ions, tp - split, tp, split, split)

    @property
    def windows(self) -> "WindowSpec":
        return WindowSpec(self.n_ions, self.step_interval_us, self.window_us)

    @property
    def source_model(self) -> source.PhotonSourceModel:
        t2 = source.transmission_from_escape(source.FINESSE_OLD, source.ESCAPE_OLD)
        cav = source.cavity_derived_params(self.cavity_finesse, source.CAVITY_LENGTH, t2)
        return source.PhotonSourceModel(kappa=cav.kappa, escape=cav.escape, coupling_scale=self.coupling_scale,
                                        jitter=TWO_PI * self.cavity_jitter_2pi_khz * 1e3,
                                        shots=self.jitter_shots, bin_width=TICK_US * 1e-6,
                                        pulse=self.raman_us * 1e-6)


def config_schema() -> dict:
    """JSON schema of the run configuration."""
    kinds = {int: "integer", float: "number", str: "string"}
    props = {}
    defaults = RunConfig().to_dict()
    for f in fields(RunConfig):
        default = defaults[f.name]
        if isinstance(default, list):
            props[f.name] = {"type": "array"}
        elif default is None:
            props[f.name] = {"type": ["array", "number", "null"]}
        else:
            props[f.name] = {"type": kinds[type(default)]}
        props[f.name]["default"] = default
    return {"$schema": "https://json-schema.org/draft/2020-12/schema", "title": "ionnode run configuration",
            "type": "object", "additionalProperties": False, "properties": props}


@dataclass(frozen=True)
class WindowSpec:
    n: int = 10
    period_us: float = 156.0
    width_us: float = 80.0

    def __post_init__(self):
        if self.width_us > self.period_us or self.width_us <= 0:
            raise ConfigError("windows must be non-overlapping and of positive width")

    @property
    def starts_us(self) -> np.ndarray:
        return self.period_us * np.arange(self.n)

    @property
    def ticks(self) -> int:
        return int(round(self.width_us / TICK_US))


# -- node model -------------------------------------------------------------


@dataclass
class NodeModel:
    rabi_factors: np.ndarray
    a_com: np.ndarray  # m
    ripple: float  # m
    wavepackets: list
    p_c: np.ndarray
    angles: coherence.PhaseResult
    storage_times: np.ndarray
    pair_states: np.ndarray  # (n, 4, 4)
    voltage_fit: shuttling.LinearFit

    @property
    def born(self) -> np.ndarray:
        return tomography.born_probabilities(self.pair_states)


def pair_states(angles, storage_times, sigma, depolarizing, fiber) -> np.ndarray:
    u_p = photon_unitary(fiber)
    out = []
    for theta, t in zip(angles, storage_times):
        rho = density(ion_z_rotation(theta) @ bell_state())
        rho = coherence.dephase(rho, t, sigma)
        rho = (1 - depolarizing) * rho + depolarizing * np.eye(4) / 4
        out.append(u_p @ rho @ u_p.conj().T)
    return np.array(out)


def build_model(cfg: RunConfig) -> NodeModel:
    trap = mechanics.TrapConfiguration(cfg.n_ions, cfg.mode_omega_z, TWO_PI * cfg.reference_radial_2pi_mhz * 1e6,
                                       TWO_PI * cfg.radial_com_2pi_mhz * 1e6)
    prof = mechanics.thermal_rabi_profile(trap, cfg.reference_nbar, method=cfg.rabi_method)
    u = np.sort(prof.string.positions)

    sep = u - u[0]
    fit = shuttling.voltage_position_fit(sep, cfg.program.differential * 1e3)
    ripple = cfg.ripple_nm * 1e-9 if cfg.ripple_nm is not None else shuttling.ripple_amplitude(fit.gradient * 1e3)
    if cfg.a_com_um is not None:
        a_com = np.array(cfg.a_com_um) * 1e-6
    else:
        a_com = shuttling.amplitudes_after_steps(cfg.program, cfg.omega_z, cfg.filters)

    model = cfg.source_model
    contexts = [source.IonDriveContext(float(f), cfg.displacement_um * 1e-6, float(a), cfg.omega_z, ripple)
                for f, a in zip(prof.factors, a_com)]
    wps = source.ion_efficiencies(model, prof.factors, contexts, seed=cfg.seed)
    p_c = np.array([w.probability for w in wps])

    sched = cfg.schedule
    field_model = coherence.FieldModel(cfg.gradient_g_per_m, cfg.miscalibration_ug * 1e-6)
    phases = coherence.accumulate_phases(sched, field_model, coherence.positions_per_centre(u))
    storage = sched.storage_times
    rhos = pair_states(phases.unwrapped, storage, cfg.sigma_ms * 1e-3, cfg.depolarizing, cfg.fiber_zyz_rad)
    return NodeModel(prof.factors, a_com, ripple, wps, p_c, phases, storage, rhos, fit)


# -- click logs ---------------------------------------------------------------


CLICK_HEADER = ["attempt_index", "setting_id", "window_index", "detector_channel", "time_in_window_us"]


@dataclass
class ClickLog:
    attempt: np.ndarray
    setting: np.ndarray
    window: np.ndarray  # 1-based
    channel: np.ndarray
    tick: np.ndarray  # time in window / 0.2 us

    def __post_init__(self):
        self.attempt = np.asarray(self.attempt, np.int64)
        self.setting = np.asarray(self.setting, np.int64)
        self.window = np.asarray(self.window, np.int64)
        self.channel = np.asarray(self.channel, np.int64)
        self.tick = np.asarray(self.tick, np.int64)
        n = {len(self.attempt), len(self.setting), len(self.window), len(self.channel), len(self.tick)}
        if len(n) != 1:
            raise ValueError("click columns must have equal length")

    def __len__(self):
        return len(self.attempt)

    @classmethod
    def empty(cls) -> "ClickLog":
        z = np.zeros(0, np.int64)
        return cls(z, z, z, z, z)

    def sorted(self) -> "ClickLog":
        order = np.lexsort((self.channel, self.tick, self.window, self.attempt))
        return ClickLog(self.attempt[order], self.setting[order], self.window[order], self.channel[order],
                        self.tick[order])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CLICK_HEADER) + "\n")
            for a, s, w, c, t in zip(self.attempt, self.setting, self.window, self.channel, self.tick):
                fh.write(f"{a},{s},{w},{c},{t * TICK_US:.1f}\n")

    @classmethod
    def read_csv(cls, path) -> "ClickLog":
        with open(path, newline="") as fh:
            header = fh.readline().strip().split(",")
            if header != CLICK_HEADER:
                raise JoinError(f"unexpected click-log header {header}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.size == 0:
            return cls.empty()
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], np.round(data[:, 4] / TICK_US))


@dataclass
class IonOutcomes:
    attempt: np.ndarray
    setting: np.ndarray
    bits: np.ndarray  # (attempts, n_ions), 0 = +1 eigenvalue

    def header(self) -> list[str]:
        return ["attempt_index", "setting_id"] + [f"ion_{i + 1}" for i in range(self.bits.shape[1])]

    def write_csv(self, path) -> None:
        table = np.column_stack([self.attempt, self.setting, self.bits]).astype(np.int64)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            np.savetxt(fh, table, fmt="%d", delimiter=",")

    @classmethod
    def read_csv(cls, path) -> "IonOutcomes":
        with open(path, newline="") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
        if header[:2] != ["attempt_index", "setting_id"]:
            raise JoinError(f"unexpected outcome header {header}")
        if data.shape[1] != len(header):
            raise JoinError("outcome rows do not match the header")
        return cls(data[:, 0], data[:, 1], data[:, 2:])


BLOCK = 2000


def run_experiment(cfg: RunConfig, model: NodeModel | None = None) -> tuple[ClickLog, IonOutcomes]:
    """Sample clicks and ion outcomes for every attempt of every setting.

    Random streams are keyed by (seed, setting, block of attempts), so the
    result does not depend on how blocks are scheduled.
    """
    model = model if model is not None else build_model(cfg)
    n = cfg.n_ions
    win = cfg.windows
    p_det = np.clip(cfg.xi * model.p_c, 0, 1)
    born = model.born  # (n, 9, 4)
    cdf_born = np.cumsum(born, axis=-1)
    cdf_born /= cdf_born[..., -1:]
    t_cdf = []
    for wp in model.wavepackets:
        c = wp.cumulative()
        c = c / c[-1] if c[-1] > 0 else np.linspace(0, 1, c.size)
        t_cdf.append(c)
    dark_mean = cfg.dark_count_hz * cfg.window_us * 1e-6

    cols = {k: [] for k in ("attempt", "setting", "window", "channel", "tick")}
    att_all, set_all, bits_all = [], [], []
    per = cfg.attempts_per_setting
    for s in range(tomography.N_SETTINGS):
        for b0 in range(0, per, BLOCK):
            m = min(BLOCK, per - b0)
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, s, b0 // BLOCK, 0xC11C]))
            attempts = s * per + b0 + np.arange(m)
            det = rng.random((m, n)) < p_det
            u = rng.random((m, n))
            outcome = (u[..., None] >= cdf_born[None, :, s, :3]).sum(axis=-1)
            tu = rng.random((m, n))
            ai, ii = np.nonzero(det)
            ticks = np.zeros(ai.size, np.int64)
            for i in range(n):
                sel = ii == i
                ticks[sel] = np.searchsorted(t_cdf[i], tu[ai[sel], i], side="right")
            ticks = ticks.clip(0, win.ticks - 1)
            cols["attempt"].append(attempts[ai])
            cols["window"].append(ii + 1)
            cols["channel"].append(outcome[ai, ii] & 1)
            cols["tick"].append(ticks)
            if dark_mean > 0:
                k = rng.poisson(dark_mean, (m, n))
                da, di = np.nonzero(k)
                rep = k[da, di]
                da, di = np.repeat(da, rep), np.repeat(di, rep)
                cols["attempt"].append(attempts[da])
                cols["window"].append(di + 1)
                cols["channel"].append(rng.integers(0, 2, da.size))
                cols["tick"].append(rng.integers(0, win.ticks, da.size))
            att_all.append(attempts)
            set_all.append(np.full(m, s))
            bits_all.append(outcome >> 1)
    attempt = np.concatenate(cols["attempt"])
    setting = attempt // per
    log = ClickLog(attempt, setting, np.concatenate(cols["window"]), np.concatenate(cols["channel"]),
                   np.concatenate(cols["tick"])).sorted()
    outcomes = IonOutcomes(np.concatenate(att_all), np.concatenate(set_all), np.concatenate(bits_all))
    return log, outcomes


# -- ingestion ----------------------------------------------------------------


def _window_groups(clicks: ClickLog, n_windows: int):
    key = clicks.attempt * n_windows + (clicks.window - 1)
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    return counts[inverse] == 1, counts


def single_event_clicks(clicks: ClickLog, windows: WindowSpec) -> ClickLog:
    if len(clicks) == 0:
        return clicks
    single, _ = _window_groups(clicks, windows.n)
    return ClickLog(clicks.attempt[single], clicks.setting[single], clicks.window[single],
                    clicks.channel[single], clicks.tick[single])


def window_counts(clicks: ClickLog, windows: WindowSpec) -> tuple[np.ndarray, int]:
    """Single-detection counts per window and the number of multi-event attempt-windows."""
    c = np.zeros(windows.n, np.int64)
    if len(clicks) == 0:
        return c, 0
    if np.any((clicks.window < 1) | (clicks.window > windows.n)):
        raise JoinError("click outside the configured windows")
    single, group_sizes = _window_groups(clicks, windows.n)
    np.add.at(c, clicks.window[single] - 1, 1)
    return c, int(np.count_nonzero(group_sizes > 1))


def histogram(clicks: ClickLog, attempts: int, windows: WindowSpec, binwidth_us: float = TICK_US):
    """Arrival-time density per attempt and microsecond over the whole node sequence.

    Only windows with a single event enter, so the area of window i is c_i / attempts.
    """
    ratio = windows.width_us / binwidth_us
    if abs(ratio - round(ratio)) > 1e-9 or binwidth_us < TICK_US - 1e-12:
        raise ConfigError("bin width must divide the window width and be at least one tick")
    per_bin = int(round(binwidth_us / TICK_US))
    n_bins = int(round((windows.starts_us[-1] + windows.width_us) / binwidth_us))
    edges = np.arange(n_bins + 1) * binwidth_us
    counts = np.zeros(n_bins, np.int64)
    single = single_event_clicks(clicks, windows)
    if len(single):
        start_bins = np.round(windows.starts_us / binwidth_us).astype(np.int64)
        idx = start_bins[single.window - 1] + single.tick // per_bin
        np.add.at(counts, idx, 1)
    return edges[:-1], counts / (attempts * binwidth_us)


def build_count_table(clicks: ClickLog, outcomes: IonOutcomes, windows: WindowSpec) -> tomography.CountTable:
    """Pair each single-event window with every ion's outcome in the same attempt."""
    n_ions = outcomes.bits.shape[1]
    attempts = np.bincount(outcomes.setting, minlength=tomography.N_SETTINGS)
    table = tomography.CountTable.empty(n_ions, windows.n, attempts)
    single = single_event_clicks(clicks, windows)
    if len(single) == 0:
        return table
    order = np.argsort(outcomes.attempt, kind="stable")
    sorted_att = outcomes.attempt[order]
    pos = np.searchsorted(sorted_att, single.attempt)
    if np.any(pos >= sorted_att.size) or np.any(sorted_att[np.minimum(pos, sorted_att.size - 1)] != single.attempt):
        raise JoinError("click log refers to attempts without ion outcomes")
    rows = order[pos]
    if np.any(outcomes.setting[rows] != single.setting):
        raise JoinError("click and outcome settings disagree")
    ions = np.arange(n_ions)
    o = 2 * outcomes.bits[rows] + single.channel[:, None]
    np.add.at(table.counts, (single.setting[:, None], ions[None, :], single.window[:, None] - 1, o), 1)
    return table


# -- artifacts ----------------------------------------------------------------


@dataclass
class RunArtifacts:
    config: RunConfig
    hist_times_us: np.ndarray
    hist_density: np.ndarray
    counts: np.ndarray
    multi_events: int
    attempts: int
    table: tomography.CountTable
    result: tomography.TomographyResult
    model: NodeModel | None = None
    xi_fit: source.XiFit | None = None
    extra: dict = field(default_factory=dict)

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.attempts


def analyze_run(cfg: RunConfig, clicks: ClickLog, outcomes: IonOutcomes, model: NodeModel | None = None,
                replicates: int | None = None) -> RunArtifacts:
    win = cfg.windows
    attempts = int(outcomes.attempt.size)
    t, dens = histogram(clicks, attempts, win)
    counts, multi = window_counts(clicks, win)
    table = build_count_table(clicks, outcomes, win)
    reps = cfg.mc_replicates if replicates is None else replicates
    result = tomography.analyze(table, cfg.tomography_starts, cfg.seed, reps)
    xi_fit = source.fit_detection_efficiency(counts / attempts, model.p_c) if model is not None else None
    return RunArtifacts(cfg, t, dens, counts, multi, attempts, table, result, model, xi_fit)


def simulate(cfg: RunConfig) -> tuple[ClickLog, IonOutcomes, RunArtifacts]:
    model = build_model(cfg)
    clicks, outcomes = run_experiment(cfg, model)
    return clicks, outcomes, analyze_run(cfg, clicks, outcomes, model)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if x is None else repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in r])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def emit_report(art: RunArtifacts, outdir, clicks: ClickLog | None = None,
                outcomes: IonOutcomes | None = None, displacement_curve: bool = True) -> dict:
    """Write the figure-data CSVs, the tomography JSON and a manifest; returns the manifest."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
    except OSError as exc:
        raise IonNodeError(f"cannot write report to {out}: {exc}") from exc
    cfg, res, model = art.config, art.result, art.model
    files = []

    def emit(name, header, rows):
        _write_rows(out / name, header, rows)
        files.append(name)

    emit("histogram.csv", ["time_us", "density_per_us"], zip(art.hist_times_us, art.hist_density))
    xi = art.xi_fit.xi if art.xi_fit else None
    p_model = [xi * p for p in model.p_c] if (model is not None and xi is not None) else [None] * len(art.counts)
    emit("efficiency.csv", ["ion", "P_measured", "P_model"],
         [(i + 1, float(p), pm) for i, (p, pm) in enumerate(zip(art.probabilities, p_model))])
    ni, nw = res.concurrence.shape
    cerr = res.concurrence_err if res.concurrence_err is not None else np.full((ni, nw), np.nan)
    emit("concurrence_grid.csv", ["ion_index", "photon_window", "concurrence", "concurrence_err"],
         [(i + 1, j + 1, _num(res.concurrence[i, j]), _num(cerr[i, j])) for i in range(ni) for j in range(nw)])
    ferr = res.fidelity_err if res.fidelity_err is not None else np.full(len(res.fidelities), np.nan)
    model_f = None
    if model is not None:
        model_f = tomography.bell_fidelities(
            tomography.rotate_ion_z(model.pair_states, -model.angles.unwrapped),
            photon_unitary(cfg.fiber_zyz_rad))
    emit("fidelity.csv", ["ion", "fidelity", "fidelity_err", "fidelity_model"],
         [(i + 1, float(f), _num(e), None if model_f is None else float(model_f[i]))
          for i, (f, e) in enumerate(zip(res.fidelities, ferr))])
    recovered = coherence.wrap_angle(-res.z_angles)
    if model is not None:
        offset = coherence.align_offset(model.angles.unwrapped, recovered)
        aligned = model.angles.with_offset(offset).angles
    else:
        aligned = [None] * len(recovered)
    emit("phase_angles.csv", ["ion_index", "angle_tomography_rad", "angle_model_rad"],
         [(i + 1, float(a), None if b is None else float(b)) for i, (a, b) in enumerate(zip(recovered, aligned))])
    if model is not None and displacement_curve:
        z = np.linspace(0, 0.3e-6, 7)
        eff = source.efficiency_vs_displacement(cfg.source_model, z, model.rabi_factors[0], seed=cfg.seed)
        source.write_efficiency_curve_csv(out / "displacement_efficiency.csv", z, eff)
        files.append("displacement_efficiency.csv")
    tomography.write_count_csv(out / "count_table.csv", art.table)
    files.append("count_table.csv")
    tomography.write_result_json(out / "tomography.json", res)
    files.append("tomography.json")
    if clicks is not None:
        clicks.write_csv(out / "clicks.csv")
        files.append("clicks.csv")
    if outcomes is not None:
        outcomes.write_csv(out / "outcomes.csv")
        files.append("outcomes.csv")
    cfg.dump(out / "config.json")
    files.append("config.json")

    manifest = {
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "attempts": art.attempts,
        "window_counts": art.counts.tolist(),
        "multi_event_windows": art.multi_events,
        "xi_fit": None if art.xi_fit is None else {"xi": art.xi_fit.xi, "raw": art.xi_fit.raw,
                                                    "clamped": art.xi_fit.clamped},
        "xi_max": XI_MAX,
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    if model is not None:
        manifest["model"] = {"P_c": model.p_c.tolist(), "rabi_factors": model.rabi_factors.tolist(),
                             "a_com_um": (model.a_com * 1e6).tolist(), "ripple_nm": model.ripple * 1e9,
                             "voltage_gradient_nm_per_mV": abs(model.voltage_fit.gradient) * 1e9}
        sm = cfg.source_model
        manifest["source"] = {"raman_detuning_2pi_mhz": sm.detuning / TWO_PI / 1e6,
                              "kappa_2pi_khz": sm.kappa / TWO_PI / 1e3, "escape": sm.escape,
                              "coupling_scale": sm.coupling_scale}
    manifest.update(art.extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)
