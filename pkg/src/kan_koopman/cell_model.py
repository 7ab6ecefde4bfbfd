"""Two-state battery thermal model with coolant node and anomaly injection.

Forward-Euler discrete dynamics for core (t1), surface (t2) and coolant (tinf)
temperatures, coupled to a simple SOC / terminal-voltage electrical model.

Sign convention: the SOC update is ``soc - dt * I_eff / Cb`` exactly, so a
positive current lowers SOC. Charging scenarios therefore use a negative
current (see ``harness.charging_current``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, SimulationDiverged

KELVIN = 273.15

# Flat LFP-like curve, 11 evenly spaced SOC breakpoints. Representative only.
LFP_OCV_TABLE: tuple[tuple[float, float], ...] = (
    (0.0, 2.80),
    (0.1, 3.15),
    (0.2, 3.22),
    (0.3, 3.26),
    (0.4, 3.285),
    (0.5, 3.30),
    (0.6, 3.31),
    (0.7, 3.325),
    (0.8, 3.34),
    (0.9, 3.38),
    (1.0, 3.55),
)


@dataclass(frozen=True)
class CellParams:
    """Physical constants of the simulated cell.

    Defaults describe a representative 2.3 Ah cylindrical LFP cell; they are
    not taken from any particular published parameter set and every test that
    matters is written relative to them.
    """

    C1: float = 62.7  # J/K, core
    C2: float = 4.5  # J/K, surface
    Cinf: float = 500.0  # J/K, coolant
    R1: float = 1.94  # K/W core -> surface
    R2: float = 3.19  # K/W surface -> coolant
    Rb: float = 0.01  # Ohm
    Cb: float = 2.3 * 3600.0  # A*s
    gamma: float = 2.0e-4  # V/K
    dt: float = 0.01  # s
    ocv_table: tuple[tuple[float, float], ...] = LFP_OCV_TABLE

    def __post_init__(self):
        for name in ("C1", "C2", "Cinf", "R1", "R2", "Rb", "Cb", "dt"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v}")
        if not math.isfinite(self.gamma):
            raise ConfigError("gamma must be finite")
        table = tuple((float(s), float(v)) for s, v in self.ocv_table)
        if len(table) < 2:
            raise ConfigError("ocv_table needs at least two breakpoints")
        socs = [s for s, _ in table]
        volts = [v for _, v in table]
        if socs[0] != 0.0 or socs[-1] != 1.0:
            raise ConfigError("ocv_table must span soc 0..1")
        if any(b <= a for a, b in zip(socs, socs[1:])):
            raise ConfigError("ocv_table soc values must be strictly increasing")
        if any(b < a for a, b in zip(volts, volts[1:])):
            raise ConfigError("ocv_table voltages must be non-decreasing")
        object.__setattr__(self, "ocv_table", table)

    @property
    def capacity_ah(self) -> float:
        return self.Cb / 3600.0


@dataclass(frozen=True)
class CellState:
    t1: float
    t2: float
    tinf: float
    soc: float
    vt: float = 0.0
    qdot: float = 0.0


@dataclass(frozen=True)
class CellInput:
    current: float
    qc: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class AnomalyProfile:
    """Time-parameterised heat fault (delta1bar, W) and current corruption (delta2, A).

    ``custom`` profiles interpolate the (time, value) tables linearly; every
    kind is zero outside ``[start, stop]``.
    """

    kind: str = "none"
    start: float = 0.0
    stop: float = math.inf
    fault_slope: float = 0.0
    bias: float = 0.0
    delta1_table: tuple[tuple[float, float], ...] = ()
    delta2_table: tuple[tuple[float, float], ...] = ()

    KINDS = ("none", "incipient_fault", "bias_attack", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}")
        if self.start > self.stop:
            raise ConfigError("anomaly start must not exceed stop")


@dataclass(frozen=True)
class Measurement:
    t: float
    t1_meas: float  # lab-only channel, never fed to online detection
    t2_meas: float
    tinf_meas: float
    current: float
    qc: float


def _interp_table(table, t: float) -> float:
    if not table:
        return 0.0
    ts = [a for a, _ in table]
    vs = [b for _, b in table]
    return float(np.interp(t, ts, vs))


def anomaly_value(profile: AnomalyProfile, t: float) -> tuple[float, float]:
    """Return ``(delta1bar, delta2)`` at time ``t``."""
    if profile.kind == "none" or t < profile.start or t > profile.stop:
        return 0.0, 0.0
    if profile.kind == "incipient_fault":
        return profile.fault_slope * (t - profile.start), 0.0
    if profile.kind == "bias_attack":
        return 0.0, profile.bias
    return _interp_table(profile.delta1_table, t), _interp_table(profile.delta2_table, t)


def heat_generation(i_eff: float, t1: float, params: CellParams) -> float:
    """Internal heat ``I^2 Rb - I T1 gamma``; ``t1`` is used as given."""
    return i_eff * i_eff * params.Rb - i_eff * t1 * params.gamma


def ocv(soc: float, params: CellParams) -> float:
    """Piecewise-linear open-circuit voltage, soc clamped to [0, 1]."""
    s = min(max(soc, 0.0), 1.0)
    table = params.ocv_table
    for (s0, v0), (s1, v1) in zip(table, table[1:]):
        if s <= s1:
            return v0 + (v1 - v0) * (s - s0) / (s1 - s0)
    return table[-1][1]


def step_cell(
    state: CellState,
    inp: CellInput,
    profile: AnomalyProfile,
    params: CellParams,
    step: int = 0,
) -> CellState:
    """One Euler step of the thermal and electrical equations.

    The entropic term uses absolute core temperature (t1 + 273.15).
    """
    d1, d2 = anomaly_value(profile, inp.t)
    i_eff = inp.current + d2
    dt = params.dt
    t1, t2, tinf = state.t1, state.t2, state.tinf
    q = heat_generation(i_eff, t1 + KELVIN, params)

    t1n = t1 + dt * (-(t1 - t2) / (params.R1 * params.C1) + q / params.C1 + d1 / params.C1)
    t2n = t2 + dt * (-(t2 - t1) / (params.R1 * params.C2) - (t2 - tinf) / (params.R2 * params.C2))
    tinfn = tinf + dt * (-(tinf - t2) / (params.R2 * params.Cinf) - inp.qc / params.Cinf)
    soc_n = min(max(state.soc - dt * i_eff / params.Cb, 0.0), 1.0)
    vt_n = ocv(soc_n, params) - i_eff * params.Rb

    if not all(math.isfinite(v) for v in (t1n, t2n, tinfn, soc_n, vt_n, q)):
        raise SimulationDiverged(step)
    return CellState(t1=t1n, t2=t2n, tinf=tinfn, soc=soc_n, vt=vt_n, qdot=q)


@dataclass
class SimScenario:
    """Inputs for one simulated run.

    ``current`` may be a constant or a step table of ``(t_from, amps)`` rows.
    """

    duration: float
    current: float | Sequence[tuple[float, float]] = 0.0
    qc: float = 0.0
    profile: AnomalyProfile = field(default_factory=AnomalyProfile)
    noise_sigma: float = 0.05
    seed: int = 0
    t_init: float = 25.0
    soc_init: float = 0.1

    def current_at(self, t: float) -> float:
        if isinstance(self.current, (int, float)):
            return float(self.current)
        value = 0.0
        for t0, amps in self.current:
            if t >= t0:
                value = float(amps)
        return value


@dataclass
class Trajectory:
    """Column arrays of true states and noisy measurements, one entry per sample."""

    t: np.ndarray
    t1_true: np.ndarray
    t2_true: np.ndarray
    tinf_true: np.ndarray
    t1_meas: np.ndarray
    t2_meas: np.ndarray
    tinf_meas: np.ndarray
    soc: np.ndarray
    vt: np.ndarray
    qdot: np.ndarray
    current_nominal: np.ndarray
    current_effective: np.ndarray
    delta1bar: np.ndarray
    delta2: np.ndarray
    qc: np.ndarray

    CSV_COLUMNS = (
        "t", "t1_true", "t2_true", "tinf_true", "t1_meas", "t2_meas", "tinf_meas",
        "soc", "vt", "qdot", "current_nominal", "current_effective", "delta1bar", "delta2",
    )

    def __len__(self) -> int:
        return len(self.t)

    def downsample(self, factor: int) -> "Trajectory":
        if factor < 1:
            raise ConfigError("downsample factor must be >= 1")
        return Trajectory(**{k: v[::factor] for k, v in vars(self).items()})

    def states(self) -> Iterator[tuple[CellState, Measurement]]:
        for k in range(len(self)):
            yield (
                CellState(self.t1_true[k], self.t2_true[k], self.tinf_true[k],
                          self.soc[k], self.vt[k], self.qdot[k]),
                Measurement(self.t[k], self.t1_meas[k], self.t2_meas[k],
                            self.tinf_meas[k], self.current_nominal[k], self.qc[k]),
            )

    def to_csv(self, path) -> None:
        """Write the trajectory; every value is formatted with ``%.6f``."""
        cols = [getattr(self, c) for c in self.CSV_COLUMNS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for row in zip(*cols):
                w.writerow([f"{v:.6f}" for v in row])


def simulate(
    scenario: SimScenario,
    params: CellParams,
    on_step: Optional[Callable[[int, CellState], None]] = None,
) -> Trajectory:
    """Run the cell for ``floor(duration/dt) + 1`` samples.

    Measurement noise is zero-mean Gaussian with ``noise_sigma`` on the three
    temperature channels, drawn from a per-run ``numpy`` generator.
    """
    if scenario.duration <= 0:
        raise ConfigError("duration must be > 0")
    n = int(math.floor(scenario.duration / params.dt + 1e-9)) + 1
    rng = np.random.default_rng(scenario.seed)

    cols = {name: np.empty(n) for name in (
        "t", "t1_true", "t2_true", "tinf_true", "soc", "vt", "qdot",
        "current_nominal", "current_effective", "delta1bar", "delta2", "qc")}

    t0 = scenario.t_init
    i0 = scenario.current_at(0.0)
    d1, d2 = anomaly_value(scenario.profile, 0.0)
    state = CellState(
        t1=t0, t2=t0, tinf=t0, soc=scenario.soc_init,
        vt=ocv(scenario.soc_init, params) - (i0 + d2) * params.Rb,
        qdot=heat_generation(i0 + d2, t0 + KELVIN, params),
    )
    for k in range(n):
        t = k * params.dt
        cur = scenario.current_at(t)
        d1, d2 = anomaly_value(scenario.profile, t)
        cols["t"][k] = t
        cols["t1_true"][k] = state.t1
        cols["t2_true"][k] = state.t2
        cols["tinf_true"][k] = state.tinf
        cols["soc"][k] = state.soc
        cols["vt"][k] = state.vt
        cols["qdot"][k] = heat_generation(cur + d2, state.t1 + KELVIN, params)
        cols["current_nominal"][k] = cur
        cols["current_effective"][k] = cur + d2
        cols["delta1bar"][k] = d1
        cols["delta2"][k] = d2
        cols["qc"][k] = scenario.qc
        if on_step is not None:
            on_step(k, state)
        if k < n - 1:
            state = step_cell(state, CellInput(cur, scenario.qc, t), scenario.profile, params, step=k)

    sigma = scenario.noise_sigma
    noise = rng.normal(0.0, 1.0, size=(3, n)) * sigma
    return Trajectory(
        t1_meas=cols["t1_true"] + noise[0],
        t2_meas=cols["t2_true"] + noise[1],
        tinf_meas=cols["tinf_true"] + noise[2],
        **cols,
    )


def with_params(params: CellParams, **changes) -> CellParams:
    return replace(params, **changes)
