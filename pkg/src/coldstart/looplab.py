"""Closed-loop execution lab: ADC emulation, Euler stepping, records, metrics.

The loop emulates a controller running on sampled hardware: feedback is
digitized by a uniform quantizer at a fixed word length, the cascade runs
once per sample, commands are digitized the same way and held for one sample,
and the plant advances by explicit Euler with a scalar multiplicative
uncertainty injected on each controlled state's drift term.

Everything is deterministic: the same scenario config always produces the
same record, byte for byte in serialized form.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import dsmc, plant
from .errors import ConfigError, DegenerateInputError, SimulationAbort
from .trajectory import SampledTrajectory, TrajectoryTable, default_table

LOOPS = ("fuel", "speed", "exh", "air")

# ADC spans per signal; command spans default to the actuator bounds.
DEFAULT_SIGNAL_RANGES: dict[str, tuple[float, float]] = {
    "m_a": (0.0, 0.05),
    "omega_e": (0.0, 600.0),
    "mdot_f": (0.0, 0.01),
    "t_cat": (0.0, 1000.0),
    "t_exh": (0.0, 1000.0),
    "mdot_ai": (0.0, 0.1),
    "mdot_fc": (0.0, 0.01),
    "delta": (-10.0, 45.0),
}


# ---------------------------------------------------------------------------
# ADC emulation


def quantize(value: float, bits: int, lo: float, hi: float) -> float:
    """Uniform mid-tread quantizer over [lo, hi]; out-of-range values clamp."""
    if bits < 1:
        raise ConfigError(f"quantizer needs at least 1 bit, got {bits!r}")
    if not lo < hi:
        raise ConfigError(f"quantizer range must satisfy lo < hi, got ({lo!r}, {hi!r})")
    clamped = min(max(value, lo), hi)
    levels = (1 << bits) - 1
    code = round((clamped - lo) / (hi - lo) * levels)
    return lo + code * (hi - lo) / levels


@dataclass(frozen=True)
class PhiTrue:
    """True multiplicative uncertainty on each controlled state's drift."""

    fuel: float = 1.0
    speed: float = 1.0
    exh: float = 1.0
    air: float = 1.0

    def __post_init__(self):
        for name in LOOPS:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ConfigError(f"phi_true.{name} must be a positive number, got {v!r}")


def euler_step(
    state: plant.EngineState,
    inputs: plant.ControlInput,
    phi: PhiTrue,
    T: float,
    constants: plant.PlantConstants | None = None,
    conventions: plant.PlantConventions | None = None,
    substeps: int = 1,
) -> plant.EngineState:
    """One fixed-step Euler advance with per-state drift uncertainty.

    With all phi terms at 1 this reduces exactly to Euler on the plain plant
    derivative.  ``substeps > 1`` subdivides the interval with held inputs
    (stiffness check only; the shipped scenarios use a single step).
    """
    c = constants if constants is not None else plant.PlantConstants()
    conv = conventions if conventions is not None else plant.PlantConventions()
    if substeps < 1:
        raise ConfigError(f"substeps must be a positive integer, got {substeps!r}")
    h = T / substeps
    for _ in range(substeps):
        mdot_ao = plant.air_outflow(state.m_a, state.omega_e)
        afr_value = plant.afr(mdot_ao, state.mdot_f, c.mdot_f_floor)
        afi_value = plant.afi(afr_value)
        alpha_e = plant.exhaust_time_constant(state.omega_e)
        emission = plant.emissions(state, inputs.delta, c, conv)
        q_in, q_out, q_gen = plant.catalyst_heat_terms(state, emission, c, conv)
        q_in_signed = q_in if conv.qin_direction == "heats_catalyst" else -q_in

        state = plant.EngineState(
            m_a=state.m_a + h * (phi.air * -mdot_ao + inputs.mdot_ai),
            omega_e=state.omega_e
            + h
            * (
                phi.speed * (-plant.load_torque(state.omega_e) / c.J)
                + (plant.TORQUE_AIR_GAIN / c.J) * state.m_a
            ),
            mdot_f=state.mdot_f
            + h * (phi.fuel * (-state.mdot_f / c.alpha_f) + inputs.mdot_fc / c.alpha_f),
            T_cat=state.T_cat + h * ((q_gen + q_in_signed - q_out) / c.mcp),
            T_exh=state.T_exh
            + h
            * (
                phi.exh * ((plant.SPARK_TEMP_BASE * afi_value - state.T_exh) / alpha_e)
                + (plant.SPARK_TEMP_GAIN * afi_value / alpha_e) * inputs.delta
            ),
        )
    return state


# ---------------------------------------------------------------------------
# scenario configuration


def _pair(value, name: str) -> tuple[float, float]:
    try:
        lo, hi = value
        lo, hi = float(lo), float(hi)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (lo, hi) pair, got {value!r}") from None
    if not lo < hi:
        raise ConfigError(f"{name} must satisfy lo < hi, got ({lo!r}, {hi!r})")
    return lo, hi


@dataclass
class ScenarioConfig:
    """Everything one closed-loop run depends on.

    Serializes to plain JSON; ``from_dict`` rejects unknown keys so config
    typos fail loudly instead of silently running defaults.
    """

    T: float = 0.02
    duration: float = 40.0
    quantization_enabled: bool = True
    quant_bits: int = 16
    signal_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SIGNAL_RANGES)
    )
    phi_true: PhiTrue = field(default_factory=PhiTrue)
    adaptation_enabled: bool = True
    adapt_sign: float = 1.0
    phi_hat_init: float = 1.0
    beta: dict[str, float] = field(default_factory=lambda: {k: dsmc.BETA_DEFAULT for k in LOOPS})
    rho: dict[str, float] = field(default_factory=lambda: dict(dsmc.RHO_DEFAULTS))
    bounds: dsmc.ActuatorBounds = field(default_factory=dsmc.ActuatorBounds)
    afi_floor: float = dsmc.AFI_FLOOR_DEFAULT
    # default start: cranking speed, air mass just under its idle equilibrium,
    # fuel flow consistent with the rich initial AFR target
    initial_state: plant.EngineState = field(
        default_factory=lambda: plant.EngineState(
            m_a=0.004, omega_e=125.0, mdot_f=7.7e-4, T_cat=25.0, T_exh=25.0
        )
    )
    delta_initial: float = 0.0
    substeps: int = 1
    feedback_delay_steps: int = 0
    metrics_window_start: float = 5.0
    hc_mode: str = "unburned_fraction"
    qgen_grouping: str = "as_printed"
    # shipped default differs from the plant-level default: feed-gas heat
    # warms the brick, otherwise the catalyst can never light off
    qin_direction: str = "heats_catalyst"
    constants: dict[str, float] = field(default_factory=dict)
    trajectory: TrajectoryTable | None = None  # None -> shipped default profile

    def __post_init__(self):
        if self.T <= 0.0:
            raise ConfigError(f"T must be positive, got {self.T!r}")
        if self.duration < 0.0:
            raise ConfigError(f"duration must be nonnegative, got {self.duration!r}")
        if not 8 <= int(self.quant_bits) <= 32:
            raise ConfigError(f"quant_bits must be in [8, 32], got {self.quant_bits!r}")
        self.quant_bits = int(self.quant_bits)
        for name in DEFAULT_SIGNAL_RANGES:
            if name not in self.signal_ranges:
                raise ConfigError(f"signal_ranges is missing {name!r}")
        self.signal_ranges = {
            name: _pair(value, f"signal_ranges.{name}")
            for name, value in self.signal_ranges.items()
        }
        extra = set(self.signal_ranges) - set(DEFAULT_SIGNAL_RANGES)
        if extra:
            raise ConfigError(f"signal_ranges has unknown signal(s) {sorted(extra)}")
        for loops_dict, name in ((self.beta, "beta"), (self.rho, "rho")):
            if set(loops_dict) != set(LOOPS):
                raise ConfigError(f"{name} must have exactly the loops {LOOPS}")
        for loop, b in self.beta.items():
            if not 0.0 < b < 1.0:
                raise ConfigError(f"beta.{loop} must lie in (0, 1), got {b!r}")
        for loop, r in self.rho.items():
            if not r > 0.0:
                raise ConfigError(f"rho.{loop} must be positive, got {r!r}")
        if self.substeps < 1 or int(self.substeps) != self.substeps:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps!r}")
        self.substeps = int(self.substeps)
        if self.feedback_delay_steps < 0 or int(self.feedback_delay_steps) != self.feedback_delay_steps:
            raise ConfigError(
                f"feedback_delay_steps must be a nonnegative integer, "
                f"got {self.feedback_delay_steps!r}"
            )
        self.feedback_delay_steps = int(self.feedback_delay_steps)
        if self.metrics_window_start < 0.0:
            raise ConfigError(
                f"metrics_window_start must be nonnegative, got {self.metrics_window_start!r}"
            )
        # constructing the conventions validates the three mode strings
        self.build_conventions()

    # -- derived builders ---------------------------------------------------

    def build_constants(self) -> plant.PlantConstants:
        try:
            return plant.with_constants(plant.PlantConstants(), **self.constants)
        except TypeError:
            known = set(plant.PlantConstants().__dataclass_fields__)
            bad = sorted(set(self.constants) - known)
            raise ConfigError(f"constants has unknown field(s) {bad}") from None

    def build_conventions(self) -> plant.PlantConventions:
        try:
            return plant.PlantConventions(
                hc_mode=self.hc_mode,
                qgen_grouping=self.qgen_grouping,
                qin_direction=self.qin_direction,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def build_controller(self) -> dsmc.CascadeController:
        def loop(name: str) -> dsmc.AdaptiveLoop:
            try:
                return dsmc.AdaptiveLoop(
                    beta=self.beta[name],
                    rho=self.rho[name],
                    phi_hat=self.phi_hat_init,
                    adaptation_enabled=self.adaptation_enabled,
                    adapt_sign=self.adapt_sign,
                )
            except ValueError as err:
                raise ConfigError(f"loop {name}: {err}") from None

        return dsmc.CascadeController(
            loop("fuel"),
            loop("speed"),
            loop("exh"),
            loop("air"),
            T=self.T,
            constants=self.build_constants(),
            bounds=self.bounds,
            afi_floor=self.afi_floor,
            delta_initial=self.delta_initial,
        )

    def sampled_trajectory(self) -> SampledTrajectory:
        table = self.trajectory if self.trajectory is not None else default_table(self.duration)
        return table.sample(self.T, self.duration)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        state = self.initial_state
        return {
            "T": self.T,
            "duration": self.duration,
            "quantization_enabled": self.quantization_enabled,
            "quant_bits": self.quant_bits,
            "signal_ranges": {k: list(v) for k, v in self.signal_ranges.items()},
            "phi_true": {k: getattr(self.phi_true, k) for k in LOOPS},
            "adaptation_enabled": self.adaptation_enabled,
            "adapt_sign": self.adapt_sign,
            "phi_hat_init": self.phi_hat_init,
            "beta": dict(self.beta),
            "rho": dict(self.rho),
            "bounds": {
                "mdot_ai": list(self.bounds.mdot_ai),
                "mdot_fc": list(self.bounds.mdot_fc),
                "delta": list(self.bounds.delta),
            },
            "afi_floor": self.afi_floor,
            "initial_state": {
                "m_a": state.m_a,
                "omega_e": state.omega_e,
                "mdot_f": state.mdot_f,
                "t_cat": state.T_cat,
                "t_exh": state.T_exh,
            },
            "delta_initial": self.delta_initial,
            "substeps": self.substeps,
            "feedback_delay_steps": self.feedback_delay_steps,
            "metrics_window_start": self.metrics_window_start,
            "hc_mode": self.hc_mode,
            "qgen_grouping": self.qgen_grouping,
            "qin_direction": self.qin_direction,
            "constants": dict(self.constants),
            "trajectory": None
            if self.trajectory is None
            else {
                "time": list(self.trajectory.time),
                "afr_d": list(self.trajectory.afr_d),
                "omega_d": list(self.trajectory.omega_d),
                "t_exh_d": list(self.trajectory.t_exh_d),
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be an object, got {type(data).__name__}")
        known = {
            "T", "duration", "quantization_enabled", "quant_bits", "signal_ranges",
            "phi_true", "adaptation_enabled", "adapt_sign", "phi_hat_init", "beta",
            "rho", "bounds", "afi_floor", "initial_state", "delta_initial", "substeps",
            "feedback_delay_steps", "metrics_window_start", "hc_mode", "qgen_grouping",
            "qin_direction", "constants", "trajectory",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"config has unknown key(s) {unknown}")
        kwargs: dict[str, Any] = {}
        for key in known & set(data):
            kwargs[key] = data[key]
        if "signal_ranges" in kwargs:
            if not isinstance(kwargs["signal_ranges"], dict):
                raise ConfigError("signal_ranges must be an object")
            merged = dict(DEFAULT_SIGNAL_RANGES)
            for name, value in kwargs["signal_ranges"].items():
                merged[name] = _pair(value, f"signal_ranges.{name}")
            kwargs["signal_ranges"] = merged
        if "phi_true" in kwargs:
            if not isinstance(kwargs["phi_true"], dict):
                raise ConfigError("phi_true must be an object with the four loop names")
            unknown = sorted(set(kwargs["phi_true"]) - set(LOOPS))
            if unknown:
                raise ConfigError(f"phi_true has unknown loop(s) {unknown}")
            kwargs["phi_true"] = PhiTrue(**kwargs["phi_true"])
        if "bounds" in kwargs:
            b = kwargs["bounds"]
            if not isinstance(b, dict) or set(b) - {"mdot_ai", "mdot_fc", "delta"}:
                raise ConfigError("bounds must be an object with mdot_ai/mdot_fc/delta pairs")
            try:
                kwargs["bounds"] = dsmc.ActuatorBounds(
                    **{k: _pair(v, f"bounds.{k}") for k, v in b.items()}
                )
            except ValueError as err:
                raise ConfigError(str(err)) from None
        if "initial_state" in kwargs:
            s = kwargs["initial_state"]
            names = {"m_a", "omega_e", "mdot_f", "t_cat", "t_exh"}
            if not isinstance(s, dict) or set(s) != names:
                raise ConfigError(f"initial_state must be an object with fields {sorted(names)}")
            kwargs["initial_state"] = plant.EngineState(
                m_a=float(s["m_a"]),
                omega_e=float(s["omega_e"]),
                mdot_f=float(s["mdot_f"]),
                T_cat=float(s["t_cat"]),
                T_exh=float(s["t_exh"]),
            )
        if kwargs.get("trajectory") is not None:
            t = kwargs["trajectory"]
            names = {"time", "afr_d", "omega_d", "t_exh_d"}
            if not isinstance(t, dict) or set(t) != names:
                raise ConfigError(f"trajectory must be an object with columns {sorted(names)}")
            kwargs["trajectory"] = TrajectoryTable(
                time=tuple(float(v) for v in t["time"]),
                afr_d=tuple(float(v) for v in t["afr_d"]),
                omega_d=tuple(float(v) for v in t["omega_d"]),
                t_exh_d=tuple(float(v) for v in t["t_exh_d"]),
            )
        for dict_key in ("beta", "rho", "constants"):
            if dict_key in kwargs:
                if not isinstance(kwargs[dict_key], dict):
                    raise ConfigError(f"{dict_key} must be an object")
                kwargs[dict_key] = {k: float(v) for k, v in kwargs[dict_key].items()}
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        return cls.from_dict(data)


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply dotted-path ``key=value`` overrides to a config dict.

    Values parse as JSON when possible (numbers, booleans, null, arrays),
    otherwise they are taken as literal strings.  Paths must address keys
    that already exist in the dict being overridden.
    """
    out = json.loads(json.dumps(data))  # deep copy, JSON types only
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        target = out
        for key in keys[:-1]:
            if not isinstance(target, dict) or key not in target:
                raise ConfigError(f"override path {path!r} has no match at {key!r}")
            target = target[key]
        last = keys[-1]
        if not isinstance(target, dict) or last not in target:
            raise ConfigError(f"override path {path!r} has no match at {last!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target[last] = value
    return out


# ---------------------------------------------------------------------------
# run records


# fixed column order of the serialized record
RECORD_COLUMNS = (
    "time",
    "m_a", "omega_e", "mdot_f", "t_cat", "t_exh",
    "mdot_ai", "mdot_fc", "delta",
    "m_a_d",
    "s1", "s2", "s3", "s4",
    "xi1", "xi2", "xi3", "xi4",
    "phi_hat_fuel", "phi_hat_speed", "phi_hat_exh", "phi_hat_air",
    "f_fuel", "f_speed", "f_exh", "f_air",
    "afr", "afr_d", "omega_d", "t_exh_d", "afr_error",
    "hc_eng", "hc_tp", "hc_cum", "eta_cat",
    "sat_air", "sat_fuel", "sat_delta",
    "events",
)
_FLAG_COLUMNS = ("sat_air", "sat_fuel", "sat_delta")


@dataclass
class RunRecord:
    """Per-sample series of one closed-loop run plus the scenario echo."""

    series: dict[str, np.ndarray]
    events: list[str]  # one (possibly empty) ;-joined string per sample
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.series.values()}
        if len(lengths) != 1 or len(self.events) not in lengths:
            raise ValueError("all record series must share one grid")
        missing = [c for c in RECORD_COLUMNS if c != "events" and c not in self.series]
        if missing:
            raise ValueError(f"record is missing column(s) {missing}")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return self.series["time"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        flags = set(_FLAG_COLUMNS)
        for i in range(len(self)):
            row = []
            for name in RECORD_COLUMNS:
                if name == "events":
                    row.append(self.events[i])
                elif name in flags:
                    row.append(str(int(self.series[name][i])))
                else:
                    row.append(repr(float(self.series[name][i])))
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: dict[str, Any] | None = None) -> "RunRecord":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError("run record CSV is empty") from None
        if tuple(header) != RECORD_COLUMNS:
            raise ConfigError("run record CSV does not have the expected columns")
        columns: dict[str, list[float]] = {c: [] for c in RECORD_COLUMNS if c != "events"}
        events: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(RECORD_COLUMNS):
                raise ConfigError(f"run record line {line_no} has {len(row)} fields")
            for name, cell in zip(RECORD_COLUMNS, row):
                if name == "events":
                    events.append(cell)
                else:
                    try:
                        columns[name].append(float(cell))
                    except ValueError:
                        raise ConfigError(
                            f"run record line {line_no}: column {name!r} is not a number"
                        ) from None
        series = {name: np.asarray(vals, dtype=float) for name, vals in columns.items()}
        return cls(series=series, events=events, meta=dict(meta or {}))


def run_scenario(config: ScenarioConfig) -> RunRecord:
    """Execute one closed-loop scenario on the sample grid.

    Per step: sample (and quantize) feedback, run the cascade, quantize the
    commands, advance the plant one Euler step, evaluate the emission chain.
    The record gets one row per grid instant including the final state, where
    the last issued commands are shown held.
    """
    constants = config.build_constants()
    conventions = config.build_conventions()
    controller = config.build_controller()
    traj = config.sampled_trajectory()
    n_steps = traj.n_steps
    T = config.T
    bits = config.quant_bits
    ranges = config.signal_ranges

    def q_state(s: plant.EngineState) -> plant.EngineState:
        if not config.quantization_enabled:
            return s
        return plant.EngineState(
            m_a=quantize(s.m_a, bits, *ranges["m_a"]),
            omega_e=quantize(s.omega_e, bits, *ranges["omega_e"]),
            mdot_f=quantize(s.mdot_f, bits, *ranges["mdot_f"]),
            T_cat=quantize(s.T_cat, bits, *ranges["t_cat"]),
            T_exh=quantize(s.T_exh, bits, *ranges["t_exh"]),
        )

    def q_input(u: plant.ControlInput) -> plant.ControlInput:
        if not config.quantization_enabled:
            return u
        return plant.ControlInput(
            mdot_ai=quantize(u.mdot_ai, bits, *ranges["mdot_ai"]),
            mdot_fc=quantize(u.mdot_fc, bits, *ranges["mdot_fc"]),
            delta=quantize(u.delta, bits, *ranges["delta"]),
        )

    columns: dict[str, list[float]] = {c: [] for c in RECORD_COLUMNS if c != "events"}
    events: list[str] = []

    def check_state(state: plant.EngineState, step: int) -> None:
        values = (state.m_a, state.omega_e, state.mdot_f, state.T_cat, state.T_exh)
        if not all(math.isfinite(v) for v in values):
            raise SimulationAbort(f"non-finite state {values!r}", step=step)
        if state.omega_e <= 0.0:
            raise SimulationAbort(
                f"engine stalled: speed {state.omega_e!r} rad/s", step=step
            )

    def append_row(
        t: float,
        state: plant.EngineState,
        applied: plant.ControlInput,
        out: dsmc.ControllerOutput | None,
        targets,
        step: int,
    ) -> None:
        try:
            emission = plant.emissions(state, applied.delta, constants, conventions)
        except DegenerateInputError as err:
            raise SimulationAbort(f"emission chain: {err}", step=step) from None
        row = {
            "time": t,
            "m_a": state.m_a,
            "omega_e": state.omega_e,
            "mdot_f": state.mdot_f,
            "t_cat": state.T_cat,
            "t_exh": state.T_exh,
            "mdot_ai": applied.mdot_ai,
            "mdot_fc": applied.mdot_fc,
            "delta": applied.delta,
            "afr": emission.afr,
            "afr_d": targets[0],
            "omega_d": targets[1],
            "t_exh_d": targets[2],
            "hc_eng": emission.hc_eng,
            "hc_tp": emission.hc_tp,
            "hc_cum": 0.0,  # filled after the loop
            "eta_cat": emission.eta_cat,
        }
        if out is None:
            # grid points with no controller pass (final row, zero-length runs)
            for name in (
                "m_a_d", "s1", "s2", "s3", "s4", "xi1", "xi2", "xi3", "xi4",
                "f_fuel", "f_speed", "f_exh", "f_air", "afr_error",
            ):
                row[name] = 0.0
            row["phi_hat_fuel"] = controller.loop_fuel.phi_hat
            row["phi_hat_speed"] = controller.loop_speed.phi_hat
            row["phi_hat_exh"] = controller.loop_exh.phi_hat
            row["phi_hat_air"] = controller.loop_air.phi_hat
            row["sat_air"] = row["sat_fuel"] = row["sat_delta"] = 0.0
            events.append("")
        else:
            row.update(
                m_a_d=out.m_a_d,
                s1=out.s1, s2=out.s2, s3=out.s3, s4=out.s4,
                xi1=out.xi1, xi2=out.xi2, xi3=out.xi3, xi4=out.xi4,
                phi_hat_fuel=out.phi_hat_fuel,
                phi_hat_speed=out.phi_hat_speed,
                phi_hat_exh=out.phi_hat_exh,
                phi_hat_air=out.phi_hat_air,
                f_fuel=out.f_fuel, f_speed=out.f_speed,
                f_exh=out.f_exh, f_air=out.f_air,
                afr_error=out.afr_error,
                sat_air=float(out.sat_air),
                sat_fuel=float(out.sat_fuel),
                sat_delta=float(out.sat_delta),
            )
            events.append(";".join(e.replace(",", ";") for e in out.events))
        for name, value in row.items():
            columns[name].append(float(value))

    state = config.initial_state
    check_state(state, 0)
    applied = plant.ControlInput(0.0, 0.0, config.delta_initial)
    # optional sensor transport delay: the controller sees an older sample
    fb_queue: deque[plant.EngineState] = deque(
        [state] * (config.feedback_delay_steps + 1), maxlen=config.feedback_delay_steps + 1
    )

    if n_steps == 0:
        append_row(0.0, state, applied, None, (traj.afr_d[0], traj.omega_d[0], traj.t_exh_d[0]), 0)
    else:
        for k in range(n_steps):
            targets = traj.window(k)
            feedback = q_state(fb_queue[0])
            try:
                out = controller.step(feedback, targets)
            except DegenerateInputError as err:
                raise SimulationAbort(f"controller: {err}", step=k) from None
            applied = q_input(plant.ControlInput(out.mdot_ai, out.mdot_fc, out.delta))
            append_row(
                k * T, state, applied, out,
                (targets.afr_d, targets.omega_d, targets.t_exh_d), k,
            )
            try:
                state = euler_step(
                    state, applied, config.phi_true, T, constants, conventions, config.substeps
                )
            except DegenerateInputError as err:
                raise SimulationAbort(f"plant: {err}", step=k) from None
            check_state(state, k + 1)
            fb_queue.append(state)
        append_row(
            n_steps * T, state, applied, None,
            (traj.afr_d[n_steps], traj.omega_d[n_steps], traj.t_exh_d[n_steps]), n_steps,
        )

    series = {name: np.asarray(vals, dtype=float) for name, vals in columns.items()}
    hc_tp = series["hc_tp"]
    increments = 0.5 * (hc_tp[1:] + hc_tp[:-1]) * np.diff(series["time"])
    series["hc_cum"] = np.concatenate([[0.0], np.cumsum(increments)])
    meta = {"config": config.to_dict()}
    return RunRecord(series=series, events=events, meta=meta)


# ---------------------------------------------------------------------------
# metrics


def _absent(value) -> str:
    return "absent" if value is None else repr(value)


@dataclass
class MetricsSummary:
    """Post-run summary over the configured evaluation window."""

    duration: float
    window_start: float
    mean_err: dict[str, float]
    std_err: dict[str, float]
    mean_abs_s: dict[str, float]
    afr_err_mean: float
    afr_err_std: float
    phi_convergence_time: dict[str, float | None]
    phi_converged: dict[str, bool]
    cumulative_hc_kg: float
    light_off_time: float | None
    final_eta_cat: float
    removal_ratio: dict[str, float] | None = None
    removal_ratio_overall: float | None = None
    tracking_ratio: dict[str, float] | None = None

    def to_text(self) -> str:
        lines = [
            f"duration_s = {self.duration!r}",
            f"window_start_s = {self.window_start!r}",
        ]
        for loop in LOOPS:
            lines.append(f"mean_err_{loop} = {self.mean_err[loop]!r}")
            lines.append(f"std_err_{loop} = {self.std_err[loop]!r}")
            lines.append(f"mean_abs_s_{loop} = {self.mean_abs_s[loop]!r}")
        lines.append(f"afr_err_mean = {self.afr_err_mean!r}")
        lines.append(f"afr_err_std = {self.afr_err_std!r}")
        for loop in LOOPS:
            lines.append(
                f"phi_convergence_time_{loop} = {_absent(self.phi_convergence_time[loop])}"
            )
            lines.append(f"phi_converged_{loop} = {self.phi_converged[loop]}")
        lines.append(f"cumulative_hc_kg = {self.cumulative_hc_kg!r}")
        lines.append(f"light_off_time_s = {_absent(self.light_off_time)}")
        lines.append(f"final_eta_cat = {self.final_eta_cat!r}")
        for loop in LOOPS:
            ratio = None if self.removal_ratio is None else self.removal_ratio.get(loop)
            lines.append(f"removal_ratio_{loop} = {_absent(ratio)}")
        lines.append(f"removal_ratio_overall = {_absent(self.removal_ratio_overall)}")
        for loop in ("fuel", "speed", "exh"):
            ratio = None if self.tracking_ratio is None else self.tracking_ratio.get(loop)
            lines.append(f"tracking_ratio_{loop} = {_absent(ratio)}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def csv_header() -> list[str]:
        cols = ["duration_s", "window_start_s"]
        for loop in LOOPS:
            cols += [f"mean_err_{loop}", f"std_err_{loop}", f"mean_abs_s_{loop}"]
        cols += ["afr_err_mean", "afr_err_std"]
        for loop in LOOPS:
            cols += [f"phi_convergence_time_{loop}", f"phi_converged_{loop}"]
        cols += ["cumulative_hc_kg", "light_off_time_s", "final_eta_cat"]
        for loop in LOOPS:
            cols.append(f"removal_ratio_{loop}")
        cols.append("removal_ratio_overall")
        for loop in ("fuel", "speed", "exh"):
            cols.append(f"tracking_ratio_{loop}")
        return cols

    def to_csv_row(self) -> list[str]:
        def cell(value) -> str:
            if value is None:
                return ""
            if isinstance(value, bool):
                return str(int(value))
            return repr(float(value))

        row = [cell(self.duration), cell(self.window_start)]
        for loop in LOOPS:
            row += [
                cell(self.mean_err[loop]),
                cell(self.std_err[loop]),
                cell(self.mean_abs_s[loop]),
            ]
        row += [cell(self.afr_err_mean), cell(self.afr_err_std)]
        for loop in LOOPS:
            row += [cell(self.phi_convergence_time[loop]), cell(self.phi_converged[loop])]
        row += [
            cell(self.cumulative_hc_kg),
            cell(self.light_off_time),
            cell(self.final_eta_cat),
        ]
        for loop in LOOPS:
            ratio = None if self.removal_ratio is None else self.removal_ratio.get(loop)
            row.append(cell(ratio))
        row.append(cell(self.removal_ratio_overall))
        for loop in ("fuel", "speed", "exh"):
            ratio = None if self.tracking_ratio is None else self.tracking_ratio.get(loop)
            row.append(cell(ratio))
        return row


_S_OF_LOOP = {"fuel": "s1", "speed": "s2", "exh": "s3", "air": "s4"}


def compute_metrics(
    record: RunRecord,
    baseline: RunRecord | None = None,
    window_start: float | None = None,
) -> MetricsSummary:
    """Summarize one run; pair with a non-adaptive baseline for the ratios.

    The evaluation window starts at the configured post-adaptation time and
    runs to the end.  Paired records must share the exact time grid.
    """
    config = record.meta.get("config", {})
    if window_start is None:
        window_start = float(config.get("metrics_window_start", 5.0))
    times = record.times
    duration = float(times[-1])
    mask = times >= window_start - 1e-12
    if not mask.any():
        raise ConfigError(
            f"metrics window starting at {window_start!r} s is empty for a "
            f"{duration!r} s record"
        )
    if baseline is not None and not np.array_equal(times, baseline.times):
        raise ConfigError("paired records do not share the same time grid")

    mean_err, std_err, mean_abs = {}, {}, {}
    for loop, col in _S_OF_LOOP.items():
        s = record.series[col][mask]
        mean_err[loop] = float(np.mean(s))
        std_err[loop] = float(np.std(s))
        mean_abs[loop] = float(np.mean(np.abs(s)))

    afr_err = record.series["afr_error"][mask]

    phi_true = config.get("phi_true", {})
    conv_time: dict[str, float | None] = {}
    converged: dict[str, bool] = {}
    for loop in LOOPS:
        phi = float(phi_true.get(loop, 1.0))
        normalized = record.series[f"phi_hat_{loop}"] / phi
        inside = np.abs(normalized - 1.0) <= 0.05
        if inside.all():
            conv_time[loop] = None  # never left the band: already nominal
            converged[loop] = True
        elif not inside[-1]:
            conv_time[loop] = None
            converged[loop] = False
        else:
            last_out = int(np.flatnonzero(~inside)[-1])
            conv_time[loop] = float(times[last_out + 1])
            converged[loop] = True

    eta = record.series["eta_cat"]
    lit = np.flatnonzero(eta >= 0.5)
    light_off = float(times[lit[0]]) if lit.size else None

    removal: dict[str, float] | None = None
    removal_overall: float | None = None
    tracking: dict[str, float] | None = None
    if baseline is not None:
        base_config = baseline.meta.get("config", {})
        base_phi = base_config.get("phi_true", {})
        removal = {}
        for loop in LOOPS:
            phi = float(phi_true.get(loop, 1.0))
            f_col = record.series[f"f_{loop}"]
            resid = np.abs((record.series[f"phi_hat_{loop}"] - phi) * f_col)[mask]
            phi_b = float(base_phi.get(loop, 1.0))
            resid_b = np.abs(
                (baseline.series[f"phi_hat_{loop}"] - phi_b) * baseline.series[f"f_{loop}"]
            )[mask]
            denom = float(np.mean(resid_b))
            removal[loop] = 1.0 - float(np.mean(resid)) / denom if denom > 0.0 else None
        defined = [v for v in removal.values() if v is not None]
        removal_overall = min(defined) if defined else None
        tracking = {}
        for loop in ("fuel", "speed", "exh"):
            col = _S_OF_LOOP[loop]
            base_abs = float(np.mean(np.abs(baseline.series[col][mask])))
            tracking[loop] = mean_abs[loop] / base_abs if base_abs > 0.0 else None

    return MetricsSummary(
        duration=duration,
        window_start=float(window_start),
        mean_err=mean_err,
        std_err=std_err,
        mean_abs_s=mean_abs,
        afr_err_mean=float(np.mean(afr_err)),
        afr_err_std=float(np.std(afr_err)),
        phi_convergence_time=conv_time,
        phi_converged=converged,
        cumulative_hc_kg=float(record.series["hc_cum"][-1]),
        light_off_time=light_off,
        final_eta_cat=float(eta[-1]),
        removal_ratio=removal,
        removal_ratio_overall=removal_overall,
        tracking_ratio=tracking,
    )
