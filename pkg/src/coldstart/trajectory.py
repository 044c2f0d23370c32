"""Desired-output trajectories: breakpoint tables, CSV I/O, controller-grid sampling.

A trajectory is stored as piecewise-linear breakpoints over time for the three
tracked outputs (AFR, crankshaft speed, exhaust temperature) and sampled onto
the fixed controller grid before a run.  The sampled form carries two extra
grid points past the run duration because the speed loop's cascade needs a
two-step lookahead of its target.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

COLUMNS = ("time", "afr_d", "omega_d", "t_exh_d")


@dataclass(frozen=True)
class TargetWindow:
    """Desired values one controller step consumes.

    The speed target is needed two steps ahead: the synthetic air-mass target
    issued now is tracked by the inner loop on the next step.
    """

    afr_d: float
    afr_d_next: float
    omega_d: float
    omega_d_next: float
    omega_d_next2: float
    t_exh_d: float
    t_exh_d_next: float


@dataclass(frozen=True)
class TrajectoryTable:
    """Piecewise-linear breakpoints of the desired outputs versus time [s]."""

    time: tuple[float, ...]
    afr_d: tuple[float, ...]
    omega_d: tuple[float, ...]
    t_exh_d: tuple[float, ...]

    def __post_init__(self):
        n = len(self.time)
        if n < 2:
            raise ConfigError("trajectory needs at least two breakpoints")
        if not (len(self.afr_d) == len(self.omega_d) == len(self.t_exh_d) == n):
            raise ConfigError("trajectory columns must all match the time column length")
        if self.time[0] != 0.0:
            raise ConfigError(f"trajectory must start at time 0, got {self.time[0]!r}")
        diffs = np.diff(np.asarray(self.time, dtype=float))
        if not np.all(diffs > 0.0):
            raise ConfigError("trajectory time must be strictly increasing")
        for name in ("time", "afr_d", "omega_d", "t_exh_d"):
            values = getattr(self, name)
            if not all(math.isfinite(v) for v in values):
                raise ConfigError(f"trajectory column {name!r} contains non-finite values")
        if min(self.afr_d) <= 0.0:
            raise ConfigError("desired AFR must be positive everywhere")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in zip(self.time, self.afr_d, self.omega_d, self.t_exh_d):
            writer.writerow([repr(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryTable":
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise ConfigError(f"trajectory file is missing column(s) {missing}")
        cols: dict[str, list[float]] = {c: [] for c in COLUMNS}
        for line_no, row in enumerate(reader, start=2):
            for c in COLUMNS:
                try:
                    cols[c].append(float(row[c]))
                except (TypeError, ValueError):
                    raise ConfigError(
                        f"trajectory line {line_no}: column {c!r} is not a number: {row[c]!r}"
                    ) from None
        return cls(
            time=tuple(cols["time"]),
            afr_d=tuple(cols["afr_d"]),
            omega_d=tuple(cols["omega_d"]),
            t_exh_d=tuple(cols["t_exh_d"]),
        )

    def sample(self, T: float, duration: float) -> "SampledTrajectory":
        """Linear interpolation onto the controller grid (plus two lookahead points)."""
        if T <= 0.0:
            raise ConfigError(f"sample time must be positive, got {T!r}")
        if duration < 0.0:
            raise ConfigError(f"duration must be nonnegative, got {duration!r}")
        n_steps = int(round(duration / T))
        if abs(n_steps * T - duration) > 1e-9:
            raise ConfigError(
                f"duration {duration!r} is not an integer number of {T!r} s samples"
            )
        horizon = (n_steps + 1) * T
        if self.time[-1] < horizon - 1e-9:
            raise ConfigError(
                f"trajectory ends at {self.time[-1]!r} s but must cover {horizon!r} s "
                "(duration plus one sample)"
            )
        grid = np.arange(n_steps + 2, dtype=float) * T
        t = np.asarray(self.time, dtype=float)
        return SampledTrajectory(
            T=T,
            afr_d=np.interp(grid, t, np.asarray(self.afr_d, dtype=float)),
            omega_d=np.interp(grid, t, np.asarray(self.omega_d, dtype=float)),
            t_exh_d=np.interp(grid, t, np.asarray(self.t_exh_d, dtype=float)),
        )


@dataclass(frozen=True)
class SampledTrajectory:
    """Targets on the controller grid; arrays cover indices 0 .. n_steps + 1."""

    T: float
    afr_d: np.ndarray
    omega_d: np.ndarray
    t_exh_d: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.afr_d) - 2

    def window(self, k: int) -> TargetWindow:
        if not 0 <= k < self.n_steps:
            raise IndexError(f"step {k} outside trajectory horizon 0..{self.n_steps - 1}")
        return TargetWindow(
            afr_d=float(self.afr_d[k]),
            afr_d_next=float(self.afr_d[k + 1]),
            omega_d=float(self.omega_d[k]),
            omega_d_next=float(self.omega_d[k + 1]),
            omega_d_next2=float(self.omega_d[k + 2]),
            t_exh_d=float(self.t_exh_d[k]),
            t_exh_d_next=float(self.t_exh_d[k + 1]),
        )


def default_table(duration: float = 40.0) -> TrajectoryTable:
    """Shipped cold-start profile.

    Speed starts at the cranking condition (125 rad/s), rises to a fast idle
    of 167 rad/s within 1.5 s, holds, then descends linearly to a 100 rad/s
    idle by 25 s; AFR starts rich at 12.5 and ramps to stoichiometric 14.7
    over 20 s; the exhaust temperature target is a constant 650 degC.  The
    speed profile begins at the default initial state on purpose: a target
    step at t = 0 demands a one-step air-mass excursion far outside the
    pumping fit's validity.  Breakpoints include every kink of each profile,
    so linear interpolation reproduces the intended shapes exactly.
    """
    end = max(duration + 1.0, 26.0)
    return TrajectoryTable(
        time=(0.0, 1.5, 5.0, 20.0, 25.0, end),
        afr_d=(12.5, 12.665, 13.05, 14.7, 14.7, 14.7),
        omega_d=(125.0, 167.0, 167.0, 116.75, 100.0, 100.0),
        t_exh_d=(650.0, 650.0, 650.0, 650.0, 650.0, 650.0),
    )
