"""Relative-gain-array coupling analysis over first-order loop models.

Each open-loop channel is a first-order transfer function written as
1/(tau*s + k); the array quantifies how much each input-output pairing
changes when the other loops are closed, frequency by frequency.  Also
includes least-squares identification of the channel models from sampled
step or noise responses.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IdentificationError, SingularGainError, SingularMatrixError

DEFAULT_COND_LIMIT = 1e12
DEFAULT_GRID = (1e-2, 1e2, 200)  # rad/s span and point count of the sweep


@dataclass(frozen=True)
class FirstOrderTF:
    """First-order channel model 1/(tau*s + k)."""

    tau: float  # [s]
    k: float    # inverse DC gain [-]

    def __post_init__(self):
        if self.tau == 0.0 and self.k == 0.0:
            raise ValueError("tau and k cannot both be zero")

    def dc_gain(self) -> float:
        if self.k == 0.0:
            raise SingularGainError("k = 0 has no finite DC gain")
        return 1.0 / self.k


def freq_response(tf: FirstOrderTF, omega):
    """Evaluate 1/(j*omega*tau + k); omega may be a scalar or an array."""
    w = np.asarray(omega, dtype=float)
    den = 1j * w * tf.tau + tf.k
    if np.any(den == 0):
        raise SingularGainError(
            f"response of 1/({tf.tau}*s + {tf.k}) is singular where omega*tau and k vanish"
        )
    out = 1.0 / den
    return complex(out) if np.isscalar(omega) or w.ndim == 0 else out


def to_gain_time_constant(tf: FirstOrderTF) -> tuple[float, float]:
    """Rewrite 1/(tau*s + k) as K/(T*s + 1); returns (K, T)."""
    if tf.k == 0.0:
        raise SingularGainError("k = 0 cannot be expressed in unit-denominator form")
    return 1.0 / tf.k, tf.tau / tf.k


def from_gain_time_constant(gain: float, time_constant: float) -> FirstOrderTF:
    """Inverse of ``to_gain_time_constant``."""
    if gain == 0.0:
        raise ValueError("zero gain has no first-order inverse form")
    return FirstOrderTF(tau=time_constant / gain, k=1.0 / gain)


@dataclass(frozen=True)
class TFMatrix:
    """Square matrix of first-order channels; None marks explicit zero coupling."""

    entries: tuple  # tuple of tuples of FirstOrderTF | None

    def __post_init__(self):
        n = len(self.entries)
        if n == 0:
            raise ValueError("empty transfer matrix")
        rows = []
        for i, row in enumerate(self.entries):
            if len(row) != n:
                raise ValueError(f"row {i} has {len(row)} entries, expected {n}")
            rows.append(tuple(row))
        object.__setattr__(self, "entries", tuple(rows))

    @property
    def n(self) -> int:
        return len(self.entries)

    def response(self, omega: float) -> np.ndarray:
        """Complex gain matrix at one frequency; zero-coupling entries give 0."""
        p = np.zeros((self.n, self.n), dtype=complex)
        for i, row in enumerate(self.entries):
            for j, tf in enumerate(row):
                if tf is not None:
                    p[i, j] = freq_response(tf, omega)
        return p

    def to_json(self) -> str:
        cells = [
            [None if tf is None else {"tau": tf.tau, "k": tf.k} for tf in row]
            for row in self.entries
        ]
        return json.dumps({"n": self.n, "entries": cells}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TFMatrix":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ValueError(f"transfer matrix is not valid JSON: {err}") from None
        if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
            raise ValueError("transfer matrix JSON must be an object with an 'entries' array")
        rows = []
        for i, row in enumerate(data["entries"], start=1):
            cells = []
            for j, c in enumerate(row, start=1):
                if c is None:
                    cells.append(None)
                    continue
                try:
                    cells.append(FirstOrderTF(float(c["tau"]), float(c["k"])))
                except (TypeError, KeyError, ValueError) as err:
                    raise ValueError(f"channel ({i},{j}): {err}") from None
            rows.append(tuple(cells))
        return cls(tuple(rows))

    def to_csv(self) -> str:
        """One row per output; per input a (tau, k) column pair, blank when zero."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["row"]
        for j in range(self.n):
            header += [f"tau_{j + 1}", f"k_{j + 1}"]
        writer.writerow(header)
        for i, row in enumerate(self.entries):
            cells = [str(i + 1)]
            for tf in row:
                cells += ["", ""] if tf is None else [repr(tf.tau), repr(tf.k)]
            writer.writerow(cells)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TFMatrix":
        reader = csv.reader(io.StringIO(text))
        rows = [r for r in reader if r]
        if len(rows) < 2:
            raise ValueError("transfer matrix CSV needs a header and at least one row")
        n = (len(rows[0]) - 1) // 2
        out = []
        for i, r in enumerate(rows[1:], start=1):
            if len(r) != 1 + 2 * n:
                raise ValueError(
                    f"transfer matrix row {i} has {len(r)} fields, expected {1 + 2 * n}"
                )
            row = []
            for j in range(n):
                tau_s, k_s = r[1 + 2 * j], r[2 + 2 * j]
                if (tau_s == "") != (k_s == ""):
                    raise ValueError(
                        f"channel ({i},{j + 1}): tau and k must both be set or both blank"
                    )
                if tau_s == "":
                    row.append(None)
                    continue
                try:
                    row.append(FirstOrderTF(float(tau_s), float(k_s)))
                except ValueError as err:
                    raise ValueError(f"channel ({i},{j + 1}): {err}") from None
            out.append(tuple(row))
        return cls(tuple(out))


def open_loop_matrix(tf_entries) -> TFMatrix:
    """Build a TFMatrix from a square list-of-lists of FirstOrderTF or None."""
    if not tf_entries:
        raise ValueError("empty transfer matrix")
    return TFMatrix(tuple(tuple(row) for row in tf_entries))


def default_coupling_matrix() -> TFMatrix:
    """Illustrative 3x3 loop-coupling model (fuel, air, spark channels).

    The numbers are synthetic placeholders for exercising the analysis
    tooling; they are not identified from the engine model.
    """
    k = from_gain_time_constant
    return open_loop_matrix(
        [
            [k(1.0, 0.3), k(0.4, 0.5), None],
            [k(0.25, 0.6), k(2.0, 0.8), None],
            [k(0.3, 0.2), k(0.5, 0.4), k(1.5, 0.05)],
        ]
    )


def rga_of_matrix(p: np.ndarray, cond_limit: float = DEFAULT_COND_LIMIT) -> np.ndarray:
    """Relative gain array of a complex gain matrix: P .* inv(P).T."""
    p = np.asarray(p, dtype=complex)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"gain matrix must be square, got shape {p.shape}")
    cond = np.linalg.cond(p)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError(f"condition number {cond:.3e} above limit {cond_limit:.3e}")
    return p * np.linalg.inv(p).T


def closed_loop_gains(p: np.ndarray, cond_limit: float = DEFAULT_COND_LIMIT) -> np.ndarray:
    """Apparent channel gains with all other loops closed: 1 / inv(P).T.

    Entries where inv(P).T vanishes (no closed-loop path) come out infinite.
    """
    p = np.asarray(p, dtype=complex)
    cond = np.linalg.cond(p)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError(f"condition number {cond:.3e} above limit {cond_limit:.3e}")
    c = np.linalg.inv(p).T
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c == 0, np.inf + 0j, 1.0 / c)


def rga_at(tfm: TFMatrix, omega: float, cond_limit: float = DEFAULT_COND_LIMIT) -> np.ndarray:
    """RGA of a transfer matrix at one frequency [rad/s]."""
    return rga_of_matrix(tfm.response(omega), cond_limit)


@dataclass
class RGAResult:
    """Frequency sweep of the relative gain array.

    ``lambdas`` is (n_freq, n, n) complex with NaN rows where the gain matrix
    was too ill-conditioned (``gaps`` marks those).  ``mags_db`` holds
    20*log10|lambda| with -inf for exact zeros.  ``dominance`` gives, per
    diagonal pairing, the fraction of non-gap frequencies whose |lambda_ii|
    stays within +-3 dB of unity.
    """

    omegas: np.ndarray
    lambdas: np.ndarray
    gaps: np.ndarray
    mags_db: np.ndarray = field(init=False)
    dominance: np.ndarray = field(init=False)

    def __post_init__(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            self.mags_db = 20.0 * np.log10(np.abs(self.lambdas))
        ok = ~self.gaps
        n = self.lambdas.shape[1]
        scores = np.full(n, np.nan)
        if ok.any():
            diag_db = self.mags_db[ok][:, range(n), range(n)]
            scores = np.mean(np.abs(diag_db) <= 3.0, axis=0)
        self.dominance = scores

    def to_csv(self) -> str:
        n = self.lambdas.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["omega", "gap"]
        for i in range(n):
            for j in range(n):
                header += [f"re_{i + 1}_{j + 1}", f"im_{i + 1}_{j + 1}"]
        for i in range(n):
            for j in range(n):
                header.append(f"db_{i + 1}_{j + 1}")
        writer.writerow(header)
        for idx, w in enumerate(self.omegas):
            row = [repr(float(w)), str(int(self.gaps[idx]))]
            if self.gaps[idx]:
                row += [""] * (3 * n * n)
            else:
                for i in range(n):
                    for j in range(n):
                        lam = self.lambdas[idx, i, j]
                        row += [repr(float(lam.real)), repr(float(lam.imag))]
                for i in range(n):
                    for j in range(n):
                        row.append(repr(float(self.mags_db[idx, i, j])))
            writer.writerow(row)
        return buf.getvalue()


def rga_sweep(
    tfm: TFMatrix,
    w_min: float = DEFAULT_GRID[0],
    w_max: float = DEFAULT_GRID[1],
    n_points: int = DEFAULT_GRID[2],
    cond_limit: float = DEFAULT_COND_LIMIT,
) -> RGAResult:
    """Log-spaced RGA sweep; ill-conditioned frequencies become gaps."""
    if not (w_min > 0 and w_max > w_min):
        raise ValueError(f"need 0 < w_min < w_max, got [{w_min}, {w_max}]")
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    omegas = np.logspace(math.log10(w_min), math.log10(w_max), n_points)
    n = tfm.n
    lambdas = np.full((n_points, n, n), np.nan, dtype=complex)
    gaps = np.zeros(n_points, dtype=bool)
    for idx, w in enumerate(omegas):
        try:
            lambdas[idx] = rga_of_matrix(tfm.response(float(w)), cond_limit)
        except SingularMatrixError:
            gaps[idx] = True
    return RGAResult(omegas=omegas, lambdas=lambdas, gaps=gaps)


# ---------------------------------------------------------------------------
# identification


@dataclass(frozen=True)
class FirstOrderFit:
    """Least-squares result for one channel.

    ``a``/``b`` are the one-step regression coefficients
    y[k+1] = a*y[k] + b*u[k]; ``tau_identifiable`` is False when only the DC
    gain could be extracted (constant input and settled output).
    """

    tf: FirstOrderTF
    a: float
    b: float
    residual_rms: float
    tau_identifiable: bool = True


def identify_first_order(
    u,
    y,
    T: float,
    excitation_floor: float = 1e-12,
    min_len: int = 10,
) -> FirstOrderFit:
    """Fit 1/(tau*s + k) to one sampled input/output pair.

    The discrete regression picks up the sampled pole and DC gain; the pole is
    mapped back with the step time ``T``.  A constant, already-settled record
    still yields the DC gain but no time constant.
    """
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if T <= 0:
        raise IdentificationError(f"step time must be positive, got {T}")
    if len(u) != len(y):
        raise IdentificationError(f"length mismatch: {len(u)} inputs vs {len(y)} outputs")
    if len(u) < min_len:
        raise IdentificationError(f"need at least {min_len} samples, got {len(u)}")

    u_mean = float(np.mean(u))
    if float(np.var(u)) <= excitation_floor * max(1.0, u_mean * u_mean):
        y_mean = float(np.mean(y))
        if float(np.var(y)) <= excitation_floor * max(1.0, y_mean * y_mean) and y_mean != 0.0:
            # settled DC record: gain is known, the pole is not
            gain = y_mean / u_mean
            resid = float(np.sqrt(np.mean((y - gain * u) ** 2)))
            return FirstOrderFit(
                tf=FirstOrderTF(tau=0.0, k=1.0 / gain),
                a=math.nan,
                b=math.nan,
                residual_rms=resid,
                tau_identifiable=False,
            )
        raise IdentificationError(
            f"input excitation below floor (var={np.var(u):.3e}) with unsettled output"
        )

    phi = np.column_stack([y[:-1], u[:-1]])
    target = y[1:]
    theta, *_ = np.linalg.lstsq(phi, target, rcond=None)
    a, b = float(theta[0]), float(theta[1])
    resid = float(np.sqrt(np.mean((target - phi @ theta) ** 2)))
    if not 0.0 < a < 1.0:
        raise IdentificationError(
            f"discrete pole a={a:.6g} outside (0, 1); not a stable first-order lag"
            f" (b={b:.6g}, residual_rms={resid:.3e})"
        )
    pole = -math.log(a) / T
    gain = b / (1.0 - a)
    if gain == 0.0:
        raise IdentificationError("zero DC gain; channel looks like no coupling")
    k = 1.0 / gain
    tau = k / pole
    return FirstOrderFit(tf=FirstOrderTF(tau=tau, k=k), a=a, b=b, residual_rms=resid)


@dataclass
class MimoIdentification:
    """Per-pair fits of a square channel matrix from single-input experiments."""

    tfm: TFMatrix
    fits: dict       # (i, j) 1-based -> FirstOrderFit
    holes: dict      # (i, j) 1-based -> reason string ("zero response" or error text)


def identify_mimo(u_series, y_series, T: float, on_error: str = "raise") -> MimoIdentification:
    """Identify every channel of a square system, one input excited at a time.

    ``u_series`` is (n, N): row j is input j's trace during its experiment.
    ``y_series`` is (n, n, N): [i, j] is output i's response in experiment j.
    A flat output becomes an explicit zero-coupling entry.  With
    ``on_error="hole"`` failed fits leave holes instead of raising.
    """
    u_series = np.asarray(u_series, dtype=float)
    y_series = np.asarray(y_series, dtype=float)
    if u_series.ndim != 2:
        raise IdentificationError(f"u_series must be 2-d, got shape {u_series.shape}")
    n = u_series.shape[0]
    if y_series.shape[:2] != (n, n) or y_series.shape[2] != u_series.shape[1]:
        raise IdentificationError(
            f"y_series shape {y_series.shape} incompatible with u_series {u_series.shape}"
        )
    if on_error not in ("raise", "hole"):
        raise ValueError("on_error must be 'raise' or 'hole'")

    entries = [[None] * n for _ in range(n)]
    fits, holes = {}, {}
    for j in range(n):
        u = u_series[j]
        u_power = max(float(np.var(u)), 1.0)
        for i in range(n):
            y = y_series[i, j]
            if float(np.var(y)) <= 1e-16 * u_power and abs(float(np.mean(y))) < 1e-12:
                holes[(i + 1, j + 1)] = "zero response"
                continue
            try:
                fit = identify_first_order(u, y, T)
            except IdentificationError as exc:
                if on_error == "raise":
                    raise IdentificationError(str(exc), pair=(i + 1, j + 1)) from exc
                holes[(i + 1, j + 1)] = f"fit failed: {exc}"
                continue
            fits[(i + 1, j + 1)] = fit
            entries[i][j] = fit.tf
    return MimoIdentification(tfm=open_loop_matrix(entries), fits=fits, holes=holes)


def simulate_first_order(tf: FirstOrderTF, u, T: float, y0: float = 0.0) -> np.ndarray:
    """Exact sampled response of 1/(tau*s + k) to a piecewise-constant input.

    Used to generate round-trip test data; the input is held over each step.
    """
    if tf.tau <= 0.0 or tf.k <= 0.0:
        raise ValueError("simulation needs tau > 0 and k > 0")
    u = np.asarray(u, dtype=float).ravel()
    pole = tf.k / tf.tau
    a = math.exp(-pole * T)
    b = (1.0 - a) / tf.k
    y = np.empty(len(u))
    cur = y0
    for idx, uk in enumerate(u):
        y[idx] = cur
        cur = a * cur + b * uk
    return y
