"""Closed-form calibration of the departure model from taxi statistics.

The pipeline works backward from observables: saturated throughput fixes
the two take-off coin probabilities, the waiting time they imply is
stripped (together with pushback) out of the unimpeded taxi-out times to
leave pure taxi statistics, those fix the taxiway length and move
probability, and the residual timing uncertainty sizes the runway buffer.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .airport import AirportConfig, Fairness, RampSpec

__all__ = [
    "CalibrationError",
    "CalibrationResult",
    "EmptySampleError",
    "MinuteSeries",
    "NegativeVarianceError",
    "NoRealSolutionError",
    "RampAggregates",
    "TaxiStats",
    "ThroughputStats",
    "calibrate_airport",
    "calibrate_taxiway",
    "clearance_wait_stats",
    "decompose_taxi_stats",
    "ramp_transit_steps",
    "saturation_stats",
    "size_buffer",
    "solve_bernoulli_pair",
]


class CalibrationError(ValueError):
    """Observed statistics are incompatible with the model family."""


class NoRealSolutionError(CalibrationError):
    """No real coin-probability pair reproduces the mean/std pair."""


class NegativeVarianceError(CalibrationError):
    """Variance decomposition would go negative."""


class EmptySampleError(CalibrationError):
    """No minutes qualify for the requested statistic."""


@dataclass(frozen=True)
class ThroughputStats:
    """Saturated take-off rate: mean and standard deviation per minute."""

    mean_rate: float
    std_rate: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.mean_rate <= 2.0:
            raise ValueError(f"mean_rate must be in [0, 2], got {self.mean_rate}")
        if self.std_rate < 0.0:
            raise ValueError(f"std_rate must be >= 0, got {self.std_rate}")


@dataclass(frozen=True)
class TaxiStats:
    """Light-traffic taxi-out aggregates for one ramp, in minutes."""

    unimpeded_mean: float
    unimpeded_std: float
    pushback_mean: float
    pushback_std: float

    def __post_init__(self) -> None:
        for name in ("unimpeded_mean", "unimpeded_std", "pushback_mean", "pushback_std"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class MinuteSeries:
    """Per-minute pushback and take-off counts.

    The running taxiing-count estimate is input-output accounting: add the
    pushbacks, subtract the take-offs, clamp at zero, starting from an
    empty surface.
    """

    minutes: np.ndarray
    pushbacks: np.ndarray
    takeoffs: np.ndarray

    def __post_init__(self) -> None:
        self.minutes = np.asarray(self.minutes, dtype=np.int64)
        self.pushbacks = np.asarray(self.pushbacks, dtype=np.int64)
        self.takeoffs = np.asarray(self.takeoffs, dtype=np.int64)
        if not (len(self.minutes) == len(self.pushbacks) == len(self.takeoffs)):
            raise ValueError("minute series columns must have equal length")
        if (self.pushbacks < 0).any() or (self.takeoffs < 0).any():
            raise ValueError("counts must be nonnegative")

    def __len__(self) -> int:
        return len(self.minutes)

    def taxiing_estimate(self) -> np.ndarray:
        """Estimated taxiing count at the start of each minute."""
        est = np.zeros(len(self), dtype=np.int64)
        level = 0
        for i in range(len(self)):
            est[i] = level
            level = max(0, level + int(self.pushbacks[i]) - int(self.takeoffs[i]))
        return est

    @classmethod
    def from_csv(cls, path) -> "MinuteSeries":
        minutes, pushbacks, takeoffs = [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"minute", "pushbacks", "takeoffs"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ValueError(f"minute series CSV needs columns {sorted(required)}")
            for row in reader:
                minutes.append(int(row["minute"]))
                pushbacks.append(int(row["pushbacks"]))
                takeoffs.append(int(row["takeoffs"]))
        return cls(np.array(minutes), np.array(pushbacks), np.array(takeoffs))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["minute", "pushbacks", "takeoffs"])
            for m, p, t in zip(self.minutes, self.pushbacks, self.takeoffs):
                writer.writerow([int(m), int(p), int(t)])


def solve_bernoulli_pair(stats: ThroughputStats) -> tuple[float, float]:
    """Coin probabilities (c1 >= c2) matching a saturated rate mean and std.

    The pair solves c1 + c2 = mean and c1(1-c1) + c2(1-c2) = std^2, i.e.
    the two roots of x^2 - mean*x + q with q = (std^2 - mean + mean^2)/2.
    """
    s = stats.mean_rate
    q = (stats.std_rate**2 - s + s * s) / 2.0
    disc = s * s - 4.0 * q
    if disc < 0.0:
        raise NoRealSolutionError(
            f"no real coin pair for mean {s}, std {stats.std_rate} (discriminant {disc:.3g})"
        )
    root = math.sqrt(disc)
    c1 = (s + root) / 2.0
    c2 = s - c1
    if not (0.0 <= c2 <= c1 <= 1.0):
        raise NoRealSolutionError(f"coin pair ({c1:.4f}, {c2:.4f}) outside [0, 1]")
    return c1, c2


def clearance_wait_stats(c1: float, c2: float) -> tuple[float, float]:
    """Mean and std of the take-off clearance wait, in minutes.

    Uses the aggregate-rate convention: a wait succeeding at rate c1 + c2
    per minute, so mean = 1/(c1+c2) and std = sqrt(1-(c1+c2))/(c1+c2).
    """
    rate = c1 + c2
    if rate <= 0.0:
        raise CalibrationError("zero service rate: c1 + c2 must be positive")
    return 1.0 / rate, math.sqrt(max(0.0, 1.0 - rate)) / rate


def decompose_taxi_stats(t: TaxiStats, clear: tuple[float, float]) -> tuple[float, float]:
    """Strip clearance wait and pushback out of unimpeded taxi-out stats.

    Means subtract; variances subtract (the three phases are treated as
    independent).  Raises when the variance decomposition goes negative.
    """
    clear_mean, clear_std = clear
    taxi_mean = t.unimpeded_mean - clear_mean - t.pushback_mean
    var = t.unimpeded_std**2 - clear_std**2 - t.pushback_std**2
    if var < 0.0:
        raise NegativeVarianceError(
            f"taxi-time variance would be {var:.4f}; inputs are inconsistent"
        )
    return taxi_mean, math.sqrt(var)


def calibrate_taxiway(taxi_mean: float, taxi_std: float, ts: float) -> tuple[int, float]:
    """Taxiway sample count and move probability from taxi-time stats.

    An unencumbered aircraft needs N forward moves, each succeeding with
    probability m per step, so the transit time has mean (N/m)*Ts and std
    (N/m)*sqrt((1-m)/N)*Ts.  The real-valued solution is rounded to an
    integer N (at least 1) and m is recomputed from the mean equation.
    """
    if taxi_mean <= 0.0:
        raise CalibrationError(f"taxi_mean must be positive, got {taxi_mean}")
    if taxi_std > taxi_mean:
        raise CalibrationError(
            f"taxi_std {taxi_std} exceeds taxi_mean {taxi_mean}: no geometric-walk solution"
        )
    r = (taxi_std / taxi_mean) ** 2
    m_real = 1.0 / (1.0 + r * taxi_mean / ts)
    n = max(1, round(taxi_mean * m_real / ts))
    m = min(1.0, n * ts / taxi_mean)
    return n, m


def ramp_transit_steps(taxi_mean: float, m: float, ts: float) -> int:
    """Step count for an extra ramp once the move probability is fixed.

    Rounded up: with m inherited from the primary ramp the mean equation
    rarely lands on an integer, and a ramp must cover its distance.
    """
    if taxi_mean <= 0.0:
        raise CalibrationError(f"taxi_mean must be positive, got {taxi_mean}")
    return max(1, math.ceil(taxi_mean * m / ts - 1e-9))


def size_buffer(
    taxi_std: float, clear_std: float, mean_rate: float, k_sigma: float = 3.0
) -> int:
    """Runway buffer capacity covering timing uncertainty.

    The buffer must keep the runway fed for k_sigma times the combined
    taxi/clearance standard deviation; dividing that interval by the mean
    take-off rate's reciprocal-equivalent (i.e. multiplying by clearances
    per aircraft-interval 1/mean_rate) gives the aircraft count, rounded to
    the nearest integer with a floor of one.
    """
    if mean_rate <= 0.0:
        raise CalibrationError(f"mean_rate must be positive, got {mean_rate}")
    supply_minutes = k_sigma * math.sqrt(taxi_std**2 + clear_std**2)
    return max(1, round(supply_minutes / mean_rate))


def saturation_stats(series: MinuteSeries, saturation_cutoff: int) -> ThroughputStats:
    """Take-off rate mean/std over minutes that start at or above the cutoff."""
    if len(series) == 0:
        raise EmptySampleError("minute series is empty")
    mask = series.taxiing_estimate() >= saturation_cutoff
    if not mask.any():
        raise EmptySampleError(
            f"no minutes with an estimated taxiing count >= {saturation_cutoff}"
        )
    tk = series.takeoffs[mask].astype(float)
    return ThroughputStats(mean_rate=float(tk.mean()), std_rate=float(tk.std()))


@dataclass(frozen=True)
class RampAggregates:
    """Named taxi aggregates for one ramp."""

    name: str
    stats: TaxiStats


@dataclass
class CalibrationResult:
    """Full parameter set plus the intermediate quantities that led to it."""

    config: AirportConfig
    c1: float
    c2: float
    clearance_wait_mean: float
    clearance_wait_std: float
    ramp_taxi: list[tuple[str, float, float]]  # (name, taxi_mean, taxi_std)
    ramp_steps: list[int]
    combined_std: float
    supply_minutes: float
    buffer_real: float
    intermediates: dict = field(default_factory=dict)

    def report(self) -> dict:
        """Calibration table plus intermediates, JSON-ready."""
        return {
            "Ls": self.config.sample_len_m,
            "Ts": self.config.step_seconds,
            "N": list(self.ramp_steps),
            "m": self.config.move_prob,
            "c1": self.c1,
            "c2": self.c2,
            "B": self.config.queue_capacity,
            "intermediates": {
                "clearance_wait_mean": self.clearance_wait_mean,
                "clearance_wait_std": self.clearance_wait_std,
                "ramp_taxi": [
                    {"name": n, "taxi_mean": mu, "taxi_std": sd}
                    for n, mu, sd in self.ramp_taxi
                ],
                "combined_std": self.combined_std,
                "supply_minutes": self.supply_minutes,
                "buffer_real": self.buffer_real,
                **self.intermediates,
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.report(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def calibrate_airport(
    throughput: ThroughputStats,
    ramps: list[RampAggregates],
    sample_len_m: float = 200.0,
    step_seconds: float = 60.0,
    fairness: Fairness = Fairness.ALTERNATION,
    k_sigma: float = 3.0,
) -> CalibrationResult:
    """Run the full calibration pipeline and assemble an airport config.

    The first ramp is the farthest and drives the taxiway length, the move
    probability, and the buffer size; any further ramp reuses m and gets a
    step count (hence an entry sample) from its own decomposed taxi time.
    """
    if not 1 <= len(ramps) <= 2:
        raise CalibrationError(f"expected 1 or 2 ramps, got {len(ramps)}")
    ts_min = step_seconds / 60.0

    c1, c2 = solve_bernoulli_pair(throughput)
    clear = clearance_wait_stats(c1, c2)

    ramp_taxi: list[tuple[str, float, float]] = []
    for ramp in ramps:
        mu, sd = decompose_taxi_stats(ramp.stats, clear)
        ramp_taxi.append((ramp.name, mu, sd))

    n_primary, m = calibrate_taxiway(ramp_taxi[0][1], ramp_taxi[0][2], ts_min)
    ramp_steps = [n_primary]
    for _, mu, _ in ramp_taxi[1:]:
        steps = ramp_transit_steps(mu, m, ts_min)
        if steps > n_primary:
            raise CalibrationError(
                f"secondary ramp needs {steps} steps, more than the taxiway's {n_primary}"
            )
        ramp_steps.append(steps)

    combined_std = math.sqrt(ramp_taxi[0][2] ** 2 + clear[1] ** 2)
    supply_minutes = k_sigma * combined_std
    buffer_real = supply_minutes / throughput.mean_rate
    b_cap = size_buffer(ramp_taxi[0][2], clear[1], throughput.mean_rate, k_sigma)

    config = AirportConfig(
        taxiway_len=n_primary,
        ramps=tuple(
            RampSpec(ramp.name, n_primary - steps + 1)
            for ramp, steps in zip(ramps, ramp_steps)
        ),
        queue_capacity=b_cap,
        move_prob=m,
        clear_prob_1=c1,
        clear_prob_2=c2,
        sample_len_m=sample_len_m,
        step_seconds=step_seconds,
        fairness=fairness,
    )
    return CalibrationResult(
        config=config,
        c1=c1,
        c2=c2,
        clearance_wait_mean=clear[0],
        clearance_wait_std=clear[1],
        ramp_taxi=ramp_taxi,
        ramp_steps=ramp_steps,
        combined_std=combined_std,
        supply_minutes=supply_minutes,
        buffer_real=buffer_real,
    )
