"""Seeded Monte Carlo rollouts of any controller against the kernel.

A controller is anything with ``reset()`` and ``decide(pos) -> Decision``;
rollouts are bit-reproducible given the seed (replication seeds are spawned
from it with numpy's SeedSequence, so results do not depend on how
replications would be scheduled).  Per-step take-offs are recovered from
the count balance: clearances minus the change in aircraft on the surface.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .belief import MLSController
from .policy import (
    CostParams,
    ParetoPoint,
    Policy,
    StationaryMetrics,
    pareto_sweep,
)
from .threshold import threshold_sweep
from .transitions import Decision, TransitionModel

__all__ = [
    "AlwaysClearController",
    "ComparisonRow",
    "ComparisonTable",
    "CurveBin",
    "PolicyController",
    "SimConfig",
    "SimResult",
    "compare_policies",
    "congestion_curve",
    "rollout",
]

RNG_INFO = "numpy PCG64; replication seeds spawned from SeedSequence(seed)"


@dataclass(frozen=True)
class SimConfig:
    """Rollout length, warmup, seed, and replication count."""

    steps: int
    warmup: int = 10_000
    seed: int = 0
    replications: int = 1

    def __post_init__(self) -> None:
        if not self.steps > self.warmup >= 0:
            raise ValueError(f"need steps > warmup >= 0, got {self.steps}, {self.warmup}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")


class PolicyController:
    """Plays a fixed stationary policy."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def reset(self) -> None:
        pass

    def decide(self, pos: int) -> Decision:
        return self.policy.decision(pos)


class AlwaysClearController:
    """Saturating demand: always issue a release.

    With a turn bit the release goes to the ramp whose turn it is (blind,
    like unlimited demand at both ramps); otherwise the lowest free ramp is
    released and the controller holds only when every entry is blocked.
    """

    def __init__(self, model: TransitionModel):
        self.model = model

    def reset(self) -> None:
        pass

    def decide(self, pos: int) -> Decision:
        if self.model.config.has_turn_bit:
            return Decision(int(self.model.space.turn[pos]) + 1)
        for k in self.model.decisions[1:]:
            if self.model.feasible[pos, int(k)]:
                return k
        return Decision.HOLD


@dataclass
class SimResult:
    """Aggregated rollout statistics.

    ``curve_counts[n, t]`` counts steps that began with n aircraft on the
    surface and saw t take-offs; everything else derives from sums over the
    post-warmup steps of all replications.
    """

    steps: int
    warmup: int
    seed: int
    replications: int
    takeoff_mean: float
    takeoff_std: float
    mean_aircraft: float
    utilization: float
    empty_queue_frac: float
    curve_counts: np.ndarray
    per_replication: list[dict]
    coerced_decisions: int
    conservation_violations: int
    rng_info: str = RNG_INFO
    trajectory: list[tuple[int, int, int, int]] = field(default_factory=list)

    def expected_cost(self, beta: CostParams | float) -> float:
        b = beta.beta if isinstance(beta, CostParams) else float(beta)
        return self.mean_aircraft + b * self.empty_queue_frac


def rollout(
    model: TransitionModel,
    controller,
    sim: SimConfig,
    start: int | None = None,
    record_trajectory: bool = False,
) -> SimResult:
    """Run seeded replications of a controller and aggregate statistics.

    Decisions that are infeasible in the current state are coerced to HOLD
    and counted.  Per-step conservation (take-offs = effective clearances
    minus the aircraft-count change) is checked on every transition.
    """
    space = model.space
    start_pos = space.empty_pos if start is None else start
    nac = space.n_aircraft
    queue = space.queue
    sampler = model.sampler()
    max_tk = 2

    seeds = np.random.SeedSequence(sim.seed).spawn(sim.replications)
    curve = np.zeros((model.config.max_aircraft + 1, max_tk + 1), dtype=np.int64)
    per_rep = []
    sum_tk = sum_tk2 = sum_nac = sum_empty = 0.0
    coerced = 0
    violations = 0
    trajectory: list[tuple[int, int, int, int]] = []

    for rep, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        controller.reset()
        pos = start_pos
        r_tk = r_tk2 = r_nac = r_empty = 0.0
        kept = 0
        for t in range(sim.steps):
            k = controller.decide(pos)
            if not model.feasible[pos, int(k)]:
                k = Decision.HOLD
                coerced += 1
            indptr, indices, cum = sampler[k]
            lo, hi = indptr[pos], indptr[pos + 1]
            u = rng.random() * cum[hi - 1]
            nxt = int(indices[lo + np.searchsorted(cum[lo:hi], u, side="right")])
            cleared = 1 if (k != Decision.HOLD and model.effective[pos, int(k)]) else 0
            tk = cleared - (int(nac[nxt]) - int(nac[pos]))
            if not 0 <= tk <= max_tk:
                violations += 1
                tk = min(max_tk, max(0, tk))
            if t >= sim.warmup:
                kept += 1
                r_tk += tk
                r_tk2 += tk * tk
                r_nac += nac[pos]
                r_empty += queue[pos] == 0
                curve[nac[pos], tk] += 1
                if record_trajectory and rep == 0:
                    trajectory.append((t, int(space.states[pos]), int(k), tk))
            pos = nxt
        per_rep.append(
            {
                "takeoff_mean": r_tk / kept,
                "takeoff_std": float(np.sqrt(max(0.0, r_tk2 / kept - (r_tk / kept) ** 2))),
                "mean_aircraft": r_nac / kept,
                "empty_queue_frac": r_empty / kept,
            }
        )
        sum_tk += r_tk
        sum_tk2 += r_tk2
        sum_nac += r_nac
        sum_empty += r_empty

    total = sim.replications * (sim.steps - sim.warmup)
    mean_tk = sum_tk / total
    return SimResult(
        steps=sim.steps,
        warmup=sim.warmup,
        seed=sim.seed,
        replications=sim.replications,
        takeoff_mean=mean_tk,
        takeoff_std=float(np.sqrt(max(0.0, sum_tk2 / total - mean_tk**2))),
        mean_aircraft=sum_nac / total,
        utilization=mean_tk / model.config.service_rate,
        empty_queue_frac=sum_empty / total,
        curve_counts=curve,
        per_replication=per_rep,
        coerced_decisions=coerced,
        conservation_violations=violations,
        trajectory=trajectory,
    )


@dataclass(frozen=True)
class CurveBin:
    """Throughput conditioned on one surface-count bin."""

    n_taxiing: int
    mean_takeoff_rate: float
    q1: float
    q3: float
    samples: int
    flagged: bool  # fewer than 100 samples


def congestion_curve(result: SimResult, min_samples: int = 100) -> list[CurveBin]:
    """Per-bin mean take-off rate with quartiles from the take-off histogram."""
    bins: list[CurveBin] = []
    for n in range(result.curve_counts.shape[0]):
        counts = result.curve_counts[n]
        total = int(counts.sum())
        if total == 0:
            continue
        mean = float((counts * np.arange(len(counts))).sum() / total)
        cum = np.cumsum(counts) / total
        q1 = float(np.searchsorted(cum, 0.25, side="left"))
        q3 = float(np.searchsorted(cum, 0.75, side="left"))
        bins.append(
            CurveBin(
                n_taxiing=n,
                mean_takeoff_rate=mean,
                q1=q1,
                q3=q3,
                samples=total,
                flagged=total < min_samples,
            )
        )
    return bins


def write_curve_csv(bins: list[CurveBin], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_taxiing", "mean_takeoff_rate", "q1", "q3", "samples", "flagged"])
        for b in bins:
            writer.writerow(
                [b.n_taxiing, repr(b.mean_takeoff_rate), repr(b.q1), repr(b.q3), b.samples, int(b.flagged)]
            )


@dataclass(frozen=True)
class ComparisonRow:
    """One matched-utilization comparison point."""

    utilization: float
    avg_taxiing_threshold: float
    avg_taxiing_optimal: float
    avg_taxiing_mls: float | None
    reduction_percent: float


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    optimal_points: list[ParetoPoint]
    threshold_points: list[tuple[int, StationaryMetrics]]
    mls_points: list[tuple[float, float, float]]  # (beta, utilization, avg taxiing)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "utilization",
                    "avg_taxiing_threshold",
                    "avg_taxiing_optimal",
                    "avg_taxiing_mls",
                    "reduction_percent",
                ]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        repr(r.utilization),
                        repr(r.avg_taxiing_threshold),
                        repr(r.avg_taxiing_optimal),
                        "" if r.avg_taxiing_mls is None else repr(r.avg_taxiing_mls),
                        repr(r.reduction_percent),
                    ]
                )


def _interp_curve(points: list[tuple[float, float]], u: float) -> float:
    pts = sorted(set(points))
    us = np.array([p[0] for p in pts])
    xs = np.array([p[1] for p in pts])
    return float(np.interp(u, us, xs))


def compare_policies(
    model: TransitionModel,
    beta_list: list[float],
    th_list: list[int],
    sim: SimConfig | None = None,
    include_idle_point: bool = True,
    mls_betas: list[float] | None = None,
) -> ComparisonTable:
    """Matched-utilization comparison of optimal, threshold, and MLS control.

    One row per threshold point that falls inside the optimal curve's
    utilization range; the optimal (and MLS, when simulated) values are
    linear interpolations at the threshold's utilization.  The idle point
    (utilization 0, empty surface) anchors the low end of the optimal
    curve unless disabled.
    """
    opt_points, failures = pareto_sweep(model, beta_list)
    if not opt_points:
        raise RuntimeError(f"no optimal points solved: {failures}")
    th_points = threshold_sweep(model, th_list)

    opt_curve = [(p.metrics.utilization, p.metrics.avg_taxiing) for p in opt_points]
    if include_idle_point:
        opt_curve.append((0.0, 0.0))
    opt_u = [u for u, _ in opt_curve]

    mls_points: list[tuple[float, float, float]] = []
    mls_curve: list[tuple[float, float]] = []
    if sim is not None and mls_betas:
        by_beta = {p.beta: p for p in opt_points}
        for b in mls_betas:
            point = by_beta.get(b)
            if point is None:
                continue
            controller = MLSController(model, point.policy)
            res = rollout(model, controller, sim)
            mls_points.append((b, res.utilization, res.mean_aircraft))
            mls_curve.append((res.utilization, res.mean_aircraft))

    lo, hi = min(opt_u), max(opt_u)
    th_in_range = [(t, m) for t, m in th_points if lo <= m.utilization <= hi]
    if not th_in_range:
        raise RuntimeError(
            "threshold and optimal utilization ranges do not overlap: "
            f"thresholds {[round(m.utilization, 3) for _, m in th_points]} vs [{lo:.3f}, {hi:.3f}]"
        )

    rows = []
    for t, m in th_in_range:
        opt_tax = _interp_curve(opt_curve, m.utilization)
        mls_tax = None
        if mls_curve:
            mls_us = [u for u, _ in mls_curve]
            if min(mls_us) <= m.utilization <= max(mls_us):
                mls_tax = _interp_curve(mls_curve, m.utilization)
        rows.append(
            ComparisonRow(
                utilization=m.utilization,
                avg_taxiing_threshold=m.avg_taxiing,
                avg_taxiing_optimal=opt_tax,
                avg_taxiing_mls=mls_tax,
                reduction_percent=100.0 * (m.avg_taxiing - opt_tax) / m.avg_taxiing,
            )
        )
    return ComparisonTable(
        rows=rows, optimal_points=opt_points, threshold_points=th_points, mls_points=mls_points
    )
