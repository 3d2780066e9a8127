"""Benchmark threshold (windowing) release policy and closed-loop evaluation.

The threshold law releases an aircraft only while the surface count is
strictly below a fixed threshold, alternating ramps when two are present.
Substituting any stationary policy into the kernel gives a Markov chain
whose stationary distribution is solved directly, so the benchmark (and any
extracted policy) can be evaluated without simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .airport import AirportConfig, split_index
from .markov import closed_loop_matrix, stationary_distribution
from .policy import (
    CostParams,
    Policy,
    PolicyKind,
    StationaryMetrics,
    metrics_from_state_weights,
)
from .transitions import Decision, TransitionModel

__all__ = [
    "ChainEvaluation",
    "ThresholdParams",
    "evaluate_policy_chain",
    "evaluate_threshold_chain",
    "threshold_decide",
    "threshold_policy",
    "threshold_sweep",
]


@dataclass(frozen=True)
class ThresholdParams:
    """Surface-count ceiling for the windowing policy."""

    threshold: int

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")


def threshold_decide(idx: int, th: ThresholdParams | int, config: AirportConfig) -> Decision:
    """Windowing rule: release the active ramp iff the surface count is
    strictly below the threshold; otherwise hold.

    The rule sees only the aircraft count, never positions.  With two
    alternating ramps the release goes to the ramp whose turn it is; when
    that ramp's entry sample happens to be blocked the attempt still spends
    the turn without putting an aircraft on the taxiway (the kernel's
    blind-release rows).  Two-ramp configs therefore need a turn bit.
    """
    t = th.threshold if isinstance(th, ThresholdParams) else int(th)
    turn, taxiway, queue = split_index(idx, config)
    if len(config.ramps) == 2 and not config.has_turn_bit:
        raise ValueError("two-ramp threshold policy requires an alternation (turn-bit) config")
    if taxiway.bit_count() + queue >= t:
        return Decision.HOLD
    if len(config.ramps) == 1:
        # single ramp: a blocked release is indistinguishable from a hold
        bit = 1 << (config.taxiway_len - config.ramps[0].entry_sample)
        if taxiway & bit:
            return Decision.HOLD
        return Decision.CLEAR_RAMP_1
    return Decision(turn + 1)


def threshold_policy(model: TransitionModel, th: ThresholdParams | int) -> Policy:
    """Vectorized threshold policy over the model's state space."""
    t = th.threshold if isinstance(th, ThresholdParams) else int(th)
    if not 1 <= t <= model.config.max_aircraft:
        raise ValueError(f"threshold {t} outside [1, {model.config.max_aircraft}]")
    space = model.space
    decisions = np.zeros(space.n, dtype=np.int8)
    below = space.n_aircraft < t
    for r in range(len(model.config.ramps)):
        k = Decision(r + 1)
        active = below & model.feasible[:, int(k)]
        decisions[active] = int(k)
    return Policy(decisions=decisions, kind=PolicyKind.THRESHOLD)


@dataclass
class ChainEvaluation:
    """Analytic closed-loop evaluation of a stationary policy."""

    metrics: StationaryMetrics
    distribution: np.ndarray
    coerced_states: int


def evaluate_policy_chain(
    model: TransitionModel,
    policy: Policy,
    beta: CostParams | float = 0.0,
    start: int | None = None,
) -> ChainEvaluation:
    """Analytic stationary metrics of the chain closed by a policy."""
    chain, coerced = closed_loop_matrix(model, policy.decisions)
    start_pos = model.space.empty_pos if start is None else start
    pi = stationary_distribution(chain, start_pos)
    return ChainEvaluation(
        metrics=metrics_from_state_weights(model, pi, beta),
        distribution=pi,
        coerced_states=coerced,
    )


def evaluate_threshold_chain(
    model: TransitionModel, th: ThresholdParams | int, beta: CostParams | float = 0.0
) -> StationaryMetrics:
    """Stationary metrics of the threshold policy's closed loop."""
    return evaluate_policy_chain(model, threshold_policy(model, th), beta).metrics


def threshold_sweep(
    model: TransitionModel, th_list: list[int], beta: CostParams | float = 0.0
) -> list[tuple[int, StationaryMetrics]]:
    """Evaluate ascending thresholds; utilization must come out non-decreasing."""
    if sorted(th_list) != list(th_list):
        raise ValueError("thresholds must be ascending")
    out = []
    for t in th_list:
        out.append((t, evaluate_threshold_chain(model, t, beta)))
    return out
