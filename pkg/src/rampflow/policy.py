"""Optimal gate-release policies via the long-run average-cost linear program.

The decision variables are occupation frequencies y[i, k], the stationary
probability of sitting in state i and choosing decision k.  Minimizing
expected per-step cost subject to flow balance, unit mass, and
nonnegativity yields the optimal stationary policy; a deterministic policy
is read off the support of y.

Two interchangeable solvers sit behind the same contract: small problems
(and the statistical-fairness constraint) go to the HiGHS dual simplex,
large ones to relative value iteration whose result is certified against
the linear program by an explicit duality gap: any (gain, bias) pair with
nonnegative reduced costs is dual feasible, so the gap between the
measure's cost and that gain bounds the distance from the true optimum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .airport import AirportConfig, Fairness, split_index
from .markov import closed_loop_matrix, stationary_on_class, terminal_classes
from .transitions import Decision, TransitionModel

__all__ = [
    "CostParams",
    "OccupationMeasure",
    "Policy",
    "PolicyKind",
    "LPSolveError",
    "ParetoPoint",
    "StationaryMetrics",
    "expected_takeoffs_by_queue",
    "extract_policy",
    "pareto_sweep",
    "solve_average_cost_lp",
    "state_cost",
    "stationary_metrics",
]

MASS_TOL = 1e-9
BALANCE_TOL = 1e-8
NONNEG_TOL = 1e-12
DUALITY_GAP_TOL = 1e-7

# Occupation mass below which a state counts as transient during extraction.
RECURRENT_TOL = 1e-11


class LPSolveError(RuntimeError):
    """The linear program failed to solve to optimality."""


@dataclass(frozen=True)
class CostParams:
    """Weight of runway starvation against taxiing aircraft.

    ``beta`` is the cost of one runway-idle step measured in
    aircraft-steps; the per-state cost is the number of aircraft on the
    surface plus beta when the runway queue is empty.
    """

    beta: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")


def state_cost(idx: int, beta: CostParams | float, config: AirportConfig) -> float:
    """Per-step cost of a state: aircraft count plus the starvation penalty."""
    b = beta.beta if isinstance(beta, CostParams) else float(beta)
    _, taxiway, queue = split_index(idx, config)
    return taxiway.bit_count() + queue + (b if queue == 0 else 0.0)


def cost_vector(model: TransitionModel, beta: CostParams | float) -> np.ndarray:
    b = beta.beta if isinstance(beta, CostParams) else float(beta)
    space = model.space
    return space.n_aircraft + b * (space.queue == 0)


def expected_takeoffs_by_queue(config: AirportConfig) -> np.ndarray:
    """E[take-offs | queue occupancy] for occupancies 0..capacity."""
    c1, c2 = config.clear_prob_1, config.clear_prob_2
    out = np.empty(config.queue_capacity + 1)
    out[0] = 0.0
    if config.queue_capacity >= 1:
        out[1] = 1.0 - (1.0 - c1) * (1.0 - c2)
    out[2:] = c1 + c2
    return out


class PolicyKind(Enum):
    FULL_STATE = "full_state"
    THRESHOLD = "threshold"
    MLS = "mls"


@dataclass
class Policy:
    """Deterministic stationary mapping from state position to decision."""

    decisions: np.ndarray
    kind: PolicyKind
    randomized_states: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def decision(self, pos: int) -> Decision:
        return Decision(int(self.decisions[pos]))

    def __len__(self) -> int:
        return len(self.decisions)


@dataclass(frozen=True)
class StationaryMetrics:
    """Long-run averages of a stationary control law."""

    avg_taxiing: float
    utilization: float
    expected_cost: float
    takeoff_rate: float


@dataclass
class OccupationMeasure:
    """Solved occupation frequencies plus the solver's dual information."""

    y: np.ndarray  # (n_states, n_decisions); infeasible pairs stay zero
    model: TransitionModel
    cost: CostParams
    objective: float
    duals: np.ndarray | None = None
    duality_gap: float | None = None

    def mass(self) -> float:
        return float(self.y.sum())

    def state_mass(self) -> np.ndarray:
        return self.y.sum(axis=1)

    def balance_residual(self) -> np.ndarray:
        """Per-state inflow/outflow mismatch of the measure."""
        out = self.state_mass().copy()
        for k in self.model.decisions:
            out -= self.model.matrices[k].T @ self.y[:, int(k)]
        return out

    def validate(self) -> list[str]:
        """Invariant violations; empty when the measure is clean."""
        problems = []
        if abs(self.mass() - 1.0) > MASS_TOL:
            problems.append(f"total mass {self.mass()!r} != 1")
        if self.y.min() < -NONNEG_TOL:
            problems.append(f"negative occupation frequency {self.y.min()!r}")
        resid = np.abs(self.balance_residual()).max()
        if resid > BALANCE_TOL:
            problems.append(f"balance residual {resid!r} above {BALANCE_TOL}")
        if self.duality_gap is not None and self.duality_gap > DUALITY_GAP_TOL:
            problems.append(f"duality gap {self.duality_gap!r} above {DUALITY_GAP_TOL}")
        return problems


def _fairness_for(model: TransitionModel, fairness: Fairness | None) -> Fairness:
    mode = model.config.fairness if fairness is None else fairness
    if mode is Fairness.ALTERNATION and len(model.config.ramps) == 2 and not model.config.has_turn_bit:
        raise ValueError("alternation fairness needs a kernel built with a turn bit")
    if mode is Fairness.STATISTICAL and len(model.config.ramps) < 2:
        raise ValueError("statistical fairness needs two ramps")
    return mode


def solve_average_cost_lp(
    model: TransitionModel,
    beta: CostParams | float,
    fairness: Fairness | None = None,
    method: str = "auto",
    warm_start: np.ndarray | None = None,
) -> OccupationMeasure:
    """Minimize the expected per-step cost over occupation frequencies.

    Flow balance is imposed per state and the frequencies sum to one; under
    statistical fairness an extra equality forces both ramps to be served
    equally often.  ``method`` picks the solver: "lp" is the HiGHS dual
    simplex (always used for statistical fairness), "vi" is relative value
    iteration with an explicit duality-gap certificate, "auto" chooses by
    problem size.  Both produce a validated measure with dual values;
    ``warm_start`` seeds the value iteration with a bias vector (typically
    the duals of a neighboring solve).
    """
    cost = beta if isinstance(beta, CostParams) else CostParams(float(beta))
    mode = _fairness_for(model, fairness)
    if method not in ("auto", "lp", "vi"):
        raise ValueError(f"unknown method {method!r}")
    if method == "vi" and mode is Fairness.STATISTICAL:
        raise ValueError("statistical fairness requires the lp method")
    if method == "auto":
        method = "lp" if (mode is Fairness.STATISTICAL or model.n_states <= 2048) else "vi"
    if method == "lp":
        return _solve_lp(model, cost, mode)
    return _solve_value_iteration(model, cost, h0=warm_start)


def _solve_lp(model: TransitionModel, cost: CostParams, mode: Fairness) -> OccupationMeasure:
    n = model.n_states

    var_pos: list[np.ndarray] = []
    var_dec: list[Decision] = []
    blocks = []
    for k in model.decisions:
        idx = np.flatnonzero(model.effective[:, int(k)])
        var_pos.append(idx)
        var_dec.append(k)
        select = sparse.csr_matrix(
            (np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n)
        )
        blocks.append((select - model.matrices[k][idx, :]).T)
    a_balance = sparse.hstack(blocks, format="csr")
    nvar = a_balance.shape[1]

    rows = [a_balance, sparse.csr_matrix(np.ones((1, nvar)))]
    b_eq = np.zeros(n + 1)
    b_eq[n] = 1.0
    if mode is Fairness.STATISTICAL:
        fair = np.zeros(nvar)
        offset = 0
        for idx, k in zip(var_pos, var_dec):
            if k == Decision.CLEAR_RAMP_1:
                fair[offset : offset + len(idx)] = 1.0
            elif k == Decision.CLEAR_RAMP_2:
                fair[offset : offset + len(idx)] = -1.0
            offset += len(idx)
        rows.append(sparse.csr_matrix(fair))
        b_eq = np.append(b_eq, 0.0)
    a_eq = sparse.vstack(rows, format="csr")

    costs = cost_vector(model, cost)
    c = np.concatenate([costs[idx] for idx in var_pos])

    res = linprog(
        c,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if res.status != 0:
        raise LPSolveError(f"linprog status {res.status}: {res.message}")
    x = np.asarray(res.x)
    if x.min() < -1e-9:
        raise LPSolveError(f"solution has a structurally negative entry: {x.min()!r}")
    x = np.maximum(x, 0.0)  # sub-tolerance negatives are nonbasic zeros

    y = np.zeros((n, len(model.decisions)))
    offset = 0
    for idx, k in zip(var_pos, var_dec):
        y[idx, int(k)] = x[offset : offset + len(idx)]
        offset += len(idx)

    duals = None
    gap = None
    marginals = getattr(res.eqlin, "marginals", None)
    if marginals is not None and np.all(np.isfinite(marginals[: n + 1])):
        duals = np.asarray(marginals[:n], dtype=float)
        gap = abs(res.fun - float(marginals[n]))

    measure = OccupationMeasure(
        y=y, model=model, cost=cost, objective=float(res.fun), duals=duals, duality_gap=gap
    )
    problems = measure.validate()
    if problems:
        raise LPSolveError("solved measure violates invariants: " + "; ".join(problems))
    return measure


def _certificate(model, costs, h):
    """Greedy policy, its cheapest recurrent class, and the duality gap.

    With reduced costs r[i,k] = C[i] + (P_k h)[i] - h[i] - g, choosing
    g = min(C + min_k P_k h - h) makes every r nonnegative, so (g, h) is
    feasible for the dual of the occupation LP and primal - g bounds the
    suboptimality of the greedy policy's best class.
    """
    n = model.n_states
    greedy = np.zeros(n, dtype=np.int64)
    best_v = None
    for k in model.decisions:
        v = model.matrices[k] @ h
        bad = ~model.effective[:, int(k)]
        if bad.any():
            v = np.where(bad, np.inf, v)
        if best_v is None:
            best_v = v
        else:
            better = v < best_v - 1e-12
            greedy[better] = int(k)
            best_v = np.where(better, v, best_v)
    g_cert = float((costs + best_v - h).min())

    chain, _ = closed_loop_matrix(model, greedy)
    primal, pick = np.inf, None
    for members in terminal_classes(chain):
        pi_local = stationary_on_class(chain, members)
        val = float(pi_local @ costs[members])
        if val < primal - 1e-15:
            primal, pick = val, (members, pi_local)
    return greedy, pick, primal, primal - g_cert


def _solve_value_iteration(
    model: TransitionModel,
    cost: CostParams,
    h0: np.ndarray | None = None,
    max_iters: int = 100_000,
) -> OccupationMeasure:
    """Relative value iteration with an LP-optimality certificate.

    Iterates the damped one-step operator until the greedy policy's best
    recurrent class costs no more than the dual bound derived from the
    current bias, i.e. until the duality gap closes.  The damping keeps the
    iteration convergent on periodic chains without changing the optimum.
    """
    n = model.n_states
    costs = cost_vector(model, cost)
    infeas = {k: ~model.effective[:, int(k)] for k in model.decisions}
    tau = 0.9

    h = np.zeros(n) if h0 is None else np.asarray(h0, dtype=float).copy()
    best = None  # (gap, h, greedy, members, pi_local, primal)
    check_at = 50
    for it in range(1, max_iters + 1):
        vals = []
        for k in model.decisions:
            v = model.matrices[k] @ h
            if infeas[k].any():
                v = np.where(infeas[k], np.inf, v)
            vals.append(v)
        h_next = tau * (costs + np.minimum.reduce(vals)) + (1.0 - tau) * h
        h_next -= h_next[0]
        delta = np.abs(h_next - h).max()
        h = h_next

        if it >= check_at or delta < 1e-14:
            greedy, pick, primal, gap = _certificate(model, costs, h)
            if best is None or gap < best[0]:
                best = (gap, h.copy(), greedy, pick[0], pick[1], primal)
            if gap <= 0.5 * DUALITY_GAP_TOL or delta < 1e-14:
                break
            check_at = it + 50
    gap, h, greedy, members, pi_local, primal = best
    if gap > DUALITY_GAP_TOL:
        raise LPSolveError(f"value iteration failed to certify optimality (gap {gap!r})")

    y = np.zeros((n, len(model.decisions)))
    y[members, greedy[members]] = pi_local
    measure = OccupationMeasure(
        y=y, model=model, cost=cost, objective=primal, duals=h, duality_gap=gap
    )
    problems = measure.validate()
    if problems:
        raise LPSolveError("solved measure violates invariants: " + "; ".join(problems))
    return measure


def extract_policy(measure: OccupationMeasure) -> Policy:
    """Read the deterministic policy off the solved occupation measure.

    Recurrent states take their positive-frequency decision; rows carrying
    mass on several decisions resolve to HOLD (conservative) and are
    flagged.  Transient states get a one-step greedy choice on the balance
    duals, tie-broken toward HOLD then the lower ramp.
    """
    model = measure.model
    n = model.n_states
    y = np.maximum(measure.y, 0.0)
    state_mass = y.sum(axis=1)
    decisions = np.zeros(n, dtype=np.int8)
    randomized = []

    recurrent = state_mass > RECURRENT_TOL
    for pos in np.flatnonzero(recurrent):
        row = y[pos]
        support = [k for k in model.decisions if row[int(k)] > 1e-6 * state_mass[pos]]
        if not support:  # all frequency is numerical dust; treat as transient
            recurrent[pos] = False
            continue
        if len(support) == 1:
            decisions[pos] = int(support[0])
        else:
            randomized.append(pos)
            decisions[pos] = int(Decision.HOLD)

    transient = np.flatnonzero(~recurrent)
    if len(transient) and measure.duals is not None:
        h = measure.duals
        lookahead = {k: model.matrices[k] @ h for k in model.decisions}
        for pos in transient:
            best_k, best_v = Decision.HOLD, np.inf
            for k in model.decisions:  # enumeration order encodes the tie-break
                if not model.effective[pos, int(k)]:
                    continue
                v = lookahead[k][pos]
                if v < best_v - 1e-12:
                    best_k, best_v = k, v
            decisions[pos] = int(best_k)
    elif len(transient) and measure.duals is None:
        warnings.warn("no dual values available; transient states default to HOLD")

    return Policy(
        decisions=decisions,
        kind=PolicyKind.FULL_STATE,
        randomized_states=np.asarray(randomized, dtype=np.int64),
    )


def metrics_from_state_weights(
    model: TransitionModel, weights: np.ndarray, beta: CostParams | float
) -> StationaryMetrics:
    """Stationary metrics of a distribution over states (decisions marginalized)."""
    b = beta.beta if isinstance(beta, CostParams) else float(beta)
    space = model.space
    tk = expected_takeoffs_by_queue(model.config)[space.queue]
    rate = float(weights @ tk)
    return StationaryMetrics(
        avg_taxiing=float(weights @ space.n_aircraft),
        utilization=rate / model.config.service_rate,
        expected_cost=float(weights @ space.n_aircraft + b * weights[space.queue == 0].sum()),
        takeoff_rate=rate,
    )


def stationary_metrics(measure: OccupationMeasure) -> StationaryMetrics:
    """Long-run averages implied by a solved occupation measure."""
    return metrics_from_state_weights(
        measure.model, np.maximum(measure.y, 0.0).sum(axis=1), measure.cost
    )


@dataclass
class ParetoPoint:
    beta: float
    metrics: StationaryMetrics
    policy: Policy
    measure: OccupationMeasure


def pareto_sweep(
    model: TransitionModel,
    beta_list: list[float],
    fairness: Fairness | None = None,
) -> tuple[list[ParetoPoint], dict[float, str]]:
    """One LP solve per beta; returns the non-dominated trade-off points.

    Duplicate (utilization, avg_taxiing) pairs are dropped and so are
    dominated points; per-beta solver failures are collected instead of
    aborting the sweep.
    """
    if any(b <= 0 for b in beta_list):
        raise ValueError("betas must be positive")
    if sorted(beta_list) != list(beta_list):
        raise ValueError("betas must be ascending")

    raw: list[ParetoPoint] = []
    failures: dict[float, str] = {}
    warm: np.ndarray | None = None
    for b in beta_list:
        try:
            measure = solve_average_cost_lp(model, b, fairness, warm_start=warm)
            if measure.duals is not None:
                warm = measure.duals
            raw.append(
                ParetoPoint(
                    beta=b,
                    metrics=stationary_metrics(measure),
                    policy=extract_policy(measure),
                    measure=measure,
                )
            )
        except (LPSolveError, ValueError) as exc:
            failures[b] = str(exc)

    seen: set[tuple[float, float]] = set()
    points: list[ParetoPoint] = []
    for p in raw:
        key = (round(p.metrics.utilization, 12), round(p.metrics.avg_taxiing, 12))
        if key in seen:
            continue
        seen.add(key)
        points.append(p)
    keep = []
    for p in points:
        dominated = any(
            q is not p
            and q.metrics.utilization >= p.metrics.utilization
            and q.metrics.avg_taxiing <= p.metrics.avg_taxiing
            and (
                q.metrics.utilization > p.metrics.utilization
                or q.metrics.avg_taxiing < p.metrics.avg_taxiing
            )
            for q in points
        )
        if not dominated:
            keep.append(p)
    return keep, failures
