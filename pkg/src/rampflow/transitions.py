"""Sparse one-step transition kernel of the departure process.

Each time step composes three sub-transitions in a fixed order: take-offs
from the runway queue, then the decided taxi clearance, then forward moves.
During the move phase the head of every platoon advances one sample (or
into the runway queue from the last sample, when it has room) with
probability m, and the aircraft queued behind the head advance with it, so
platoons keep pace with free-flowing traffic and nobody overtakes.

A clearance places the aircraft on the ramp's entry sample before the move
phase, provided that sample is free.  Under two-ramp alternation a release
decision is allowed whenever it is that ramp's turn, whether or not the
entry is blocked: the turn advances either way, but a blocked attempt puts
nothing on the taxiway.  This is what makes a count-only release rule pay
for its blindness, while a position-aware policy (see the ``effective``
mask) never spends a turn on a blocked ramp.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import sparse

from .airport import AirportConfig, StateSpace, join_index

__all__ = [
    "Decision",
    "KernelReport",
    "TransitionModel",
    "build_transitions",
    "export_kernel_csv",
    "takeoff_distribution",
    "validate_kernel",
]

ROW_SUM_TOL = 1e-12


class Decision(IntEnum):
    """Per-step gate-release decision."""

    HOLD = 0
    CLEAR_RAMP_1 = 1
    CLEAR_RAMP_2 = 2


def takeoff_distribution(queue: int, c1: float, c2: float) -> dict[int, float]:
    """Exact distribution of the number of take-offs in one step.

    Two independent clearance coin flips with success probabilities c1 and
    c2 are drawn each step; the take-off count is the number of successes
    capped by the queue occupancy.  Zero-probability outcomes are omitted.
    """
    if not 0.0 <= c1 <= 1.0 or not 0.0 <= c2 <= 1.0:
        raise ValueError(f"clearance probabilities must be in [0, 1], got {c1}, {c2}")
    if queue < 0:
        raise ValueError(f"queue must be >= 0, got {queue}")
    dist: dict[int, float] = {}
    for x1, p1 in ((0, 1.0 - c1), (1, c1)):
        for x2, p2 in ((0, 1.0 - c2), (1, c2)):
            p = p1 * p2
            if p > 0.0:
                n = min(queue, x1 + x2)
                dist[n] = dist.get(n, 0.0) + p
    return dist


class TransitionModel:
    """Sparse kernel P(j | i, k) over dense state positions.

    ``matrices[k]`` is a CSR matrix whose row i is the successor
    distribution for decision k; rows of infeasible (i, k) pairs are empty
    and masked out in ``feasible``.  ``effective`` additionally marks the
    release decisions that actually put an aircraft on the taxiway (entry
    sample free); under alternation a feasible but ineffective release is a
    blind attempt that only advances the turn.
    """

    def __init__(
        self,
        space: StateSpace,
        decisions: list[Decision],
        feasible: np.ndarray,
        effective: np.ndarray,
        matrices: dict[Decision, sparse.csr_matrix],
    ):
        self.space = space
        self.config = space.config
        self.decisions = decisions
        self.feasible = feasible
        self.effective = effective
        self.matrices = matrices
        self._sampler: dict[Decision, tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    @property
    def n_states(self) -> int:
        return self.space.n

    def row(self, pos: int, k: Decision) -> tuple[np.ndarray, np.ndarray]:
        """Successor positions and probabilities for a feasible (state, decision)."""
        m = self.matrices[Decision(k)]
        lo, hi = m.indptr[pos], m.indptr[pos + 1]
        return m.indices[lo:hi], m.data[lo:hi]

    def feasible_decisions(self, pos: int) -> list[Decision]:
        return [k for k in self.decisions if self.feasible[pos, int(k)]]

    def nnz(self) -> int:
        return int(sum(m.nnz for m in self.matrices.values()))

    def sampler(self) -> dict[Decision, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per-decision (indptr, indices, cumulative-probability) arrays for rollouts."""
        if self._sampler is None:
            out = {}
            for k, m in self.matrices.items():
                cum = np.copy(m.data)
                for i in range(self.n_states):
                    lo, hi = m.indptr[i], m.indptr[i + 1]
                    if hi > lo:
                        cum[lo:hi] = np.cumsum(cum[lo:hi])
                out[k] = (m.indptr, m.indices, cum)
            self._sampler = out
        return self._sampler


def _move_outcomes(
    taxiway: int, queue: int, n: int, b_cap: int, m: float
) -> dict[tuple[int, int], float]:
    """Distribution over (taxiway word, queue) after the per-step move phase.

    The occupancy is split into maximal platoons; each platoon whose head
    has a free destination advances as a unit with probability m.  The
    platoon abutting the runway queue feeds it one aircraft per advance.
    """
    runs: list[tuple[int, int]] = []  # (head sample, length), head nearest runway
    s = n
    while s >= 1:
        if taxiway & (1 << (n - s)):
            head = s
            length = 1
            s -= 1
            while s >= 1 and taxiway & (1 << (n - s)):
                length += 1
                s -= 1
            runs.append((head, length))
        else:
            s -= 1
    movable = [r for r in runs if r[0] < n or queue < b_cap]

    out: dict[tuple[int, int], float] = {}
    for mask in range(1 << len(movable)):
        tw, q, p = taxiway, queue, 1.0
        for b, (head, length) in enumerate(movable):
            if mask >> b & 1:
                p *= m
                run_bits = ((1 << length) - 1) << (n - head)
                tw &= ~run_bits
                if head == n:
                    q += 1
                    if length > 1:
                        tw |= ((1 << (length - 1)) - 1) << (n - head)
                else:
                    tw |= run_bits >> 1
            else:
                p *= 1.0 - m
        if p > 0.0:
            out[(tw, q)] = out.get((tw, q), 0.0) + p
    return out


def build_transitions(config: AirportConfig) -> TransitionModel:
    """Generate the full sparse kernel for a config.

    Feasibility: HOLD everywhere; under two-ramp alternation, releasing
    ramp r whenever it is r's turn (the turn advances on every release
    decision, and the aircraft appears on the entry sample only if that
    sample is free); otherwise releasing ramp r only when its entry sample
    is free.  The cleared aircraft takes part in the same step's move
    phase.
    """
    space = StateSpace(config)
    n = config.taxiway_len
    b_cap = config.queue_capacity
    m_prob = config.move_prob
    c1, c2 = config.clear_prob_1, config.clear_prob_2
    n_ramps = len(config.ramps)

    decisions = [Decision.HOLD, Decision.CLEAR_RAMP_1]
    if n_ramps == 2:
        decisions.append(Decision.CLEAR_RAMP_2)

    feasible = np.zeros((space.n, len(decisions)), dtype=bool)
    effective = np.zeros((space.n, len(decisions)), dtype=bool)
    feasible[:, Decision.HOLD] = True
    effective[:, Decision.HOLD] = True
    for r in range(n_ramps):
        k = Decision(r + 1)
        if config.has_turn_bit:
            feasible[:, int(k)] = space.turn == r
        else:
            feasible[:, int(k)] = space.entry_free[:, r]
        effective[:, int(k)] = feasible[:, int(k)] & space.entry_free[:, r]

    takeoff_cache = {q: takeoff_distribution(q, c1, c2) for q in range(b_cap + 1)}
    move_cache: dict[tuple[int, int], dict[tuple[int, int], float]] = {}
    entry_bits = [1 << (n - ramp.entry_sample) for ramp in config.ramps]

    pos_lookup = np.full(config.num_codes, -1, dtype=np.int64)
    pos_lookup[space.states] = np.arange(space.n)

    matrices: dict[Decision, sparse.csr_matrix] = {}
    for k in decisions:
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        clearing = k != Decision.HOLD
        for pos in range(space.n):
            if not feasible[pos, int(k)]:
                continue
            tw0 = int(space.taxiway[pos])
            q0 = int(space.queue[pos])
            turn0 = int(space.turn[pos])
            turn1 = turn0 ^ 1 if (clearing and config.has_turn_bit) else turn0
            places = clearing and effective[pos, int(k)]
            acc: dict[tuple[int, int], float] = {}
            for n_off, p_off in takeoff_cache[q0].items():
                tw1 = tw0 | entry_bits[int(k) - 1] if places else tw0
                key = (tw1, q0 - n_off)
                moved = move_cache.get(key)
                if moved is None:
                    moved = _move_outcomes(key[0], key[1], n, b_cap, m_prob)
                    move_cache[key] = moved
                for outcome, p_move in moved.items():
                    acc[outcome] = acc.get(outcome, 0.0) + p_off * p_move
            for (tw2, q2), p in sorted(acc.items()):
                j = join_index(turn1, tw2, q2, config)
                rows.append(pos)
                cols.append(int(pos_lookup[j]))
                vals.append(p)
        matrices[k] = sparse.csr_matrix(
            (vals, (rows, cols)), shape=(space.n, space.n), dtype=np.float64
        )

    return TransitionModel(space, decisions, feasible, effective, matrices)


@dataclass
class KernelReport:
    """Outcome of the structural checks on a built kernel."""

    nnz: int
    n_rows: int
    max_row_sum_error: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_kernel(model: TransitionModel) -> KernelReport:
    """Check row-stochasticity, capacity bounds, and per-step count changes.

    Returns a report whose ``violations`` list is empty when the kernel is
    structurally sound.
    """
    space = model.space
    violations: list[str] = []
    max_err = 0.0
    n_rows = 0
    for k in model.decisions:
        mat = model.matrices[k]
        if (mat.data <= 0.0).any():
            violations.append(f"decision {int(k)}: nonpositive probabilities present")
        row_sums = np.asarray(mat.sum(axis=1)).ravel()
        for pos in range(space.n):
            if not model.feasible[pos, int(k)]:
                if mat.indptr[pos] != mat.indptr[pos + 1]:
                    violations.append(f"infeasible pair ({space.states[pos]}, {int(k)}) has entries")
                continue
            n_rows += 1
            err = abs(row_sums[pos] - 1.0)
            max_err = max(max_err, err)
            if err > ROW_SUM_TOL:
                violations.append(
                    f"row ({space.states[pos]}, {int(k)}) sums to {row_sums[pos]!r}"
                )
        coo = mat.tocoo()
        d_nac = space.n_aircraft[coo.col] - space.n_aircraft[coo.row]
        lo, hi = (-2, 1) if k != Decision.HOLD else (-2, 0)
        bad = (d_nac < lo) | (d_nac > hi)
        if bad.any():
            i0 = int(np.argmax(bad))
            violations.append(
                f"decision {int(k)}: aircraft count change {int(d_nac[i0])} outside "
                f"[{lo}, {hi}] at row {space.states[coo.row[i0]]}"
            )
        if (space.queue[coo.col] > space.config.queue_capacity).any():
            violations.append(f"decision {int(k)}: successor queue above capacity")
    return KernelReport(
        nnz=model.nnz(), n_rows=n_rows, max_row_sum_error=max_err, violations=violations
    )


def export_kernel_csv(model: TransitionModel, path) -> None:
    """Write the kernel as (i, k, j, p) rows in deterministic order."""
    space = model.space
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "k", "j", "p"])
        for pos in range(space.n):
            for k in model.decisions:
                if not model.feasible[pos, int(k)]:
                    continue
                cols, probs = model.row(pos, k)
                for c, p in zip(cols, probs):
                    writer.writerow([int(space.states[pos]), int(k), int(space.states[c]), repr(float(p))])
