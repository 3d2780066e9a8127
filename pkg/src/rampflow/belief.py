"""Partial-information control: observations, Bayes filtering, and the
most-likely-state heuristic.

The controller sees only the taxiing-aircraft count and, per ramp, whether
a release would actually put an aircraft on the taxiway.  Observations are
a deterministic function of the state, so the observation channel is a 0/1
matrix; many states alias to one observation, which is what makes the
problem partially observable.  The heuristic controller tracks a belief
over states with the Bayes update and applies the full-information optimal
policy at the belief's mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .airport import AirportConfig, split_index
from .policy import Policy
from .transitions import Decision, TransitionModel

__all__ = [
    "BeliefFilter",
    "MLSController",
    "Observation",
    "ZeroLikelihoodError",
    "belief_update",
    "mls_decide",
    "observation_codes",
    "observation_index",
    "observation_matrix",
    "observe",
    "uniform_over_observation",
]

BELIEF_TOL = 1e-12


class ZeroLikelihoodError(RuntimeError):
    """The observation has zero probability under the propagated belief."""


@dataclass(frozen=True)
class Observation:
    """What the count-plus-availability channel reveals about a state."""

    n_ac: int
    ramp_free: tuple[int, ...]


def observe(idx: int, config: AirportConfig) -> Observation:
    """Observation emitted by a state.

    ``n_ac`` counts taxiway plus queue; ``ramp_free[r]`` is 1 when a
    release of ramp r would place an aircraft now, i.e. the entry sample is
    free and, under alternation, it is that ramp's turn.
    """
    turn, taxiway, queue = split_index(idx, config)
    bits = []
    for r, ramp in enumerate(config.ramps):
        free = not taxiway & (1 << (config.taxiway_len - ramp.entry_sample))
        if config.has_turn_bit:
            free = free and turn == r
        bits.append(1 if free else 0)
    return Observation(n_ac=taxiway.bit_count() + queue, ramp_free=tuple(bits))


def _nac_bits(config: AirportConfig) -> int:
    return max(1, config.max_aircraft.bit_length())


def observation_index(o: Observation, config: AirportConfig) -> int:
    """Injective integer code: count bits first, one ramp bit each after."""
    if not 0 <= o.n_ac <= config.max_aircraft:
        raise ValueError(f"n_ac {o.n_ac} outside [0, {config.max_aircraft}]")
    if len(o.ramp_free) != len(config.ramps):
        raise ValueError(f"expected {len(config.ramps)} ramp bits, got {len(o.ramp_free)}")
    code = o.n_ac
    for bit in o.ramp_free:
        code = (code << 1) | (1 if bit else 0)
    return code


def observation_space_size(config: AirportConfig) -> int:
    return 1 << (_nac_bits(config) + len(config.ramps))


def observation_codes(model: TransitionModel) -> np.ndarray:
    """Observation code of every state (the deterministic channel)."""
    return np.array(
        [
            observation_index(observe(int(s), model.config), model.config)
            for s in model.space.states
        ],
        dtype=np.int64,
    )


def observation_matrix(model: TransitionModel) -> sparse.csr_matrix:
    """0/1 channel matrix with one row per observation code, one column per
    state; every column carries exactly one 1."""
    codes = observation_codes(model)
    n = model.n_states
    return sparse.csr_matrix(
        (np.ones(n), (codes, np.arange(n))),
        shape=(observation_space_size(model.config), n),
    )


def uniform_over_observation(obs_code: int, obs_codes: np.ndarray) -> np.ndarray:
    """Uniform belief over the states consistent with an observation."""
    mask = obs_codes == obs_code
    count = int(mask.sum())
    if count == 0:
        raise ZeroLikelihoodError(f"no state emits observation code {obs_code}")
    return mask.astype(float) / count


class BeliefFilter:
    """Bayes filtering against a transition model and observation channel.

    ``obs_codes`` may be overridden (e.g. with the identity channel, one
    code per state) to study how much the observation aliasing costs.
    Propagation uses the executed decision's kernel row per state; where
    that decision is infeasible the HOLD row applies, matching how the
    simulator coerces infeasible decisions.
    """

    def __init__(self, model: TransitionModel, obs_codes: np.ndarray | None = None):
        self.model = model
        self.obs_codes = observation_codes(model) if obs_codes is None else np.asarray(obs_codes)
        self._propagators: dict[Decision, sparse.csr_matrix] = {}

    def propagator(self, k: Decision) -> sparse.csr_matrix:
        """Transposed effective kernel for decision k (HOLD where infeasible)."""
        k = Decision(k)
        if k not in self._propagators:
            mat = self.model.matrices[k]
            if k != Decision.HOLD:
                feas = self.model.feasible[:, int(k)]
                hold = self.model.matrices[Decision.HOLD]
                keep = sparse.diags(feas.astype(float))
                fill = sparse.diags((~feas).astype(float))
                mat = keep @ mat + fill @ hold
            self._propagators[k] = mat.T.tocsr()
        return self._propagators[k]

    def update(self, belief: np.ndarray, k: Decision, obs_code: int) -> np.ndarray:
        """One Bayes step: propagate through the kernel, keep the states
        consistent with the observation, renormalize."""
        propagated = self.propagator(k) @ belief
        posterior = np.where(self.obs_codes == obs_code, propagated, 0.0)
        total = posterior.sum()
        if total <= 0.0:
            raise ZeroLikelihoodError(
                f"observation code {obs_code} impossible under the current belief"
            )
        return posterior / total


def belief_update(
    belief: np.ndarray,
    k: Decision,
    obs_code: int,
    model: TransitionModel,
    obs_codes: np.ndarray | None = None,
) -> np.ndarray:
    """Functional one-shot form of :meth:`BeliefFilter.update`."""
    return BeliefFilter(model, obs_codes).update(belief, k, obs_code)


def mls_decide(belief: np.ndarray, policy: Policy, model: TransitionModel) -> Decision:
    """Decision of the full-information policy at the belief's mode.

    Ties pick the lowest state index.  If the chosen decision would place
    an aircraft in no state of the belief's support, fall back to HOLD.
    """
    mode = int(np.argmax(belief))
    k = policy.decision(mode)
    if k == Decision.HOLD:
        return k
    support = belief > BELIEF_TOL
    if not model.effective[support, int(k)].any():
        return Decision.HOLD
    return k


class MLSController:
    """Most-likely-state rollout controller.

    Keeps a belief over states, refreshes it from each new observation, and
    plays the full-information policy at the belief mode.  The initial
    belief is an indicator on the empty surface unless overridden, and is
    conditioned on the first observation.  A zero-likelihood observation
    resets the belief to uniform over the states consistent with it.
    """

    def __init__(
        self,
        model: TransitionModel,
        policy: Policy,
        obs_codes: np.ndarray | None = None,
        initial_belief: np.ndarray | None = None,
        record_trace: bool = False,
    ):
        self.model = model
        self.policy = policy
        self.filter = BeliefFilter(model, obs_codes)
        if initial_belief is None:
            initial_belief = np.zeros(model.n_states)
            initial_belief[model.space.empty_pos] = 1.0
        self._initial = initial_belief
        self.record_trace = record_trace
        self.trace: list[tuple[int, int, int]] = []  # (obs_code, mls_state_idx, decision)
        self.zero_likelihood_resets = 0
        self.reset()

    def reset(self) -> None:
        self.belief = self._initial.copy()
        self._last_decision: Decision | None = None
        self.trace = []
        self.zero_likelihood_resets = 0

    def decide(self, pos: int) -> Decision:
        obs_code = int(self.filter.obs_codes[pos])
        if self._last_decision is None:
            conditioned = np.where(self.filter.obs_codes == obs_code, self.belief, 0.0)
            total = conditioned.sum()
            if total > 0.0:
                self.belief = conditioned / total
            else:
                self.belief = uniform_over_observation(obs_code, self.filter.obs_codes)
                self.zero_likelihood_resets += 1
        else:
            try:
                self.belief = self.filter.update(self.belief, self._last_decision, obs_code)
            except ZeroLikelihoodError:
                self.belief = uniform_over_observation(obs_code, self.filter.obs_codes)
                self.zero_likelihood_resets += 1
        k = mls_decide(self.belief, self.policy, self.model)
        self._last_decision = k
        if self.record_trace:
            mode = int(np.argmax(self.belief))
            self.trace.append((obs_code, int(self.model.space.states[mode]), int(k)))
        return k
