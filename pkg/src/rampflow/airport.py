"""Airport topology and the bit-coded surface state.

A surface state packs, most significant first: an optional ramp-turn bit,
one occupancy bit per taxiway sample (sample 1 first), and the runway-queue
count in the low bits.  Encoding a state is just reading that bit string as
an integer, so states and their indices are interchangeable everywhere else
in the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "AirportConfig",
    "Fairness",
    "InvalidStateError",
    "RampSpec",
    "StateSpace",
    "SurfaceState",
    "aircraft_count",
    "decode",
    "encode",
    "enumerate_states",
    "join_index",
    "lga_config",
    "num_states",
    "split_index",
]


class Fairness(Enum):
    """Ramp-sharing discipline for two-ramp airports."""

    ALTERNATION = "Alternation"
    STATISTICAL = "Statistical"
    NONE = "None"


class InvalidStateError(ValueError):
    """A state index falls outside the valid coded subspace."""


@dataclass(frozen=True)
class RampSpec:
    """A ramp (spot) feeding the taxiway.

    ``entry_sample`` is the taxiway sample an aircraft occupies the moment
    its taxi clearance is issued.  Ramp 1 is the ramp farthest from the
    runway, so for two-ramp layouts ``entry_sample`` of ramp 1 is strictly
    smaller than that of ramp 2.
    """

    name: str
    entry_sample: int


@dataclass(frozen=True)
class AirportConfig:
    """Topology and stochastic parameters of a single-runway airport.

    Parameters
    ----------
    taxiway_len : int
        Number of spatial samples on the taxiway (N), each covering
        ``sample_len_m`` meters.
    ramps : tuple of RampSpec
        One or two ramps, ordered with ramp 1 (the farther one) first.
    queue_capacity : int
        Maximum number of aircraft in the runway buffer (B_cap).
    move_prob : float
        Probability that a taxiing aircraft advances one sample per step (m).
    clear_prob_1, clear_prob_2 : float
        Success probabilities of the two take-off clearance coin flips per
        step (c1, c2); the step's take-off count is the number of successes,
        capped by the queue occupancy.
    sample_len_m, step_seconds : float
        Physical size of one spatial sample and one time step.  Metadata
        only; the dynamics are expressed in samples and steps.
    fairness : Fairness
        Ramp-sharing discipline.  ALTERNATION adds a turn bit to the state.
    """

    taxiway_len: int
    ramps: tuple[RampSpec, ...]
    queue_capacity: int
    move_prob: float
    clear_prob_1: float
    clear_prob_2: float
    sample_len_m: float = 200.0
    step_seconds: float = 60.0
    fairness: Fairness = Fairness.ALTERNATION

    def __post_init__(self) -> None:
        if self.taxiway_len < 1:
            raise ValueError(f"taxiway_len must be >= 1, got {self.taxiway_len}")
        object.__setattr__(self, "ramps", tuple(self.ramps))
        if not 1 <= len(self.ramps) <= 2:
            raise ValueError(f"expected 1 or 2 ramps, got {len(self.ramps)}")
        entries = [r.entry_sample for r in self.ramps]
        for e in entries:
            if not 1 <= e <= self.taxiway_len:
                raise ValueError(f"ramp entry sample {e} outside [1, {self.taxiway_len}]")
        if len(entries) == 2 and not entries[0] < entries[1]:
            raise ValueError("ramp 1 must enter the taxiway farther from the runway than ramp 2")
        if self.queue_capacity < 1:
            raise ValueError(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if not 0.0 < self.move_prob <= 1.0:
            raise ValueError(f"move_prob must be in (0, 1], got {self.move_prob}")
        for name, c in (("clear_prob_1", self.clear_prob_1), ("clear_prob_2", self.clear_prob_2)):
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {c}")
        if not isinstance(self.fairness, Fairness):
            object.__setattr__(self, "fairness", Fairness(self.fairness))

    # -- derived layout ---------------------------------------------------

    @property
    def queue_bits(self) -> int:
        """Number of bits coding the runway queue count."""
        return self.queue_capacity.bit_length()

    @property
    def has_turn_bit(self) -> bool:
        """Whether the state carries a ramp-turn bit (two-ramp alternation)."""
        return self.fairness is Fairness.ALTERNATION and len(self.ramps) == 2

    @property
    def n_bits(self) -> int:
        return int(self.has_turn_bit) + self.taxiway_len + self.queue_bits

    @property
    def num_codes(self) -> int:
        """Upper bound of the raw index space (some codes may be invalid)."""
        return 1 << self.n_bits

    @property
    def max_aircraft(self) -> int:
        return self.taxiway_len + self.queue_capacity

    @property
    def service_rate(self) -> float:
        """Saturated expected take-off rate per step, c1 + c2."""
        return self.clear_prob_1 + self.clear_prob_2

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "taxiway_len": self.taxiway_len,
            "ramps": [{"name": r.name, "entry_sample": r.entry_sample} for r in self.ramps],
            "queue_capacity": self.queue_capacity,
            "move_prob": self.move_prob,
            "clear_prob_1": self.clear_prob_1,
            "clear_prob_2": self.clear_prob_2,
            "sample_len_m": self.sample_len_m,
            "step_seconds": self.step_seconds,
            "fairness": self.fairness.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AirportConfig":
        return cls(
            taxiway_len=int(d["taxiway_len"]),
            ramps=tuple(RampSpec(str(r["name"]), int(r["entry_sample"])) for r in d["ramps"]),
            queue_capacity=int(d["queue_capacity"]),
            move_prob=float(d["move_prob"]),
            clear_prob_1=float(d["clear_prob_1"]),
            clear_prob_2=float(d["clear_prob_2"]),
            sample_len_m=float(d.get("sample_len_m", 200.0)),
            step_seconds=float(d.get("step_seconds", 60.0)),
            fairness=Fairness(d.get("fairness", "Alternation")),
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "AirportConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SurfaceState:
    """Decoded surface configuration.

    ``taxiway`` lists one occupancy bit per sample, sample 1 first.
    ``turn`` is the ramp due for the next clearance (0-based) and is only
    present for configs with a turn bit.
    """

    taxiway: tuple[int, ...]
    queue: int
    turn: int | None = None

    @property
    def n_aircraft(self) -> int:
        return sum(self.taxiway) + self.queue


def lga_config(fairness: Fairness = Fairness.ALTERNATION) -> AirportConfig:
    """Two-ramp LaGuardia-class airport with the standard calibration.

    Nine taxiway samples from ramp 1 to the runway, ramp 2 joining three
    samples from the queue, a seven-aircraft runway buffer, and the
    saturated-throughput clearance probabilities.
    """
    return AirportConfig(
        taxiway_len=9,
        ramps=(RampSpec("ramp1", 1), RampSpec("ramp2", 7)),
        queue_capacity=7,
        move_prob=0.9084,
        clear_prob_1=0.5140,
        clear_prob_2=0.0929,
        sample_len_m=200.0,
        step_seconds=60.0,
        fairness=fairness,
    )


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------


def join_index(turn: int, taxiway_int: int, queue: int, config: AirportConfig) -> int:
    """Pack (turn, taxiway occupancy word, queue count) into a state index."""
    idx = (taxiway_int << config.queue_bits) | queue
    if config.has_turn_bit:
        idx |= turn << (config.taxiway_len + config.queue_bits)
    return idx


def split_index(idx: int, config: AirportConfig) -> tuple[int, int, int]:
    """Unpack a state index into (turn, taxiway occupancy word, queue count).

    Raises InvalidStateError when the index is out of range or its queue
    bits exceed the queue capacity.
    """
    if not 0 <= idx < config.num_codes:
        raise InvalidStateError(f"state index {idx} outside [0, {config.num_codes})")
    b = config.queue_bits
    queue = idx & ((1 << b) - 1)
    if queue > config.queue_capacity:
        raise InvalidStateError(
            f"index {idx} codes queue {queue} > capacity {config.queue_capacity}"
        )
    taxiway_int = (idx >> b) & ((1 << config.taxiway_len) - 1)
    turn = idx >> (config.taxiway_len + b) if config.has_turn_bit else 0
    return turn, taxiway_int, queue


def encode(state: SurfaceState, config: AirportConfig) -> int:
    """Convert a surface state to its integer index."""
    if len(state.taxiway) != config.taxiway_len:
        raise ValueError(
            f"taxiway length {len(state.taxiway)} != config taxiway_len {config.taxiway_len}"
        )
    if not 0 <= state.queue <= config.queue_capacity:
        raise ValueError(f"queue {state.queue} outside [0, {config.queue_capacity}]")
    taxiway_int = 0
    for bit in state.taxiway:  # sample 1 is the most significant taxiway bit
        taxiway_int = (taxiway_int << 1) | (1 if bit else 0)
    turn = 0
    if config.has_turn_bit:
        turn = state.turn or 0
    return join_index(turn, taxiway_int, state.queue, config)


def decode(idx: int, config: AirportConfig) -> SurfaceState:
    """Convert a state index back to a surface state (inverse of encode)."""
    turn, taxiway_int, queue = split_index(idx, config)
    n = config.taxiway_len
    taxiway = tuple((taxiway_int >> (n - 1 - s)) & 1 for s in range(n))
    return SurfaceState(taxiway=taxiway, queue=queue, turn=turn if config.has_turn_bit else None)


def aircraft_count(idx: int, config: AirportConfig) -> int:
    """Number of aircraft in the state: taxiway occupancy plus queue."""
    _, taxiway_int, queue = split_index(idx, config)
    return taxiway_int.bit_count() + queue


def num_states(config: AirportConfig) -> int:
    """Count of valid states: turn factor x 2^N x (queue capacity + 1)."""
    turn_factor = 2 if config.has_turn_bit else 1
    return turn_factor * (1 << config.taxiway_len) * (config.queue_capacity + 1)


def enumerate_states(config: AirportConfig) -> np.ndarray:
    """All valid state indices in ascending order.

    Indices whose queue bits exceed the queue capacity are excluded, so the
    result may be a strict subset of ``[0, config.num_codes)``.
    """
    codes = np.arange(config.num_codes, dtype=np.int64)
    queue = codes & ((1 << config.queue_bits) - 1)
    return codes[queue <= config.queue_capacity]


# ---------------------------------------------------------------------------
# Enumerated state space with per-state attributes
# ---------------------------------------------------------------------------


class StateSpace:
    """Enumerated valid states of a config plus per-state attribute arrays.

    Positions (dense 0..n-1 offsets into ``states``) are used internally by
    the transition kernel, the policy solver, and the simulator; ``states``
    maps positions back to the coded indices used in all exports.
    """

    def __init__(self, config: AirportConfig):
        self.config = config
        self.states = enumerate_states(config)
        self.n = len(self.states)

        b = config.queue_bits
        n_tw = config.taxiway_len
        self.queue = (self.states & ((1 << b) - 1)).astype(np.int64)
        self.taxiway = ((self.states >> b) & ((1 << n_tw) - 1)).astype(np.int64)
        if config.has_turn_bit:
            self.turn = (self.states >> (n_tw + b)).astype(np.int64)
        else:
            self.turn = np.zeros(self.n, dtype=np.int64)
        popcount = np.array([int(t).bit_count() for t in self.taxiway], dtype=np.int64)
        self.n_aircraft = popcount + self.queue

        # entry_free[:, r] ignores the turn bit; clearance feasibility is
        # the kernel's concern.
        self.entry_free = np.ones((self.n, len(config.ramps)), dtype=bool)
        for r, ramp in enumerate(config.ramps):
            bit = 1 << (n_tw - ramp.entry_sample)
            self.entry_free[:, r] = (self.taxiway & bit) == 0

        self.empty_pos = 0  # index 0 is always valid: empty surface, ramp 1 to serve

    def position(self, idx: int) -> int:
        """Dense position of a state index; raises for invalid indices."""
        pos = int(np.searchsorted(self.states, idx))
        if pos >= self.n or self.states[pos] != idx:
            raise InvalidStateError(f"{idx} is not a valid state index")
        return pos

    def describe(self, pos: int) -> SurfaceState:
        return decode(int(self.states[pos]), self.config)

    def __len__(self) -> int:
        return self.n
