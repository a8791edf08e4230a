"""KV-cache handling for requests that are parked on an API call.

While a request waits on an external call its accumulated context sits
in GPU memory doing nothing. Three ways out, each with a quantifiable
waste in byte-seconds:

    preserve: waste = api_seconds * own_tokens * bytes_per_token
              (idle residency for the expected duration of the call)
    discard:  waste = recompute_seconds * batch_demand_tokens * bytes_per_token
              (on return, the waiting batch stalls for the re-prefill)
    swap:     waste = 2 * swap_seconds * batch_demand_tokens * bytes_per_token
              (the waiting batch stalls for the transfer out and back in)

The adaptive manager picks the minimum-waste option, but only bothers
once memory occupancy has reached a configurable watermark; below it,
preserving is always cheap enough. Everything the manager consumes is a
prediction (API category mean, predicted re-prefill time); ground truth
stays inside the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, ProtocolError
from .predictor import ServiceTimePredictor
from .scheduler import CacheLocation, RequestState


class CacheAction(str, Enum):
    PRESERVE = "preserve"
    DISCARD = "discard"
    SWAP = "swap"


# Tie-break preference among equal-waste actions: swapping keeps both
# the tokens and the GPU, discarding keeps the GPU, preserving keeps
# neither problem small.
ACTION_PREFERENCE = (CacheAction.SWAP, CacheAction.DISCARD, CacheAction.PRESERVE)


@dataclass(frozen=True)
class WasteEstimate:
    preserve: float
    discard: float
    swap: float
    chosen: CacheAction

    def waste_of(self, action: CacheAction) -> float:
        return {
            CacheAction.PRESERVE: self.preserve,
            CacheAction.DISCARD: self.discard,
            CacheAction.SWAP: self.swap,
        }[action]


def estimate_waste(
    api_seconds: float,
    own_tokens: float,
    batch_demand_tokens: float,
    recompute_seconds: float,
    swap_seconds: float,
    bytes_per_token: float = 1.0,
) -> WasteEstimate:
    """Score the three strategies; ties go by ACTION_PREFERENCE order."""
    inputs = {
        "api_seconds": api_seconds,
        "own_tokens": own_tokens,
        "batch_demand_tokens": batch_demand_tokens,
        "recompute_seconds": recompute_seconds,
        "swap_seconds": swap_seconds,
        "bytes_per_token": bytes_per_token,
    }
    for name, value in inputs.items():
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{name} must be finite and >= 0, got {value}")
    preserve = api_seconds * own_tokens * bytes_per_token
    discard = recompute_seconds * batch_demand_tokens * bytes_per_token
    swap = 2.0 * swap_seconds * batch_demand_tokens * bytes_per_token
    wastes = {CacheAction.PRESERVE: preserve, CacheAction.DISCARD: discard, CacheAction.SWAP: swap}
    chosen = min(ACTION_PREFERENCE, key=lambda a: wastes[a])
    return WasteEstimate(preserve=preserve, discard=discard, swap=swap, chosen=chosen)


@dataclass
class MemoryModel:
    """Token-denominated GPU memory with a host staging area."""

    capacity_tokens: int
    bytes_per_token: float = 1.0
    swap_bandwidth_tokens_per_s: float = 20000.0
    watermark: float = 0.9

    resident_tokens: int = field(default=0, init=False)
    host_tokens: int = field(default=0, init=False)
    peak_resident_tokens: int = field(default=0, init=False)

    def __post_init__(self):
        if self.capacity_tokens <= 0:
            raise ConfigError(f"capacity must be positive, got {self.capacity_tokens}")
        if self.bytes_per_token <= 0:
            raise ConfigError(f"bytes_per_token must be positive, got {self.bytes_per_token}")
        if self.swap_bandwidth_tokens_per_s <= 0:
            raise ConfigError("swap bandwidth must be positive")
        if not 0 < self.watermark <= 1:
            raise ConfigError(f"watermark must be in (0, 1], got {self.watermark}")

    @property
    def free_tokens(self) -> int:
        return self.capacity_tokens - self.resident_tokens

    @property
    def occupancy(self) -> float:
        return self.resident_tokens / self.capacity_tokens

    def allocate(self, tokens: int) -> None:
        if tokens < 0:
            raise ProtocolError(f"cannot allocate {tokens} tokens")
        if self.resident_tokens + tokens > self.capacity_tokens:
            raise ProtocolError(
                f"allocation of {tokens} tokens exceeds capacity "
                f"({self.resident_tokens}/{self.capacity_tokens} resident)"
            )
        self.resident_tokens += tokens
        self.peak_resident_tokens = max(self.peak_resident_tokens, self.resident_tokens)

    def release(self, tokens: int) -> None:
        if tokens < 0 or tokens > self.resident_tokens:
            raise ProtocolError(
                f"cannot release {tokens} tokens ({self.resident_tokens} resident)"
            )
        self.resident_tokens -= tokens

    def swap_seconds(self, tokens: int) -> float:
        return tokens / self.swap_bandwidth_tokens_per_s

    def summary(self) -> dict:
        return {
            "capacity_tokens": self.capacity_tokens,
            "watermark": self.watermark,
            "peak_resident_tokens": self.peak_resident_tokens,
            "bytes_per_token": self.bytes_per_token,
            "swap_bandwidth_tokens_per_s": self.swap_bandwidth_tokens_per_s,
        }


CACHE_MODES = ("adaptive", "preserve")


class KvCacheManager:
    """Decides what happens to a request's cache when it yields to an API.

    Mutates memory accounting and the request's cache fields; the engine
    owns the clock and schedules any swap completion events using the
    durations this class reports.
    """

    def __init__(
        self,
        memory: MemoryModel,
        predictor: ServiceTimePredictor,
        mode: str = "adaptive",
    ):
        if mode not in CACHE_MODES:
            raise ConfigError(f"unknown cache mode {mode!r}; choose from {CACHE_MODES}")
        self.memory = memory
        self.predictor = predictor
        self.mode = mode
        self.waste_log: list[dict] = []

    def on_api_yield(
        self,
        state: RequestState,
        predicted_api_seconds: float,
        batch_demand_tokens: int,
        now: float,
    ) -> CacheAction:
        """Pick and apply a strategy at the instant ``state`` yields.

        Returns the action; for SWAP the caller must schedule the
        swap-out completion after ``swap_out_seconds(state)``.
        """
        if state.cache_location is not CacheLocation.GPU or state.kv_tokens == 0:
            raise ProtocolError(f"request {state.spec.id} has no resident cache to manage")
        if self.mode == "preserve":
            return CacheAction.PRESERVE
        if self.memory.occupancy < self.memory.watermark:
            self.waste_log.append(
                {
                    "time": now,
                    "request_id": state.spec.id,
                    "chosen": CacheAction.PRESERVE.value,
                    "reason": "below-watermark",
                }
            )
            return CacheAction.PRESERVE

        estimate = estimate_waste(
            api_seconds=predicted_api_seconds,
            own_tokens=state.kv_tokens,
            batch_demand_tokens=batch_demand_tokens,
            recompute_seconds=self.predictor.prefill_seconds(state.kv_tokens),
            swap_seconds=self.memory.swap_seconds(state.kv_tokens),
            bytes_per_token=self.memory.bytes_per_token,
        )
        self.waste_log.append(
            {
                "time": now,
                "request_id": state.spec.id,
                "preserve": estimate.preserve,
                "discard": estimate.discard,
                "swap": estimate.swap,
                "chosen": estimate.chosen.value,
                "reason": "estimated",
            }
        )
        if estimate.chosen is CacheAction.DISCARD:
            self.memory.release(state.kv_tokens)
            state.kv_tokens = 0
            state.cache_location = CacheLocation.DROPPED
        elif estimate.chosen is CacheAction.SWAP:
            state.swap_direction = "out"
        return estimate.chosen

    def swap_out_seconds(self, state: RequestState) -> float:
        return self.memory.swap_seconds(state.kv_tokens)

    def complete_swap_out(self, state: RequestState) -> None:
        if state.swap_direction != "out":
            raise ProtocolError(f"request {state.spec.id} is not swapping out")
        self.memory.release(state.kv_tokens)
        self.memory.host_tokens += state.kv_tokens
        state.cache_location = CacheLocation.HOST
        state.swap_direction = None

    def try_begin_swap_in(self, state: RequestState) -> bool:
        """Reserve GPU room and start the transfer back; False if memory
        is still too tight (caller parks the request in a resume queue).
        """
        if state.cache_location is not CacheLocation.HOST:
            raise ProtocolError(f"request {state.spec.id} has no host-side cache")
        if state.kv_tokens > self.memory.free_tokens:
            return False
        self.memory.allocate(state.kv_tokens)
        self.memory.host_tokens -= state.kv_tokens
        state.cache_location = CacheLocation.GPU
        state.swap_direction = "in"
        return True

    def swap_in_seconds(self, state: RequestState) -> float:
        return self.memory.swap_seconds(state.kv_tokens)

    def complete_swap_in(self, state: RequestState) -> None:
        if state.swap_direction != "in":
            raise ProtocolError(f"request {state.spec.id} is not swapping in")
        state.swap_direction = None

    def release_request(self, state: RequestState) -> None:
        """Free everything a finished request still holds."""
        if state.cache_location is CacheLocation.GPU:
            self.memory.release(state.kv_tokens)
        elif state.cache_location is CacheLocation.HOST:
            self.memory.host_tokens -= state.kv_tokens
        state.kv_tokens = 0
        state.cache_location = CacheLocation.NONE

    def force_discard(self, state: RequestState, now: float) -> None:
        """Drop the resident cache of a waiting request.

        The engine calls this to break a memory deadlock: preserved
        caches of requests stuck in the ready queue can pin so much
        memory that nothing fits any more. The victim re-prefills its
        context when it eventually runs.
        """
        if state.cache_location is not CacheLocation.GPU or state.kv_tokens <= 0:
            raise ProtocolError(
                f"request {state.spec.id} has no resident cache to discard"
            )
        self.memory.release(state.kv_tokens)
        self.waste_log.append(
            {
                "time": now,
                "request_id": state.spec.id,
                "chosen": CacheAction.DISCARD.value,
                "reason": "deadlock-evicted",
                "freed_tokens": state.kv_tokens,
            }
        )
        state.kv_tokens = 0
        state.cache_location = CacheLocation.DROPPED


def audit_conservation(memory: MemoryModel, states) -> None:
    """Resident tokens must equal the sum of GPU-located caches."""
    expected = sum(st.kv_tokens for st in states if st.cache_location is CacheLocation.GPU)
    if expected != memory.resident_tokens:
        raise ProtocolError(
            f"memory accounting drifted: resident={memory.resident_tokens} "
            f"but GPU-located caches sum to {expected}"
        )
    host = sum(st.kv_tokens for st in states if st.cache_location is CacheLocation.HOST)
    if host != memory.host_tokens:
        raise ProtocolError(
            f"host accounting drifted: host={memory.host_tokens} but caches sum to {host}"
        )
