"""Scheduling policies over ready segments.

Five policies share one interface. The engine drives them through four
entry points: ``on_arrival`` when a request first shows up,
``on_segment_complete`` right after one of its segments finishes
executing, ``on_api_return`` whenever its next segment becomes ready
(this includes chains that continue without an API call, and requests
whose cache finished swapping back in), and ``build_next_batch`` at each
scheduling cycle. A policy owns its ready structures; segments admitted
into a returned plan are considered committed and leave those
structures, so the engine must execute every plan it receives.

All ordering is deterministic: every comparison ends with the
(arrival_time, request id) pair, and iteration only ever happens over
explicitly sorted candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import ConfigError, ProtocolError
from .predictor import ServiceTimePredictor
from .workload import RequestSpec, SegmentSpec

# Predicted processing times are clamped to this floor before entering
# any ratio, so near-zero predictions cannot blow up a score.
T_PROC_FLOOR = 1e-6


class Phase(Enum):
    WAITING_ARRIVAL = "waiting-arrival"
    WAITING_READY = "waiting-ready"
    RUNNING = "running"
    API_WAIT = "api-wait"
    SWAP_IN = "swap-in"
    DONE = "done"


class CacheLocation(Enum):
    NONE = "none"
    GPU = "gpu"
    HOST = "host"
    DROPPED = "dropped"


@dataclass
class RequestState:
    """Mutable per-request bookkeeping shared by engine, policy, and
    cache manager. The engine owns phase transitions and the time and
    memory accounting; the policy owns queue placement."""

    spec: RequestSpec
    phase: Phase = Phase.WAITING_ARRIVAL
    current_segment: int = 1

    # policy-owned placement
    queue_level: int = 0
    attained_tokens: float = 0.0

    # time accounting (seconds)
    total_ready_wait: float = 0.0
    total_compute: float = 0.0
    total_api: float = 0.0
    total_swap_delay: float = 0.0
    segment_ready_since: Optional[float] = None
    api_yield_time: Optional[float] = None
    api_return_time: Optional[float] = None
    finish_time: Optional[float] = None
    attained_service: float = 0.0

    # cache accounting (tokens)
    kv_tokens: int = 0
    cache_location: CacheLocation = CacheLocation.NONE
    swap_direction: Optional[str] = None
    pending_resume: bool = False

    _context_prefix: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        acc, prefix = 0, [0]
        for seg in self.spec.segments:
            acc += seg.new_tokens
            prefix.append(acc)
        self._context_prefix = tuple(prefix)

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE

    @property
    def current_seg(self) -> SegmentSpec:
        return self.spec.segment(self.current_segment)

    def context_after(self, index: int) -> int:
        """Context size in tokens once segments 1..index have executed."""
        return self._context_prefix[index]

    @property
    def context_before_current(self) -> int:
        return self._context_prefix[self.current_segment - 1]

    @property
    def tie_key(self) -> tuple[float, str]:
        return (self.spec.arrival_time, self.spec.id)

    def ready_wait_at(self, now: float) -> float:
        """Accrued ready-queue wait if measured at ``now``."""
        if self.segment_ready_since is None:
            return self.total_ready_wait
        return self.total_ready_wait + (now - self.segment_ready_since)

    @property
    def jct(self) -> float:
        if self.finish_time is None:
            raise ProtocolError(f"request {self.spec.id} has not finished")
        return self.finish_time - self.spec.arrival_time


def kv_demand(state: RequestState) -> int:
    """Tokens that must newly become resident to run the current segment.

    A GPU-resident cache only needs room for the tokens the segment adds;
    a dropped (or never materialized) cache additionally needs the whole
    accumulated context re-prefetched.
    """
    target = state.context_after(state.current_segment)
    resident = state.kv_tokens if state.cache_location is CacheLocation.GPU else 0
    return target - resident


def hrrn_score(wait: float, t_proc: float) -> float:
    """Response ratio (wait + t_proc) / t_proc. Raises on t_proc <= 0;
    callers clamp predictions to T_PROC_FLOOR first."""
    if t_proc <= 0:
        raise ConfigError(f"t_proc must be positive, got {t_proc}")
    if wait < 0:
        raise ConfigError(f"wait must be >= 0, got {wait}")
    return (wait + t_proc) / t_proc


@dataclass(frozen=True)
class BatchPlan:
    entries: tuple[tuple[str, int], ...]
    admitted_kv_tokens: int

    def __bool__(self) -> bool:
        return bool(self.entries)


EMPTY_PLAN = BatchPlan(entries=(), admitted_kv_tokens=0)


@dataclass(frozen=True)
class MlfqConfig:
    num_queues: int = 6
    token_thresholds: tuple[float, ...] = (128.0, 256.0, 384.0, 512.0, 640.0)
    aging_threshold: Optional[float] = 5.0  # None disables aging
    promotion_step: int = 1
    spillover: bool = False

    def __post_init__(self):
        if self.num_queues < 2:
            raise ConfigError(f"need at least two queues, got {self.num_queues}")
        if len(self.token_thresholds) != self.num_queues - 1:
            raise ConfigError(
                f"need {self.num_queues - 1} thresholds for {self.num_queues} queues, "
                f"got {len(self.token_thresholds)}"
            )
        prev = 0.0
        for t in self.token_thresholds:
            if t <= prev:
                raise ConfigError("token thresholds must be positive and strictly increasing")
            prev = t
        if self.aging_threshold is not None and self.aging_threshold <= 1:
            raise ConfigError("aging threshold must exceed 1 (a ratio of 1 means no wait)")
        if self.promotion_step < 1:
            raise ConfigError("promotion step must be >= 1")

    def threshold_for(self, level: int) -> float:
        if level >= self.num_queues - 1:
            return math.inf
        return self.token_thresholds[level]


def _pack_greedy(
    candidates: list[RequestState],
    free_tokens: int,
    max_segments: Optional[int],
    admitted: list[RequestState],
    admitted_tokens: int,
) -> int:
    """Admit candidates in the given order while they fit; returns the
    updated token total. Non-fitting candidates are skipped, not a stop
    condition, so a smaller segment later in the order may still enter.
    """
    for state in candidates:
        if max_segments is not None and len(admitted) >= max_segments:
            break
        demand = kv_demand(state)
        if admitted_tokens + demand <= free_tokens:
            admitted.append(state)
            admitted_tokens += demand
    return admitted_tokens


class SchedulingPolicy:
    """Base class; subclasses define an ordering over ready segments."""

    name = "base"

    def __init__(self, predictor: ServiceTimePredictor):
        self.predictor = predictor
        self.ready: dict[str, RequestState] = {}
        self.attached = False  # set once an engine takes ownership

    # -- engine callbacks ------------------------------------------------

    def on_arrival(self, state: RequestState, now: float) -> None:
        state.queue_level = 0
        state.attained_tokens = 0.0
        self._enter_ready(state, now)

    def on_segment_complete(
        self, state: RequestState, consumed_tokens: float, yielded_to_api: bool, now: float
    ) -> None:
        """Called after a segment finished executing, before the next one
        (if any) becomes ready. Baselines keep no migration state."""

    def on_api_return(self, state: RequestState, now: float) -> None:
        self._enter_ready(state, now)

    def _enter_ready(self, state: RequestState, now: float) -> None:
        if state.spec.id in self.ready:
            raise ProtocolError(f"request {state.spec.id} is already in the ready set")
        self.ready[state.spec.id] = state

    # -- batch construction ----------------------------------------------

    def build_next_batch(
        self, free_tokens: int, now: float, max_segments: Optional[int] = None
    ) -> BatchPlan:
        candidates = sorted(self.ready.values(), key=lambda st: self._order_key(st, now))
        admitted: list[RequestState] = []
        total = _pack_greedy(candidates, free_tokens, max_segments, admitted, 0)
        return self._commit(admitted, total)

    def _commit(self, admitted: list[RequestState], total_tokens: int) -> BatchPlan:
        for state in admitted:
            del self.ready[state.spec.id]
        entries = tuple((st.spec.id, st.current_segment) for st in admitted)
        return BatchPlan(entries=entries, admitted_kv_tokens=total_tokens)

    def _order_key(self, state: RequestState, now: float):
        raise NotImplementedError

    def _t_proc(self, state: RequestState) -> float:
        pred = self.predictor.compute_seconds(state.current_seg, state.spec.id)
        return max(pred, T_PROC_FLOOR)


class FcfsPolicy(SchedulingPolicy):
    """First come, first served over the ready queue: segments run in the
    order they became ready, ties by parent arrival then id."""

    name = "fcfs"

    def _order_key(self, state: RequestState, now: float):
        return (state.segment_ready_since, state.spec.arrival_time, state.spec.id)


class SegmentSjfPolicy(SchedulingPolicy):
    """Shortest predicted processing time of the ready segment first."""

    name = "sjf-segment"

    def _order_key(self, state: RequestState, now: float):
        return (self._t_proc(state), state.spec.arrival_time, state.spec.id)


class RequestSjfPolicy(SchedulingPolicy):
    """Shortest predicted total remaining service of the parent request,
    counting compute and API time of every segment still to run. This is
    the clairvoyant baseline: it reads future segments of the chain."""

    name = "sjf-request"

    def _order_key(self, state: RequestState, now: float):
        remaining = self.predictor.remaining_service_seconds(state.spec, state.current_segment)
        return (remaining, state.spec.arrival_time, state.spec.id)


class LasPolicy(SchedulingPolicy):
    """Least attained service: the parent that has received the least
    cumulative execution time so far goes first."""

    name = "las"

    def _order_key(self, state: RequestState, now: float):
        return (state.attained_service, state.spec.arrival_time, state.spec.id)


class StatefulMlfqPolicy(SchedulingPolicy):
    """Multi-level feedback queues driven by attained token cost.

    New arrivals start in the top queue. Finishing a segment whose
    cumulative token cost at the current level crosses that level's
    threshold demotes the request one level; yielding to an API call
    under the threshold promotes it ``promotion_step`` levels (clamped
    at the top). The attained counter resets on every move. A request
    stuck in the bottom queue whose response ratio exceeds the aging
    threshold jumps back to the top queue at the start of a scheduling
    cycle. Within the chosen queue, candidates are ordered by descending
    response ratio.

    Each cycle drains exactly one queue level (the highest non-empty
    one), even when memory is left over; set ``spillover`` to keep
    filling from lower levels instead.
    """

    name = "stateful-mlfq"

    def __init__(self, predictor: ServiceTimePredictor, config: MlfqConfig | None = None):
        super().__init__(predictor)
        self.config = config or MlfqConfig()
        self.aging_log: list[dict] = []

    def on_segment_complete(
        self, state: RequestState, consumed_tokens: float, yielded_to_api: bool, now: float
    ) -> None:
        if state.done:
            return
        state.attained_tokens += consumed_tokens
        threshold = self.config.threshold_for(state.queue_level)
        if state.attained_tokens >= threshold and state.queue_level < self.config.num_queues - 1:
            state.queue_level += 1
            state.attained_tokens = 0.0
        elif yielded_to_api and state.attained_tokens < threshold:
            state.queue_level = max(0, state.queue_level - self.config.promotion_step)
            state.attained_tokens = 0.0

    def build_next_batch(
        self, free_tokens: int, now: float, max_segments: Optional[int] = None
    ) -> BatchPlan:
        self._age(now)
        admitted: list[RequestState] = []
        total = 0
        touched_nonempty = False
        for level in range(self.config.num_queues):
            candidates = [st for st in self.ready.values() if st.queue_level == level]
            if not candidates:
                continue
            touched_nonempty = True
            candidates.sort(key=lambda st: (-self._score(st, now),) + st.tie_key)
            total = _pack_greedy(candidates, free_tokens, max_segments, admitted, total)
            if not self.config.spillover:
                break
            if max_segments is not None and len(admitted) >= max_segments:
                break
        if not touched_nonempty:
            return EMPTY_PLAN
        return self._commit(admitted, total)

    def _score(self, state: RequestState, now: float) -> float:
        return hrrn_score(state.ready_wait_at(now), self._t_proc(state))

    def _age(self, now: float) -> None:
        tau = self.config.aging_threshold
        if tau is None:
            return
        bottom = self.config.num_queues - 1
        stale = [st for st in self.ready.values() if st.queue_level == bottom]
        stale.sort(key=lambda st: st.tie_key)
        for state in stale:
            ratio = self._score(state, now)
            if ratio > tau:
                state.queue_level = 0
                state.attained_tokens = 0.0
                self.aging_log.append(
                    {"time": now, "request_id": state.spec.id, "ratio": ratio}
                )


POLICIES: dict[str, type[SchedulingPolicy]] = {
    cls.name: cls
    for cls in (FcfsPolicy, SegmentSjfPolicy, RequestSjfPolicy, LasPolicy, StatefulMlfqPolicy)
}


def make_policy(
    name: str,
    predictor: ServiceTimePredictor,
    mlfq_config: MlfqConfig | None = None,
) -> SchedulingPolicy:
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
    if name == StatefulMlfqPolicy.name:
        return StatefulMlfqPolicy(predictor, mlfq_config)
    return POLICIES[name](predictor)
