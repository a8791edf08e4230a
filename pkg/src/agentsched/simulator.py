"""Deterministic discrete-event engine for segment-level scheduling.

Five event kinds drive a run: request arrival, per-segment completion,
whole-batch completion, API return, and swap completion. Ties at one
timestamp resolve by fixed kind rank (API return first, then swap,
segment done, batch done, arrival last) and then by request id, so a
run is a pure function of its inputs.

Two cost models:

    serial:       segments of a batch run back to back on one device;
                  each completion fires at its own offset.
    parallel-max: all segments start together; each completes at its own
                  duration and the batch closes at the longest one.

Scheduling is non-preemptive at segment granularity: once a batch is
dispatched, the next scheduling cycle happens when the whole batch has
completed. While no batch is active, every event triggers a scheduling
attempt, which keeps the engine work-conserving.

Ground truth and prediction are kept structurally apart: durations come
from the workload spec and a noise-free copy of the hardware tables;
policies and the cache manager only ever see predictor outputs.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

from .errors import ConfigError, ProtocolError, SimulationError, ValidationError
from .kvcache import CacheAction, KvCacheManager, MemoryModel, audit_conservation
from .metrics import GanttSpan, RequestRecord, RunReport
from .predictor import ServiceTimePredictor
from .scheduler import (
    CacheLocation,
    Phase,
    RequestState,
    SchedulingPolicy,
    kv_demand,
)
from .workload import ApiCategory, RequestSpec, validate_workload, workload_hash

SERIAL = "serial"
PARALLEL_MAX = "parallel-max"
COST_MODELS = (SERIAL, PARALLEL_MAX)

DEFAULT_CAPACITY_TOKENS = 40_000


class EventKind(IntEnum):
    # Enum values define the tie order at equal timestamps.
    API_RETURN = 0
    SWAP_DONE = 1
    SEGMENT_DONE = 2
    BATCH_DONE = 3
    ARRIVAL = 4


@dataclass(frozen=True)
class SimConfig:
    cost_model: str = SERIAL
    max_batch_segments: Optional[int] = None
    cache_mode: str = "adaptive"
    audit_memory: bool = True

    def __post_init__(self):
        if self.cost_model not in COST_MODELS:
            raise ConfigError(f"unknown cost model {self.cost_model!r}; choose from {COST_MODELS}")
        if self.max_batch_segments is not None and self.max_batch_segments < 1:
            raise ConfigError("max_batch_segments must be >= 1 or omitted")


def execute_batch(
    durations: Sequence[float], cost_model: str, start: float
) -> tuple[list[tuple[float, float]], float]:
    """Timestamp a batch: per-segment (exec_start, exec_end) plus the
    time the batch as a whole completes."""
    if cost_model not in COST_MODELS:
        raise ConfigError(f"unknown cost model {cost_model!r}")
    if not durations:
        raise ValidationError("cannot execute an empty batch")
    if any(d < 0 or not math.isfinite(d) for d in durations):
        raise ValidationError("segment durations must be finite and >= 0")
    spans: list[tuple[float, float]] = []
    if cost_model == SERIAL:
        cursor = start
        for d in durations:
            spans.append((cursor, cursor + d))
            cursor += d
        return spans, cursor
    for d in durations:
        spans.append((start, start + d))
    return spans, max(end for _, end in spans)


class Engine:
    def __init__(
        self,
        workload: Sequence[RequestSpec],
        policy: SchedulingPolicy,
        predictor: ServiceTimePredictor,
        memory: MemoryModel,
        config: SimConfig,
    ):
        if not workload:
            raise ValidationError("workload is empty; nothing to simulate")
        validate_workload(workload)
        if policy.attached or policy.ready:
            raise ProtocolError("policy instances are single-use; build a fresh one per run")
        policy.attached = True
        self.workload = sorted(workload, key=lambda r: (r.arrival_time, r.id))
        self.policy = policy
        self.predictor = predictor
        self.hardware = predictor.exact()
        self.memory = memory
        self.config = config
        self.manager = KvCacheManager(memory, predictor, mode=config.cache_mode)

        self.now = 0.0
        self.states: dict[str, RequestState] = {}
        self._heap: list[tuple] = []
        self._seq = itertools.count()
        self._active_batch: Optional[dict] = None
        self._resume_queue: list[str] = []
        self._gantt: list[GanttSpan] = []
        self._events_processed = 0

    # -- event plumbing --------------------------------------------------

    def _push(self, time: float, kind: EventKind, request_id: str, payload: tuple = ()) -> None:
        if time < self.now - 1e-12:
            raise ProtocolError(f"event {kind.name} for {request_id!r} scheduled in the past")
        heapq.heappush(self._heap, (time, int(kind), request_id, next(self._seq), payload))

    def _span(self, request_id: str, segment_index: int, kind: str, start: float, end: float):
        if end > start:
            self._gantt.append(GanttSpan(request_id, segment_index, kind, start, end))

    # -- main loop --------------------------------------------------------

    def run(self) -> RunReport:
        for spec in self.workload:
            self.states[spec.id] = RequestState(spec=spec)
            self._push(spec.arrival_time, EventKind.ARRIVAL, spec.id)

        while self._heap:
            # Drain every event sharing the earliest timestamp before
            # making any scheduling decision, so simultaneous arrivals
            # and completions are all visible to the policy at once.
            time = self._heap[0][0]
            self.now = time
            while self._heap and self._heap[0][0] == time:
                _, kind_value, request_id, _, payload = heapq.heappop(self._heap)
                self._events_processed += 1
                kind = EventKind(kind_value)
                if kind is EventKind.ARRIVAL:
                    self._on_arrival(request_id)
                elif kind is EventKind.SEGMENT_DONE:
                    self._on_segment_done(request_id, payload)
                elif kind is EventKind.BATCH_DONE:
                    self._on_batch_done()
                elif kind is EventKind.API_RETURN:
                    self._on_api_return(request_id)
                elif kind is EventKind.SWAP_DONE:
                    self._on_swap_done(request_id, payload)

            self._drain_resume_queue()
            if self._active_batch is None:
                self._try_start_batch()
            if self._active_batch is None and not self._heap:
                self._force_progress()
            if self.config.audit_memory:
                audit_conservation(self.memory, self.states.values())

        stuck = sorted(st.spec.id for st in self.states.values() if not st.done)
        if stuck:
            raise SimulationError(
                f"event queue drained with {len(stuck)} unfinished requests: {stuck[:10]} "
                "(cyclic memory wait or inconsistent workload)"
            )
        if self.memory.resident_tokens != 0 or self.memory.host_tokens != 0:
            raise SimulationError(
                f"token leak at end of run: resident={self.memory.resident_tokens} "
                f"host={self.memory.host_tokens}"
            )
        return self._build_report()

    # -- event handlers ----------------------------------------------------

    def _on_arrival(self, request_id: str) -> None:
        state = self.states[request_id]
        if state.phase is not Phase.WAITING_ARRIVAL:
            raise ProtocolError(f"duplicate arrival for request {request_id!r}")
        state.phase = Phase.WAITING_READY
        state.segment_ready_since = self.now
        self.policy.on_arrival(state, self.now)

    def _on_segment_done(self, request_id: str, payload: tuple) -> None:
        segment_index, exec_start, actual_seconds = payload
        state = self.states[request_id]
        batch = self._active_batch
        if batch is None or (request_id, segment_index) not in batch["members"]:
            raise ProtocolError(f"segment completion for {request_id!r} outside its batch")
        batch["pending"] -= 1

        self._span(request_id, segment_index, "compute", exec_start, self.now)
        state.total_compute += actual_seconds
        state.attained_service += actual_seconds
        consumed_tokens = actual_seconds / self.hardware.decode.seconds_per_token

        seg = state.spec.segment(segment_index)
        terminal = segment_index == state.spec.num_segments
        if terminal:
            state.phase = Phase.DONE
            state.finish_time = self.now
            self.manager.release_request(state)
            self.policy.on_segment_complete(state, consumed_tokens, False, self.now)
        elif seg.api_category is ApiCategory.NONE:
            # Chain continues without an API call: next segment is ready
            # at this very instant.
            self.policy.on_segment_complete(state, consumed_tokens, False, self.now)
            state.current_segment += 1
            state.api_return_time = self.now
            self._make_ready(state)
        else:
            state.phase = Phase.API_WAIT
            state.api_yield_time = self.now
            self.policy.on_segment_complete(state, consumed_tokens, True, self.now)
            predicted_api = self.predictor.api_seconds(seg.api_category)
            waiting_demand = sum(
                kv_demand(st) for st in self.states.values() if st.phase is Phase.WAITING_READY
            )
            action = self.manager.on_api_yield(state, predicted_api, waiting_demand, self.now)
            if action is CacheAction.SWAP:
                self._push(
                    self.now + self.manager.swap_out_seconds(state),
                    EventKind.SWAP_DONE,
                    request_id,
                    ("out",),
                )
            self._push(self.now + seg.api_duration, EventKind.API_RETURN, request_id)

    def _on_batch_done(self) -> None:
        batch = self._active_batch
        if batch is None:
            raise ProtocolError("batch completion with no active batch")
        if batch["pending"] != 0:
            raise ProtocolError(f"batch closed with {batch['pending']} segments still running")
        self._active_batch = None

    def _on_api_return(self, request_id: str) -> None:
        state = self.states[request_id]
        if state.phase is not Phase.API_WAIT:
            raise ProtocolError(f"API return for request {request_id!r} in phase {state.phase}")
        seg = state.current_seg
        self._span(request_id, seg.index, "api", state.api_yield_time, self.now)
        state.total_api += self.now - state.api_yield_time
        state.api_yield_time = None
        state.current_segment += 1
        state.api_return_time = self.now

        if state.swap_direction == "out":
            # Prediction undershot the call; the transfer out is still in
            # flight and the swap back can only start once it lands.
            state.pending_resume = True
        elif state.cache_location is CacheLocation.HOST:
            self._resume_or_queue(state)
        else:  # GPU-resident (preserved) or dropped: ready immediately
            self._make_ready(state)

    def _on_swap_done(self, request_id: str, payload: tuple) -> None:
        (direction,) = payload
        state = self.states[request_id]
        if direction == "out":
            self.manager.complete_swap_out(state)
            if state.pending_resume:
                state.pending_resume = False
                self._resume_or_queue(state)
        elif direction == "in":
            self.manager.complete_swap_in(state)
            state.total_swap_delay += self.now - state.api_return_time
            self._span(request_id, state.current_segment, "swap", state.api_return_time, self.now)
            self._make_ready(state)
        else:
            raise ProtocolError(f"unknown swap direction {direction!r}")

    # -- readiness and resume ----------------------------------------------

    def _make_ready(self, state: RequestState) -> None:
        state.phase = Phase.WAITING_READY
        state.segment_ready_since = self.now
        self.policy.on_api_return(state, self.now)

    def _resume_or_queue(self, state: RequestState) -> None:
        if self.manager.try_begin_swap_in(state):
            state.phase = Phase.SWAP_IN
            self._push(
                self.now + self.manager.swap_in_seconds(state),
                EventKind.SWAP_DONE,
                state.spec.id,
                ("in",),
            )
        else:
            state.phase = Phase.SWAP_IN
            self._resume_queue.append(state.spec.id)

    def _drain_resume_queue(self) -> None:
        # Strict FIFO: the head blocks until its cache fits, so resumes
        # cannot starve behind a stream of smaller latecomers.
        while self._resume_queue:
            state = self.states[self._resume_queue[0]]
            if not self.manager.try_begin_swap_in(state):
                break
            self._resume_queue.pop(0)
            self._push(
                self.now + self.manager.swap_in_seconds(state),
                EventKind.SWAP_DONE,
                state.spec.id,
                ("in",),
            )

    # -- batch construction --------------------------------------------------

    def _actual_seconds(self, state: RequestState) -> float:
        """Ground-truth execution time of the current segment, including
        the re-prefill of the whole context after a discard."""
        seg = state.current_seg
        if seg.direct_compute_time is not None:
            return seg.direct_compute_time
        extra = state.context_before_current if state.cache_location is CacheLocation.DROPPED else 0
        prefill = self.hardware.prefill_seconds(seg.n_in + extra)
        return prefill + seg.n_gen * self.hardware.decode.seconds_per_token

    def _try_start_batch(self) -> None:
        plan = self.policy.build_next_batch(
            self.memory.free_tokens, self.now, self.config.max_batch_segments
        )
        if not plan:
            return
        if plan.admitted_kv_tokens > self.memory.free_tokens:
            raise ProtocolError(
                f"plan wants {plan.admitted_kv_tokens} tokens, "
                f"only {self.memory.free_tokens} free"
            )

        durations = []
        for request_id, segment_index in plan.entries:
            state = self.states[request_id]
            if state.phase is not Phase.WAITING_READY or state.current_segment != segment_index:
                raise ProtocolError(
                    f"plan admits {request_id!r} segment {segment_index}, but the request "
                    f"is in phase {state.phase} at segment {state.current_segment}"
                )
            durations.append(self._actual_seconds(state))

        spans, batch_end = execute_batch(durations, self.config.cost_model, self.now)
        members = set()
        for (request_id, segment_index), (exec_start, exec_end) in zip(plan.entries, spans):
            state = self.states[request_id]
            # Admission commits memory for the whole segment up front;
            # duration was computed above, before the location flip.
            self.memory.allocate(kv_demand(state))
            state.kv_tokens = state.context_after(segment_index)
            state.cache_location = CacheLocation.GPU

            state.total_ready_wait += exec_start - state.segment_ready_since
            self._span(
                request_id, segment_index, "ready-wait", state.segment_ready_since, exec_start
            )
            state.segment_ready_since = None
            state.phase = Phase.RUNNING
            members.add((request_id, segment_index))
            self._push(
                exec_end,
                EventKind.SEGMENT_DONE,
                request_id,
                (segment_index, exec_start, exec_end - exec_start),
            )
        self._active_batch = {"members": members, "pending": len(members)}
        self._push(batch_end, EventKind.BATCH_DONE, "")

    def _force_progress(self) -> None:
        """Break a memory deadlock.

        Reached only when the event queue is empty, nothing is running
        and requests still wait: preserved caches of ready requests pin
        so much memory that no candidate fits. Discard the largest such
        cache (ties by arrival then id) and retry until a batch starts
        or a future event (an unblocked swap-in) exists again.
        """
        while self._active_batch is None and not self._heap:
            waiting = [
                st
                for st in self.states.values()
                if not st.done and st.phase in (Phase.WAITING_READY, Phase.SWAP_IN)
            ]
            if not waiting:
                return
            victims = [
                st
                for st in self.states.values()
                if st.phase is Phase.WAITING_READY
                and st.cache_location is CacheLocation.GPU
                and st.kv_tokens > 0
            ]
            if not victims:
                blocked = sorted(st.spec.id for st in waiting)
                raise SimulationError(
                    f"{len(blocked)} requests cannot ever fit in memory "
                    f"(capacity {self.memory.capacity_tokens} tokens, first blocked: "
                    f"{blocked[:5]}); increase capacity or shrink contexts"
                )
            victims.sort(key=lambda st: (-st.kv_tokens,) + st.tie_key)
            self.manager.force_discard(victims[0], self.now)
            self._drain_resume_queue()
            self._try_start_batch()

    # -- reporting -----------------------------------------------------------

    def _build_report(self) -> RunReport:
        records = []
        for spec in self.workload:
            st = self.states[spec.id]
            records.append(
                RequestRecord(
                    id=spec.id,
                    arrival=spec.arrival_time,
                    finish=st.finish_time,
                    jct=st.jct,
                    num_segments=spec.num_segments,
                    total_compute=st.total_compute,
                    total_api=st.total_api,
                    total_ready_wait=st.total_ready_wait,
                    total_swap_delay=st.total_swap_delay,
                )
            )
        records.sort(key=lambda r: r.id)
        gantt = sorted(
            self._gantt, key=lambda s: (s.start, s.end, s.request_id, s.segment_index, s.kind)
        )
        config = {
            "policy": self.policy.name,
            "cost_model": self.config.cost_model,
            "cache_mode": self.config.cache_mode,
            "max_batch_segments": self.config.max_batch_segments,
            "memory": {
                "capacity_tokens": self.memory.capacity_tokens,
                "watermark": self.memory.watermark,
                "bytes_per_token": self.memory.bytes_per_token,
                "swap_bandwidth_tokens_per_s": self.memory.swap_bandwidth_tokens_per_s,
            },
            "predictor": self.predictor.to_config(),
            "num_requests": len(self.workload),
        }
        mlfq_config = getattr(self.policy, "config", None)
        if mlfq_config is not None:
            config["mlfq"] = {
                "num_queues": mlfq_config.num_queues,
                "token_thresholds": list(mlfq_config.token_thresholds),
                "aging_threshold": mlfq_config.aging_threshold,
                "promotion_step": mlfq_config.promotion_step,
                "spillover": mlfq_config.spillover,
            }
        audits = {
            "waste_log": list(self.manager.waste_log),
            "aging_log": list(getattr(self.policy, "aging_log", [])),
            "memory": self.memory.summary(),
            "events_processed": self._events_processed,
        }
        return RunReport(
            workload_hash=workload_hash(self.workload),
            config=config,
            per_request=records,
            gantt=gantt,
            audits=audits,
        )


def run(
    workload: Sequence[RequestSpec],
    policy: SchedulingPolicy,
    predictor: ServiceTimePredictor | None = None,
    memory: MemoryModel | None = None,
    config: SimConfig | None = None,
) -> RunReport:
    predictor = predictor or ServiceTimePredictor()
    memory = memory or MemoryModel(capacity_tokens=DEFAULT_CAPACITY_TOKENS)
    config = config or SimConfig()
    return Engine(workload, policy, predictor, memory, config).run()


# ---------------------------------------------------------------------------
# Clairvoyant lower bound
# ---------------------------------------------------------------------------

ORACLE_SEGMENT_LIMIT = 12


def oracle_optimal(
    workload: Sequence[RequestSpec], predictor: ServiceTimePredictor | None = None
) -> float:
    """Minimum achievable average JCT on the serial one-segment machine.

    Exhaustive search over every interleaving of the requests' segment
    chains, with each segment started as early as its readiness and the
    machine allow. A branch-and-bound cut (safe: it only prunes branches
    whose optimistic bound already loses) keeps small instances quick.
    """
    if not workload:
        raise ValidationError("workload is empty")
    validate_workload(workload)
    total_segments = sum(r.num_segments for r in workload)
    if total_segments > ORACLE_SEGMENT_LIMIT:
        raise ConfigError(
            f"oracle explores every interleaving; {total_segments} segments exceed "
            f"the limit of {ORACLE_SEGMENT_LIMIT}"
        )
    hardware = (predictor or ServiceTimePredictor()).exact()

    requests = sorted(workload, key=lambda r: (r.arrival_time, r.id))
    durations = [
        [
            seg.direct_compute_time
            if seg.direct_compute_time is not None
            else hardware.prefill_seconds(seg.n_in) + seg.n_gen * hardware.decode.seconds_per_token
            for seg in r.segments
        ]
        for r in requests
    ]
    gaps = [[seg.api_duration for seg in r.segments] for r in requests]
    arrivals = [r.arrival_time for r in requests]
    counts = [r.num_segments for r in requests]
    n = len(requests)

    best = math.inf
    progress = [0] * n
    ready = list(arrivals)

    def lower_bound(machine_time: float, jct_sum: float) -> float:
        bound = jct_sum
        for i in range(n):
            if progress[i] >= counts[i]:
                continue
            finish = max(machine_time, ready[i])
            for j in range(progress[i], counts[i]):
                finish += durations[i][j]
                if j < counts[i] - 1:
                    finish += gaps[i][j]
            bound += finish - arrivals[i]
        return bound

    def dfs(machine_time: float, jct_sum: float, remaining: int) -> None:
        nonlocal best
        if remaining == 0:
            best = min(best, jct_sum)
            return
        if lower_bound(machine_time, jct_sum) >= best:
            return
        for i in range(n):
            if progress[i] >= counts[i]:
                continue
            j = progress[i]
            start = max(machine_time, ready[i])
            end = start + durations[i][j]
            old_ready = ready[i]
            progress[i] += 1
            ready[i] = end + gaps[i][j] if j < counts[i] - 1 else math.inf
            contribution = (end - arrivals[i]) if j == counts[i] - 1 else 0.0
            dfs(end, jct_sum + contribution, remaining - 1)
            progress[i] -= 1
            ready[i] = old_ready

    dfs(0.0, 0.0, total_segments)
    return best / n
