import random

import pytest

from agentsched import (
    ConfigError,
    MlfqConfig,
    ProtocolError,
    RequestSpec,
    SegmentSpec,
    StatefulMlfqPolicy,
    figure2_predictor,
    make_policy,
)
from agentsched.scheduler import RequestState, T_PROC_FLOOR, hrrn_score

PRED = figure2_predictor()  # decode 1 s/token, so tokens double as seconds


def _state(rid, arrival=0.0, computes=(1.0,), ready_at=0.0):
    segs = tuple(
        SegmentSpec(index=i + 1, n_in=1, n_gen=1, direct_compute_time=c)
        for i, c in enumerate(computes)
    )
    spec = RequestSpec(id=rid, arrival_time=arrival, segments=segs)
    state = RequestState(spec=spec)
    state.segment_ready_since = ready_at
    return state


def _policy(name, mlfq=None):
    return make_policy(name, PRED, mlfq)


class TestHrrn:
    def test_zero_wait_scores_one(self):
        assert hrrn_score(0.0, 2.0) == 1.0

    def test_wait_equal_to_service_scores_two(self):
        assert hrrn_score(3.0, 3.0) == 2.0

    def test_increasing_in_wait_decreasing_in_service(self):
        assert hrrn_score(5.0, 1.0) > hrrn_score(4.0, 1.0)
        assert hrrn_score(5.0, 1.0) > hrrn_score(5.0, 2.0)

    def test_scale_invariant_ordering(self):
        rng = random.Random(0)
        for _ in range(200):
            pairs = [(rng.uniform(0, 10), rng.uniform(0.1, 5)) for _ in range(6)]
            k = rng.uniform(0.1, 100)
            base = sorted(range(6), key=lambda i: -hrrn_score(*pairs[i]))
            scaled = sorted(
                range(6), key=lambda i: -hrrn_score(pairs[i][0] * k, pairs[i][1] * k)
            )
            assert base == scaled

    def test_equal_wait_reduces_to_shortest_first(self):
        rng = random.Random(1)
        for _ in range(200):
            w = rng.uniform(0.5, 10)
            procs = [rng.uniform(0.1, 5) for _ in range(6)]
            order = sorted(range(6), key=lambda i: -hrrn_score(w, procs[i]))
            assert order == sorted(range(6), key=lambda i: procs[i])

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigError):
            hrrn_score(1.0, 0.0)
        with pytest.raises(ConfigError):
            hrrn_score(-0.1, 1.0)


class TestBaselineOrdering:
    def test_fcfs_orders_by_ready_time(self):
        pol = _policy("fcfs")
        a = _state("a", arrival=0.0, ready_at=5.0)
        b = _state("b", arrival=1.0, ready_at=2.0)
        pol.on_arrival(a, 5.0)
        pol.on_arrival(b, 5.0)
        plan = pol.build_next_batch(10_000, 6.0)
        assert [rid for rid, _ in plan.entries] == ["b", "a"]

    def test_fcfs_tie_breaks_by_arrival_then_id(self):
        pol = _policy("fcfs")
        for rid, arrival in [("z", 0.5), ("m", 0.2), ("q", 0.2)]:
            pol.on_arrival(_state(rid, arrival=arrival, ready_at=1.0), 1.0)
        plan = pol.build_next_batch(10_000, 2.0)
        assert [rid for rid, _ in plan.entries] == ["m", "q", "z"]

    def test_segment_sjf_prefers_short_segment(self):
        pol = _policy("sjf-segment")
        pol.on_arrival(_state("long", computes=(9.0,)), 0.0)
        pol.on_arrival(_state("short", computes=(1.0,)), 0.0)
        plan = pol.build_next_batch(10_000, 0.0)
        assert [rid for rid, _ in plan.entries] == ["short", "long"]

    def test_request_sjf_reads_whole_chain(self):
        pol = _policy("sjf-request")
        pol.on_arrival(_state("shortseg", computes=(1.0, 9.0, 9.0)), 0.0)
        pol.on_arrival(_state("shortjob", computes=(4.0,)), 0.0)
        plan = pol.build_next_batch(10_000, 0.0)
        assert [rid for rid, _ in plan.entries] == ["shortjob", "shortseg"]

    def test_las_prefers_least_attained(self):
        pol = _policy("las")
        heavy = _state("heavy", computes=(1.0, 1.0))
        fresh = _state("fresh", computes=(5.0,))
        heavy.attained_service = 7.0
        pol.on_arrival(fresh, 0.0)
        pol._enter_ready(heavy, 0.0)
        plan = pol.build_next_batch(10_000, 0.0)
        assert [rid for rid, _ in plan.entries] == ["fresh", "heavy"]

    def test_duplicate_ready_entry_rejected(self):
        pol = _policy("fcfs")
        st = _state("a")
        pol.on_arrival(st, 0.0)
        with pytest.raises(ProtocolError):
            pol.on_arrival(st, 0.0)

    def test_committed_plan_leaves_ready_set(self):
        pol = _policy("fcfs")
        pol.on_arrival(_state("a"), 0.0)
        plan = pol.build_next_batch(10_000, 1.0)
        assert plan.entries == (("a", 1),)
        assert pol.ready == {}

    def test_unknown_policy_name(self):
        with pytest.raises(ConfigError):
            make_policy("priority", PRED)


class TestPacking:
    def test_skips_oversized_but_keeps_scanning(self):
        pol = _policy("fcfs")
        big = _state("big", ready_at=0.0, computes=(1.0,))
        big.spec = RequestSpec(
            id="big",
            arrival_time=0.0,
            segments=(SegmentSpec(index=1, n_in=500, n_gen=500, direct_compute_time=1.0),),
        )
        big.__post_init__()
        small = _state("small", arrival=1.0)
        pol.on_arrival(big, 0.0)
        pol.on_arrival(small, 0.0)
        plan = pol.build_next_batch(10, 1.0)
        assert [rid for rid, _ in plan.entries] == ["small"]
        assert "big" in pol.ready

    def test_max_segments_cap(self):
        pol = _policy("fcfs")
        for k in range(5):
            pol.on_arrival(_state(f"r{k}", arrival=float(k), ready_at=float(k)), 4.0)
        plan = pol.build_next_batch(10_000, 5.0, max_segments=2)
        assert len(plan.entries) == 2
        assert len(pol.ready) == 3

    def test_admitted_tokens_accounted(self):
        pol = _policy("fcfs")
        pol.on_arrival(_state("a"), 0.0)
        pol.on_arrival(_state("b", arrival=1.0), 0.0)
        plan = pol.build_next_batch(10_000, 1.0)
        # each request: one segment of n_in=1, n_gen=1 -> 2 tokens
        assert plan.admitted_kv_tokens == 4


class TestMlfqMigration:
    CFG = MlfqConfig(num_queues=3, token_thresholds=(10.0, 20.0), aging_threshold=None)

    def _mlfq(self):
        return StatefulMlfqPolicy(PRED, self.CFG)

    def test_demotes_when_attained_crosses_threshold(self):
        pol = self._mlfq()
        st = _state("a", computes=(12.0, 1.0))
        pol.on_segment_complete(st, consumed_tokens=12.0, yielded_to_api=False, now=12.0)
        assert st.queue_level == 1
        assert st.attained_tokens == 0.0

    def test_stays_when_below_threshold(self):
        pol = self._mlfq()
        st = _state("a", computes=(4.0, 1.0))
        pol.on_segment_complete(st, 4.0, False, 4.0)
        assert st.queue_level == 0
        assert st.attained_tokens == 4.0

    def test_promotes_on_api_yield_with_low_attained(self):
        pol = self._mlfq()
        st = _state("a", computes=(4.0, 1.0))
        st.queue_level = 2
        pol.on_segment_complete(st, 4.0, True, 4.0)
        assert st.queue_level == 1
        assert st.attained_tokens == 0.0

    def test_promotion_clamped_at_top(self):
        pol = self._mlfq()
        st = _state("a", computes=(4.0, 1.0))
        st.queue_level = 0
        pol.on_segment_complete(st, 4.0, True, 4.0)
        assert st.queue_level == 0

    def test_demotion_wins_over_api_promotion(self):
        pol = self._mlfq()
        st = _state("a", computes=(25.0, 1.0))
        st.queue_level = 1
        pol.on_segment_complete(st, 25.0, True, 25.0)
        assert st.queue_level == 2

    def test_bottom_level_never_demotes_past_end(self):
        pol = self._mlfq()
        st = _state("a", computes=(50.0, 1.0))
        st.queue_level = 2
        pol.on_segment_complete(st, 50.0, False, 50.0)
        assert st.queue_level == 2

    def test_finished_request_keeps_state(self):
        pol = self._mlfq()
        st = _state("a", computes=(12.0,))
        st.current_segment = 1
        st.finish_time = 12.0
        from agentsched.scheduler import Phase

        st.phase = Phase.DONE
        pol.on_segment_complete(st, 12.0, False, 12.0)
        assert st.queue_level == 0


class TestMlfqBatching:
    def test_single_queue_per_cycle(self):
        cfg = MlfqConfig(num_queues=2, token_thresholds=(10.0,), aging_threshold=None)
        pol = StatefulMlfqPolicy(PRED, cfg)
        top = _state("top")
        deep = _state("deep", arrival=1.0)
        deep.queue_level = 1
        pol.on_arrival(top, 0.0)
        pol._enter_ready(deep, 0.0)
        plan = pol.build_next_batch(10_000, 1.0)
        assert [rid for rid, _ in plan.entries] == ["top"]
        assert "deep" in pol.ready

    def test_spillover_takes_from_lower_queues(self):
        cfg = MlfqConfig(
            num_queues=2, token_thresholds=(10.0,), aging_threshold=None, spillover=True
        )
        pol = StatefulMlfqPolicy(PRED, cfg)
        top = _state("top")
        deep = _state("deep", arrival=1.0)
        deep.queue_level = 1
        pol.on_arrival(top, 0.0)
        pol._enter_ready(deep, 0.0)
        plan = pol.build_next_batch(10_000, 1.0)
        assert [rid for rid, _ in plan.entries] == ["top", "deep"]

    def test_hrrn_orders_within_queue(self):
        pol = StatefulMlfqPolicy(PRED, MlfqConfig(aging_threshold=None))
        slow = _state("slow", computes=(10.0,), ready_at=0.0)
        quick = _state("quick", computes=(1.0,), ready_at=0.0, arrival=1.0)
        pol.on_arrival(slow, 0.0)
        pol.on_arrival(quick, 0.0)
        plan = pol.build_next_batch(10_000, 5.0)
        # same wait, shorter t_proc scores higher
        assert [rid for rid, _ in plan.entries] == ["quick", "slow"]

    def test_empty_ready_returns_empty_plan(self):
        pol = StatefulMlfqPolicy(PRED, MlfqConfig(aging_threshold=None))
        plan = pol.build_next_batch(10_000, 0.0)
        assert not plan
        assert plan.entries == ()

    def test_tiny_t_proc_is_clamped_not_fatal(self):
        pol = StatefulMlfqPolicy(PRED, MlfqConfig(aging_threshold=None))
        st = _state("tiny", computes=(0.0,))
        pol.on_arrival(st, 0.0)
        plan = pol.build_next_batch(10_000, 100.0)
        assert plan.entries == (("tiny", 1),)
        assert T_PROC_FLOOR > 0


class TestAging:
    def test_starved_bottom_request_promoted_and_logged(self):
        cfg = MlfqConfig(num_queues=2, token_thresholds=(5.0,), aging_threshold=3.0)
        pol = StatefulMlfqPolicy(PRED, cfg)
        old = _state("old", computes=(2.0,), ready_at=0.0)
        old.queue_level = 1
        pol._enter_ready(old, 0.0)
        pol.build_next_batch(10_000, 100.0)
        assert len(pol.aging_log) == 1
        entry = pol.aging_log[0]
        assert entry["request_id"] == "old"
        assert entry["ratio"] > 3.0

    def test_fresh_bottom_request_not_promoted(self):
        cfg = MlfqConfig(num_queues=2, token_thresholds=(5.0,), aging_threshold=3.0)
        pol = StatefulMlfqPolicy(PRED, cfg)
        fresh = _state("fresh", computes=(2.0,), ready_at=0.0)
        fresh.queue_level = 1
        pol._enter_ready(fresh, 0.0)
        pol.build_next_batch(10_000, 1.0)  # ratio (1+2)/2 = 1.5 <= 3
        assert pol.aging_log == []

    def test_disabled_aging_never_promotes(self):
        cfg = MlfqConfig(num_queues=2, token_thresholds=(5.0,), aging_threshold=None)
        pol = StatefulMlfqPolicy(PRED, cfg)
        old = _state("old", computes=(2.0,), ready_at=0.0)
        old.queue_level = 1
        fresh = _state("fresh", arrival=1.0, ready_at=90.0)
        pol._enter_ready(old, 0.0)
        pol.on_arrival(fresh, 90.0)
        plan = pol.build_next_batch(10_000, 100.0)
        assert [rid for rid, _ in plan.entries] == ["fresh"]


class TestMlfqConfigValidation:
    def test_threshold_count_must_match_queues(self):
        with pytest.raises(ConfigError):
            MlfqConfig(num_queues=3, token_thresholds=(10.0,))

    def test_thresholds_strictly_increasing(self):
        with pytest.raises(ConfigError):
            MlfqConfig(num_queues=3, token_thresholds=(20.0, 10.0))

    def test_tau_must_exceed_one(self):
        with pytest.raises(ConfigError):
            MlfqConfig(aging_threshold=1.0)

    def test_at_least_two_queues(self):
        with pytest.raises(ConfigError):
            MlfqConfig(num_queues=1, token_thresholds=())
