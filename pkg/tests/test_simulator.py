"""End-to-end engine behaviour: batch timing, policy schedules on the
demo workload, conservation properties, and the clairvoyant bound."""

import random

import pytest

from agentsched import (
    ORACLE_SEGMENT_LIMIT,
    ApiCategory,
    ConfigError,
    Engine,
    MemoryModel,
    ProtocolError,
    RequestSpec,
    SegmentSpec,
    SimConfig,
    ValidationError,
    execute_batch,
    figure2_predictor,
    figure2_workload,
    make_policy,
    oracle_optimal,
    run,
)
from conftest import run_figure2
from reference import (
    FIGURE2_EXPECTED,
    FIGURE2_FCFS_LANES,
    FIGURE2_ORACLE_AVG,
    brute_force_best_avg_jct,
)


def _chain(rid, arrival, computes, gaps=None):
    """Request whose segment times are given directly, skipping the
    token-level cost model."""
    gaps = list(gaps) if gaps is not None else [0.0] * (len(computes) - 1)
    assert len(gaps) == len(computes) - 1
    segments = []
    for i, c in enumerate(computes):
        last = i == len(computes) - 1
        segments.append(
            SegmentSpec(
                index=i + 1,
                n_in=1,
                n_gen=1,
                api_category=ApiCategory.NONE if last or gaps[i] == 0 else ApiCategory.SEARCH,
                api_duration=0.0 if last else float(gaps[i]),
                direct_compute_time=float(c),
            )
        )
    return RequestSpec(id=rid, arrival_time=float(arrival), segments=tuple(segments))


class TestExecuteBatch:
    def test_serial_chains_segments(self):
        spans, end = execute_batch([3.0, 4.0], "serial", 0.0)
        assert spans == [(0.0, 3.0), (3.0, 7.0)]
        assert end == 7.0

    def test_parallel_max_overlaps(self):
        spans, end = execute_batch([3.0, 4.0], "parallel-max", 0.0)
        assert spans == [(0.0, 3.0), (0.0, 4.0)]
        assert end == 4.0

    def test_offset_start(self):
        spans, end = execute_batch([2.0], "serial", 5.0)
        assert spans == [(5.0, 7.0)]
        assert end == 7.0

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            execute_batch([], "serial", 0.0)

    def test_negative_duration_rejected(self):
        with pytest.raises(ValidationError):
            execute_batch([1.0, -0.5], "serial", 0.0)

    def test_unknown_cost_model_rejected(self):
        with pytest.raises(ConfigError):
            execute_batch([1.0], "magic", 0.0)


class TestFigure2Schedules:
    @pytest.mark.parametrize("policy_name", sorted(FIGURE2_EXPECTED))
    def test_per_request_jcts(self, policy_name):
        report = run_figure2(policy_name)
        want = FIGURE2_EXPECTED[policy_name]
        got = {rec.id: rec.jct for rec in report.per_request}
        assert got == {"A": want["A"], "B": want["B"]}
        assert sum(got.values()) / 2 == want["avg"]

    def test_fcfs_compute_lanes(self):
        report = run_figure2("fcfs")
        lanes = [
            (s.request_id, s.segment_index, s.start, s.end)
            for s in sorted(report.gantt, key=lambda s: s.start)
            if s.kind == "compute"
        ]
        assert lanes == list(FIGURE2_FCFS_LANES)

    def test_stateful_mlfq_runs_demo(self):
        report = run_figure2("stateful-mlfq")
        assert {rec.id for rec in report.per_request} == {"A", "B"}
        assert all(rec.jct > 0 for rec in report.per_request)


class TestSingleRequest:
    def test_jct_is_compute_plus_api(self):
        spec = _chain("solo", 0.0, [2.0, 3.0, 1.5], gaps=[4.0, 0.5])
        report = run(
            [spec],
            make_policy("fcfs", figure2_predictor()),
            figure2_predictor(),
            MemoryModel(capacity_tokens=1_000_000),
            SimConfig(cost_model="serial", cache_mode="preserve"),
        )
        rec = report.per_request[0]
        assert rec.jct == pytest.approx(2.0 + 3.0 + 1.5 + 4.0 + 0.5)
        assert rec.total_ready_wait == pytest.approx(0.0)
        assert rec.total_api == pytest.approx(4.5)

    def test_late_arrival_shifts_finish(self):
        spec = _chain("solo", 10.0, [2.0])
        report = run(
            [spec],
            make_policy("fcfs", figure2_predictor()),
            figure2_predictor(),
            MemoryModel(capacity_tokens=1_000_000),
            SimConfig(cache_mode="preserve"),
        )
        rec = report.per_request[0]
        assert rec.finish == pytest.approx(12.0)
        assert rec.jct == pytest.approx(2.0)


class TestWorkConservation:
    def test_serial_makespan_equals_total_compute(self):
        # All requests present from t=0, no API gaps: a serial machine
        # under FCFS must never idle, so the last finish is the sum of
        # all compute time.
        rng = random.Random(7)
        specs = [
            _chain(f"r{i}", 0.0, [rng.randint(1, 5) for _ in range(rng.randint(1, 3))])
            for i in range(6)
        ]
        total = sum(seg.direct_compute_time for spec in specs for seg in spec.segments)
        report = run(
            specs,
            make_policy("fcfs", figure2_predictor()),
            figure2_predictor(),
            MemoryModel(capacity_tokens=1_000_000),
            SimConfig(cost_model="serial", max_batch_segments=1, cache_mode="preserve"),
        )
        assert max(rec.finish for rec in report.per_request) == pytest.approx(total)


class TestOracle:
    def test_figure2_value(self, figure2):
        workload, predictor = figure2
        assert oracle_optimal(workload, predictor) == FIGURE2_ORACLE_AVG

    def test_two_jobs_shortest_first(self):
        specs = [_chain("x", 0.0, [2.0]), _chain("y", 0.0, [5.0])]
        assert oracle_optimal(specs, figure2_predictor()) == pytest.approx(4.5)

    def test_matches_brute_force_on_random_instances(self):
        rng = random.Random(1234)
        for _ in range(40):
            n = rng.randint(1, 3)
            jobs = []
            specs = []
            for i in range(n):
                k = rng.randint(1, 3)
                computes = [float(rng.randint(1, 5)) for _ in range(k)]
                gaps = [float(rng.randint(0, 3)) for _ in range(k - 1)]
                arrival = float(rng.randint(0, 5))
                jobs.append((arrival, computes, gaps))
                specs.append(_chain(f"j{i}", arrival, computes, gaps))
            want = brute_force_best_avg_jct(jobs)
            assert oracle_optimal(specs, figure2_predictor()) == pytest.approx(want)

    def test_segment_limit_guard(self):
        specs = [_chain(f"r{i}", 0.0, [1.0] * 5) for i in range(3)]
        assert sum(len(s.segments) for s in specs) > ORACLE_SEGMENT_LIMIT
        with pytest.raises(ConfigError, match="interleaving"):
            oracle_optimal(specs, figure2_predictor())

    def test_empty_workload_rejected(self):
        with pytest.raises(ValidationError):
            oracle_optimal([], figure2_predictor())

    def test_policies_never_beat_oracle_on_demo(self):
        for name in FIGURE2_EXPECTED:
            assert FIGURE2_EXPECTED[name]["avg"] >= FIGURE2_ORACLE_AVG - 1e-9


class TestEngineContract:
    def test_empty_workload_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            run([], make_policy("fcfs", figure2_predictor()))

    def test_policy_reuse_rejected(self):
        predictor = figure2_predictor()
        policy = make_policy("fcfs", predictor)
        memory = MemoryModel(capacity_tokens=1_000_000)
        config = SimConfig(cache_mode="preserve")
        run(figure2_workload(), policy, predictor, memory, config)
        with pytest.raises(ProtocolError, match="single-use"):
            Engine(
                figure2_workload(),
                policy,
                predictor,
                MemoryModel(capacity_tokens=1_000_000),
                config,
            )

    def test_repeat_runs_byte_identical(self):
        first = run_figure2("stateful-mlfq").to_json()
        second = run_figure2("stateful-mlfq").to_json()
        assert first == second

    def test_report_carries_config_echo(self):
        report = run_figure2("fcfs")
        assert report.config["policy"] == "fcfs"
        assert report.config["cost_model"] == "serial"


class TestMemoryPressure:
    def test_deadlock_breaks_by_eviction(self):
        # Both requests park a 40-token cache during their API calls
        # (80 of 100 tokens pinned). Once both APIs have returned there
        # are no pending events and neither 30-token resume fits, so the
        # engine must discard one cache instead of stalling forever.
        def spec(rid):
            return RequestSpec(
                id=rid,
                arrival_time=0.0,
                segments=(
                    SegmentSpec(1, 30, 10, ApiCategory.SEARCH, 10.0, direct_compute_time=1.0),
                    SegmentSpec(2, 0, 30, direct_compute_time=1.0),
                ),
            )

        report = run(
            [spec("w1"), spec("w2")],
            make_policy("fcfs", figure2_predictor()),
            figure2_predictor(),
            MemoryModel(capacity_tokens=100),
            SimConfig(cost_model="serial", cache_mode="preserve"),
        )
        assert {rec.id for rec in report.per_request} == {"w1", "w2"}
        evictions = [
            e for e in report.audits["waste_log"] if e["reason"] == "deadlock-evicted"
        ]
        assert len(evictions) == 1
        assert evictions[0]["request_id"] == "w1"
        assert evictions[0]["freed_tokens"] == 40

    def test_oversized_request_fails_loudly(self):
        spec = _chain("huge", 0.0, [1.0])
        spec = RequestSpec(
            id="huge",
            arrival_time=0.0,
            segments=(SegmentSpec(1, 500, 200, direct_compute_time=1.0),),
        )
        from agentsched import SimulationError

        with pytest.raises(SimulationError, match="fit in memory"):
            run(
                [spec],
                make_policy("fcfs", figure2_predictor()),
                figure2_predictor(),
                MemoryModel(capacity_tokens=100),
                SimConfig(cache_mode="preserve"),
            )
