"""Run reports, aggregate metrics, and post-hoc audits.

A RunReport is the complete, serializable outcome of one simulation:
per-request timing records, the span-level Gantt trace, decision audit
logs, and the resolved configuration. Everything downstream (CLI tables,
sweeps, comparisons, audits) works from reports alone, so a report can
be written to disk and re-checked later without the engine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ValidationError

REPORT_SCHEMA_VERSION = 1

SPAN_KINDS = ("compute", "api", "swap", "ready-wait")


@dataclass(frozen=True)
class GanttSpan:
    request_id: str
    segment_index: int
    kind: str  # one of SPAN_KINDS
    start: float
    end: float

    def to_dict(self) -> dict:
        return {
            "v": REPORT_SCHEMA_VERSION,
            "request_id": self.request_id,
            "segment_index": self.segment_index,
            "kind": self.kind,
            "start": self.start,
            "end": self.end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GanttSpan:
        return cls(
            request_id=str(d["request_id"]),
            segment_index=int(d["segment_index"]),
            kind=str(d["kind"]),
            start=float(d["start"]),
            end=float(d["end"]),
        )


@dataclass(frozen=True)
class RequestRecord:
    id: str
    arrival: float
    finish: float
    jct: float
    num_segments: int
    total_compute: float
    total_api: float
    total_ready_wait: float
    total_swap_delay: float

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "arrival": self.arrival,
            "finish": self.finish,
            "jct": self.jct,
            "num_segments": self.num_segments,
            "total_compute": self.total_compute,
            "total_api": self.total_api,
            "total_ready_wait": self.total_ready_wait,
            "total_swap_delay": self.total_swap_delay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RequestRecord:
        return cls(
            id=str(d["id"]),
            arrival=float(d["arrival"]),
            finish=float(d["finish"]),
            jct=float(d["jct"]),
            num_segments=int(d["num_segments"]),
            total_compute=float(d["total_compute"]),
            total_api=float(d["total_api"]),
            total_ready_wait=float(d["total_ready_wait"]),
            total_swap_delay=float(d["total_swap_delay"]),
        )


@dataclass
class RunReport:
    workload_hash: str
    config: dict
    per_request: list[RequestRecord]
    gantt: list[GanttSpan]
    audits: dict = field(default_factory=dict)

    @property
    def jcts(self) -> list[float]:
        return [r.jct for r in self.per_request]

    def aggregates(self) -> dict:
        jcts = self.jcts
        return {
            "count": len(jcts),
            "avg_jct": avg_jct(self),
            "p50_jct": percentile(jcts, 50),
            "p95_jct": percentile(jcts, 95),
            "p99_jct": percentile(jcts, 99),
            "max_ready_wait": max(r.total_ready_wait for r in self.per_request),
        }

    def to_dict(self) -> dict:
        return {
            "v": REPORT_SCHEMA_VERSION,
            "workload_hash": self.workload_hash,
            "config": self.config,
            "aggregates": self.aggregates(),
            "per_request": [r.to_dict() for r in self.per_request],
            "gantt": [s.to_dict() for s in self.gantt],
            "audits": self.audits,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def gantt_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in self.gantt)

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        if d.get("v") != REPORT_SCHEMA_VERSION:
            raise ValidationError(f"unsupported report schema version {d.get('v')!r}")
        return cls(
            workload_hash=str(d["workload_hash"]),
            config=dict(d["config"]),
            per_request=[RequestRecord.from_dict(r) for r in d["per_request"]],
            gantt=[GanttSpan.from_dict(s) for s in d["gantt"]],
            audits=dict(d.get("audits", {})),
        )


# ---------------------------------------------------------------------------
# Aggregates
# ---------------------------------------------------------------------------


def avg_jct(report: RunReport) -> float:
    if not report.per_request:
        raise ValidationError("cannot average an empty report")
    return sum(report.jcts) / len(report.per_request)


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    if not values:
        raise ValidationError("cannot take a percentile of no values")
    if not 0 < q <= 100:
        raise ValidationError(f"percentile must be in (0, 100], got {q}")
    ordered = sorted(values)
    rank = math.ceil(q / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


def degradation_ratio(low_load_avg: float, high_load_avg: float) -> float:
    """Percent increase of the high-load average over the low-load one."""
    if low_load_avg <= 0:
        raise ValidationError(f"low-load average must be positive, got {low_load_avg}")
    return (high_load_avg - low_load_avg) / low_load_avg * 100.0


# ---------------------------------------------------------------------------
# Comparison across policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    count: int
    avg_jct: float
    p50_jct: float
    p95_jct: float
    p99_jct: float
    delta_vs_baseline_pct: float


@dataclass(frozen=True)
class ComparisonTable:
    baseline: str
    rows: tuple[ComparisonRow, ...]

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "rows": [vars(r) for r in self.rows],
        }

    def to_text(self) -> str:
        header = ("label", "count", "avg_jct", "p50", "p95", "p99", "vs baseline")
        body = [
            (
                r.label,
                str(r.count),
                f"{r.avg_jct:.4f}",
                f"{r.p50_jct:.4f}",
                f"{r.p95_jct:.4f}",
                f"{r.p99_jct:.4f}",
                f"{r.delta_vs_baseline_pct:+.1f}%",
            )
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in body)
        return "\n".join(lines)


def compare(reports: dict[str, RunReport], baseline: str | None = None) -> ComparisonTable:
    """Side-by-side table over runs of the same workload.

    All reports must carry the same workload hash; comparing runs of
    different workloads (or seeds) is refused.
    """
    if not reports:
        raise ValidationError("nothing to compare")
    hashes = {r.workload_hash for r in reports.values()}
    if len(hashes) > 1:
        raise ValidationError(
            f"reports cover different workloads (hashes {sorted(h[:12] for h in hashes)}); "
            "refusing to compare"
        )
    if baseline is None:
        baseline = "fcfs" if "fcfs" in reports else sorted(reports)[0]
    if baseline not in reports:
        raise ValidationError(f"baseline {baseline!r} is not among the reports")
    base_avg = avg_jct(reports[baseline])
    rows = []
    for label in sorted(reports):
        agg = reports[label].aggregates()
        rows.append(
            ComparisonRow(
                label=label,
                count=agg["count"],
                avg_jct=agg["avg_jct"],
                p50_jct=agg["p50_jct"],
                p95_jct=agg["p95_jct"],
                p99_jct=agg["p99_jct"],
                delta_vs_baseline_pct=(agg["avg_jct"] - base_avg) / base_avg * 100.0,
            )
        )
    rows.sort(key=lambda r: (r.avg_jct, r.label))
    return ComparisonTable(baseline=baseline, rows=tuple(rows))


# ---------------------------------------------------------------------------
# Post-hoc audits
# ---------------------------------------------------------------------------


def audit_time_decomposition(report: RunReport, tol: float = 1e-9) -> float:
    """Check that each request's JCT splits exactly into ready-wait,
    compute, API, and swap time, twice over: once against the record
    totals and once rebuilt from the request's Gantt spans, which must
    tile [arrival, finish] with no gaps or overlaps. Returns the largest
    absolute deviation seen; raises ValidationError beyond ``tol``.
    """
    spans_by_request: dict[str, list[GanttSpan]] = {}
    for span in report.gantt:
        if span.kind not in SPAN_KINDS:
            raise ValidationError(f"unknown span kind {span.kind!r}")
        if span.end < span.start:
            raise ValidationError(f"negative span for request {span.request_id}")
        spans_by_request.setdefault(span.request_id, []).append(span)

    worst = 0.0

    def check(label: str, got: float, want: float) -> None:
        nonlocal worst
        err = abs(got - want)
        worst = max(worst, err)
        if err > tol:
            raise ValidationError(f"{label}: {got!r} != {want!r} (err {err:.3e})")

    for rec in report.per_request:
        parts = rec.total_ready_wait + rec.total_compute + rec.total_api + rec.total_swap_delay
        check(f"request {rec.id} jct decomposition", parts, rec.jct)
        check(f"request {rec.id} finish-arrival", rec.finish - rec.arrival, rec.jct)

        spans = sorted(spans_by_request.get(rec.id, []), key=lambda s: (s.start, s.end))
        cursor = rec.arrival
        by_kind = dict.fromkeys(SPAN_KINDS, 0.0)
        for span in spans:
            check(f"request {rec.id} span continuity at {span.start}", span.start, cursor)
            by_kind[span.kind] += span.end - span.start
            cursor = span.end
        check(f"request {rec.id} last span end", cursor, rec.finish)
        check(f"request {rec.id} span ready-wait", by_kind["ready-wait"], rec.total_ready_wait)
        check(f"request {rec.id} span compute", by_kind["compute"], rec.total_compute)
        check(f"request {rec.id} span api", by_kind["api"], rec.total_api)
        check(f"request {rec.id} span swap", by_kind["swap"], rec.total_swap_delay)
    return worst


def audit_waste_log(report: RunReport) -> int:
    """Replay logged cache decisions: the chosen strategy's waste must
    not exceed either alternative's. Returns the number of adaptive
    decisions checked."""
    checked = 0
    for entry in report.audits.get("waste_log", []):
        if entry.get("reason") != "estimated":
            continue
        wastes = {k: entry[k] for k in ("preserve", "discard", "swap")}
        chosen = entry["chosen"]
        if any(wastes[chosen] > w for w in wastes.values()):
            raise ValidationError(
                f"request {entry['request_id']} at t={entry['time']}: "
                f"chose {chosen} but wastes are {wastes}"
            )
        checked += 1
    return checked
