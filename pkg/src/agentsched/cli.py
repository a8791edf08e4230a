"""Command line front end.

Subcommands: generate (sample a workload trace), run (simulate one
configuration), sweep (grid of runs), gantt (render a span trace),
compare (side-by-side report table).

Every config key can come from three places, highest precedence first:
a CLI flag, a JSON config file given with --config, and built-in
defaults. Exit codes are stable: 0 success, 1 runtime failure, 2 usage
or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .errors import ConfigError, ProtocolError, SimulationError, TraceParseError, ValidationError
from .kvcache import MemoryModel
from .metrics import GanttSpan, RunReport, avg_jct, compare, degradation_ratio
from .predictor import ServiceTimePredictor, figure2_predictor
from .scheduler import POLICIES, MlfqConfig, make_policy
from .simulator import COST_MODELS, SERIAL, SimConfig, run
from .workload import (
    ApiCategory,
    LatencySpec,
    TokenRange,
    WorkloadConfig,
    figure2_workload,
    generate,
    load_trace,
    save_trace,
    workload_hash,
)

DEFAULT_MEMORY = {
    "capacity_tokens": 40_000,
    "availability": 1.0,
    "watermark": 0.9,
    "swap_bandwidth_tokens_per_s": 20_000.0,
    "bytes_per_token": 1.0,
}

FIGURE2_PRESET = {
    "cost_model": SERIAL,
    "max_batch_segments": 1,
    "cache_mode": "preserve",
    "memory": {"capacity_tokens": 1_000_000, "availability": 1.0},
}


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path}: top level must be an object")
    return cfg


def _dig(mapping: dict, dotted: str):
    node = mapping
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


class Resolver:
    """flags > config file > preset > defaults."""

    def __init__(self, args: argparse.Namespace, file_config: dict, preset: dict | None = None):
        self.args = args
        self.file_config = file_config
        self.preset = preset or {}

    def get(self, flag: str, dotted: str, default):
        value = getattr(self.args, flag, None)
        if value is not None:
            return value
        for source in (self.file_config, self.preset):
            found = _dig(source, dotted)
            if found is not None:
                return found
        return default


def _parse_aging(text: str | float | None):
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return None if math.isinf(text) else float(text)
    lowered = text.strip().lower()
    if lowered in ("inf", "none", "off", "disabled"):
        return None
    try:
        return float(lowered)
    except ValueError:
        raise ConfigError(f"cannot parse aging threshold {text!r}") from None


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse float list {text!r}") from None


def _parse_threshold_vectors(text: str) -> list[list[float]]:
    vectors = []
    for chunk in text.split(";"):
        if chunk.strip():
            vectors.append(_parse_float_list(chunk))
    return vectors


def build_workload_config(section: dict) -> WorkloadConfig:
    cfg = WorkloadConfig()
    if "seed" in section:
        cfg.seed = int(section["seed"])
    if "qps" in section:
        cfg.qps = float(section["qps"])
    if "duration" in section:
        cfg.duration = float(section["duration"])
    if "id_prefix" in section:
        cfg.id_prefix = str(section["id_prefix"])
    if "category_mix" in section:
        cfg.category_mix = {
            ApiCategory(name): float(p) for name, p in section["category_mix"].items()
        }
    if "segment_count_distribution" in section:
        cfg.segment_count_distribution = {
            int(k): float(p) for k, p in section["segment_count_distribution"].items()
        }
    if "token_distributions" in section:
        cfg.token_distributions = {
            ApiCategory(name): {
                key: TokenRange(int(lo), int(hi)) for key, (lo, hi) in ranges.items()
            }
            for name, ranges in section["token_distributions"].items()
        }
    if "api_latency_distributions" in section:
        cfg.api_latency_distributions = {
            ApiCategory(name): LatencySpec(
                mean=float(spec["mean"]), sigma=float(spec.get("sigma", 0.0))
            )
            for name, spec in section["api_latency_distributions"].items()
        }
    return cfg


def workload_config_to_dict(cfg: WorkloadConfig) -> dict:
    return {
        "seed": cfg.seed,
        "qps": cfg.qps,
        "duration": cfg.duration,
        "id_prefix": cfg.id_prefix,
        "category_mix": {c.value: p for c, p in cfg.category_mix.items()},
        "segment_count_distribution": {
            str(k): p for k, p in cfg.segment_count_distribution.items()
        },
        "token_distributions": {
            c.value: {key: [r.lo, r.hi] for key, r in ranges.items()}
            for c, ranges in cfg.token_distributions.items()
        },
        "api_latency_distributions": {
            c.value: {"mean": s.mean, "sigma": s.sigma}
            for c, s in cfg.api_latency_distributions.items()
        },
    }


# ---------------------------------------------------------------------------
# Single-run assembly
# ---------------------------------------------------------------------------


def _resolve_run_settings(resolver: Resolver) -> dict:
    thresholds = resolver.get("token_thresholds", "mlfq.token_thresholds", None)
    if isinstance(thresholds, str):
        thresholds = _parse_float_list(thresholds)
    settings = {
        "policy": resolver.get("policy", "policy", "stateful-mlfq"),
        "cost_model": resolver.get("cost_model", "cost_model", SERIAL),
        "max_batch_segments": resolver.get("max_batch_segments", "max_batch_segments", None),
        "cache_mode": resolver.get("cache_mode", "cache_mode", "adaptive"),
        "memory": {
            "capacity_tokens": int(
                resolver.get("memory_capacity", "memory.capacity_tokens", DEFAULT_MEMORY["capacity_tokens"])
            ),
            "availability": float(
                resolver.get("memory_availability", "memory.availability", DEFAULT_MEMORY["availability"])
            ),
            "watermark": float(
                resolver.get("watermark", "memory.watermark", DEFAULT_MEMORY["watermark"])
            ),
            "swap_bandwidth_tokens_per_s": float(
                resolver.get(
                    "swap_bandwidth",
                    "memory.swap_bandwidth_tokens_per_s",
                    DEFAULT_MEMORY["swap_bandwidth_tokens_per_s"],
                )
            ),
            "bytes_per_token": float(
                resolver.get("bytes_per_token", "memory.bytes_per_token", DEFAULT_MEMORY["bytes_per_token"])
            ),
        },
        "mlfq": {
            "num_queues": int(resolver.get("num_queues", "mlfq.num_queues", 6)),
            "token_thresholds": thresholds,
            "aging_threshold": _parse_aging(
                resolver.get("aging_threshold", "mlfq.aging_threshold", 5.0)
            ),
            "promotion_step": int(resolver.get("promotion_step", "mlfq.promotion_step", 1)),
            "spillover": bool(resolver.get("spillover", "mlfq.spillover", False)),
        },
        "predictor": resolver.get("predictor_config", "predictor", None),
        "noise_sigma": float(resolver.get("noise_sigma", "predictor.noise_sigma", 0.0)),
        "noise_seed": int(resolver.get("noise_seed", "predictor.noise_seed", 0)),
    }
    if settings["max_batch_segments"] is not None:
        settings["max_batch_segments"] = int(settings["max_batch_segments"])
    if settings["policy"] not in POLICIES:
        raise ConfigError(f"unknown policy {settings['policy']!r}; choose from {sorted(POLICIES)}")
    if settings["cost_model"] not in COST_MODELS:
        raise ConfigError(f"unknown cost model {settings['cost_model']!r}")
    return settings


def _build_memory(mem: dict) -> MemoryModel:
    capacity = int(round(mem["capacity_tokens"] * mem["availability"]))
    if capacity < 1:
        raise ConfigError(
            f"memory availability {mem['availability']} leaves no usable capacity"
        )
    return MemoryModel(
        capacity_tokens=capacity,
        bytes_per_token=mem["bytes_per_token"],
        swap_bandwidth_tokens_per_s=mem["swap_bandwidth_tokens_per_s"],
        watermark=mem["watermark"],
    )


def _build_predictor(settings: dict, example: str | None) -> ServiceTimePredictor:
    if settings["predictor"] is not None:
        return ServiceTimePredictor.from_config(settings["predictor"])
    if example == "figure2":
        return figure2_predictor()
    base = ServiceTimePredictor()
    if settings["noise_sigma"] > 0:
        from dataclasses import replace

        base = replace(base, noise_sigma=settings["noise_sigma"], noise_seed=settings["noise_seed"])
    return base


def _build_mlfq_config(mlfq: dict) -> MlfqConfig:
    kwargs = dict(
        num_queues=mlfq["num_queues"],
        aging_threshold=mlfq["aging_threshold"],
        promotion_step=mlfq["promotion_step"],
        spillover=mlfq["spillover"],
    )
    if mlfq["token_thresholds"] is not None:
        kwargs["token_thresholds"] = tuple(float(t) for t in mlfq["token_thresholds"])
    return MlfqConfig(**kwargs)


def execute_run(settings: dict, workload, predictor: ServiceTimePredictor) -> RunReport:
    memory = _build_memory(settings["memory"])
    policy = make_policy(settings["policy"], predictor, _build_mlfq_config(settings["mlfq"]))
    sim_config = SimConfig(
        cost_model=settings["cost_model"],
        max_batch_segments=settings["max_batch_segments"],
        cache_mode=settings["cache_mode"],
    )
    return run(workload, policy, predictor, memory, sim_config)


def _resolve_workload(args, resolver: Resolver, settings: dict):
    """Returns (requests, source description, workload config dict or None)."""
    example = getattr(args, "example", None)
    if example == "figure2":
        return figure2_workload(), "example:figure2", None
    if example is not None:
        raise ConfigError(f"unknown example {example!r}; available: figure2")
    trace = getattr(args, "trace", None) or _dig(resolver.file_config, "workload.trace")
    if trace:
        if not os.path.exists(trace):
            raise ConfigError(f"trace file not found: {trace}")
        return load_trace(trace), f"trace:{trace}", None
    section = dict(resolver.file_config.get("workload", {}))
    for key in ("seed", "qps", "duration"):
        value = getattr(args, key, None)
        if value is not None:
            section[key] = value
    wl_config = build_workload_config(section)
    return generate(wl_config), "generated", workload_config_to_dict(wl_config)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    file_config = _load_config_file(args.config)
    section = dict(file_config.get("workload", {}))
    for key in ("seed", "qps", "duration"):
        value = getattr(args, key, None)
        if value is not None:
            section[key] = value
    wl_config = build_workload_config(section)
    requests = generate(wl_config)
    save_trace(args.out, requests)
    print(f"wrote {len(requests)} requests to {args.out}")
    print(f"workload_hash={workload_hash(requests)}")
    return 0


def cmd_run(args) -> int:
    file_config = _load_config_file(args.config)
    preset = FIGURE2_PRESET if args.example == "figure2" else None
    resolver = Resolver(args, file_config, preset)
    settings = _resolve_run_settings(resolver)
    workload, source, wl_config = _resolve_workload(args, resolver, settings)
    if not workload:
        raise ConfigError(f"workload from {source} is empty; nothing to run")
    predictor = _build_predictor(settings, args.example)
    report = execute_run(settings, workload, predictor)

    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        report_path = os.path.join(args.out_dir, "report.json")
        gantt_path = os.path.join(args.out_dir, "gantt.jsonl")
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(report.to_json())
        with open(gantt_path, "w", encoding="utf-8") as f:
            f.write(report.gantt_jsonl())
        meta = {
            "source": source,
            "settings": settings,
            "workload_config": wl_config,
            "workload_hash": report.workload_hash,
        }
        with open(os.path.join(args.out_dir, "run_meta.json"), "w", encoding="utf-8") as f:
            f.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    agg = report.aggregates()
    print(f"policy={settings['policy']} source={source} requests={agg['count']}")
    print(f"avg_jct={agg['avg_jct']!r}")
    print(
        f"p50={agg['p50_jct']:.6g} p95={agg['p95_jct']:.6g} "
        f"p99={agg['p99_jct']:.6g} max_ready_wait={agg['max_ready_wait']:.6g}"
    )
    if args.out_dir:
        print(f"report written to {os.path.join(args.out_dir, 'report.json')}")
    return 0


def _sweep_cells(resolver: Resolver, args) -> list[dict]:
    sweep = resolver.file_config.get("sweep", {})

    def axis(flag: str, key: str, default, parse=None):
        raw = getattr(args, flag, None)
        if raw is not None:
            return parse(raw) if parse else raw
        return sweep.get(key, default)

    qps_values = axis("qps_list", "qps", [1.0], _parse_float_list)
    availabilities = axis("memory_availability_list", "memory_availability", [1.0], _parse_float_list)
    aging_raw = axis("aging_list", "aging_threshold", [5.0], lambda s: s.split(","))
    aging_values = [_parse_aging(a) for a in aging_raw]
    policies = axis("policies", "policies", ["stateful-mlfq"], lambda s: [p.strip() for p in s.split(",") if p.strip()])
    seeds = axis("seeds", "seeds", [0], lambda s: [int(x) for x in s.split(",") if x.strip()])
    vector_default = [None]
    vectors = axis("thresholds_list", "token_thresholds", vector_default, _parse_threshold_vectors)

    base_settings = _resolve_run_settings(resolver)
    workload_section = dict(resolver.file_config.get("workload", {}))
    if getattr(args, "duration", None) is not None:
        workload_section["duration"] = args.duration
    cells = []
    index = 0
    for policy in policies:
        for qps in qps_values:
            for availability in availabilities:
                for aging in aging_values:
                    for vector in vectors:
                        for seed in seeds:
                            settings = json.loads(json.dumps(base_settings))
                            settings["policy"] = policy
                            settings["memory"]["availability"] = availability
                            settings["mlfq"]["aging_threshold"] = aging
                            if vector is not None:
                                settings["mlfq"]["token_thresholds"] = vector
                            wl = dict(workload_section)
                            wl["qps"] = qps
                            wl["seed"] = seed
                            cells.append(
                                {
                                    "index": index,
                                    "settings": settings,
                                    "workload": wl,
                                    "qps": qps,
                                    "availability": availability,
                                    "aging": aging,
                                    "thresholds": vector,
                                    "policy": policy,
                                    "seed": seed,
                                    "out_dir": args.out_dir,
                                }
                            )
                            index += 1
    return cells


def _run_sweep_cell(cell: dict) -> dict:
    label = (
        f"{cell['policy']}_qps{cell['qps']}_mem{cell['availability']}"
        f"_aging{cell['aging'] if cell['aging'] is not None else 'inf'}_seed{cell['seed']}"
        + (f"_thr{cell['index']}" if cell["thresholds"] is not None else "")
    )
    row = {
        "cell": cell["index"],
        "label": label,
        "policy": cell["policy"],
        "qps": cell["qps"],
        "memory_availability": cell["availability"],
        "aging_threshold": cell["aging"] if cell["aging"] is not None else "inf",
        "seed": cell["seed"],
        "status": "ok",
        "avg_jct": None,
        "p50_jct": None,
        "p95_jct": None,
        "p99_jct": None,
        "count": None,
        "error": "",
    }
    try:
        wl_config = build_workload_config(cell["workload"])
        workload = generate(wl_config)
        if not workload:
            raise ConfigError("cell produced an empty workload")
        predictor = _build_predictor(cell["settings"], None)
        report = execute_run(cell["settings"], workload, predictor)
        agg = report.aggregates()
        row.update(
            avg_jct=agg["avg_jct"],
            p50_jct=agg["p50_jct"],
            p95_jct=agg["p95_jct"],
            p99_jct=agg["p99_jct"],
            count=agg["count"],
        )
        cell_dir = os.path.join(cell["out_dir"], f"cell_{cell['index']:04d}")
        os.makedirs(cell_dir, exist_ok=True)
        with open(os.path.join(cell_dir, "report.json"), "w", encoding="utf-8") as f:
            f.write(report.to_json())
        resolved = {
            "settings": cell["settings"],
            "workload_config": workload_config_to_dict(wl_config),
            "workload_hash": report.workload_hash,
            "label": label,
        }
        with open(os.path.join(cell_dir, "cell_meta.json"), "w", encoding="utf-8") as f:
            f.write(json.dumps(resolved, sort_keys=True, indent=2) + "\n")
    except Exception as exc:  # cell failures must not sink the sweep
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(args) -> int:
    file_config = _load_config_file(args.config)
    resolver = Resolver(args, file_config)
    os.makedirs(args.out_dir, exist_ok=True)
    cells = _sweep_cells(resolver, args)
    if not cells:
        raise ConfigError("sweep grid is empty")

    jobs = args.jobs or 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_sweep_cell, cells))
    else:
        rows = [_run_sweep_cell(cell) for cell in cells]
    rows.sort(key=lambda r: r["cell"])

    fieldnames = [
        "cell", "label", "policy", "qps", "memory_availability", "aging_threshold",
        "seed", "status", "count", "avg_jct", "p50_jct", "p95_jct", "p99_jct", "error",
    ]
    csv_path = os.path.join(args.out_dir, "summary.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(args.out_dir, "summary.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(rows, sort_keys=True, indent=2) + "\n")

    degradation = _degradation_rows(rows)
    with open(os.path.join(args.out_dir, "degradation.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(degradation, sort_keys=True, indent=2) + "\n")

    failures = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells, {len(failures)} failed; summary at {csv_path}")
    for row in failures:
        print(f"  cell {row['cell']} ({row['label']}): {row['error']}", file=sys.stderr)
    return 0


def _degradation_rows(rows: list[dict]) -> list[dict]:
    """Degradation of avg JCT from the lowest to the highest qps, per
    (policy, availability, aging, seed) group."""
    groups: dict[tuple, dict[float, float]] = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        key = (row["policy"], row["memory_availability"], row["aging_threshold"], row["seed"])
        groups.setdefault(key, {})[row["qps"]] = row["avg_jct"]
    out = []
    for (policy, availability, aging, seed), by_qps in sorted(groups.items(), key=str):
        if len(by_qps) < 2:
            continue
        low_q, high_q = min(by_qps), max(by_qps)
        out.append(
            {
                "policy": policy,
                "memory_availability": availability,
                "aging_threshold": aging,
                "seed": seed,
                "low_qps": low_q,
                "high_qps": high_q,
                "low_avg_jct": by_qps[low_q],
                "high_avg_jct": by_qps[high_q],
                "degradation_pct": degradation_ratio(by_qps[low_q], by_qps[high_q]),
            }
        )
    return out


KIND_GLYPH = {"ready-wait": ".", "api": "~", "swap": "%", "compute": "#"}
PAINT_ORDER = ("ready-wait", "api", "swap", "compute")


def _load_spans(path: str) -> list[GanttSpan]:
    spans = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                spans.append(GanttSpan.from_dict(record))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise TraceParseError(line_no, f"bad span record: {exc}") from None
    return spans


def cmd_gantt(args) -> int:
    if not os.path.exists(args.input):
        raise ConfigError(f"span file not found: {args.input}")
    spans = _load_spans(args.input)
    if not spans:
        print("warning: empty trace, nothing to render", file=sys.stderr)
        return 0

    if args.serial:
        compute = sorted(
            (s for s in spans if s.kind == "compute"), key=lambda s: (s.start, s.end)
        )
        for a, b in zip(compute, compute[1:]):
            if b.start < a.end - 1e-9:
                raise SimulationError(
                    f"serial trace has overlapping compute spans: "
                    f"{a.request_id}#{a.segment_index} [{a.start}, {a.end}] and "
                    f"{b.request_id}#{b.segment_index} [{b.start}, {b.end}]"
                )

    t0 = min(s.start for s in spans)
    t1 = max(s.end for s in spans)
    width = max(args.width, 10)
    span_of = t1 - t0 or 1.0

    lanes: dict[str, list[str]] = {}
    for kind in PAINT_ORDER:
        for s in (x for x in spans if x.kind == kind):
            lane = lanes.setdefault(s.request_id, [" "] * width)
            lo = int((s.start - t0) / span_of * (width - 1))
            hi = max(lo, int((s.end - t0) / span_of * (width - 1)))
            for i in range(lo, hi + 1):
                lane[i] = KIND_GLYPH[kind]

    label_w = max(len(rid) for rid in lanes)
    print(f"time [{t0:g}, {t1:g}]  glyphs: # compute, ~ api, % swap, . ready-wait")
    for rid in sorted(lanes):
        compute_spans = " ".join(
            f"[{s.start:g},{s.end:g}]"
            for s in sorted(spans, key=lambda x: x.start)
            if s.request_id == rid and s.kind == "compute"
        )
        print(f"{rid.rjust(label_w)} |{''.join(lanes[rid])}| {compute_spans}")

    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["request_id", "segment_index", "kind", "start", "end"])
            for s in sorted(spans, key=lambda x: (x.start, x.end, x.request_id, x.kind)):
                writer.writerow([s.request_id, s.segment_index, s.kind, s.start, s.end])
        print(f"plot data written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    reports: dict[str, RunReport] = {}
    for path in args.reports:
        if not os.path.exists(path):
            raise ConfigError(f"report not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            report = RunReport.from_dict(json.load(f))
        label = str(report.config.get("policy", os.path.basename(path)))
        if label in reports:
            label = f"{label}:{os.path.basename(path)}"
        reports[label] = report
    table = compare(reports, baseline=args.baseline)
    print(table.to_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--policy", choices=sorted(POLICIES), help="scheduling policy")
    p.add_argument("--cost-model", dest="cost_model", choices=list(COST_MODELS))
    p.add_argument("--max-batch-segments", dest="max_batch_segments", type=int)
    p.add_argument("--cache-mode", dest="cache_mode", choices=["adaptive", "preserve"])
    p.add_argument("--memory-capacity", dest="memory_capacity", type=int)
    p.add_argument("--memory-availability", dest="memory_availability", type=float)
    p.add_argument("--watermark", type=float)
    p.add_argument("--swap-bandwidth", dest="swap_bandwidth", type=float)
    p.add_argument("--bytes-per-token", dest="bytes_per_token", type=float)
    p.add_argument("--num-queues", dest="num_queues", type=int)
    p.add_argument("--token-thresholds", dest="token_thresholds", help="comma-separated")
    p.add_argument("--aging-threshold", dest="aging_threshold", help="float or 'inf'")
    p.add_argument("--promotion-step", dest="promotion_step", type=int)
    p.add_argument("--spillover", action="store_const", const=True, default=None)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--noise-seed", dest="noise_seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentsched",
        description="Segment-level scheduling simulator for multi-stage agent workloads",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="sample a workload trace")
    p_gen.add_argument("--config", help="JSON config file")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--qps", type=float)
    p_gen.add_argument("--duration", type=float)
    p_gen.add_argument("--out", required=True, help="trace file to write")
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="simulate one configuration")
    p_run.add_argument("--trace", help="workload trace to replay")
    p_run.add_argument("--example", choices=["figure2"], help="built-in demo workload")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--qps", type=float)
    p_run.add_argument("--duration", type=float)
    p_run.add_argument("--out-dir", dest="out_dir")
    _add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    p_sweep.add_argument("--out-dir", dest="out_dir", required=True)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--duration", type=float, help="workload duration per cell")
    p_sweep.add_argument("--qps-list", dest="qps_list")
    p_sweep.add_argument("--memory-availability-list", dest="memory_availability_list")
    p_sweep.add_argument("--aging-list", dest="aging_list")
    p_sweep.add_argument("--policies")
    p_sweep.add_argument("--seeds")
    p_sweep.add_argument("--thresholds-list", dest="thresholds_list",
                         help="semicolon-separated vectors of comma-separated thresholds")
    _add_run_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_gantt = sub.add_parser("gantt", help="render a span trace")
    p_gantt.add_argument("--input", required=True, help="gantt.jsonl from a run")
    p_gantt.add_argument("--width", type=int, default=72)
    p_gantt.add_argument("--serial", action="store_true",
                         help="fail if compute spans overlap")
    p_gantt.add_argument("--out", help="plot-data CSV to write")
    p_gantt.set_defaults(func=cmd_gantt)

    p_cmp = sub.add_parser("compare", help="tabulate reports of one workload")
    p_cmp.add_argument("reports", nargs="+", help="report.json files")
    p_cmp.add_argument("--baseline", help="label to diff against")
    p_cmp.add_argument("--out", help="JSON table to write")
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, TraceParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ProtocolError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
