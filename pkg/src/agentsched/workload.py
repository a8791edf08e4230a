"""Workload model and synthetic trace generation for multi-stage agent requests.

A request is an ordered chain of segments. Each segment covers one model
turn: a prefill over ``n_in`` new prompt tokens, a decode of ``n_gen``
output tokens, and, unless it is the last segment of the chain, an
external API call that the request waits on before its next segment
becomes ready. The last segment of every chain has no API call.

Trace file format (line-delimited JSON, one request per line)::

    {"v": 1, "id": "r00003", "arrival_time": 0.37, "segments": [
        {"index": 1, "n_in": 214, "n_gen": 56,
         "api_category": "Search", "api_duration": 2.81},
        {"index": 2, "n_in": 88, "n_gen": 112,
         "api_category": null, "api_duration": 0.0}]}

Each segment may also carry an optional ``direct_compute_time`` float.
When present the segment is treated as an opaque compute block of that
many seconds and its token counts are ignored by the cost model; the
built-in two-request demo workload uses this form.

Generation is fully deterministic: one ``random.Random(seed)`` stream,
consumed in a fixed order (arrival gap, category, segment count, then
per-segment token counts and API duration).
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .errors import ConfigError, TraceParseError, ValidationError

TRACE_SCHEMA_VERSION = 1


class ApiCategory(str, Enum):
    MATH = "Math"
    SEARCH = "Search"
    VIRTUAL_ENV = "VirtualEnv"
    CHAT = "Chat"
    IMAGE_GEN = "ImageGen"
    TTS = "TTS"
    NONE = "None"


# Categories a generated request can be assigned to (NONE marks the
# absence of an API call and is not a task category).
TASK_CATEGORIES = tuple(c for c in ApiCategory if c is not ApiCategory.NONE)


@dataclass(frozen=True)
class SegmentSpec:
    """Ground truth for one segment of a request chain.

    ``api_duration`` is the true wall-clock latency of the API call that
    follows the segment; policies never see it directly and must rely on
    predicted category means instead.
    """

    index: int
    n_in: int
    n_gen: int
    api_category: ApiCategory = ApiCategory.NONE
    api_duration: float = 0.0
    direct_compute_time: float | None = None

    @property
    def new_tokens(self) -> int:
        """Tokens this segment adds to the request context."""
        return self.n_in + self.n_gen


@dataclass(frozen=True)
class RequestSpec:
    id: str
    arrival_time: float
    segments: tuple[SegmentSpec, ...]

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    def segment(self, index: int) -> SegmentSpec:
        """Return the segment with 1-based position ``index``."""
        return self.segments[index - 1]

    @property
    def total_context_tokens(self) -> int:
        return sum(s.new_tokens for s in self.segments)


def validate_request(req: RequestSpec) -> None:
    """Raise ValidationError if ``req`` violates a structural invariant."""
    if not req.id:
        raise ValidationError("request id must be a non-empty string")
    if not isinstance(req.arrival_time, (int, float)) or not math.isfinite(req.arrival_time):
        raise ValidationError(f"request {req.id}: arrival_time must be finite")
    if req.arrival_time < 0:
        raise ValidationError(f"request {req.id}: arrival_time must be >= 0")
    if not req.segments:
        raise ValidationError(f"request {req.id}: must have at least one segment")
    for pos, seg in enumerate(req.segments, start=1):
        where = f"request {req.id} segment {pos}"
        if seg.index != pos:
            raise ValidationError(f"{where}: index {seg.index} breaks the 1..k run")
        if seg.n_in < 0 or seg.n_gen < 1:
            raise ValidationError(f"{where}: need n_in >= 0 and n_gen >= 1")
        if pos == 1 and seg.n_in < 1:
            raise ValidationError(f"{where}: first segment needs n_in >= 1")
        if not math.isfinite(seg.api_duration) or seg.api_duration < 0:
            raise ValidationError(f"{where}: api_duration must be finite and >= 0")
        if seg.api_category is ApiCategory.NONE and seg.api_duration != 0:
            raise ValidationError(f"{where}: api_duration must be 0 without an API call")
        if seg.direct_compute_time is not None:
            if not math.isfinite(seg.direct_compute_time) or seg.direct_compute_time < 0:
                raise ValidationError(f"{where}: direct_compute_time must be finite and >= 0")
    last = req.segments[-1]
    if last.api_category is not ApiCategory.NONE or last.api_duration != 0:
        raise ValidationError(f"request {req.id}: last segment must not carry an API call")


def validate_workload(requests: Iterable[RequestSpec]) -> None:
    seen: set[str] = set()
    for req in requests:
        validate_request(req)
        if req.id in seen:
            raise ValidationError(f"duplicate request id {req.id!r}")
        seen.add(req.id)


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------


def segment_to_dict(seg: SegmentSpec) -> dict:
    d: dict = {
        "index": seg.index,
        "n_in": seg.n_in,
        "n_gen": seg.n_gen,
        "api_category": None if seg.api_category is ApiCategory.NONE else seg.api_category.value,
        "api_duration": seg.api_duration,
    }
    if seg.direct_compute_time is not None:
        d["direct_compute_time"] = seg.direct_compute_time
    return d


def request_to_dict(req: RequestSpec) -> dict:
    return {
        "v": TRACE_SCHEMA_VERSION,
        "id": req.id,
        "arrival_time": req.arrival_time,
        "segments": [segment_to_dict(s) for s in req.segments],
    }


def _segment_from_dict(d: dict) -> SegmentSpec:
    raw_cat = d.get("api_category")
    if raw_cat is None:
        cat = ApiCategory.NONE
    else:
        try:
            cat = ApiCategory(raw_cat)
        except ValueError:
            raise ValidationError(f"unknown api_category {raw_cat!r}") from None
    return SegmentSpec(
        index=int(d["index"]),
        n_in=int(d["n_in"]),
        n_gen=int(d["n_gen"]),
        api_category=cat,
        api_duration=float(d.get("api_duration", 0.0)),
        direct_compute_time=(
            float(d["direct_compute_time"]) if d.get("direct_compute_time") is not None else None
        ),
    )


def request_from_dict(d: dict) -> RequestSpec:
    version = d.get("v")
    if version != TRACE_SCHEMA_VERSION:
        raise ValidationError(f"unsupported trace schema version {version!r}")
    segments = tuple(_segment_from_dict(s) for s in d["segments"])
    return RequestSpec(id=str(d["id"]), arrival_time=float(d["arrival_time"]), segments=segments)


def save_trace(path: str, requests: Iterable[RequestSpec]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for req in requests:
            f.write(json.dumps(request_to_dict(req), sort_keys=True))
            f.write("\n")


def load_trace(path: str) -> list[RequestSpec]:
    """Parse a line-delimited trace file.

    Malformed lines raise TraceParseError carrying the 1-based line
    number; semantic violations (duplicate ids, broken segment runs)
    raise ValidationError naming the line as well.
    """
    requests: list[RequestSpec] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise TraceParseError(line_no, "record must be a JSON object")
            version = record.get("v")
            if version != TRACE_SCHEMA_VERSION:
                raise TraceParseError(
                    line_no, f"unsupported trace schema version {version!r}"
                )
            try:
                req = request_from_dict(record)
                validate_request(req)
            except (KeyError, TypeError) as exc:
                raise TraceParseError(line_no, f"missing or malformed field: {exc}") from None
            except ValidationError as exc:
                raise ValidationError(f"line {line_no}: {exc}") from None
            if req.id in seen:
                raise ValidationError(
                    f"line {line_no}: duplicate request id {req.id!r} (first seen on line {seen[req.id]})"
                )
            seen[req.id] = line_no
            requests.append(req)
    return requests


def workload_hash(requests: Iterable[RequestSpec]) -> str:
    """Stable content hash used to check that two runs saw the same workload."""
    ordered = sorted(requests, key=lambda r: (r.arrival_time, r.id))
    payload = json.dumps([request_to_dict(r) for r in ordered], sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenRange:
    """Inclusive uniform integer range for sampled token counts."""

    lo: int
    hi: int

    def sample(self, rng: random.Random) -> int:
        return rng.randint(self.lo, self.hi)


@dataclass(frozen=True)
class LatencySpec:
    """Lognormal API latency with arithmetic mean ``mean`` and shape ``sigma``.

    sigma = 0 degenerates to the constant ``mean``.
    """

    mean: float
    sigma: float = 0.0

    def sample(self, rng: random.Random) -> float:
        if self.sigma == 0.0:
            return self.mean
        z = rng.gauss(0.0, 1.0)
        return self.mean * math.exp(self.sigma * z - 0.5 * self.sigma * self.sigma)


# Per-category API latency means, seconds. Math, ImageGen, and Chat come
# from measured latency statistics of those API families; the other three
# are repository defaults picked for plausible spread.
DEFAULT_API_MEANS: dict[ApiCategory, float] = {
    ApiCategory.MATH: 9e-5,
    ApiCategory.SEARCH: 3.0,
    ApiCategory.VIRTUAL_ENV: 0.5,
    ApiCategory.CHAT: 28.6,
    ApiCategory.IMAGE_GEN: 20.03,
    ApiCategory.TTS: 10.0,
}

# Long-latency categories are deliberately oversampled relative to a
# uniform mix so that API-heavy requests are well represented.
DEFAULT_CATEGORY_MIX: dict[ApiCategory, float] = {
    ApiCategory.MATH: 0.10,
    ApiCategory.SEARCH: 0.15,
    ApiCategory.VIRTUAL_ENV: 0.10,
    ApiCategory.CHAT: 0.25,
    ApiCategory.IMAGE_GEN: 0.25,
    ApiCategory.TTS: 0.15,
}

DEFAULT_SEGMENT_COUNTS: dict[int, float] = {2: 0.20, 3: 0.30, 4: 0.25, 5: 0.15, 6: 0.10}

DEFAULT_TOKEN_RANGES: dict[ApiCategory, dict[str, TokenRange]] = {
    ApiCategory.MATH: {"n_in": TokenRange(64, 256), "n_gen": TokenRange(64, 256)},
    ApiCategory.SEARCH: {"n_in": TokenRange(128, 512), "n_gen": TokenRange(32, 128)},
    ApiCategory.VIRTUAL_ENV: {"n_in": TokenRange(128, 512), "n_gen": TokenRange(64, 256)},
    ApiCategory.CHAT: {"n_in": TokenRange(64, 256), "n_gen": TokenRange(32, 96)},
    ApiCategory.IMAGE_GEN: {"n_in": TokenRange(32, 128), "n_gen": TokenRange(16, 64)},
    ApiCategory.TTS: {"n_in": TokenRange(64, 256), "n_gen": TokenRange(32, 128)},
}


def default_latency_specs(sigma: float = 0.25) -> dict[ApiCategory, LatencySpec]:
    return {cat: LatencySpec(mean, sigma) for cat, mean in DEFAULT_API_MEANS.items()}


@dataclass
class WorkloadConfig:
    seed: int = 0
    qps: float = 1.0
    duration: float = 60.0
    category_mix: dict[ApiCategory, float] = field(
        default_factory=lambda: dict(DEFAULT_CATEGORY_MIX)
    )
    segment_count_distribution: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_SEGMENT_COUNTS)
    )
    token_distributions: dict[ApiCategory, dict[str, TokenRange]] = field(
        default_factory=lambda: {c: dict(v) for c, v in DEFAULT_TOKEN_RANGES.items()}
    )
    api_latency_distributions: dict[ApiCategory, LatencySpec] = field(
        default_factory=default_latency_specs
    )
    id_prefix: str = "r"

    def validate(self) -> None:
        if not math.isfinite(self.qps) or self.qps < 0:
            raise ConfigError(f"qps must be finite and >= 0, got {self.qps}")
        if not math.isfinite(self.duration) or self.duration < 0:
            raise ConfigError(f"duration must be finite and >= 0, got {self.duration}")
        _check_distribution("category_mix", self.category_mix)
        if ApiCategory.NONE in self.category_mix:
            raise ConfigError("category_mix must not include the no-API marker")
        _check_distribution("segment_count_distribution", self.segment_count_distribution)
        for k in self.segment_count_distribution:
            if not isinstance(k, int) or k < 1:
                raise ConfigError(f"segment counts must be integers >= 1, got {k!r}")
        for cat, weight in self.category_mix.items():
            if weight > 0 and cat not in self.token_distributions:
                raise ConfigError(f"no token distribution for category {cat.value}")
            if weight > 0 and cat not in self.api_latency_distributions:
                raise ConfigError(f"no API latency distribution for category {cat.value}")
        for cat, ranges in self.token_distributions.items():
            for key in ("n_in", "n_gen"):
                rng = ranges.get(key)
                if rng is None or rng.lo > rng.hi or rng.lo < (1 if key == "n_gen" else 0):
                    raise ConfigError(f"bad {key} range for category {cat.value}: {rng}")
        for cat, spec in self.api_latency_distributions.items():
            if spec.mean < 0 or spec.sigma < 0:
                raise ConfigError(f"bad latency spec for category {cat.value}: {spec}")


def _check_distribution(name: str, dist: dict) -> None:
    if not dist:
        raise ConfigError(f"{name} must not be empty")
    total = 0.0
    for key, p in dist.items():
        if p < 0:
            raise ConfigError(f"{name}[{key!r}] is negative")
        total += p
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{name} must sum to 1, got {total}")


def _weighted_choice(rng: random.Random, dist: dict) -> object:
    # Keys are iterated in insertion order, which is part of the seeded
    # determinism contract.
    u = rng.random()
    acc = 0.0
    items = list(dist.items())
    for key, p in items:
        acc += p
        if u < acc:
            return key
    return items[-1][0]


def generate(config: WorkloadConfig) -> list[RequestSpec]:
    """Sample a workload from ``config``; deterministic for a fixed seed.

    Arrivals form a Poisson process with rate ``qps`` over ``duration``
    seconds. A qps of 0 yields the empty workload.
    """
    config.validate()
    if config.qps == 0 or config.duration == 0:
        return []
    rng = random.Random(config.seed)
    requests: list[RequestSpec] = []
    t = 0.0
    while True:
        t += rng.expovariate(config.qps)
        if t > config.duration:
            break
        category = _weighted_choice(rng, config.category_mix)
        num_segments = _weighted_choice(rng, config.segment_count_distribution)
        ranges = config.token_distributions[category]
        latency = config.api_latency_distributions[category]
        segments = []
        for idx in range(1, num_segments + 1):
            n_in = max(1, ranges["n_in"].sample(rng)) if idx == 1 else ranges["n_in"].sample(rng)
            n_gen = ranges["n_gen"].sample(rng)
            if idx == num_segments:
                segments.append(SegmentSpec(index=idx, n_in=n_in, n_gen=n_gen))
            else:
                segments.append(
                    SegmentSpec(
                        index=idx,
                        n_in=n_in,
                        n_gen=n_gen,
                        api_category=category,
                        api_duration=latency.sample(rng),
                    )
                )
        requests.append(
            RequestSpec(
                id=f"{config.id_prefix}{len(requests):05d}",
                arrival_time=t,
                segments=tuple(segments),
            )
        )
    return requests


def figure2_workload() -> list[RequestSpec]:
    """Built-in two-request demo: A needs 3+3+3 seconds of compute across
    three segments, B needs 4+1+2, both arrive at t=0, A ahead of B in
    arrival order. Segments chain with no API call in between, so each
    next segment is ready the instant the previous one finishes.
    """

    def chain(req_id: str, times: list[float]) -> RequestSpec:
        segs = tuple(
            SegmentSpec(index=i, n_in=1, n_gen=1, direct_compute_time=t)
            for i, t in enumerate(times, start=1)
        )
        return RequestSpec(id=req_id, arrival_time=0.0, segments=segs)

    return [chain("A", [3.0, 3.0, 3.0]), chain("B", [4.0, 1.0, 2.0])]
