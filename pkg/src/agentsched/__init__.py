"""Deterministic scheduling simulator for multi-stage agent requests.

A request is an ordered chain of segments; each segment runs some
compute on the serving engine and may then leave for an external tool
call before the next segment becomes ready. The package provides a
workload generator, a service-time predictor, several scheduling
policies (including a stateful multi-level feedback queue), a KV-cache
manager that arbitrates preserve/discard/swap during tool calls, and a
discrete-event engine that produces auditable reports.
"""

from .errors import (
    ConfigError,
    ProtocolError,
    SimulationError,
    TraceParseError,
    ValidationError,
)
from .kvcache import (
    CacheAction,
    KvCacheManager,
    MemoryModel,
    WasteEstimate,
    estimate_waste,
)
from .metrics import (
    ComparisonTable,
    GanttSpan,
    RequestRecord,
    RunReport,
    audit_time_decomposition,
    audit_waste_log,
    avg_jct,
    compare,
    degradation_ratio,
    percentile,
)
from .predictor import (
    ApiLatencyTable,
    DecodeModel,
    PrefillProfile,
    ServiceTimePredictor,
    figure2_predictor,
)
from .scheduler import (
    POLICIES,
    FcfsPolicy,
    LasPolicy,
    MlfqConfig,
    RequestSjfPolicy,
    RequestState,
    SchedulingPolicy,
    SegmentSjfPolicy,
    StatefulMlfqPolicy,
    make_policy,
)
from .simulator import (
    COST_MODELS,
    ORACLE_SEGMENT_LIMIT,
    PARALLEL_MAX,
    SERIAL,
    Engine,
    SimConfig,
    execute_batch,
    oracle_optimal,
    run,
)
from .workload import (
    ApiCategory,
    LatencySpec,
    RequestSpec,
    SegmentSpec,
    TokenRange,
    WorkloadConfig,
    figure2_workload,
    generate,
    load_trace,
    save_trace,
    workload_hash,
)

__version__ = "0.1.0"

__all__ = [
    "ApiCategory",
    "ApiLatencyTable",
    "CacheAction",
    "ComparisonTable",
    "ConfigError",
    "COST_MODELS",
    "DecodeModel",
    "Engine",
    "ORACLE_SEGMENT_LIMIT",
    "FcfsPolicy",
    "GanttSpan",
    "KvCacheManager",
    "LasPolicy",
    "LatencySpec",
    "MemoryModel",
    "MlfqConfig",
    "PARALLEL_MAX",
    "POLICIES",
    "PrefillProfile",
    "ProtocolError",
    "RequestRecord",
    "RequestSjfPolicy",
    "RequestSpec",
    "RequestState",
    "RunReport",
    "SchedulingPolicy",
    "SegmentSjfPolicy",
    "SegmentSpec",
    "SERIAL",
    "ServiceTimePredictor",
    "SimConfig",
    "SimulationError",
    "StatefulMlfqPolicy",
    "TokenRange",
    "TraceParseError",
    "ValidationError",
    "WasteEstimate",
    "WorkloadConfig",
    "audit_time_decomposition",
    "audit_waste_log",
    "avg_jct",
    "compare",
    "degradation_ratio",
    "estimate_waste",
    "execute_batch",
    "figure2_predictor",
    "figure2_workload",
    "generate",
    "load_trace",
    "make_policy",
    "oracle_optimal",
    "percentile",
    "run",
    "save_trace",
    "workload_hash",
]
