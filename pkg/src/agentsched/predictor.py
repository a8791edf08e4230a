"""Service time prediction for segments and API calls.

Compute time for a segment decomposes into a prefill part, looked up by
piecewise-linear interpolation over a measured profile, and a decode
part that is linear in the number of generated tokens. API latency is
predicted as the per-category historical mean. Segments carrying a
``direct_compute_time`` bypass the token model entirely.

Ground-truth execution inside the simulator uses the same tables with
the noise knob forced off, so predictions and reality only diverge when
noise is explicitly enabled.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .workload import DEFAULT_API_MEANS, ApiCategory, RequestSpec, SegmentSpec


@dataclass(frozen=True)
class PrefillProfile:
    """Measured (token_count, seconds) pairs, strictly increasing in tokens.

    Lookups interpolate linearly between neighbouring points, through the
    origin below the first point, and extrapolate with the final slope
    beyond the last. A zero-token prefill costs nothing.
    """

    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise ConfigError("prefill profile needs at least two points")
        prev_n, prev_s = 0, 0.0
        for n, s in self.points:
            if n <= prev_n:
                raise ConfigError("prefill profile token counts must be strictly increasing")
            if s <= 0 or s < prev_s:
                raise ConfigError("prefill profile latencies must be positive and non-decreasing")
            prev_n, prev_s = n, s

    def predict(self, n_in: int) -> float:
        if n_in < 0:
            raise ConfigError(f"n_in must be >= 0, got {n_in}")
        if n_in == 0:
            return 0.0
        pts = ((0, 0.0),) + self.points
        for (n0, s0), (n1, s1) in zip(pts, pts[1:]):
            if n_in <= n1:
                return s0 + (s1 - s0) * (n_in - n0) / (n1 - n0)
        (n0, s0), (n1, s1) = self.points[-2], self.points[-1]
        return max(0.0, s1 + (s1 - s0) * (n_in - n1) / (n1 - n0))


@dataclass(frozen=True)
class DecodeModel:
    seconds_per_token: float

    def __post_init__(self):
        if not math.isfinite(self.seconds_per_token) or self.seconds_per_token <= 0:
            raise ConfigError(f"decode latency must be positive, got {self.seconds_per_token}")


@dataclass(frozen=True)
class ApiLatencyTable:
    means: dict[ApiCategory, float]

    def predict(self, category: ApiCategory) -> float:
        if category is ApiCategory.NONE:
            return 0.0
        if category not in self.means:
            raise ConfigError(f"no latency mean configured for category {category.value}")
        mean = self.means[category]
        if mean < 0:
            raise ConfigError(f"latency mean for {category.value} is negative")
        return mean


def predict_prefill(profile: PrefillProfile, n_in: int) -> float:
    return profile.predict(n_in)


def predict_compute(profile: PrefillProfile, decode: DecodeModel, seg: SegmentSpec) -> float:
    if seg.direct_compute_time is not None:
        return seg.direct_compute_time
    return profile.predict(seg.n_in) + seg.n_gen * decode.seconds_per_token


def predict_api(table: ApiLatencyTable, category: ApiCategory) -> float:
    return table.predict(category)


DEFAULT_PREFILL_POINTS: tuple[tuple[int, float], ...] = (
    (128, 0.010),
    (256, 0.021),
    (512, 0.044),
    (1024, 0.092),
    (2048, 0.190),
)
DEFAULT_DECODE_SECONDS_PER_TOKEN = 0.01


@dataclass(frozen=True)
class ServiceTimePredictor:
    """Bundles the three tables plus an optional lognormal noise knob.

    ``noise_sigma`` > 0 multiplies each compute prediction by a unit-mean
    lognormal factor that is stable for a given (seed, request id,
    segment index), so repeated queries about the same segment agree.
    Noise never touches ground truth or API means.
    """

    profile: PrefillProfile = field(
        default_factory=lambda: PrefillProfile(DEFAULT_PREFILL_POINTS)
    )
    decode: DecodeModel = field(
        default_factory=lambda: DecodeModel(DEFAULT_DECODE_SECONDS_PER_TOKEN)
    )
    api_table: ApiLatencyTable = field(
        default_factory=lambda: ApiLatencyTable(dict(DEFAULT_API_MEANS))
    )
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def exact(self) -> ServiceTimePredictor:
        """Noise-free copy; the engine uses this as its hardware model."""
        if self.noise_sigma == 0.0:
            return self
        return replace(self, noise_sigma=0.0)

    def _noise_factor(self, request_id: str, segment_index: int) -> float:
        if self.noise_sigma == 0.0:
            return 1.0
        digest = hashlib.sha256(
            f"{self.noise_seed}:{request_id}:{segment_index}".encode("utf-8")
        ).digest()
        z = random.Random(int.from_bytes(digest[:8], "big")).gauss(0.0, 1.0)
        return math.exp(self.noise_sigma * z - 0.5 * self.noise_sigma**2)

    def prefill_seconds(self, n_in: int) -> float:
        return self.profile.predict(n_in)

    def compute_seconds(self, seg: SegmentSpec, request_id: str = "") -> float:
        base = predict_compute(self.profile, self.decode, seg)
        return base * self._noise_factor(request_id, seg.index)

    def api_seconds(self, category: ApiCategory) -> float:
        return self.api_table.predict(category)

    def remaining_service_seconds(self, req: RequestSpec, from_index: int) -> float:
        """Predicted compute plus API time from segment ``from_index`` on."""
        total = 0.0
        for seg in req.segments[from_index - 1 :]:
            total += self.compute_seconds(seg, req.id)
            total += self.api_table.predict(seg.api_category)
        return total

    # -- config round-trip ---------------------------------------------

    def to_config(self) -> dict:
        return {
            "prefill_profile": [[n, s] for n, s in self.profile.points],
            "decode_seconds_per_token": self.decode.seconds_per_token,
            "api_latency_means": {c.value: m for c, m in self.api_table.means.items()},
            "noise_sigma": self.noise_sigma,
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_config(cls, config: dict) -> ServiceTimePredictor:
        try:
            profile = PrefillProfile(
                tuple((int(n), float(s)) for n, s in config["prefill_profile"])
            )
            decode = DecodeModel(float(config["decode_seconds_per_token"]))
            means = {
                ApiCategory(name): float(m)
                for name, m in config["api_latency_means"].items()
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad predictor config: {exc}") from None
        return cls(
            profile=profile,
            decode=decode,
            api_table=ApiLatencyTable(means),
            noise_sigma=float(config.get("noise_sigma", 0.0)),
            noise_seed=int(config.get("noise_seed", 0)),
        )


def figure2_predictor() -> ServiceTimePredictor:
    """Predictor paired with the two-request demo: every segment there
    carries a direct compute time, and one token-equivalent equals one
    second of work.
    """
    return ServiceTimePredictor(
        profile=PrefillProfile(((1, 0.001), (2, 0.002))),
        decode=DecodeModel(1.0),
        api_table=ApiLatencyTable({c: 0.0 for c in ApiCategory if c is not ApiCategory.NONE}),
    )
