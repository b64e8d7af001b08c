"""Analytical latency model for draft-then-verify decoding.

A loop costs ``K * draft_ms + scoring_ms(K) + overhead_ms`` and emits between
1 and ``K + 1`` tokens. Speedups are ratios of per-token times against one
target call per token.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigInvalidError, EmptyStatsError, NonPositiveError

# Draft and target per-token latencies used as the default cost model (ms).
REFERENCE_TARGET_MS = 14.1
REFERENCE_DRAFT_MS = 1.8

SEQUENCE_TOKENS = 128
SWEEP_COLUMNS = ("K", "mean_ms_per_128", "std_ms", "efficiency", "loop_ms", "speedup")


def bandwidth_ceiling(model_bytes: float, aggregate_bandwidth: float) -> float:
    """Lowest achievable ms/token when every parameter byte is read once per token."""
    if not model_bytes > 0 or not aggregate_bandwidth > 0:
        raise NonPositiveError("model size and bandwidth must both be positive")
    return 1000.0 * model_bytes / aggregate_bandwidth


@dataclass(frozen=True)
class CostModel:
    target_ms: float
    draft_ms: float
    scoring_ms: float | None = None
    scoring_slope: float = 0.0
    overhead_ms: float = 0.0
    model_bytes: float | None = None
    aggregate_bandwidth: float | None = None

    def __post_init__(self) -> None:
        if not self.target_ms > 0:
            raise NonPositiveError(f"target_ms must be > 0, got {self.target_ms}")
        if self.scoring_ms is not None and not self.scoring_ms > 0:
            raise NonPositiveError(f"scoring_ms must be > 0, got {self.scoring_ms}")
        # A zero draft cost or overhead is a legitimate idealisation.
        for name in ("draft_ms", "overhead_ms", "scoring_slope"):
            if getattr(self, name) < 0:
                raise NonPositiveError(f"{name} must be >= 0")

    @classmethod
    def reference_default(cls) -> CostModel:
        return cls(REFERENCE_TARGET_MS, REFERENCE_DRAFT_MS)

    @classmethod
    def from_dict(cls, doc: dict) -> CostModel:
        known = {"target_ms", "draft_ms", "scoring_ms", "scoring_slope", "overhead_ms", "model_bytes", "aggregate_bandwidth"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigInvalidError(f"unknown cost-model keys: {sorted(unknown)}")
        if "target_ms" not in doc or "draft_ms" not in doc:
            raise ConfigInvalidError("cost model needs target_ms and draft_ms")
        return cls(**{k: float(v) for k, v in doc.items() if v is not None})

    def scoring_time(self, k: int) -> float:
        base = self.target_ms if self.scoring_ms is None else self.scoring_ms
        return base + self.scoring_slope * k

    def ceiling_ms(self) -> float | None:
        if self.model_bytes is None or self.aggregate_bandwidth is None:
            return None
        return bandwidth_ceiling(self.model_bytes, self.aggregate_bandwidth)


def loop_time(cost: CostModel, k: int) -> float:
    if k < 0:
        raise ValueError("lookahead must be >= 0")
    return k * cost.draft_ms + cost.scoring_time(k) + cost.overhead_ms


def expected_tokens_per_loop(alpha: float, k: int) -> float:
    """Mean emitted tokens when each draft is accepted independently with prob ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return float(k + 1)
    return (1.0 - alpha ** (k + 1)) / (1.0 - alpha)


@dataclass(frozen=True)
class AcceptanceStats:
    """Either an i.i.d. per-position acceptance rate or observed loop sizes.

    ``emitted`` holds tokens emitted per loop as observed at lookahead ``k``.
    """

    alpha: float | None = None
    emitted: tuple[int, ...] | None = None
    k: int | None = None

    def __post_init__(self) -> None:
        if (self.alpha is None) == (self.emitted is None):
            raise ValueError("give exactly one of alpha or emitted")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.emitted is not None:
            if len(self.emitted) == 0:
                raise EmptyStatsError("no loops recorded")
            object.__setattr__(self, "emitted", tuple(int(e) for e in self.emitted))
            top = None if self.k is None else self.k + 1
            if min(self.emitted) < 1 or (top is not None and max(self.emitted) > top):
                raise ValueError("emitted counts must lie in [1, K+1]")

    @classmethod
    def from_traces(cls, traces) -> AcceptanceStats:
        traces = list(traces)
        if not traces:
            raise EmptyStatsError("no loops recorded")
        return cls(emitted=tuple(t.emitted for t in traces), k=traces[0].drafted)

    @property
    def is_model(self) -> bool:
        return self.alpha is not None

    def alpha_estimate(self) -> float:
        """Per-position acceptance rate; for observed loops, accepted/tested
        assuming every loop that stopped short of ``k`` ended in a rejection."""
        if self.alpha is not None:
            return self.alpha
        k = self.k if self.k is not None else max(self.emitted) - 1
        accepted = sum(e - 1 for e in self.emitted)
        tested = sum(e if e - 1 < k else k for e in self.emitted)
        return accepted / tested if tested else 1.0

    def mean_emitted(self, k: int) -> float:
        if self.alpha is not None:
            return expected_tokens_per_loop(self.alpha, k)
        if self.k is not None and k != self.k:
            return expected_tokens_per_loop(self.alpha_estimate(), k)
        return float(np.mean(self.emitted))

    def emitted_from_uniforms(self, u: np.ndarray, k: int) -> np.ndarray:
        """Map uniforms in [0, 1) to loop sizes (inverse transform)."""
        if self.alpha is not None or (self.k is not None and k != self.k):
            a = self.alpha_estimate()
            if a <= 0.0:
                return np.ones(u.shape, dtype=np.int64)
            if a >= 1.0:
                return np.full(u.shape, k + 1, dtype=np.int64)
            # Successes before the first rejection: P(G >= j) = a**j.
            g = np.floor(np.log1p(-u) / math.log(a))
            return (np.minimum(g, k) + 1).astype(np.int64)
        data = np.asarray(self.emitted, dtype=np.int64)
        return data[np.minimum((u * data.size).astype(np.int64), data.size - 1)]


@dataclass(frozen=True)
class SpeedupResult:
    speedup: float
    ms_per_token: float
    mean_sequence_ms: float
    std_sequence_ms: float


def _uniforms(n_sequences: int, tokens: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random((n_sequences, tokens))


def simulate_sequence_times(cost: CostModel, k: int, stats: AcceptanceStats, n_sequences: int = 10_000,
                            tokens: int = SEQUENCE_TOKENS, seed: int = 0, uniforms: np.ndarray | None = None) -> np.ndarray:
    """Wall time (ms) to reach ``tokens`` tokens for each simulated sequence."""
    u = _uniforms(n_sequences, tokens, seed) if uniforms is None else uniforms
    emitted = stats.emitted_from_uniforms(u, k)
    # Each loop emits at least one token, so ``tokens`` loops always suffice.
    reached = np.cumsum(emitted, axis=1) >= tokens
    loops = np.argmax(reached, axis=1) + 1
    return loops * loop_time(cost, k)


def speedup(cost: CostModel, k: int, stats: AcceptanceStats, n_sequences: int = 10_000,
            tokens: int = SEQUENCE_TOKENS, seed: int = 0) -> SpeedupResult:
    if stats is None:
        raise EmptyStatsError("no acceptance statistics")
    per_token = loop_time(cost, k) / stats.mean_emitted(k)
    times = simulate_sequence_times(cost, k, stats, n_sequences, tokens, seed)
    return SpeedupResult(cost.target_ms / per_token, per_token, float(times.mean()), float(times.std(ddof=1)))


def speedup_bound(cost: CostModel, k: int) -> float:
    return (k + 1) * cost.target_ms / loop_time(cost, k)


@dataclass(frozen=True)
class SweepRow:
    K: int
    mean_ms_per_128: float
    std_ms: float
    efficiency: float
    loop_ms: float
    speedup: float


def k_sweep(cost: CostModel, stats: AcceptanceStats, k_values: Iterable[int], n_sequences: int = 10_000,
            tokens: int = SEQUENCE_TOKENS, seed: int = 0) -> list[SweepRow]:
    """One row per lookahead; all rows share the same simulated uniforms."""
    ks = list(k_values)
    if not ks:
        raise ValueError("empty K range")
    u = _uniforms(n_sequences, tokens, seed)
    rows = []
    for k in ks:
        mean_emitted = stats.mean_emitted(k)
        lt = loop_time(cost, k)
        times = simulate_sequence_times(cost, k, stats, tokens=tokens, uniforms=u)
        rows.append(
            SweepRow(
                K=k,
                mean_ms_per_128=float(times.mean()),
                std_ms=float(times.std(ddof=1)),
                efficiency=mean_emitted / (k + 1),
                loop_ms=lt,
                speedup=cost.target_ms * mean_emitted / lt,
            )
        )
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r.K, repr(r.mean_ms_per_128), repr(r.std_ms), repr(r.efficiency), repr(r.loop_ms), repr(r.speedup)])
    return buf.getvalue()
