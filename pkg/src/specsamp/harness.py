"""End-to-end benchmark: train n-gram target/draft pairs, run both samplers,
aggregate loop traces and timings, and write CSV or JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .core import RandomSource, TokenSequence
from .decoding import DecodingMethod, autoregressive_step
from .errors import ConfigInvalidError, CorpusTooShortError, EmptyStatsError
from .models import BYTE_BOS, BYTE_VOCAB, NGramModel, train_ngram
from .perf import AcceptanceStats, CostModel, speedup
from .speculative import LoopTrace, _step

HELD_OUT_FRACTION = 0.1
WARMUP_LOOPS = 5
NONDETERMINISTIC_FIELDS = ("wallclock_tokens_per_sec",)


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("specsamp") / "data" / "milton.txt"))


def byte_tokenize(text: str | bytes) -> TokenSequence:
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return TokenSequence(tuple(data), 0)


def detokenize(tokens) -> str:
    return bytes(t for t in tokens if t != BYTE_BOS).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class ModelSpec:
    order: int
    alpha: float


@dataclass(frozen=True)
class BenchConfig:
    corpus: str | None = None
    target: ModelSpec = ModelSpec(4, 0.01)
    draft: ModelSpec = ModelSpec(2, 0.01)
    method: str = "nucleus:0.8"
    k: int = 4
    num_sequences: int = 100
    prompt_len: int = 16
    completion_len: int = 64
    seed: int = 0
    cost: dict = field(default_factory=dict)
    workers: int = 1
    wallclock: bool = True

    def __post_init__(self) -> None:
        if self.num_sequences < 1:
            raise ConfigInvalidError("num_sequences must be >= 1")
        if self.k < 1:
            raise ConfigInvalidError("K must be >= 1")
        if self.draft.order > self.target.order:
            raise ConfigInvalidError("draft order must not exceed target order")
        if self.prompt_len < 0 or self.completion_len < 1:
            raise ConfigInvalidError("prompt_len must be >= 0 and completion_len >= 1")
        if self.workers < 1:
            raise ConfigInvalidError("workers must be >= 1")
        try:
            DecodingMethod.parse(self.method)
        except ValueError as exc:
            raise ConfigInvalidError(str(exc)) from exc

    @classmethod
    def from_dict(cls, doc: dict) -> BenchConfig:
        doc = dict(doc)
        for key in ("target", "draft"):
            if key in doc and isinstance(doc[key], dict):
                doc[key] = ModelSpec(int(doc[key]["order"]), float(doc[key]["alpha"]))
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalidError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def decoding(self) -> DecodingMethod:
        return DecodingMethod.parse(self.method)

    def cost_model(self) -> CostModel:
        base = asdict(CostModel.reference_default())
        base.update(self.cost)
        return CostModel.from_dict({k: v for k, v in base.items() if v is not None})


@dataclass
class MethodRow:
    method: str
    K: int
    loops: int
    tokens: int
    mean_tokens_per_loop: float
    std_tokens_per_loop: float
    acceptance_rates: list
    modeled_ms_per_token: float
    modeled_speedup: float
    wallclock_tokens_per_sec: float | None


@dataclass
class Report:
    config: dict
    rows: list
    parity: dict
    traces: list = field(default_factory=list, repr=False)

    def row(self, method: str) -> MethodRow:
        return next(r for r in self.rows if r.method == method)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
            "parity": self.parity,
            "nondeterministic": list(NONDETERMINISTIC_FIELDS),
        }


@dataclass
class _SeqResult:
    index: int
    ars_tokens: list
    ars_times: list
    sps_tokens: list
    sps_times: list
    traces: list
    ars_loglik: float
    sps_loglik: float


def load_corpus(path: str | os.PathLike | None) -> np.ndarray:
    p = bundled_corpus_path() if path is None else Path(path)
    data = p.read_bytes()
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def _mean_loglik(decoded_target, prompt: list, completion: list) -> float:
    dists = decoded_target.score_parallel(prompt, completion[:-1])
    return math.fsum(math.log(d.probs[x]) for d, x in zip(dists, completion)) / len(completion)


def _run_sequence(i: int, tail: np.ndarray, q_model, p_model, config: BenchConfig, master: RandomSource) -> _SeqResult:
    rng = master.fork(i)
    span = tail.size - config.prompt_len + 1
    offset = min(int(rng.fork(0).uniform() * span), span - 1)
    prompt = tail[offset : offset + config.prompt_len].tolist()
    T = config.prompt_len + config.completion_len
    clock = time.perf_counter

    ars_rng = rng.fork(1)
    tokens = list(prompt)
    ars_times = []
    while len(tokens) < T:
        t0 = clock()
        tokens.append(autoregressive_step(q_model, tokens, ars_rng))
        ars_times.append(clock() - t0)
    ars_out = tokens[len(prompt) :]

    sps_rng = rng.fork(2)
    tokens = list(prompt)
    sps_times, traces = [], []
    while len(tokens) < T:
        t0 = clock()
        emitted, trace = _step(q_model, p_model, tokens, config.k, sps_rng)
        sps_times.append(clock() - t0)
        tokens.extend(emitted)
        traces.append(trace)
    sps_out = tokens[len(prompt) :]

    n = config.completion_len
    return _SeqResult(
        i,
        ars_out,
        ars_times,
        sps_out,
        sps_times,
        traces,
        _mean_loglik(q_model, prompt, ars_out[:n]),
        _mean_loglik(q_model, prompt, sps_out[:n]),
    )


def _acceptance_rates(traces: list[LoopTrace], k: int) -> list[float]:
    reached = np.zeros(k)
    accepted = np.zeros(k)
    for tr in traces:
        accepted[: tr.accepted] += 1
        reached[: tr.tested] += 1
    return [float(a / r) if r else 0.0 for a, r in zip(accepted, reached)]


def _tokens_per_sec(times_per_loop: list[list[float]], tokens_per_loop: list[list[int]]) -> float | None:
    times = [t for seq in times_per_loop for t in seq][WARMUP_LOOPS:]
    toks = [n for seq in tokens_per_loop for n in seq][WARMUP_LOOPS:]
    total = math.fsum(times)
    return sum(toks) / total if total > 0 else None


def _parity(ars: np.ndarray, sps: np.ndarray) -> dict:
    se_a = float(ars.std(ddof=1) / math.sqrt(ars.size)) if ars.size > 1 else math.inf
    se_s = float(sps.std(ddof=1) / math.sqrt(sps.size)) if sps.size > 1 else math.inf
    diff = float(sps.mean() - ars.mean())
    se = math.hypot(se_a, se_s)
    z = abs(diff) / se if se > 0 else (0.0 if diff == 0 else math.inf)
    return {
        "ars_mean_loglik": float(ars.mean()),
        "sps_mean_loglik": float(sps.mean()),
        "ars_stderr": se_a,
        "sps_stderr": se_s,
        "z": z,
        "pass": bool(z < 2.0),
    }


def train_pair(config: BenchConfig, corpus: np.ndarray | None = None) -> tuple[NGramModel, NGramModel, np.ndarray]:
    corpus = load_corpus(config.corpus) if corpus is None else corpus
    split = int(corpus.size * (1.0 - HELD_OUT_FRACTION))
    train, tail = corpus[:split], corpus[split:]
    if tail.size < config.prompt_len + 1 or train.size < config.target.order:
        raise CorpusTooShortError(f"corpus of {corpus.size} bytes too short for this configuration")
    target = train_ngram(train, config.target.order, config.target.alpha, BYTE_VOCAB, BYTE_BOS)
    if config.draft == config.target:
        draft = target
    else:
        draft = train_ngram(train, config.draft.order, config.draft.alpha, BYTE_VOCAB, BYTE_BOS)
    return target, draft, tail


def run_benchmark(config: BenchConfig, models: tuple | None = None) -> Report:
    """Run ArS and SpS over ``num_sequences`` held-out prompts.

    ``models`` may carry a pre-trained ``(target, draft, tail)`` triple.
    """
    target, draft, tail = train_pair(config) if models is None else models
    method = config.decoding()
    q_model, p_model = target.decode(method), draft.decode(method)
    master = RandomSource(config.seed)

    workers = 1 if config.wallclock else config.workers
    if workers == 1:
        results = [_run_sequence(i, tail, q_model, p_model, config, master) for i in range(config.num_sequences)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: _run_sequence(i, tail, q_model, p_model, config, master),
                                    range(config.num_sequences)))
    results.sort(key=lambda r: r.index)

    traces = [tr for r in results for tr in r.traces]
    if not traces:
        raise EmptyStatsError("benchmark produced no speculative loops")
    emitted = np.array([tr.emitted for tr in traces], dtype=np.float64)
    cost = config.cost_model()
    modeled = speedup(cost, config.k, AcceptanceStats.from_traces(traces), seed=config.seed)

    ars_loops = sum(len(r.ars_times) for r in results)
    ars_wall = sps_wall = None
    if config.wallclock:
        ars_wall = _tokens_per_sec([r.ars_times for r in results], [[1] * len(r.ars_times) for r in results])
        sps_wall = _tokens_per_sec([r.sps_times for r in results], [[t.emitted for t in r.traces] for r in results])

    rows = [
        MethodRow("ars", 0, ars_loops, ars_loops, 1.0, 0.0, [], cost.target_ms, 1.0, ars_wall),
        MethodRow(
            "sps",
            config.k,
            len(traces),
            int(emitted.sum()),
            float(emitted.mean()),
            float(emitted.std(ddof=1)) if emitted.size > 1 else 0.0,
            _acceptance_rates(traces, config.k),
            modeled.ms_per_token,
            modeled.speedup,
            sps_wall,
        ),
    ]
    parity = _parity(np.array([r.ars_loglik for r in results]), np.array([r.sps_loglik for r in results]))
    return Report(config.to_dict(), rows, parity, traces)


# -- report emission ---------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_columns(k: int) -> list[str]:
    return (
        ["method", "K", "mean_tokens_per_loop", "std_tokens_per_loop"]
        + [f"acceptance_rate_pos{i}" for i in range(1, k + 1)]
        + ["modeled_ms_per_token", "modeled_speedup", "wallclock_tokens_per_sec"]
    )


def report_csv(report: Report) -> str:
    k = max(r.K for r in report.rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(k))
    for r in report.rows:
        rates = list(r.acceptance_rates) + [None] * (k - len(r.acceptance_rates))
        w.writerow(
            [r.method, r.K, _fmt(r.mean_tokens_per_loop), _fmt(r.std_tokens_per_loop)]
            + [_fmt(x) for x in rates]
            + [_fmt(r.modeled_ms_per_token), _fmt(r.modeled_speedup), _fmt(r.wallclock_tokens_per_sec)]
        )
    return buf.getvalue()


def report_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"


def emit_report(report: Report, fmt: str, destination) -> None:
    """Write ``report`` as ``csv`` or ``json``.

    ``destination`` is a path, ``"-"`` for stdout, or a text stream. Files are
    written to a temporary sibling and renamed, so a failure leaves no partial
    output.
    """
    if not report.rows or not any(r.method == "sps" and r.loops > 0 for r in report.rows):
        raise EmptyStatsError("report has no speculative loops")
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = report_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if destination == "-":
        sys.stdout.write(text)
        return
    if hasattr(destination, "write"):
        destination.write(text)
        return
    dest = Path(destination)
    fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", dir=dest.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, dest)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def strip_nondeterministic(text: str, fmt: str) -> str:
    """Drop wall-clock fields so reruns can be compared byte for byte."""
    if fmt == "json":
        doc = json.loads(text)
        for row in doc["rows"]:
            for key in NONDETERMINISTIC_FIELDS:
                row.pop(key, None)
        return json.dumps(doc, indent=2) + "\n"
    rows = list(csv.reader(io.StringIO(text)))
    keep = [i for i, name in enumerate(rows[0]) if name not in NONDETERMINISTIC_FIELDS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([row[i] for i in keep])
    return buf.getvalue()


def with_overrides(config: BenchConfig, **overrides) -> BenchConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
