"""Draft-then-verify sampling with the modified rejection rule.

One loop drafts ``K`` tokens from the draft model, scores all ``K + 1``
prefixes with the target in one call, then walks the drafts left to right.
Draft ``t`` is kept when ``r < min(1, q(x)/p(x))``; the first rejection
resamples from ``(q - p)+`` and ends the loop, and a loop that keeps all
``K`` drafts appends a bonus token from the last scored position.

Variates are consumed in a fixed order: ``K`` draft draws, then one
acceptance uniform per tested position, then exactly one resample-or-bonus
draw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .core import Distribution, RandomSource, TokenSequence, sample_categorical
from .decoding import DecodingMethod
from .errors import ConfigInvalidError, DraftZeroProbError, LengthMismatchError, ZeroResidualError

RESIDUAL_FLOOR = 1e-12


@dataclass(frozen=True)
class SpsConfig:
    k: int
    min_target_len: int
    method: DecodingMethod = DecodingMethod()

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 1:
            raise ConfigInvalidError(f"lookahead K must be an integer >= 1, got {self.k!r}")


@dataclass(frozen=True)
class LoopTrace:
    drafted: int
    accepted: int
    resampled: bool
    bonus: bool

    def __post_init__(self) -> None:
        if not 0 <= self.accepted <= self.drafted:
            raise ValueError("accepted count outside [0, K]")
        if self.resampled == self.bonus:
            raise ValueError("a loop ends in exactly one of resample or bonus")
        if self.bonus != (self.accepted == self.drafted):
            raise ValueError("bonus token only follows full acceptance")

    @property
    def emitted(self) -> int:
        return self.accepted + 1

    @property
    def tested(self) -> int:
        """Draft positions that had an acceptance test."""
        return self.accepted + (1 if self.resampled else 0)

    def to_record(self, loop: int) -> dict:
        return {"loop": loop, "accepted": self.accepted, "resampled": self.resampled, "bonus": self.bonus}


def accept_probability(q_val: float, p_val: float) -> float:
    if not p_val > 0.0:
        raise DraftZeroProbError(f"drafted token has draft probability {p_val!r}")
    if q_val >= p_val:
        return 1.0
    return q_val / p_val


def residual_weights(q: Distribution, p: Distribution) -> np.ndarray:
    if len(q) != len(p):
        raise LengthMismatchError(f"lengths differ: {len(q)} vs {len(p)}")
    return np.maximum(q.probs - p.probs, 0.0)


def residual_distribution(q: Distribution, p: Distribution) -> Distribution:
    """Normalized positive part of ``q - p``."""
    w = residual_weights(q, p)
    mass = float(w.sum())
    if mass < RESIDUAL_FLOOR:
        raise ZeroResidualError(f"residual mass {mass!r} below {RESIDUAL_FLOOR}")
    return Distribution._trusted(w / mass)


def _resample_target(q: Distribution, p: Distribution) -> Distribution:
    try:
        return residual_distribution(q, p)
    except ZeroResidualError:
        return q


def speculative_step(target, draft, context, config: SpsConfig, rng: RandomSource) -> tuple[list[int], LoopTrace]:
    """Run one draft/score/accept loop and return the emitted tokens."""
    method = config.method
    return _step(target.decode(method), draft.decode(method), list(context), config.k, rng)


def _step(q_model, p_model, ctx: list[int], K: int, rng: RandomSource) -> tuple[list[int], LoopTrace]:
    work = list(ctx)
    drafts: list[int] = []
    p_dists: list[Distribution] = []
    for _ in range(K):
        p_t = p_model._next(work)
        x = sample_categorical(p_t, rng)
        drafts.append(x)
        p_dists.append(p_t)
        work.append(x)
    # One (K+1, V) block of target probabilities; rows are wrapped only when sampled from.
    q_rows = q_model._score_rows(ctx, drafts)

    for t in range(K):
        x = drafts[t]
        r = rng.uniform()
        if r < accept_probability(q_rows[t, x], p_dists[t].probs[x]):
            continue
        q_t = Distribution._trusted(q_rows[t])
        y = sample_categorical(_resample_target(q_t, p_dists[t]), rng)
        return drafts[:t] + [y], LoopTrace(K, t, True, False)
    y = sample_categorical(Distribution._trusted(q_rows[K]), rng)
    return drafts + [y], LoopTrace(K, K, False, True)


def speculative_sample(target, draft, prompt, config: SpsConfig, rng: RandomSource) -> tuple[TokenSequence, list[LoopTrace]]:
    """Repeat loops until at least ``config.min_target_len`` tokens exist.

    The final loop is not truncated, so the result holds between ``T`` and
    ``T + K`` tokens.
    """
    tokens = list(prompt)
    if config.min_target_len <= len(tokens):
        raise ConfigInvalidError(
            f"target length {config.min_target_len} must exceed prompt length {len(tokens)}"
        )
    if target.vocab != draft.vocab:
        raise ConfigInvalidError("target and draft vocabularies differ")
    target.vocab.check(tokens)
    q_model = target.decode(config.method)
    p_model = draft.decode(config.method)
    traces: list[LoopTrace] = []
    while len(tokens) < config.min_target_len:
        emitted, trace = _step(q_model, p_model, tokens, config.k, rng)
        tokens.extend(emitted)
        traces.append(trace)
    return TokenSequence(tuple(tokens), len(prompt)), traces


def write_traces(traces: Iterable[LoopTrace], fh: TextIO) -> None:
    for i, tr in enumerate(traces):
        fh.write(json.dumps(tr.to_record(i)) + "\n")


def read_traces(fh: TextIO, k: int | None = None) -> list[LoopTrace]:
    """Parse JSON-lines traces. Without ``k`` the lookahead is unknown, so
    ``drafted`` is set to the largest value consistent with the record."""
    out = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        a = int(rec["accepted"])
        drafted = k if k is not None else (a if rec["bonus"] else a + 1)
        out.append(LoopTrace(drafted, a, bool(rec["resampled"]), bool(rec["bonus"])))
    return out
