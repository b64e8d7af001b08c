"""Decoding transforms and the plain auto-regressive sampler.

Every transform runs on a 2-D ``(rows, V)`` array so that a single
distribution and a batch of scored positions go through identical float
operations, row for row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Distribution, RandomSource, TokenSequence, sample_categorical
from .errors import AllZeroError, BadParamError, ConfigInvalidError

KINDS = ("plain", "greedy", "top_k", "nucleus")

# Cumulative mass within this much of p counts as reaching p.
NUCLEUS_SLACK = 1e-12


@dataclass(frozen=True)
class DecodingMethod:
    """A probability transform: optional temperature, then one truncation."""

    kind: str = "plain"
    param: float | None = None
    temperature: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise BadParamError(f"unknown decoding kind {self.kind!r}")
        if self.temperature is not None and not self.temperature > 0:
            raise BadParamError(f"temperature must be > 0, got {self.temperature}")
        if self.kind == "top_k":
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise BadParamError(f"top-k needs an integer k >= 1, got {self.param}")
            object.__setattr__(self, "param", int(self.param))
        elif self.kind == "nucleus":
            if self.param is None or not 0 < self.param <= 1:
                raise BadParamError(f"nucleus needs 0 < p <= 1, got {self.param}")
        elif self.param is not None:
            raise BadParamError(f"{self.kind} takes no parameter")

    @classmethod
    def plain(cls) -> DecodingMethod:
        return cls()

    @classmethod
    def greedy(cls) -> DecodingMethod:
        return cls("greedy")

    @classmethod
    def top_k(cls, k: int, temperature: float | None = None) -> DecodingMethod:
        return cls("top_k", k, temperature)

    @classmethod
    def nucleus(cls, p: float, temperature: float | None = None) -> DecodingMethod:
        return cls("nucleus", p, temperature)

    @classmethod
    def temp(cls, tau: float) -> DecodingMethod:
        return cls("plain", None, tau)

    @classmethod
    def parse(cls, text: str) -> DecodingMethod:
        """Parse ``plain``, ``greedy``, ``temp:0.8``, ``topk:40``, ``nucleus:0.8``
        or a composition such as ``temp:0.8+nucleus:0.95``."""
        temperature = None
        kind, param = "plain", None
        parts = [p.strip() for p in text.strip().split("+") if p.strip()]
        if not parts:
            raise BadParamError("empty decoding method")
        for part in parts:
            name, _, arg = part.partition(":")
            name = name.lower()
            try:
                if name in ("temp", "temperature"):
                    if temperature is not None:
                        raise BadParamError("temperature given twice")
                    temperature = float(arg)
                    continue
                if kind != "plain":
                    raise BadParamError(f"more than one truncation in {text!r}")
                if name == "plain" and not arg:
                    continue
                if name == "greedy" and not arg:
                    kind = "greedy"
                elif name in ("topk", "top_k"):
                    kind, param = "top_k", int(arg)
                elif name in ("nucleus", "topp", "top_p"):
                    kind, param = "nucleus", float(arg)
                else:
                    raise BadParamError(f"cannot parse decoding method {part!r}")
            except ValueError as exc:
                if isinstance(exc, BadParamError):
                    raise
                raise BadParamError(f"bad numeric argument in {part!r}") from exc
        return cls(kind, param, temperature)

    def __str__(self) -> str:
        parts = []
        if self.temperature is not None:
            parts.append(f"temp:{self.temperature:g}")
        if self.kind == "greedy":
            parts.append("greedy")
        elif self.kind == "top_k":
            parts.append(f"topk:{self.param}")
        elif self.kind == "nucleus":
            parts.append(f"nucleus:{self.param:g}")
        return "+".join(parts) or "plain"


def _renormalize(x: np.ndarray) -> np.ndarray:
    totals = x.sum(axis=1, keepdims=True)
    if float(totals.min()) <= 0.0:
        raise AllZeroError("decoding transform removed all probability mass")
    return x / totals


def _apply_temperature(x: np.ndarray, tau: float) -> np.ndarray:
    if tau == 1.0:
        return x
    # Log space keeps tiny temperatures from underflowing every entry to 0.
    with np.errstate(divide="ignore"):
        logits = np.log(x) / tau
    logits -= logits.max(axis=1, keepdims=True)
    return _renormalize(np.exp(logits))


def _top_mask(x: np.ndarray, ranked: np.ndarray, keep_count: np.ndarray) -> np.ndarray:
    """Mask of the ``keep_count`` largest entries of each row of ``x``.

    ``ranked`` is ``x`` sorted descending along rows. Ties at the cut-off go to
    the lowest token ids, the same result as a stable descending sort.
    """
    r = np.arange(x.shape[0])
    thresh = ranked[r, keep_count - 1][:, None]
    above = x > thresh
    at = x == thresh
    room = keep_count[:, None] - above.sum(axis=1, keepdims=True)
    if (at.sum(axis=1, keepdims=True) == room).all():
        return above | at
    return above | (at & (np.cumsum(at, axis=1) <= room))


def transform_rows(x: np.ndarray, method: DecodingMethod) -> np.ndarray:
    """Apply ``method`` to each row of a ``(rows, V)`` probability array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("transform_rows expects a 2-D array")
    rows, vocab = x.shape
    if method.temperature is not None:
        x = _apply_temperature(x, method.temperature)
    kind = method.kind
    if kind == "plain":
        return x
    if kind == "greedy":
        out = np.zeros_like(x)
        out[np.arange(rows), np.argmax(x, axis=1)] = 1.0
        return out
    ranked = -np.sort(-x, axis=1)
    if kind == "top_k":
        k = method.param
        if k > vocab:
            raise BadParamError(f"top-k k={k} exceeds vocabulary size {vocab}")
        if k == vocab:
            return x
        keep_count = np.full(rows, k)
    else:
        p = method.param
        if p >= 1.0:
            return x
        # A token is kept while the mass ranked strictly above it is short of
        # p: the smallest prefix reaching p, boundary token included.
        cum = np.cumsum(ranked, axis=1)
        keep_count = 1 + (cum[:, :-1] < p - NUCLEUS_SLACK).sum(axis=1)
    return _renormalize(np.where(_top_mask(x, ranked, keep_count), x, 0.0))


def apply_method(dist: Distribution, method: DecodingMethod) -> Distribution:
    row = transform_rows(dist.probs[None, :], method)[0]
    return Distribution._trusted(np.ascontiguousarray(row))


def apply_method_many(dists, method: DecodingMethod) -> list[Distribution]:
    if not dists:
        return []
    rows = transform_rows(np.stack([d.probs for d in dists]), method)
    return [Distribution._trusted(row) for row in rows]


def autoregressive_step(decoded_model, context, rng: RandomSource) -> int:
    """Draw one token from a model whose outputs are already decoded."""
    return sample_categorical(decoded_model._next(context), rng)


def autoregressive_sample(model, prompt, T: int, method: DecodingMethod, rng: RandomSource) -> TokenSequence:
    """Sample until the sequence holds ``T`` tokens, one model call per token.

    Consumes exactly ``T - len(prompt)`` variates from ``rng``.
    """
    tokens = list(prompt)
    if T <= len(tokens):
        raise ConfigInvalidError(f"target length {T} must exceed prompt length {len(tokens)}")
    model.vocab.check(tokens)
    decoded = model.decode(method)
    while len(tokens) < T:
        tokens.append(autoregressive_step(decoded, tokens, rng))
    return TokenSequence(tuple(tokens), len(prompt))
