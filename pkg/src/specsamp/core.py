"""Vocabulary, distributions, token sequences and the shared random source."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    AllZeroError,
    InvalidDistributionError,
    LengthMismatchError,
    NegativeWeightError,
    TokenOutOfRangeError,
)

# Slack for user-supplied distributions vs. ones we normalized ourselves.
USER_TOL = 1e-9
INTERNAL_TOL = 1e-12

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Vocab:
    size: int

    def __post_init__(self) -> None:
        if int(self.size) != self.size or self.size < 2:
            raise ValueError(f"vocabulary size must be an integer >= 2, got {self.size!r}")

    def check(self, tokens: Iterable[int]) -> None:
        for t in tokens:
            if not 0 <= t < self.size:
                raise TokenOutOfRangeError(f"token {t} outside vocabulary of size {self.size}")


class Distribution:
    """A probability vector over token ids ``0..V-1``.

    The backing array is read-only; construction validates non-negativity and
    unit mass to within ``tol``.
    """

    __slots__ = ("probs", "_cdf")

    def __init__(self, probs, tol: float = USER_TOL) -> None:
        arr = np.array(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidDistributionError("a distribution must be a non-empty vector")
        if not np.all(np.isfinite(arr)):
            raise InvalidDistributionError("non-finite probability")
        if arr.min() < 0.0:
            raise InvalidDistributionError(f"negative probability {arr.min()!r}")
        total = float(arr.sum())
        if abs(total - 1.0) > tol:
            raise InvalidDistributionError(f"probabilities sum to {total!r}, not 1")
        arr.flags.writeable = False
        self.probs = arr
        self._cdf = None

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> Distribution:
        # Skips validation; callers guarantee a normalized float64 vector.
        d = cls.__new__(cls)
        arr.flags.writeable = False
        d.probs = arr
        d._cdf = None
        return d

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, i: int) -> float:
        return float(self.probs[i])

    def __iter__(self) -> Iterator[float]:
        return iter(self.probs.tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Distribution({self.probs.tolist()!r})"

    @property
    def cdf(self) -> np.ndarray:
        if self._cdf is None:
            self._cdf = np.cumsum(self.probs)
        return self._cdf

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0.0)

    def to_json(self) -> str:
        return json.dumps(self.probs.tolist())

    @classmethod
    def from_json(cls, text: str) -> Distribution:
        return cls(json.loads(text))


@dataclass(frozen=True)
class TokenSequence:
    """Prompt tokens followed by generated tokens."""

    tokens: tuple[int, ...]
    prompt_len: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if not 0 <= self.prompt_len <= len(self.tokens):
            raise ValueError(f"prompt_len {self.prompt_len} exceeds length {len(self.tokens)}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __iter__(self) -> Iterator[int]:
        return iter(self.tokens)

    @property
    def prompt(self) -> tuple[int, ...]:
        return self.tokens[: self.prompt_len]

    @property
    def completion(self) -> tuple[int, ...]:
        return self.tokens[self.prompt_len :]

    def validate(self, vocab: Vocab) -> TokenSequence:
        vocab.check(self.tokens)
        return self

    def to_json(self) -> str:
        return json.dumps(list(self.tokens))

    @classmethod
    def from_json(cls, text: str, prompt_len: int = 0) -> TokenSequence:
        return cls(tuple(json.loads(text)), prompt_len)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(eq=False)
class RandomSource:
    """Counter-based uniform stream (Philox-4x64 keyed by ``(seed, stream)``).

    Variates are ``(raw >> 11) * 2**-53`` so the stream depends only on the
    Philox bit output, not on numpy's float conversion routines.
    """

    seed: int
    stream: int = 0
    _buffer: list = field(default_factory=list, repr=False)
    _pos: int = field(default=0, repr=False)
    consumed: int = field(default=0, repr=False)

    _BLOCK = 512

    def __post_init__(self) -> None:
        self.seed &= _MASK64
        self.stream &= _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)

    def _refill(self) -> None:
        raw = self._bitgen.random_raw(self._BLOCK)
        self._buffer = ((raw >> np.uint64(11)).astype(np.float64) * (2.0**-53)).tolist()
        self._pos = 0

    def uniform(self) -> float:
        """Next variate in [0, 1)."""
        if self._pos >= len(self._buffer):
            self._refill()
        u = self._buffer[self._pos]
        self._pos += 1
        self.consumed += 1
        return u

    def fork(self, stream_id: int) -> RandomSource:
        """Independent deterministic child stream; does not advance ``self``."""
        child = _splitmix64(self.stream ^ _splitmix64(stream_id & _MASK64))
        return RandomSource(self.seed, child)


def normalize(weights) -> Distribution:
    w = np.array(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0.0):
        raise NegativeWeightError(f"negative weight {w.min()!r}")
    total = w.sum()
    if not total > 0.0:
        raise AllZeroError("cannot normalize an all-zero weight vector")
    return Distribution(w / total, tol=INTERNAL_TOL)


def categorical_from_uniform(dist: Distribution, u: float) -> int:
    """Inverse CDF over ascending ids: smallest i with cumulative(i) > u."""
    cdf = dist.cdf
    i = int(cdf.searchsorted(u, side="right"))
    if i >= cdf.shape[0]:
        # u landed above a cumulative total that rounded below 1.
        i = int(np.flatnonzero(dist.probs > 0.0)[-1])
    return i


def sample_categorical(dist: Distribution, rng: RandomSource) -> int:
    return categorical_from_uniform(dist, rng.uniform())


def total_variation(a: Distribution, b: Distribution) -> float:
    if len(a) != len(b):
        raise LengthMismatchError(f"lengths differ: {len(a)} vs {len(b)}")
    return 0.5 * float(np.abs(a.probs - b.probs).sum())
