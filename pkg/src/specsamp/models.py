"""Language models: a common interface plus exact tabular and n-gram models."""

from __future__ import annotations

import json
import os
from abc import ABC, abstractmethod

import numpy as np

from .core import USER_TOL, Distribution, Vocab
from .decoding import DecodingMethod, apply_method, apply_method_many, transform_rows
from .errors import BadOrderError, BadParamError, CorpusTooShortError, TokenOutOfRangeError

# An n-gram model whose whole context space has at most this many rows keeps
# its full probability table in memory.
DENSE_CONTEXT_LIMIT = 4096

BYTE_VOCAB = 257
BYTE_BOS = 256


class LanguageModel(ABC):
    """Next-token distributions conditioned on a token context.

    Subclasses implement ``_next`` (and optionally ``_score``); the public
    methods validate token ids first. Samplers validate their prompt once and
    then use the unchecked methods, since every later token comes from a model.
    """

    vocab: Vocab

    def next_distribution(self, context) -> Distribution:
        context = list(context)
        self._check_tokens(context)
        return self._next(context)

    def score_parallel(self, context, draft) -> list[Distribution]:
        """Distributions after ``context + draft[:t]`` for ``t = 0..len(draft)``."""
        context, draft = list(context), list(draft)
        self._check_tokens(context)
        self._check_tokens(draft)
        return self._score(context, draft)

    @abstractmethod
    def _next(self, context: list[int]) -> Distribution: ...

    def _score_rows(self, context: list[int], draft: list[int]) -> np.ndarray:
        return np.stack([d.probs for d in self._score(context, draft)])

    def _score(self, context: list[int], draft: list[int]) -> list[Distribution]:
        ctx = list(context)
        out = [self._next(ctx)]
        for tok in draft:
            ctx.append(tok)
            out.append(self._next(ctx))
        return out

    def decode(self, method: DecodingMethod) -> LanguageModel:
        """This model with ``method`` applied to every output distribution."""
        cache = self.__dict__.setdefault("_decoded_cache", {})
        if method not in cache:
            cache[method] = self._make_decoded(method)
        return cache[method]

    def _make_decoded(self, method: DecodingMethod) -> LanguageModel:
        if method == DecodingMethod():
            return self
        return DecodedModel(self, method)

    def _check_tokens(self, tokens) -> None:
        if tokens and (min(tokens) < 0 or max(tokens) >= self.vocab.size):
            bad = next(t for t in tokens if not 0 <= t < self.vocab.size)
            raise TokenOutOfRangeError(f"token {bad} outside vocabulary of size {self.vocab.size}")


class DecodedModel(LanguageModel):
    def __init__(self, base: LanguageModel, method: DecodingMethod) -> None:
        self.base = base
        self.method = method
        self.vocab = base.vocab

    def _next(self, context) -> Distribution:
        return apply_method(self.base._next(context), self.method)

    def _score(self, context, draft) -> list[Distribution]:
        return [Distribution._trusted(row) for row in self._score_rows(context, draft)]

    def _score_rows(self, context, draft) -> np.ndarray:
        return transform_rows(self.base._score_rows(context, draft), self.method)

    def decode(self, method: DecodingMethod) -> LanguageModel:
        raise TypeError("model outputs are already decoded")


def _ctx_key(ctx: str) -> tuple[int, ...]:
    return tuple(int(t) for t in ctx.split(",")) if ctx.strip() else ()


class TabularModel(LanguageModel):
    """Explicit lookup from the last ``min(m, len)`` context tokens to a distribution."""

    def __init__(self, vocab: Vocab | int, max_context: int, table: dict, default) -> None:
        self.vocab = vocab if isinstance(vocab, Vocab) else Vocab(vocab)
        if max_context < 0:
            raise ValueError("max_context must be >= 0")
        self.max_context = int(max_context)
        self.default = self._as_dist(default)
        self.table: dict[tuple[int, ...], Distribution] = {}
        for key, dist in table.items():
            key = _ctx_key(key) if isinstance(key, str) else tuple(int(t) for t in key)
            if len(key) > self.max_context:
                raise ValueError(f"context {key} longer than max_context={self.max_context}")
            self.vocab.check(key)
            self.table[key] = self._as_dist(dist)

    def _as_dist(self, d) -> Distribution:
        dist = d if isinstance(d, Distribution) else Distribution(d, tol=USER_TOL)
        if len(dist) != self.vocab.size:
            raise ValueError(f"distribution length {len(dist)} != vocabulary size {self.vocab.size}")
        return dist

    def lookup_key(self, context) -> tuple[int, ...]:
        m = self.max_context
        if m == 0:
            return ()
        return tuple(context[-m:])

    def _next(self, context) -> Distribution:
        return self.table.get(self.lookup_key(context), self.default)

    def _make_decoded(self, method: DecodingMethod) -> LanguageModel:
        if method == DecodingMethod():
            return self
        keys = list(self.table)
        dists = apply_method_many([self.table[k] for k in keys] + [self.default], method)
        out = TabularModel.__new__(TabularModel)
        out.vocab, out.max_context = self.vocab, self.max_context
        out.table = dict(zip(keys, dists[:-1]))
        out.default = dists[-1]
        out._decoded_cache = {}
        return out

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab.size,
            "max_context": self.max_context,
            "default": self.default.probs.tolist(),
            "table": {",".join(map(str, k)): d.probs.tolist() for k, d in self.table.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TabularModel:
        return cls(doc["vocab"], doc["max_context"], doc.get("table", {}), doc["default"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> TabularModel:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | os.PathLike) -> TabularModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class _TableModel(LanguageModel):
    """Precomputed distributions indexed by an n-gram context key."""

    def __init__(self, vocab: Vocab, key_fn, index: dict, dists: list[Distribution], default: Distribution):
        self.vocab = vocab
        self._key = key_fn
        self._index = index
        self._dists = dists
        self._default = default

    def _next(self, context) -> Distribution:
        j = self._index.get(self._key(context))
        return self._default if j is None else self._dists[j]

    def decode(self, method: DecodingMethod) -> LanguageModel:
        raise TypeError("model outputs are already decoded")


class NGramModel(LanguageModel):
    """Add-alpha smoothed n-gram model.

    Counts are stored per observed context in CSR form; the emitted probability
    of token ``x`` after context ``c`` is ``(count(c, x) + alpha) / (total(c) +
    alpha * V)``. Contexts shorter than ``order - 1`` are left-padded with
    ``bos``, which may lie outside the vocabulary.
    """

    def __init__(self, vocab_size: int, order: int, alpha: float, contexts, offsets, tokens, counts, bos: int | None = None):
        if int(order) != order or order < 1:
            raise BadOrderError(f"order must be an integer >= 1, got {order!r}")
        if not alpha > 0:
            raise BadParamError(f"smoothing alpha must be > 0, got {alpha!r}")
        self.vocab = Vocab(int(vocab_size))
        self.order = int(order)
        self.alpha = float(alpha)
        self.bos = self.vocab.size if bos is None else int(bos)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.contexts = np.asarray(contexts, dtype=np.int64).reshape(self.offsets.shape[0] - 1, self.order - 1)
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("negative n-gram count")
        self.totals = np.add.reduceat(self.counts, self.offsets[:-1]) if self.counts.size else np.zeros(0, np.int64)
        self._fcounts = self.counts.astype(np.float64)
        self._index = {tuple(row): i for i, row in enumerate(self.contexts.tolist())}
        self._ftotals = self.totals.astype(np.float64)
        self._pad = (self.bos,) * (self.order - 1)
        self._dense: _TableModel | None = None
        if self.vocab.size ** (self.order - 1) <= DENSE_CONTEXT_LIMIT:
            self._dense = self._table_model(self._rows(list(self._index)))

    # -- lookup ---------------------------------------------------------

    def key(self, context) -> tuple[int, ...]:
        m = self.order - 1
        if m == 0:
            return ()
        tail = tuple(context[-m:])
        if len(tail) < m:
            tail = self._pad[: m - len(tail)] + tail
        return tail

    def _rows(self, keys) -> np.ndarray:
        V, a = self.vocab.size, self.alpha
        n = len(keys)
        out = np.full((n, V), a)
        found = [(i, j) for i, j in enumerate(map(self._index.get, keys)) if j is not None]
        denom = np.full(n, a * V)
        if found:
            rows, js = np.array(found, dtype=np.int64).T
            starts = self.offsets[js]
            lengths = self.offsets[js + 1] - starts
            # Flat CSR positions of every (row, token) entry in one gather.
            flat = np.arange(int(lengths.sum())) + np.repeat(starts - (np.cumsum(lengths) - lengths), lengths)
            out[np.repeat(rows, lengths), self.tokens[flat]] += self._fcounts[flat]
            denom[rows] += self._ftotals[js]
        out /= denom[:, None]
        return out

    def _table_model(self, table: np.ndarray) -> _TableModel:
        default = np.full((1, self.vocab.size), 1.0 / self.vocab.size)
        return self._wrap_table(table, default)

    def _wrap_table(self, table: np.ndarray, default: np.ndarray) -> _TableModel:
        dists = [Distribution._trusted(row) for row in table]
        return _TableModel(self.vocab, self.key, self._index, dists, Distribution._trusted(default[0]))

    def _next(self, context) -> Distribution:
        if self._dense is not None:
            return self._dense._next(context)
        return Distribution._trusted(self._rows([self.key(context)])[0])

    def _score(self, context, draft) -> list[Distribution]:
        if self._dense is not None:
            return self._dense._score(context, draft)
        return [Distribution._trusted(row) for row in self._score_rows(context, draft)]

    def _score_rows(self, context, draft) -> np.ndarray:
        if self._dense is not None:
            return self._dense._score_rows(context, draft)
        ctx = context + draft
        n = len(context)
        return self._rows([self.key(ctx[: n + t]) for t in range(len(draft) + 1)])

    def _make_decoded(self, method: DecodingMethod) -> LanguageModel:
        if method == DecodingMethod():
            return self
        if self._dense is None:
            return DecodedModel(self, method)
        raw = np.stack([d.probs for d in self._dense._dists] + [self._dense._default.probs])
        decoded = transform_rows(raw, method)
        return self._wrap_table(decoded[:-1], decoded[-1:])

    def count_total(self) -> int:
        return int(self.counts.sum())

    # -- persistence ------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                meta=np.array([self.vocab.size, self.order, self.bos], dtype=np.int64),
                alpha=np.array([self.alpha], dtype=np.float64),
                contexts=self.contexts,
                offsets=self.offsets,
                tokens=self.tokens,
                counts=self.counts,
            )

    @classmethod
    def load(cls, path: str | os.PathLike) -> NGramModel:
        with np.load(path) as z:
            V, order, bos = (int(v) for v in z["meta"])
            return cls(V, order, float(z["alpha"][0]), z["contexts"], z["offsets"], z["tokens"], z["counts"], bos=bos)


def _as_token_array(corpus) -> np.ndarray:
    if isinstance(corpus, str):
        corpus = corpus.encode("utf-8")
    if isinstance(corpus, (bytes, bytearray, memoryview)):
        return np.frombuffer(bytes(corpus), dtype=np.uint8).astype(np.int64)
    return np.asarray(list(corpus), dtype=np.int64)


def train_ngram(corpus, order: int, alpha: float, vocab_size: int | None = None, bos: int | None = None) -> NGramModel:
    """Count every length-``order`` window of ``corpus`` (BOS-padded at the start).

    Byte strings default to the byte vocabulary (V=257, BOS=256); integer
    token streams default to ``V = max(token) + 1`` with an out-of-vocabulary
    pad id.
    """
    if isinstance(order, bool) or int(order) != order or order < 1:
        raise BadOrderError(f"order must be an integer >= 1, got {order!r}")
    order = int(order)
    if not alpha > 0:
        raise BadParamError(f"smoothing alpha must be > 0, got {alpha!r}")
    is_bytes = isinstance(corpus, (str, bytes, bytearray, memoryview))
    toks = _as_token_array(corpus)
    if toks.size < order:
        raise CorpusTooShortError(f"corpus of {toks.size} tokens is shorter than order {order}")
    if vocab_size is None:
        vocab_size = BYTE_VOCAB if is_bytes else max(2, int(toks.max()) + 1)
    if bos is None:
        bos = BYTE_BOS if is_bytes and vocab_size == BYTE_VOCAB else vocab_size
    if toks.min() < 0 or toks.max() >= vocab_size:
        raise TokenOutOfRangeError("corpus token outside vocabulary")

    m = order - 1
    padded = np.concatenate([np.full(m, bos, dtype=np.int64), toks])
    windows = np.lib.stride_tricks.sliding_window_view(padded, order)
    base = max(vocab_size, bos + 1)
    if base**order < 2**62:
        weights = base ** np.arange(order - 1, -1, -1, dtype=np.int64)
        codes, counts = np.unique(windows @ weights, return_counts=True)
        uniq = (codes[:, None] // weights[None, :]) % base
    else:
        uniq, counts = np.unique(windows, axis=0, return_counts=True)

    ctx = uniq[:, :m]
    if uniq.shape[0] == 0:
        starts = np.zeros(0, dtype=np.int64)
    elif m == 0:
        starts = np.array([0])
    else:
        changed = np.any(ctx[1:] != ctx[:-1], axis=1)
        starts = np.concatenate([[0], np.flatnonzero(changed) + 1])
    offsets = np.concatenate([starts, [uniq.shape[0]]])
    return NGramModel(vocab_size, order, alpha, ctx[starts], offsets, uniq[:, m], counts, bos=bos)
