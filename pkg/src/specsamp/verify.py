"""Exact oracles for speculative sampling on small tabular instances.

The enumerators here do not call into the sampler: acceptance events are
integrated analytically with weight ``min(1, q/p)`` and the residual is
rebuilt from its definition, so agreement with the plain auto-regressive
joint is an independent check of the rejection scheme.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .core import Distribution, RandomSource
from .decoding import DecodingMethod
from .errors import InstanceTooLargeError, LengthMismatchError, TooFewSamplesError
from .models import TabularModel
from .speculative import SpsConfig, _step

MAX_VOCAB = 8
MAX_HORIZON = 5
MAX_LOOKAHEAD = 4

GOF_SIGNIFICANCE = 0.001
GOF_MIN_SAMPLES = 1000
GOF_MIN_EXPECTED = 1e-6

# Decoding methods exercised by the losslessness suite.
SUITE_METHODS = ("plain", "greedy", "nucleus:0.8", "temp:0.8+nucleus:0.95")


class IdentityCheck(NamedTuple):
    pointwise: float
    mass_gap: float
    rejection_mass: float

    @property
    def worst(self) -> float:
        return max(self.pointwise, self.mass_gap)


def recovery_identity(q: Distribution, p: Distribution) -> IdentityCheck:
    """Check ``min(p, q) + max(0, q - p) == q`` pointwise and that the
    rejection mass ``1 - sum min(p, q)`` equals ``sum max(0, q - p)``."""
    if len(q) != len(p):
        raise LengthMismatchError(f"lengths differ: {len(q)} vs {len(p)}")
    qv, pv = q.probs, p.probs
    overlap = np.minimum(pv, qv)
    excess = np.maximum(0.0, qv - pv)
    pointwise = float(np.max(np.abs(overlap + excess - qv)))
    rejection = 1.0 - math.fsum(overlap.tolist())
    gap = abs(rejection - math.fsum(excess.tolist()))
    return IdentityCheck(pointwise, gap, rejection)


@dataclass(frozen=True)
class Branch:
    drafted: tuple[int, ...]
    accepted: int
    final: int | None  # resampled or bonus token; None when cut at the horizon
    kind: str  # "resample", "bonus" or "truncated"
    prob: float
    emitted: tuple[int, ...]


@dataclass
class OutcomeTree:
    """All outcomes of one speculative loop with their exact probabilities."""

    k: int
    branches: list[Branch] = field(default_factory=list)

    def total(self) -> float:
        return math.fsum(b.prob for b in self.branches)

    def acceptance_probability(self, position: int = 1) -> float:
        """Probability that the first ``position`` drafts are all accepted."""
        return math.fsum(b.prob for b in self.branches if b.accepted >= position)

    def emitted_distribution(self) -> dict[tuple[int, ...], float]:
        acc: dict[tuple[int, ...], list[float]] = defaultdict(list)
        for b in self.branches:
            acc[b.emitted].append(b.prob)
        return {k: math.fsum(v) for k, v in acc.items()}


def _check_size(V: int, K: int, L: int) -> None:
    if V > MAX_VOCAB or L > MAX_HORIZON or K > MAX_LOOKAHEAD:
        raise InstanceTooLargeError(
            f"V={V}, K={K}, L={L} exceeds guard V<={MAX_VOCAB}, K<={MAX_LOOKAHEAD}, L<={MAX_HORIZON}"
        )


def _residual(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    w = np.maximum(0.0, q - p)
    mass = math.fsum(w.tolist())
    if mass < 1e-12:
        return q
    return w / mass


def enumerate_loop(q_model, p_model, context, K: int, horizon: int | None = None) -> OutcomeTree:
    """Enumerate one loop over already-decoded models.

    With ``horizon`` set, branches stop as soon as that many tokens are
    emitted; the rest of the loop is summed out.
    """
    ctx = list(context)
    h = K + 1 if horizon is None else horizon
    depth = min(K, h)
    tree = OutcomeTree(K)

    def walk(drafts: list[int], weight: float) -> None:
        t = len(drafts)
        here = ctx + drafts
        if t == depth:
            if t == h:
                tree.branches.append(Branch(tuple(drafts), t, None, "truncated", weight, tuple(drafts)))
                return
            q = q_model.next_distribution(here).probs
            for y in np.flatnonzero(q > 0).tolist():
                tree.branches.append(Branch(tuple(drafts), t, y, "bonus", weight * q[y], tuple(drafts + [y])))
            return
        p = p_model.next_distribution(here).probs
        q = q_model.next_distribution(here).probs
        resid = None
        for x in np.flatnonzero(p > 0).tolist():
            keep = min(1.0, q[x] / p[x])
            if keep < 1.0:
                resid = _residual(q, p) if resid is None else resid
                w = weight * p[x] * (1.0 - keep)
                for y in np.flatnonzero(resid > 0).tolist():
                    tree.branches.append(
                        Branch(tuple(drafts + [x]), t, y, "resample", w * resid[y], tuple(drafts + [y]))
                    )
            if keep > 0.0:
                walk(drafts + [x], weight * p[x] * keep)

    walk([], 1.0)
    return tree


def enumerate_sps_joint(target, draft, context, K: int, L: int, method: DecodingMethod = DecodingMethod()) -> dict:
    """Exact distribution of the first ``L`` generated tokens under speculative sampling."""
    _check_size(target.vocab.size, K, L)
    q_model, p_model = target.decode(method), draft.decode(method)
    memo: dict = {}

    def solve(ctx: tuple[int, ...], need: int) -> dict:
        key = (ctx, need)
        if key in memo:
            return memo[key]
        parts: dict[tuple[int, ...], list[float]] = defaultdict(list)
        for br in enumerate_loop(q_model, p_model, ctx, K, horizon=need).branches:
            e = br.emitted
            if len(e) >= need:
                parts[e[:need]].append(br.prob)
                continue
            for rest, pr in solve(ctx + e, need - len(e)).items():
                parts[e + rest].append(br.prob * pr)
        memo[key] = {k: math.fsum(v) for k, v in parts.items()}
        return memo[key]

    return solve(tuple(context), L)


def enumerate_ars_joint(target, context, L: int, method: DecodingMethod = DecodingMethod()) -> dict:
    """Product of decoded conditionals along every length-``L`` path."""
    _check_size(target.vocab.size, 0, L)
    model = target.decode(method)
    out: dict[tuple[int, ...], float] = {}

    def walk(path: list[int], prob: float) -> None:
        if len(path) == L:
            out[tuple(path)] = prob
            return
        q = model.next_distribution(list(context) + path).probs
        for y in np.flatnonzero(q > 0).tolist():
            walk(path + [y], prob * q[y])

    walk([], 1.0)
    return out


def joint_tv(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return 0.5 * math.fsum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


class GofResult(NamedTuple):
    statistic: float
    dof: int
    quantile: float
    passed: bool


def chi_square_quantile(dof: int, significance: float = GOF_SIGNIFICANCE) -> float:
    return float(stats.chi2.ppf(1.0 - significance, dof))


def chi_square_gof(counts, expected: Distribution, significance: float = GOF_SIGNIFICANCE) -> GofResult:
    """Pearson goodness of fit of observed counts against ``expected``.

    Buckets with expected mass below ``GOF_MIN_EXPECTED`` are pooled into
    one; a pooled bucket still below the floor is dropped if empty and fails
    the test otherwise.
    """
    obs = np.asarray(counts, dtype=np.float64)
    exp = expected.probs
    if obs.shape != exp.shape:
        raise LengthMismatchError(f"lengths differ: {obs.shape[0]} vs {exp.shape[0]}")
    n = float(obs.sum())
    if n < GOF_MIN_SAMPLES:
        raise TooFewSamplesError(f"{int(n)} samples, need at least {GOF_MIN_SAMPLES}")
    rare = exp < GOF_MIN_EXPECTED
    obs_b = list(obs[~rare])
    exp_b = list(exp[~rare])
    if rare.any():
        rare_exp = float(exp[rare].sum())
        rare_obs = float(obs[rare].sum())
        if rare_exp >= GOF_MIN_EXPECTED:
            obs_b.append(rare_obs)
            exp_b.append(rare_exp)
        elif rare_obs > 0:
            return GofResult(math.inf, max(len(obs_b) - 1, 1), math.nan, False)
    obs_a = np.array(obs_b)
    exp_a = np.array(exp_b) * n
    statistic = float(np.sum((obs_a - exp_a) ** 2 / exp_a))
    dof = len(obs_b) - 1
    if dof < 1:
        return GofResult(statistic, 0, math.inf, True)
    quantile = chi_square_quantile(dof, significance)
    return GofResult(statistic, dof, quantile, statistic < quantile)


# -- random instances ----------------------------------------------------


def _random_probs(gen: np.random.Generator, V: int, sparse: bool) -> np.ndarray:
    w = gen.gamma(0.7, size=V)
    if sparse:
        w[gen.random(V) < 0.3] = 0.0
    if not w.sum() > 0:
        w[gen.integers(V)] = 1.0
    return w / w.sum()


def random_tabular(gen: np.random.Generator, V: int, max_context: int, sparse: bool = False) -> TabularModel:
    """A tabular model with an entry for every context of length ``max_context``
    plus one for every shorter prompt."""
    table = {}
    for n in range(max_context + 1):
        for key in itertools.product(range(V), repeat=n):
            table[key] = _random_probs(gen, V, sparse)
    return TabularModel(V, max_context, table, _random_probs(gen, V, sparse))


@dataclass(frozen=True)
class Instance:
    seed: int
    vocab: int
    k: int
    horizon: int
    target: TabularModel
    draft: TabularModel
    context: tuple[int, ...]


def random_instance(seed: int) -> Instance:
    gen = np.random.default_rng(seed)
    V = int(gen.choice([2, 3, 4, 6]))
    K = int(gen.integers(1, 4))
    L = int(gen.integers(1, 5))
    m_t = int(gen.integers(0, 3)) if V <= 4 else int(gen.integers(0, 2))
    m_d = int(gen.integers(0, m_t + 1))
    sparse = bool(gen.random() < 0.5)
    target = random_tabular(gen, V, m_t, sparse)
    draft = random_tabular(gen, V, m_d, sparse)
    ctx_len = int(gen.integers(0, 3))
    context = tuple(int(t) for t in gen.integers(0, V, size=ctx_len))
    return Instance(seed, V, K, L, target, draft, context)


def check_lossless(inst: Instance, method: DecodingMethod) -> float:
    sps = enumerate_sps_joint(inst.target, inst.draft, inst.context, inst.k, inst.horizon, method)
    ars = enumerate_ars_joint(inst.target, inst.context, inst.horizon, method)
    return joint_tv(sps, ars)


def next_token_counts(target, draft, context, config: SpsConfig, n: int, rng: RandomSource) -> np.ndarray:
    """Histogram of the first emitted token over ``n`` independent loops."""
    q_model, p_model = target.decode(config.method), draft.decode(config.method)
    ctx = list(context)
    counts = np.zeros(target.vocab.size, dtype=np.int64)
    for _ in range(n):
        emitted, _ = _step(q_model, p_model, ctx, config.k, rng)
        counts[emitted[0]] += 1
    return counts


def parity_pair() -> tuple[TabularModel, TabularModel]:
    """Fixed context-dependent pair used for the statistical parity check."""
    target = TabularModel(
        4,
        1,
        {
            (): [0.1, 0.2, 0.3, 0.4],
            (0,): [0.05, 0.45, 0.2, 0.3],
            (1,): [0.6, 0.1, 0.1, 0.2],
            (2,): [0.25, 0.25, 0.25, 0.25],
            (3,): [0.4, 0.05, 0.5, 0.05],
        },
        [0.25, 0.25, 0.25, 0.25],
    )
    draft = TabularModel(4, 0, {(): [0.3, 0.3, 0.2, 0.2]}, [0.3, 0.3, 0.2, 0.2])
    return target, draft


def run_suite(instances: int = 100, seed: int = 0, samples: int = 100_000, identity_pairs: int = 10_000) -> dict:
    """Losslessness, identity and parity checks, as a JSON-ready report."""
    methods = [DecodingMethod.parse(m) for m in SUITE_METHODS]
    started = time.perf_counter()
    rows = []
    for i in range(instances):
        inst = random_instance(seed * 1_000_003 + i)
        for method in methods:
            tv = check_lossless(inst, method)
            rows.append(
                {
                    "instance": i,
                    "seed": inst.seed,
                    "V": inst.vocab,
                    "K": inst.k,
                    "L": inst.horizon,
                    "method": str(method),
                    "tv": tv,
                    "pass": tv < 1e-9,
                }
            )

    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(identity_pairs):
        V = int(gen.integers(2, 65))
        q = Distribution._trusted(_random_probs(gen, V, bool(gen.random() < 0.5)))
        p = Distribution._trusted(_random_probs(gen, V, bool(gen.random() < 0.5)))
        worst = max(worst, recovery_identity(q, p).worst)

    target, draft = parity_pair()
    ctx = (3,)
    config = SpsConfig(2, len(ctx) + 1)
    counts = next_token_counts(target, draft, ctx, config, samples, RandomSource(seed))
    expected = target.next_distribution(ctx)
    gof = chi_square_gof(counts, expected)

    ok = all(r["pass"] for r in rows) and worst < 1e-12 and gof.passed
    return {
        "lossless": {"cases": len(rows), "max_tv": max((r["tv"] for r in rows), default=0.0), "rows": rows},
        "identity": {"pairs": identity_pairs, "max_deviation": worst, "pass": worst < 1e-12},
        "chi_square": {
            "samples": samples,
            "statistic": gof.statistic,
            "dof": gof.dof,
            "quantile": gof.quantile,
            "pass": gof.passed,
        },
        "elapsed_s": time.perf_counter() - started,
        "pass": ok,
    }
