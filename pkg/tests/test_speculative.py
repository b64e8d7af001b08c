import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsamp.core import Distribution, RandomSource
from specsamp.decoding import DecodingMethod, autoregressive_sample
from specsamp.errors import ConfigInvalidError, DraftZeroProbError, ZeroResidualError
from specsamp.models import TabularModel
from specsamp.speculative import (
    LoopTrace,
    SpsConfig,
    accept_probability,
    read_traces,
    residual_distribution,
    speculative_sample,
    speculative_step,
    write_traces,
)
from specsamp.verify import enumerate_loop, random_tabular

from conftest import context_free


class TestAcceptProbability:
    @pytest.mark.parametrize("q, p, expected", [(0.4, 0.4, 1.0), (0.4, 0.8, 0.5), (0.9, 0.3, 1.0), (0.0, 0.5, 0.0)])
    def test_examples(self, q, p, expected):
        assert accept_probability(q, p) == expected

    def test_zero_draft_probability(self):
        with pytest.raises(DraftZeroProbError):
            accept_probability(0.3, 0.0)


class TestResidual:
    def test_examples(self):
        r = residual_distribution(Distribution([0.7, 0.3]), Distribution([0.5, 0.5]))
        assert r.probs == pytest.approx([1.0, 0.0])
        r = residual_distribution(Distribution([0.2, 0.5, 0.3]), Distribution([0.5, 0.3, 0.2]))
        assert r.probs == pytest.approx([0.0, 2 / 3, 1 / 3])
        r = residual_distribution(Distribution([0, 1, 0]), Distribution([1, 0, 0]))
        assert r.probs.tolist() == [0.0, 1.0, 0.0]

    def test_equal_inputs(self):
        with pytest.raises(ZeroResidualError):
            residual_distribution(Distribution([0.3, 0.7]), Distribution([0.3, 0.7]))


class TestStep:
    def test_reject_then_resample(self, q73, p55, scripted):
        # Draft u=0.6 picks token 1; 0.7 >= 0.3/0.5 rejects; residual is one-hot at 0.
        rng = scripted([0.6, 0.7, 0.99])
        emitted, trace = speculative_step(q73, p55, [], SpsConfig(1, 2), rng)
        assert emitted == [0]
        assert trace == LoopTrace(1, 0, True, False)
        assert rng.remaining == 0

    def test_accept_then_bonus(self, q73, p55, scripted):
        rng = scripted([0.2, 0.9, 0.75])
        emitted, trace = speculative_step(q73, p55, [], SpsConfig(1, 2), rng)
        assert emitted == [0, 1]
        assert trace == LoopTrace(1, 1, False, True)
        assert rng.remaining == 0

    def test_draw_order_skips_acceptances_after_rejection(self, q73, p55, scripted):
        # K=3 drafts 1, 0, 0; the first test rejects so only one acceptance uniform is read.
        rng = scripted([0.9, 0.1, 0.1, 0.95, 0.5])
        emitted, trace = speculative_step(q73, p55, [], SpsConfig(3, 4), rng)
        assert emitted == [0] and trace.accepted == 0 and rng.remaining == 0

    def test_identical_models_accept_everything(self):
        gen = np.random.default_rng(3)
        model = random_tabular(gen, 4, 2)
        rng = RandomSource(11)
        for _ in range(200):
            emitted, trace = speculative_step(model, model, [1, 2], SpsConfig(4, 3), rng)
            assert len(emitted) == 5 and trace.bonus

    def test_bonus_conditions_on_full_prefix(self, scripted):
        # Target is one-hot on the last token + 1 (mod 3); the bonus must follow the last draft.
        table = {(i,): [1.0 if j == (i + 1) % 3 else 0.0 for j in range(3)] for i in range(3)}
        model = TabularModel(3, 1, table, [1, 0, 0])
        emitted, _ = speculative_step(model, model, [0], SpsConfig(3, 2), scripted([0.5] * 7))
        assert emitted == [1, 2, 0, 1]

    def test_same_method_applied_to_both_models(self):
        target = context_free([0.6, 0.3, 0.1])
        draft = context_free([0.1, 0.3, 0.6])
        cfg = SpsConfig(2, 3, DecodingMethod.greedy())
        rng = RandomSource(0)
        for _ in range(50):
            emitted, trace = speculative_step(target, draft, [], cfg, rng)
            assert emitted == [0] and trace.accepted == 0


class TestSample:
    def test_identical_models_two_loops(self):
        model = random_tabular(np.random.default_rng(5), 3, 1)
        seq, traces = speculative_sample(model, model, [0, 1], SpsConfig(4, 12), RandomSource(2))
        assert len(traces) == 2 and len(seq.completion) == 10

    def test_greedy_matches_autoregressive(self):
        model = random_tabular(np.random.default_rng(8), 5, 2)
        method = DecodingMethod.greedy()
        ars = autoregressive_sample(model, [1], 20, method, RandomSource(0))
        sps, _ = speculative_sample(model, model, [1], SpsConfig(1, 20, method), RandomSource(99))
        assert sps.tokens[:20] == ars.tokens

    def test_length_bounds_and_totals(self):
        gen = np.random.default_rng(1)
        target, draft = random_tabular(gen, 4, 2), random_tabular(gen, 4, 1)
        for seed in range(30):
            seq, traces = speculative_sample(target, draft, [0], SpsConfig(3, 15), RandomSource(seed))
            assert 15 <= len(seq) <= 15 + 3
            assert len(seq.completion) == sum(t.accepted + 1 for t in traces)
            assert all(1 <= t.emitted <= 4 for t in traces)

    def test_marginal_frequency(self, q73, p55):
        rng = RandomSource(2718)
        n = 100_000
        cfg = SpsConfig(1, 1)
        zeros = sum(speculative_step(q73, p55, [], cfg, rng)[0][0] == 0 for _ in range(n))
        assert abs(zeros / n - 0.7) <= 0.005

    def test_invalid_config(self, q73):
        with pytest.raises(ConfigInvalidError):
            SpsConfig(0, 5)
        with pytest.raises(ConfigInvalidError):
            speculative_sample(q73, q73, [0, 1], SpsConfig(1, 2), RandomSource(0))
        with pytest.raises(ConfigInvalidError):
            speculative_sample(q73, context_free([0.2, 0.3, 0.5]), [], SpsConfig(1, 2), RandomSource(0))


class TestTrace:
    def test_invariants(self):
        with pytest.raises(ValueError):
            LoopTrace(3, 1, True, True)
        with pytest.raises(ValueError):
            LoopTrace(3, 3, True, False)
        with pytest.raises(ValueError):
            LoopTrace(3, 4, False, True)
        assert LoopTrace(3, 1, True, False).emitted == 2

    def test_json_lines_round_trip(self):
        traces = [LoopTrace(4, 4, False, True), LoopTrace(4, 0, True, False), LoopTrace(4, 2, True, False)]
        buf = io.StringIO()
        write_traces(traces, buf)
        assert read_traces(io.StringIO(buf.getvalue()), k=4) == traces
        assert buf.getvalue().splitlines()[1] == '{"loop": 1, "accepted": 0, "resampled": true, "bonus": false}'


def _sum_min(q, p):
    return float(np.minimum(q, p).sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_first_position_acceptance_is_overlap(seed, V):
    gen = np.random.default_rng(seed)
    target, draft = random_tabular(gen, V, 1), random_tabular(gen, V, 1)
    tree = enumerate_loop(target, draft, [0], 1)
    q = target.next_distribution([0]).probs
    p = draft.next_distribution([0]).probs
    assert tree.acceptance_probability(1) == pytest.approx(_sum_min(q, p), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_mixing_draft_toward_target_never_lowers_acceptance(seed, V):
    gen = np.random.default_rng(seed)
    q = gen.dirichlet(np.ones(V))
    p = gen.dirichlet(np.ones(V))
    target = context_free(q)
    previous = -1.0
    for lam in np.linspace(0, 1, 11):
        mix = (1 - lam) * p + lam * q
        draft = context_free(mix / mix.sum())
        acc = enumerate_loop(target, draft, [], 1).acceptance_probability(1)
        assert acc >= previous - 1e-12
        previous = acc
    assert previous == pytest.approx(1.0, abs=1e-12)
