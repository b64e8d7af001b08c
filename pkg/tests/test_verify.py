import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsamp.core import Distribution, RandomSource
from specsamp.decoding import DecodingMethod
from specsamp.errors import InstanceTooLargeError, LengthMismatchError, TooFewSamplesError
from specsamp.speculative import SpsConfig, speculative_sample
from specsamp.verify import (
    SUITE_METHODS,
    chi_square_gof,
    chi_square_quantile,
    enumerate_ars_joint,
    enumerate_loop,
    enumerate_sps_joint,
    joint_tv,
    random_instance,
    random_tabular,
    recovery_identity,
    run_suite,
)

from conftest import context_free

probs = st.lists(st.floats(0, 1), min_size=2, max_size=64).filter(lambda w: sum(w) > 0)


class TestRecoveryIdentity:
    def test_equal_inputs(self):
        d = Distribution([0.2, 0.3, 0.5])
        assert recovery_identity(d, d).rejection_mass == pytest.approx(0.0, abs=1e-15)

    def test_example(self):
        chk = recovery_identity(Distribution([0.7, 0.3]), Distribution([0.5, 0.5]))
        assert chk.rejection_mass == pytest.approx(0.2, abs=1e-15)
        assert chk.worst < 1e-15

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            recovery_identity(Distribution([1, 0]), Distribution([1, 0, 0]))

    @given(probs, st.randoms(use_true_random=False))
    def test_holds_for_random_pairs(self, w, rnd):
        q = np.array(w) / sum(w)
        p = np.array([rnd.random() for _ in w]) + 1e-9
        p /= p.sum()
        assert recovery_identity(Distribution(q), Distribution(p)).worst < 1e-12


class TestEnumeration:
    def test_hand_enumerated_example(self, q73, p55):
        joint = enumerate_sps_joint(q73, p55, (), 1, 1)
        assert joint[(0,)] == pytest.approx(0.7, abs=1e-15)
        assert joint[(1,)] == pytest.approx(0.3, abs=1e-15)

    def test_loop_branches(self, q73, p55):
        tree = enumerate_loop(q73, p55, [], 1)
        assert tree.total() == pytest.approx(1.0, abs=1e-15)
        kinds = Counter(b.kind for b in tree.branches)
        assert kinds == {"bonus": 4, "resample": 1}
        assert tree.acceptance_probability(1) == pytest.approx(0.8)

    def test_identical_models_reduce_to_target(self):
        model = random_tabular(np.random.default_rng(0), 3, 1)
        for K in (1, 2, 3):
            joint = enumerate_sps_joint(model, model, (2,), K, 1)
            expected = model.next_distribution([2]).probs
            for x in range(3):
                assert joint.get((x,), 0.0) == pytest.approx(expected[x], abs=1e-15)

    def test_ars_product_rule(self, q73):
        joint = enumerate_ars_joint(q73, (), 2)
        expected = {(0, 0): 0.49, (0, 1): 0.21, (1, 0): 0.21, (1, 1): 0.09}
        assert joint.keys() == expected.keys()
        for k, v in expected.items():
            assert joint[k] == pytest.approx(v, abs=1e-15)

    def test_ars_deterministic_and_greedy(self):
        one_hot = context_free([0.0, 1.0, 0.0])
        assert enumerate_ars_joint(one_hot, (), 3) == {(1, 1, 1): 1.0}
        model = TabularModelFactory.chain()
        assert enumerate_ars_joint(model, (0,), 3, DecodingMethod.greedy()) == {(1, 2, 0): 1.0}

    def test_size_guard(self):
        big = context_free([1 / 9] * 9)
        with pytest.raises(InstanceTooLargeError):
            enumerate_ars_joint(big, (), 1)
        small = context_free([0.5, 0.5])
        with pytest.raises(InstanceTooLargeError):
            enumerate_sps_joint(small, small, (), 5, 1)
        with pytest.raises(InstanceTooLargeError):
            enumerate_sps_joint(small, small, (), 1, 6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(SUITE_METHODS))
    def test_branch_mass_and_lengths(self, seed, text):
        inst = random_instance(seed)
        method = DecodingMethod.parse(text)
        tree = enumerate_loop(inst.target.decode(method), inst.draft.decode(method), inst.context, inst.k)
        assert abs(tree.total() - 1.0) <= 1e-12
        assert all(1 <= len(b.emitted) <= inst.k + 1 for b in tree.branches)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(SUITE_METHODS))
    def test_lossless_on_random_instances(self, seed, text):
        inst = random_instance(seed)
        method = DecodingMethod.parse(text)
        sps = enumerate_sps_joint(inst.target, inst.draft, inst.context, inst.k, inst.horizon, method)
        ars = enumerate_ars_joint(inst.target, inst.context, inst.horizon, method)
        assert joint_tv(sps, ars) < 1e-9

    def test_lossless_l3_k2(self):
        gen = np.random.default_rng(17)
        target, draft = random_tabular(gen, 3, 2), random_tabular(gen, 3, 1)
        sps = enumerate_sps_joint(target, draft, (0, 1), 2, 3)
        assert joint_tv(sps, enumerate_ars_joint(target, (0, 1), 3)) < 1e-9

    def test_enumeration_mirrors_sampler(self):
        # The enumerated joint is what the sampler actually produces.
        gen = np.random.default_rng(4)
        target, draft = random_tabular(gen, 3, 1), random_tabular(gen, 3, 0)
        K, L, n = 2, 3, 20_000
        joint = enumerate_sps_joint(target, draft, (1,), K, L)
        rng = RandomSource(8)
        seen = Counter(
            speculative_sample(target, draft, [1], SpsConfig(K, 1 + L), rng)[0].completion[:L] for _ in range(n)
        )
        keys = list(itertools.product(range(3), repeat=L))
        result = chi_square_gof([seen.get(k, 0) for k in keys], Distribution([joint.get(k, 0.0) for k in keys]))
        assert result.passed


class TabularModelFactory:
    @staticmethod
    def chain():
        from specsamp.models import TabularModel

        return TabularModel(3, 1, {(0,): [0.2, 0.5, 0.3], (1,): [0.1, 0.2, 0.7], (2,): [0.6, 0.3, 0.1]},
                            [1 / 3, 1 / 3, 1 / 3])


class TestChiSquare:
    def test_exact_proportion(self):
        r = chi_square_gof([700, 300], Distribution([0.7, 0.3]))
        assert r.statistic == 0.0 and r.passed

    def test_failing_example(self):
        r = chi_square_gof([800, 200], Distribution([0.5, 0.5]))
        # Pearson sums both cells: 300**2/500 twice.
        assert r.statistic == pytest.approx(360.0)
        assert r.dof == 1 and not r.passed
        assert r.quantile == pytest.approx(10.828, abs=1e-3)

    def test_quantile_table(self):
        # Standard table values at significance 0.001.
        assert chi_square_quantile(1) == pytest.approx(10.828, abs=1e-3)
        assert chi_square_quantile(3) == pytest.approx(16.266, abs=1e-3)
        assert chi_square_quantile(10) == pytest.approx(29.588, abs=1e-3)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamplesError):
            chi_square_gof([10, 5], Distribution([0.5, 0.5]))

    def test_zero_probability_bucket(self):
        assert chi_square_gof([600, 400, 0], Distribution([0.6, 0.4, 0.0])).passed
        assert not chi_square_gof([600, 399, 1], Distribution([0.6, 0.4, 0.0])).passed

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            chi_square_gof([500, 500], Distribution([0.2, 0.3, 0.5]))


def test_run_suite_small():
    report = run_suite(instances=3, seed=1, samples=5_000, identity_pairs=200)
    assert report["pass"]
    assert report["lossless"]["cases"] == 3 * len(SUITE_METHODS)
    assert math.isfinite(report["chi_square"]["statistic"])
