"""Mask sampling and mask bank construction tests."""

from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabrad import masking


class TestTrainingMasks:
    def test_empirical_bit_frequency(self):
        rng = np.random.default_rng(123)
        masks = masking.sample_training_masks(100_000, 4, 0.25, rng)
        freq = masks.mean(axis=0)
        assert np.all(freq >= 0.245) and np.all(freq <= 0.255)

    def test_fixed_seed_reproduces(self):
        a = masking.sample_training_mask(8, 0.3, np.random.default_rng(9))
        b = masking.sample_training_mask(8, 0.3, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_small_p_mostly_empty(self):
        rng = np.random.default_rng(5)
        masks = masking.sample_training_masks(5000, 4, 1e-4, rng)
        assert (masks.sum(axis=1) == 0).mean() > 0.99

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            masking.sample_training_mask(3, 0.0, np.random.default_rng(0))


class TestDeterministicBank:
    def test_three_features_single_bit(self):
        bank = masking.build_deterministic_bank(3, 1)
        assert bank.m == 3
        np.testing.assert_array_equal(bank.masks, np.eye(3, dtype=np.uint8))

    def test_six_choose_one(self):
        assert masking.build_deterministic_bank(6, 1).m == 6

    def test_binomial_sum_oracle(self):
        # 13 + 78 + 286 masks for d=13, r=3.
        bank = masking.build_deterministic_bank(13, 3)
        assert bank.m == sum(comb(13, k) for k in (1, 2, 3)) == 377

    def test_r_exceeding_d_rejected(self):
        with pytest.raises(ValueError):
            masking.build_deterministic_bank(3, 4)

    def test_enumeration_order_is_stable(self):
        a = masking.build_deterministic_bank(7, 2)
        b = masking.build_deterministic_bank(7, 2)
        np.testing.assert_array_equal(a.masks, b.masks)
        # Lexicographic by combination: first mask hits feature 0 alone,
        # first 2-bit mask hits features (0, 1).
        np.testing.assert_array_equal(a.masks[0], [1, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(a.masks[7], [1, 1, 0, 0, 0, 0, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10).flatmap(lambda d: st.tuples(st.just(d), st.integers(1, d))))
    def test_counts_distinctness_and_coverage(self, d_r):
        d, r = d_r
        bank = masking.build_deterministic_bank(d, r)
        assert bank.m == sum(comb(d, k) for k in range(1, r + 1))
        assert len({tuple(row) for row in bank.masks}) == bank.m
        assert bank.masks.any(axis=0).all()  # every feature masked somewhere
        pops = bank.masks.sum(axis=1)
        assert pops.min() >= 1 and pops.max() <= r


class TestRandomBank:
    def test_count_matches_deterministic_reference(self):
        det = masking.build_deterministic_bank(6, 1)
        rnd = masking.build_random_bank(6, det.m, 0.15, seed=11)
        assert rnd.m == det.m == 6

    def test_no_empty_masks(self):
        bank = masking.build_random_bank(5, 200, 0.05, seed=3)
        assert (bank.masks.sum(axis=1) >= 1).all()

    def test_seed_determinism(self):
        a = masking.build_random_bank(4, 10, 0.3, seed=21)
        b = masking.build_random_bank(4, 10, 0.3, seed=21)
        np.testing.assert_array_equal(a.masks, b.masks)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_mask_decomposition_recovers_sample(d, seed):
    """x^m + x^o == x for any mask: the two mask projections partition x."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=d)
    m = masking.sample_training_mask(d, 0.4, rng).astype(float)
    np.testing.assert_array_equal(m * x + (1.0 - m) * x, x)


class TestForcedUnmaskedSubset:
    def test_at_least_one_row_forced(self):
        masks = np.ones((7, 3), dtype=np.uint8)
        out = masking.force_unmasked_subset(masks, 0.0, np.random.default_rng(0))
        assert (out.sum(axis=1) == 0).sum() >= 1

    def test_fraction_of_rows_forced(self):
        masks = np.ones((100, 4), dtype=np.uint8)
        out = masking.force_unmasked_subset(masks, 0.1, np.random.default_rng(1))
        assert (out.sum(axis=1) == 0).sum() == 10

    def test_original_array_untouched(self):
        masks = np.ones((5, 2), dtype=np.uint8)
        masking.force_unmasked_subset(masks, 0.5, np.random.default_rng(2))
        assert masks.all()
