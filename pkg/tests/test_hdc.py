"""Kernel-level tests: bundling, binding, cosine, and the packed-word twin."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdsa import hdc


def bipolar_arrays(min_dim=1, max_dim=64):
    return st.integers(min_dim, max_dim).flatmap(
        lambda d: st.lists(st.sampled_from([-1.0, 1.0]), min_size=d, max_size=d)
    ).map(lambda v: np.array(v))


class TestSignBipolarize:
    def test_tie_rule(self):
        out = hdc.sign_bipolarize(np.array([2.0, -0.5, 0.0]))
        np.testing.assert_array_equal(out, [1.0, -1.0, 1.0])

    def test_all_positive(self):
        out = hdc.sign_bipolarize(np.array([0.1, 3.0, 7.5]))
        np.testing.assert_array_equal(out, np.ones(3))

    def test_negative_zero_is_tie(self):
        np.testing.assert_array_equal(hdc.sign_bipolarize(np.array([-0.0])), [1.0])

    @given(bipolar_arrays())
    def test_idempotent_on_bipolar(self, h):
        np.testing.assert_array_equal(hdc.sign_bipolarize(h), h)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(ValueError):
            hdc.sign_bipolarize(np.array([1.0, bad]))


class TestBundle:
    def test_self_is_identity(self):
        h = np.array([1.0, -1.0, -1.0, 1.0])
        np.testing.assert_array_equal(hdc.bundle(h, h), h)

    def test_opposite_gives_all_ones(self):
        h = np.array([1.0, -1.0, 1.0])
        np.testing.assert_array_equal(hdc.bundle(h, -h), np.ones(3))

    def test_hand_example(self):
        # sign((2, 0, 0, -2)) with ties to +1
        h1 = np.array([1.0, -1.0, 1.0, -1.0])
        h2 = np.array([1.0, 1.0, -1.0, -1.0])
        np.testing.assert_array_equal(hdc.bundle(h1, h2), [1.0, 1.0, 1.0, -1.0])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            hdc.bundle(np.ones(4), np.ones(5))

    @given(bipolar_arrays(), st.randoms())
    def test_majority_property(self, h1, rnd):
        """Output matches h1 where inputs agree; ties take the +1 value."""
        h2 = np.array([v if rnd.random() < 0.5 else -v for v in h1])
        out = hdc.bundle(h1, h2)
        agree = h1 == h2
        np.testing.assert_array_equal(out[agree], h1[agree])
        np.testing.assert_array_equal(out[~agree], np.ones(np.count_nonzero(~agree)))


class TestBind:
    def test_self_inverse(self):
        h = np.array([1.0, -1.0, -1.0])
        np.testing.assert_array_equal(hdc.bind(h, h), np.ones(3))

    def test_identity_element(self):
        h = np.array([-1.0, 1.0, -1.0])
        np.testing.assert_array_equal(hdc.bind(h, np.ones(3)), h)

    @given(bipolar_arrays(min_dim=2, max_dim=32), st.integers(0, 2**32 - 1))
    def test_unbinding_recovers(self, a, seed):
        rng = np.random.default_rng(seed)
        b = hdc.random_hypervectors(rng, 1, a.shape[0])[0]
        np.testing.assert_array_equal(hdc.bind(hdc.bind(a, b), b), a)

    @given(bipolar_arrays(min_dim=2, max_dim=32), st.integers(0, 2**32 - 1))
    def test_commutative_associative_bipolar(self, a, seed):
        rng = np.random.default_rng(seed)
        b, c = hdc.random_hypervectors(rng, 2, a.shape[0])
        np.testing.assert_array_equal(hdc.bind(a, b), hdc.bind(b, a))
        np.testing.assert_array_equal(
            hdc.bind(hdc.bind(a, b), c), hdc.bind(a, hdc.bind(b, c))
        )
        assert np.all(np.abs(hdc.bind(a, b)) == 1)


class TestCosine:
    def test_self_and_opposite(self):
        h = hdc.random_hypervectors(np.random.default_rng(0), 1, 128)[0]
        assert hdc.cosine(h, h) == 1.0
        assert hdc.cosine(h, -h) == -1.0

    def test_hand_orthogonal(self):
        h1 = np.array([1.0, 1.0, -1.0, -1.0])
        h2 = np.array([1.0, -1.0, 1.0, -1.0])
        assert hdc.cosine(h1, h2) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            hdc.cosine(np.ones(4), np.ones(8))

    def test_quasi_orthogonality_at_high_dim(self):
        """Random bipolar pairs at D=10000 are nearly orthogonal."""
        rng = np.random.default_rng(7)
        a = hdc.random_hypervectors(rng, 300, 10_000)
        b = hdc.random_hypervectors(rng, 300, 10_000)
        cos = np.einsum("ij,ij->i", a, b) / 10_000
        assert np.mean(np.abs(cos) < 0.05) >= 0.99


class TestContextSimilarity:
    def test_self_is_one(self):
        h = hdc.random_hypervectors(np.random.default_rng(1), 1, 64)[0]
        assert hdc.context_similarity(h, h) == 1.0

    def test_hand_example(self):
        h1 = np.array([1.0, -1.0, 1.0, -1.0])
        h2 = np.array([1.0, 1.0, -1.0, -1.0])
        assert hdc.context_similarity(h1, h2) == 0.5

    def test_monte_carlo_mean_half(self):
        """Independent pairs score ~0.5: agreement coords give 1, ties a coin flip."""
        rng = np.random.default_rng(11)
        d = 10_000
        vals = []
        for _ in range(200):
            h1, h2 = hdc.random_hypervectors(rng, 2, d)
            vals.append(hdc.context_similarity(h1, h2))
        assert 0.48 <= np.mean(vals) <= 0.52


class TestPacking:
    def test_bit_layout(self):
        b = hdc.pack(np.array([1.0, 1.0, -1.0, -1.0]))
        assert b.dims == 4
        assert int(b.words[0]) == 0b0011  # elements 0,1 set, little-endian bit order
        assert b.popcount() == 2

    @given(bipolar_arrays(max_dim=200))
    def test_round_trip(self, h):
        np.testing.assert_array_equal(hdc.unpack(hdc.pack(h)), h)

    def test_word_boundary(self):
        h = np.ones(65)
        b = hdc.pack(h)
        assert b.words.shape == (2,)
        assert int(b.words[1]) == 1  # one meaningful bit, padding zero
        np.testing.assert_array_equal(hdc.unpack(b), h)

    def test_padding_must_be_zero(self):
        with pytest.raises(ValueError):
            hdc.PackedBits(dims=4, words=np.array([0xF0], dtype=np.uint64))

    def test_popcount_is_l0_norm(self):
        rng = np.random.default_rng(3)
        h = hdc.random_hypervectors(rng, 1, 130)[0]
        assert hdc.pack(h).popcount() == int(np.sum(h > 0))

    def test_packed_round_trip_identity(self):
        rng = np.random.default_rng(4)
        h = hdc.random_hypervectors(rng, 1, 97)[0]
        b = hdc.pack(h)
        b2 = hdc.pack(hdc.unpack(b))
        np.testing.assert_array_equal(b.words, b2.words)


class TestCosineBinarized:
    def test_all_ones(self):
        b = hdc.pack(np.ones(4))
        assert hdc.cosine_binarized(b, b) == 1.0

    def test_ones_vs_zeros(self):
        b1 = hdc.pack(np.ones(4))
        b2 = hdc.pack(-np.ones(4))
        assert hdc.cosine_binarized(b1, b2) == -1.0

    def test_hand_example(self):
        b1 = hdc.pack(np.array([1.0, 1.0, -1.0, -1.0]))  # bits 1100
        b2 = hdc.pack(np.array([1.0, -1.0, 1.0, -1.0]))  # bits 1010
        assert hdc.cosine_binarized(b1, b2) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            hdc.cosine_binarized(hdc.pack(np.ones(4)), hdc.pack(np.ones(8)))

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 96))
    def test_bit_exact_vs_float_path(self, seed, d):
        rng = np.random.default_rng(seed)
        h1, h2 = hdc.random_hypervectors(rng, 2, d)
        exact = hdc.cosine(h1, h2)
        packed = hdc.cosine_binarized(hdc.pack(h1), hdc.pack(h2))
        assert packed == exact  # bit-identical, not merely close

    def test_exhaustive_small_dims(self):
        """Every bipolar pair at D <= 8 agrees across both paths."""
        for d in range(1, 9):
            codes = np.arange(2**d, dtype=np.uint64)
            bits = ((codes[:, None] >> np.arange(d, dtype=np.uint64)) & 1).astype(np.float64)
            vecs = bits * 2 - 1
            words = hdc.pack_rows(vecs)  # (2^d, 1)
            float_scores = hdc.cosine_matrix(vecs)
            packed_scores = hdc.cosine_binarized_matrix(
                words[:, None, :], words[None, :, :], d
            )
            np.testing.assert_array_equal(packed_scores, float_scores)

    def test_matrix_path_matches_scalar_api(self):
        rng = np.random.default_rng(9)
        vecs = hdc.random_hypervectors(rng, 6, 150)
        words = hdc.pack_rows(vecs)
        mat = hdc.cosine_binarized_matrix(words[:, None, :], words[None, :, :], 150)
        for i in range(6):
            for j in range(6):
                assert mat[i, j] == hdc.cosine_binarized(
                    hdc.pack(vecs[i]), hdc.pack(vecs[j])
                )
