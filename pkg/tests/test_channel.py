import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from semlang.channel import (
    AwgnQam,
    Bsc,
    Codebook,
    bsc_transmit,
    fixed_length_codebook,
    huffman_codebook,
    qam_constellation,
    qam_demodulate,
    qam_modulate,
    qam_transmit,
    qam_union_bound,
    send_codewords,
    transmit_bits,
    trial_rng,
)


def entropy_bits(p):
    p = np.asarray(p)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def test_uniform_four_is_two_bits():
    cb = huffman_codebook([0.25] * 4)
    assert list(cb.lengths) == [2, 2, 2, 2]
    assert cb.average_length([0.25] * 4) == 2.0 == entropy_bits([0.25] * 4)


def test_classic_three_symbol_code():
    cb = huffman_codebook([0.5, 0.25, 0.25])
    assert list(cb.lengths) == [1, 2, 2]
    assert cb.average_length([0.5, 0.25, 0.25]) == 1.5


def test_empty_alphabet_rejected():
    with pytest.raises(ValueError):
        huffman_codebook([])


def test_single_symbol_gets_one_bit():
    assert huffman_codebook([1.0]).codewords == ("0",)


@pytest.mark.parametrize("seed", range(100))
def test_huffman_kraft_and_entropy_bounds(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.full(rng.integers(2, 33), 0.5))
    cb = huffman_codebook(p)
    assert cb.kraft_sum() <= 1.0
    assert cb.is_prefix_free()
    h = entropy_bits(p)
    assert h <= cb.average_length(p) < h + 1


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**32 - 1), st.lists(st.integers(0, 19), max_size=40))
def test_stream_round_trip_at_zero_noise(k, seed, msg):
    p = np.random.default_rng(seed).dirichlet(np.ones(k))
    cb = huffman_codebook(p)
    msg = [m % k for m in msg]
    assert cb.decode(cb.encode(msg)) == msg
    assert list(send_codewords(msg, cb, Bsc(0.0), trial_rng(seed, 0))) == msg


def test_default_costs_are_one_based_ceil():
    cb = fixed_length_codebook(12)
    assert list(cb.costs) == [1] * 5 + [2] * 5 + [3] * 2
    assert set(cb.lengths) == {4}


def test_invalid_codebooks():
    with pytest.raises(ValueError):
        Codebook(())
    with pytest.raises(ValueError):
        Codebook(("01", "2"))
    assert not Codebook(("0", "01")).is_prefix_free()


def test_truncated_frame_uses_subtree_fallback():
    cb = Codebook(("0", "10", "11"))
    rows = np.array([[1, 0], [1, 1], [1, 0]], dtype=np.uint8)
    assert list(cb.decode_frames(rows, np.array([2, 2, 1]))) == [1, 2, 1]


def test_bsc_identity_at_zero():
    bits = np.random.default_rng(0).integers(0, 2, 1000).astype(np.uint8)
    assert np.array_equal(bsc_transmit(bits, 0.0, 5), bits)


def test_bsc_half_flip_fraction():
    bits = np.zeros(10**6, dtype=np.uint8)
    assert 0.497 <= bsc_transmit(bits, 0.5, 1).mean() <= 0.503


def test_bsc_seed_determinism_and_range():
    bits = np.zeros(100, dtype=np.uint8)
    assert np.array_equal(bsc_transmit(bits, 0.2, 9), bsc_transmit(bits, 0.2, 9))
    with pytest.raises(ValueError):
        bsc_transmit(bits, 0.6, 0)


@pytest.mark.parametrize("p", [0.05, 0.1, 0.3])
def test_bsc_flip_counts_are_binomial(p):
    n, reps = 10**5, 200
    bits = np.zeros(n, dtype=np.uint8)
    counts = np.array([bsc_transmit(bits, p, trial_rng(11, r)).sum() for r in range(reps)])
    # bin counts by binomial quantiles so every bin has the same expected mass
    edges = stats.binom.ppf(np.linspace(0, 1, 11)[1:-1], n, p)
    obs = np.bincount(np.searchsorted(edges, counts, side="left"), minlength=10)
    cdf = stats.binom.cdf(edges, n, p)
    probs = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    assert stats.chisquare(obs, probs * reps).pvalue > 0.01


def test_constellation_is_unit_energy_gray():
    pts, labels = qam_constellation(64)
    assert len(pts) == 64 and np.array_equal(labels, np.arange(64))
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0)
    d = np.abs(pts[:, None] - pts[None, :])
    dmin = d[d > 0].min()
    for i, j in zip(*np.nonzero(np.isclose(d, dmin))):
        assert bin(i ^ j).count("1") == 1


def test_bad_order_rejected():
    with pytest.raises(ValueError):
        AwgnQam(20.0, 32)


def test_qam_noise_free_identity():
    pts, _ = qam_constellation()
    assert np.array_equal(qam_transmit(pts, math.inf, 0), pts)


def test_qam_rejects_foreign_symbol():
    with pytest.raises(ValueError):
        qam_transmit(np.array([0.0 + 0.0j]), 20.0, 0)


def test_qam_bit_round_trip():
    bits = np.random.default_rng(2).integers(0, 2, 600).astype(np.uint8)
    assert np.array_equal(qam_demodulate(qam_modulate(bits)), bits)
    odd = bits[:595]
    assert np.array_equal(transmit_bits(odd, AwgnQam(math.inf), trial_rng(0, 0)), odd)


def test_qam_ser_matches_union_bound_at_20db():
    pts, _ = qam_constellation()
    idx = np.random.default_rng(0).integers(0, 64, 10**5)
    rx = qam_transmit(pts[idx], 20.0, 1)
    err = rx != pts[idx]
    ser = err.mean()
    est = qam_union_bound(20.0)
    assert abs(ser - est) <= 0.3 * est
    dmin = np.abs(pts[0] - pts[1])
    nn = np.isclose(np.abs(rx[err] - pts[idx][err]), dmin)
    assert nn.mean() > 0.8


def test_trial_streams_are_independent_and_reproducible():
    a = trial_rng(3, 0).random(4)
    assert np.array_equal(a, trial_rng(3, 0).random(4))
    assert not np.array_equal(a, trial_rng(3, 1).random(4))
