import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spgsn import autodiff as ad
from spgsn.dct import (
    dct_encode,
    dct_matrix,
    flatten_spatial,
    idct_decode,
    pad_last_frame,
    unflatten_spatial,
)


def loop_dct(x):
    """Orthonormal DCT-II of a 1-D sequence, written out term by term."""
    n = len(x)
    out = []
    for k in range(n):
        s = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        out.append(s * sum(x[t] * math.cos(math.pi * (2 * t + 1) * k / (2 * n)) for t in range(n)))
    return np.array(out)


def test_flatten_single_joint():
    np.testing.assert_array_equal(flatten_spatial(np.array([[[1.0, 2.0, 3.0]]])), [[1, 2, 3]])


def test_flatten_column_order():
    clip = np.arange(12.0).reshape(2, 2, 3)
    flat = flatten_spatial(clip)
    assert flat.shape == (2, 6)
    np.testing.assert_array_equal(flat[1], [6, 7, 8, 9, 10, 11])  # x1 y1 z1 x2 y2 z2 of frame 1


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4), st.just(3)), elements=st.floats(-1e3, 1e3)))
def test_flatten_roundtrip(clip):
    np.testing.assert_array_equal(unflatten_spatial(flatten_spatial(clip)), clip)


def test_pad_zero_horizon_is_identity():
    seq = np.random.default_rng(0).normal(size=(4, 6))
    np.testing.assert_array_equal(pad_last_frame(seq, 0), seq)


def test_pad_single_frame():
    padded = pad_last_frame(np.array([[1.0, 2.0, 3.0]]), 3)
    assert padded.shape == (4, 3)
    assert (padded == [1.0, 2.0, 3.0]).all()


def test_pad_does_not_extrapolate():
    seq = np.arange(5.0)[:, None] * np.ones((1, 3))  # constant velocity
    padded = pad_last_frame(seq, 4)
    assert (padded[5:] == 4.0).all()


def test_pad_rejects_empty():
    with pytest.raises(ValueError):
        pad_last_frame(np.zeros((0, 3)), 2)


def test_constant_column():
    n, v = 7, 2.5
    c = dct_encode(np.full((n, 1), v))
    assert c.shape == (1, n)
    assert c[0, 0] == pytest.approx(v * math.sqrt(n), abs=1e-12)
    np.testing.assert_allclose(c[0, 1:], 0.0, atol=1e-12)


def test_impulse_matches_basis_column_and_loop_oracle():
    x = np.array([1.0, 0.0, 0.0, 0.0])
    c = dct_encode(x[:, None])[0]
    np.testing.assert_allclose(c, dct_matrix(4)[:, 0], atol=1e-15)
    np.testing.assert_allclose(c, loop_dct(x), atol=1e-15)


def test_random_sequence_matches_loop_oracle():
    seq = np.random.default_rng(2).normal(size=(9, 4))
    c = dct_encode(seq)
    for col in range(4):
        np.testing.assert_allclose(c[col], loop_dct(seq[:, col]), atol=1e-12)


def test_encode_rejects_bad_coefficient_count():
    with pytest.raises(ValueError):
        dct_encode(np.zeros((4, 3)), 5)
    with pytest.raises(ValueError):
        dct_encode(np.zeros((4, 3)), 0)


def test_decode_zero():
    np.testing.assert_array_equal(idct_decode(np.zeros((6, 3)), 5), np.zeros((5, 6)))


def test_roundtrip_full_coefficients():
    seq = np.random.default_rng(3).normal(size=(20, 12))
    assert np.abs(idct_decode(dct_encode(seq), 20) - seq).max() < 1e-9


@pytest.mark.parametrize("k,c", [(3, 3), (5, 2), (7, 1)])
def test_truncation_removes_higher_basis_columns(k, c):
    n = 8
    seq = dct_matrix(n)[k][:, None]  # pure k-th basis vector along time
    rec = idct_decode(dct_encode(seq, c), n)
    np.testing.assert_allclose(rec, 0.0, atol=1e-15)


def test_parseval():
    seq = np.random.default_rng(4).normal(size=(15, 9))
    assert abs(np.linalg.norm(seq) - np.linalg.norm(dct_encode(seq))) < 1e-9


def test_linearity():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(2, 10, 6))
    np.testing.assert_allclose(dct_encode(2.0 * x - 0.5 * y), 2.0 * dct_encode(x) - 0.5 * dct_encode(y), atol=1e-12)


def test_batched_encode_matches_per_sample():
    seqs = np.random.default_rng(6).normal(size=(3, 8, 6))
    batched = dct_encode(seqs, 5)
    for i in range(3):
        np.testing.assert_allclose(batched[i], dct_encode(seqs[i], 5), atol=1e-15)


def test_gradients_through_encode_decode():
    rng = np.random.default_rng(7)
    x = ad.Tensor(rng.normal(size=(6, 4)), requires_grad=True, name="x")
    w = ad.Tensor(rng.normal(size=(6, 4)))

    def f():
        coeffs = dct_encode(x, 4)
        return ad.sum(ad.mul(ad.tanh(idct_decode(coeffs, 6)), w))

    assert ad.finite_diff_check(f, [x]).max_rel_err < 1e-6
