"""Time-axis DCT encoding of pose sequences.

Sequences are laid out as ``(..., N, 3M)`` (frames by flattened joint
coordinates); coefficient matrices as ``(..., 3M, C)`` so each row is one
coordinate node of the pose graph.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad


@lru_cache(maxsize=64)
def _basis(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    basis = np.cos(np.pi * (2 * t + 1) * k / (2 * n))
    basis[0] *= np.sqrt(1.0 / n)
    basis[1:] *= np.sqrt(2.0 / n)
    basis.setflags(write=False)
    return basis


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row ``k`` is the k-th cosine basis vector."""
    if n < 1:
        raise ValueError(f"DCT length must be >= 1, got {n}")
    return _basis(n).copy()


def flatten_spatial(clip: np.ndarray) -> np.ndarray:
    """``(..., T, M, 3)`` -> ``(..., T, 3M)`` with columns x1, y1, z1, x2, ..."""
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim < 3 or clip.shape[-1] != 3:
        raise ValueError(f"expected (..., T, M, 3) motion array, got {clip.shape}")
    return clip.reshape(clip.shape[:-2] + (clip.shape[-2] * 3,))


def unflatten_spatial(seq: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[-1] % 3:
        raise ValueError(f"last axis {seq.shape[-1]} is not a multiple of 3")
    return seq.reshape(seq.shape[:-1] + (seq.shape[-1] // 3, 3))


def pad_last_frame(seq: np.ndarray, horizon: int) -> np.ndarray:
    """Append ``horizon`` copies of the final frame along the time axis (-2)."""
    seq = np.asarray(seq, dtype=np.float64)
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise ValueError("cannot pad an empty sequence")
    last = seq[..., -1:, :]
    tail = np.repeat(last, horizon, axis=-2)
    return np.concatenate([seq, tail], axis=-2)


def _check_coeffs(n: int, c: int) -> None:
    if not 1 <= c <= n:
        raise ValueError(f"number of coefficients must lie in [1, {n}], got {c}")


def dct_encode(seq, n_coeffs: int | None = None):
    """DCT along time, keeping the first ``n_coeffs`` coefficients.

    Accepts a numpy array or a ``Tensor`` of shape ``(..., N, 3M)`` and
    returns the same kind with shape ``(..., 3M, C)``.
    """
    n = seq.shape[-2]
    c = n if n_coeffs is None else n_coeffs
    _check_coeffs(n, c)
    basis = _basis(n)[:c]
    if isinstance(seq, ad.Tensor):
        return ad.transpose(ad.matmul(ad.Tensor(basis), seq))
    return np.swapaxes(np.matmul(basis, np.asarray(seq, dtype=np.float64)), -1, -2)


def idct_decode(coeffs, n: int):
    """Inverse of :func:`dct_encode`; absent high-order coefficients count as zero."""
    c = coeffs.shape[-1]
    _check_coeffs(n, c)
    basis_t = _basis(n)[:c].T
    if isinstance(coeffs, ad.Tensor):
        return ad.matmul(ad.Tensor(basis_t), ad.transpose(coeffs))
    return np.matmul(basis_t, np.swapaxes(np.asarray(coeffs, dtype=np.float64), -1, -2))
