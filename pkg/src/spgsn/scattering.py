"""Adaptive graph scattering on a single body part.

A scattering tree of ``L`` layers applies ``K + 1`` band-pass graph filters
to every feature map of the previous layer, giving ``(K + 1) ** L`` leaf
channels. The filters are polynomials in the normalized adjacency with
trainable coefficients, initialized as diffusion wavelets. The leaves are
recombined by a learned softmax weighting (or a plain mean).

All feature tensors are ``(..., nodes, features)``; leading axes are batch
axes and the graph operators broadcast over them.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from ._fileio import atomic_write, fmt_float

NORM_EPS = 1e-8


def uniform_weight(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> ad.Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros_param(shape, name: str | None = None) -> ad.Tensor:
    return ad.Tensor(np.zeros(shape), requires_grad=True, name=name)


# -- graphs ----------------------------------------------------------------
def normalize_adjacency(adj: ad.Tensor) -> ad.Tensor:
    """(I + A / max(||A||_F^2, eps)) / 2, differentiable through the norm."""
    adj = ad.as_tensor(adj)
    n = adj.shape[-1]
    if adj.shape != (n, n):
        raise ad.ShapeError(f"adjacency must be square, got {adj.shape}")
    sq = ad.clamp_min(ad.sum_of_squares(adj), NORM_EPS)
    return ad.scale(ad.add(ad.Tensor(np.eye(n)), ad.div(adj, sq)), 0.5)


def skeleton_adjacency(n_joints: int, bones: Sequence[tuple[int, int]], joints: Sequence[int] | None = None) -> np.ndarray:
    """Coordinate-node adjacency: 1 between nodes of the same or bone-adjacent joints.

    ``joints`` restricts the graph to a subset of joints (in the given order),
    keeping only bones with both ends inside the subset.
    """
    joints = list(range(n_joints)) if joints is None else list(joints)
    pos = {j: i for i, j in enumerate(joints)}
    link = np.eye(len(joints))
    for a, b in bones:
        if a in pos and b in pos:
            link[pos[a], pos[b]] = link[pos[b], pos[a]] = 1.0
    return np.kron(link, np.ones((3, 3)))


class PoseGraph:
    """Trainable adjacency over coordinate nodes."""

    def __init__(self, adjacency: ad.Tensor):
        self.adjacency = adjacency

    @classmethod
    def from_skeleton(cls, rng, n_joints, bones, joints=None, noise: float = 0.01, name="A"):
        base = skeleton_adjacency(n_joints, bones, joints)
        adj = base + rng.uniform(-noise, noise, size=base.shape)
        return cls(ad.Tensor(adj, requires_grad=True, name=name))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def normalized(self) -> ad.Tensor:
        return normalize_adjacency(self.adjacency)


# -- filter bank -----------------------------------------------------------
def n_filter_coeffs(k: int) -> int:
    return 1 if k == 0 else (2 if k == 1 else k)


class FilterBank:
    """Coefficients of the ``K + 1`` polynomial graph filters.

    ``coeffs[0]`` holds alpha(0,0); ``coeffs[1]`` holds alpha(1,0), alpha(1,1);
    for ``k >= 2``, ``coeffs[k][j - 1]`` is alpha(k, j) for ``j = 1..k``.
    """

    def __init__(self, coeffs: list[ad.Tensor]):
        self.coeffs = coeffs

    @classmethod
    def wavelet_init(cls, order: int, name: str = "alpha") -> "FilterBank":
        coeffs = []
        for k in range(order + 1):
            c = np.zeros(n_filter_coeffs(k))
            if k == 0:
                c[0] = 1.0
            elif k == 1:
                c[:] = [1.0, -1.0]
            else:
                c[k - 2], c[k - 1] = 1.0, -1.0
            coeffs.append(ad.Tensor(c, requires_grad=True, name=f"{name}{k}"))
        return cls(coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def parameters(self) -> list[ad.Tensor]:
        return list(self.coeffs)


def _coef(bank: FilterBank, k: int, i: int) -> ad.Tensor:
    return ad.take(bank.coeffs[k], [i])


def diffusion_powers(a_norm: ad.Tensor, order: int) -> list[ad.Tensor]:
    """[A, A^2, A^4, ...] by repeated squaring, enough for filters up to ``order``."""
    powers = [a_norm]
    for _ in range(1, order):
        powers.append(ad.matmul(powers[-1], powers[-1]))
    return powers


def eval_filter(bank: FilterBank, k: int, a_norm: ad.Tensor, powers: list[ad.Tensor] | None = None) -> ad.Tensor:
    if not 0 <= k <= bank.order:
        raise ValueError(f"filter index {k} outside 0..{bank.order}")
    if k == 0:
        return ad.mul(_coef(bank, 0, 0), a_norm)
    if k == 1:
        eye = ad.Tensor(np.eye(a_norm.shape[0]))
        return ad.add(ad.mul(_coef(bank, 1, 0), eye), ad.mul(_coef(bank, 1, 1), a_norm))
    if powers is None or len(powers) < k:
        powers = diffusion_powers(a_norm, k)
    out = ad.mul(_coef(bank, k, 0), powers[0])
    for j in range(2, k + 1):
        out = ad.add(out, ad.mul(_coef(bank, k, j - 1), powers[j - 1]))
    return out


def filter_bank(bank: FilterBank, a_norm: ad.Tensor) -> list[ad.Tensor]:
    """All ``K + 1`` filters, sharing one set of diffusion powers."""
    powers = diffusion_powers(a_norm, max(bank.order, 1))
    return [eval_filter(bank, k, a_norm, powers) for k in range(bank.order + 1)]


# -- scattering ------------------------------------------------------------
def scatter_layer(x: ad.Tensor, filters: Sequence[ad.Tensor], weights: Sequence[ad.Tensor]) -> list[ad.Tensor]:
    """tanh(h_k(A) X W_k) for each filter ``k``."""
    if len(filters) != len(weights):
        raise ad.ShapeError(f"{len(filters)} filters but {len(weights)} weight matrices")
    widths = {w.shape[1] for w in weights}
    if len(widths) > 1:
        raise ad.ShapeError(f"weight matrices disagree on output width: {sorted(widths)}")
    return [ad.tanh(ad.matmul(ad.matmul(h, x), w)) for h, w in zip(filters, weights)]


class ScatterTree:
    """Per-layer filter banks and weight matrices.

    With ``shared`` weights a layer holds ``K + 1`` matrices used by every
    branch; otherwise it holds one matrix per output channel of the layer.
    Filter coefficients are always per layer.
    """

    def __init__(self, banks: list[FilterBank], weights: list[list[ad.Tensor]]):
        self.banks = banks
        self.weights = weights

    @classmethod
    def init(cls, rng, depth: int, order: int, width: int, prefix: str = "", shared: bool = True) -> "ScatterTree":
        if depth < 1:
            raise ValueError("scattering depth must be >= 1")
        banks, weights = [], []
        for layer in range(depth):
            banks.append(FilterBank.wavelet_init(order, name=f"{prefix}l{layer}.alpha"))
            n = order + 1 if shared else (order + 1) ** (layer + 1)
            weights.append([uniform_weight(rng, width, width, name=f"{prefix}l{layer}.W{i}") for i in range(n)])
        return cls(banks, weights)

    @property
    def depth(self) -> int:
        return len(self.banks)

    @property
    def order(self) -> int:
        return self.banks[0].order

    @property
    def n_channels(self) -> int:
        return (self.order + 1) ** self.depth

    def parameters(self) -> list[ad.Tensor]:
        out = []
        for bank, ws in zip(self.banks, self.weights):
            out.extend(bank.parameters())
            out.extend(ws)
        return out


def _branch_weight(ws: Sequence[ad.Tensor], k: int, n_parents: int, width: int, lead: int) -> ad.Tensor:
    if len(ws) == width:
        return ws[k]
    # one matrix per (parent, filter): stack to (P, 1, ..., C, C) so it broadcasts over batch axes
    stacked = ad.stack([ws[p * width + k] for p in range(n_parents)], axis=0)
    c_in, c_out = ws[0].shape
    return ad.reshape(stacked, (n_parents,) + (1,) * lead + (c_in, c_out))


def scatter_stacked(x: ad.Tensor, a_norm: ad.Tensor, tree: ScatterTree) -> list[ad.Tensor]:
    """Scattering tree on channel-stacked features.

    Returns one tensor per layer, shaped ``(channels, ..., nodes, features)``
    with channel ``p * (K + 1) + k`` the ``k``-th filter applied to parent
    channel ``p``.
    """
    lead = x.ndim - 2
    current = ad.reshape(x, (1,) + x.shape)
    layers = []
    for bank, ws in zip(tree.banks, tree.weights):
        filters = filter_bank(bank, a_norm)
        width, n_parents = len(filters), current.shape[0]
        branches = [
            ad.tanh(ad.matmul(ad.matmul(h, current), _branch_weight(ws, k, n_parents, width, lead)))
            for k, h in enumerate(filters)
        ]
        stacked = ad.stack(branches, axis=1)  # (P, K+1, ..., M, C)
        current = ad.reshape(stacked, (n_parents * width,) + stacked.shape[2:])
        layers.append(current)
    return layers


def unstack(stacked: ad.Tensor) -> list[ad.Tensor]:
    return [ad.reshape(ad.take(stacked, [i], axis=0), stacked.shape[1:]) for i in range(stacked.shape[0])]


def scatter_tree(x: ad.Tensor, a_norm: ad.Tensor, tree: ScatterTree, return_layers: bool = False):
    """Leaves of the scattering tree, ordered so that the channel index written
    in base ``K + 1`` spells the filter path (first layer most significant).

    With ``return_layers`` the outputs of every layer are returned as a list
    of lists, the last entry being the leaves.
    """
    layers = [unstack(s) for s in scatter_stacked(x, a_norm, tree)]
    return layers if return_layers else layers[-1]


# -- aggregation -----------------------------------------------------------
class SpectrumAggregator:
    def __init__(self, w_sp, f1_w, f1_b, f2_w, f2_b):
        self.w_sp = w_sp
        self.f1_w, self.f1_b = f1_w, f1_b
        self.f2_w, self.f2_b = f2_w, f2_b

    @classmethod
    def init(cls, rng, width: int, att_width: int | None = None, prefix: str = "") -> "SpectrumAggregator":
        d = width if att_width is None else att_width
        return cls(
            uniform_weight(rng, width, width, name=f"{prefix}W_sp"),
            uniform_weight(rng, 2 * width, d, name=f"{prefix}f1.W"),
            zeros_param(d, name=f"{prefix}f1.b"),
            uniform_weight(rng, d, 1, name=f"{prefix}f2.W"),
            zeros_param(1, name=f"{prefix}f2.b"),
        )

    def parameters(self) -> list[ad.Tensor]:
        return [self.w_sp, self.f1_w, self.f1_b, self.f2_w, self.f2_b]


def _stack_channels(channels: Sequence[ad.Tensor]) -> ad.Tensor:
    if not channels:
        raise ValueError("need at least one channel")
    shapes = {ch.shape for ch in channels}
    if len(shapes) != 1:
        raise ad.ShapeError(f"channels differ in shape: {sorted(shapes)}")
    return ad.stack(list(channels), axis=0)


def weighted_channel_sum(stacked: ad.Tensor, omega: ad.Tensor) -> ad.Tensor:
    """sum_k omega[..., k] * stacked[k] for stacked ``(K', ..., M, C)`` and omega ``(..., K')``."""
    k = stacked.shape[0]
    lead, (m, c) = stacked.shape[1:-2], stacked.shape[-2:]
    nl = len(lead)
    moved = ad.permute(stacked, tuple(range(1, nl + 1)) + (0, nl + 1, nl + 2))  # (..., K', M, C)
    flat = ad.reshape(moved, lead + (k, m * c))
    w = ad.reshape(omega, lead + (1, k))
    return ad.reshape(ad.matmul(w, flat), lead + (m, c))


def spectrum_scores_stacked(stacked: ad.Tensor, agg: SpectrumAggregator) -> ad.Tensor:
    """Per-channel scores ``(..., K')``: node mean of f2(tanh(f1([H_sp, H_k])))."""
    k = stacked.shape[0]
    h_sp = ad.relu(ad.matmul(ad.mean(stacked, axis=0), agg.w_sp))
    h_sp = ad.take(ad.reshape(h_sp, (1,) + h_sp.shape), [0] * k, axis=0)
    z = ad.tanh(ad.linear(ad.concat([h_sp, stacked], axis=-1), agg.f1_w, agg.f1_b))
    node_scores = ad.linear(z, agg.f2_w, agg.f2_b)  # (K', ..., M, 1)
    scores = ad.mean(node_scores, axis=-2)  # (K', ..., 1)
    scores = ad.reshape(scores, scores.shape[:-1])
    if scores.ndim == 1:
        return scores
    return ad.permute(scores, tuple(range(1, scores.ndim)) + (0,))


def aggregate_spectrum_stacked(stacked: ad.Tensor, agg: SpectrumAggregator):
    omega = ad.softmax(spectrum_scores_stacked(stacked, agg), axis=-1)
    return weighted_channel_sum(stacked, omega), omega


def spectrum_scores(channels: Sequence[ad.Tensor], agg: SpectrumAggregator) -> ad.Tensor:
    return spectrum_scores_stacked(_stack_channels(channels), agg)


def aggregate_spectrum(channels: Sequence[ad.Tensor], agg: SpectrumAggregator):
    """Importance-weighted channel sum. Returns ``(H, omega)``."""
    return aggregate_spectrum_stacked(_stack_channels(channels), agg)


def aggregate_average(channels: Sequence[ad.Tensor]) -> ad.Tensor:
    return ad.mean(_stack_channels(channels), axis=0)


def aggregate_weighted(channels: Sequence[ad.Tensor], omega) -> ad.Tensor:
    """Channel sum with externally supplied weights (no learning)."""
    return weighted_channel_sum(_stack_channels(channels), ad.as_tensor(omega))


# -- response dump ---------------------------------------------------------
def dump_responses(channels: Sequence, path, layers: Sequence[int] | int = 1) -> int:
    """Write node responses as CSV ``layer,channel,node,f0,f1,...``.

    ``channels`` are 2-D ``(nodes, features)`` arrays or tensors; ``layers``
    is the layer label, either one value for all or one per channel (channel
    indices restart at 0 within each layer). Returns the number of data rows.
    """
    arrays = [np.asarray(ch.data if isinstance(ch, ad.Tensor) else ch, dtype=np.float64) for ch in channels]
    labels = [layers] * len(arrays) if isinstance(layers, int) else list(layers)
    if len(labels) != len(arrays):
        raise ValueError("one layer label per channel required")
    width = arrays[0].shape[1] if arrays else 0
    lines = [",".join(["layer", "channel", "node"] + [f"f{i}" for i in range(width)])]
    counters: dict[int, int] = {}
    for layer, arr in zip(labels, arrays):
        if arr.ndim != 2:
            raise ValueError(f"expected 2-D channel, got shape {arr.shape}")
        idx = counters.get(layer, 0)
        counters[layer] = idx + 1
        for node, row in enumerate(arr):
            lines.append(",".join([str(layer), str(idx), str(node)] + [fmt_float(v) for v in row]))
    atomic_write(path, "\n".join(lines) + "\n")
    return len(lines) - 1


def read_responses(path) -> list[tuple[int, int, int, np.ndarray]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), np.array([float(v) for v in parts[3:]])))
    return rows
