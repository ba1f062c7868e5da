"""Multi-part graph scattering blocks stacked into the full predictor."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._fileio import atomic_write
from .dct import dct_encode, flatten_spatial, idct_decode, pad_last_frame
from .parts import (
    Affine,
    BipartiteFusion,
    BodyPartition,
    ConfigError,
    FusionMLP,
    bipartite_exchange,
    place_and_fuse,
    split_parts,
)
from .scattering import (
    PoseGraph,
    ScatterTree,
    SpectrumAggregator,
    aggregate_spectrum_stacked,
    scatter_stacked,
)

AGGREGATORS = ("spectrum", "average")


@dataclass
class ModelConfig:
    joints: int
    history: int
    horizon: int
    bones: list = field(default_factory=list)
    blocks: int = 10
    scatter_layers: int = 2
    filter_order: int = 2
    hidden: int = 256
    dct_coeffs: int | None = None
    partition: dict | None = None
    block_residuals: bool = True
    global_skip: bool = True
    aggregator: str = "spectrum"
    affinity_norm: str = "source"
    share_branch_weights: bool = True

    def __post_init__(self):
        if self.blocks < 1 or self.scatter_layers < 1 or self.filter_order < 0 or self.hidden < 1:
            raise ConfigError("need blocks >= 1, scatter_layers >= 1, filter_order >= 0, hidden >= 1")
        if self.joints < 2 or self.history < 1 or self.horizon < 0:
            raise ConfigError("need joints >= 2, history >= 1, horizon >= 0")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}")
        if not 1 <= self.n_coeffs <= self.seq_len:
            raise ConfigError(f"dct_coeffs must lie in [1, {self.seq_len}]")
        self.bones = [list(map(int, b)) for b in self.bones]
        if any(not (0 <= i < self.joints and 0 <= j < self.joints) for i, j in self.bones):
            raise ConfigError("bone index out of range")
        part = self.body_partition
        if part is not None and part.n_joints != self.joints:
            raise ConfigError(f"partition covers {part.n_joints} joints, skeleton has {self.joints}")

    @property
    def seq_len(self) -> int:
        return self.history + self.horizon

    @property
    def n_coeffs(self) -> int:
        return self.seq_len if self.dct_coeffs is None else self.dct_coeffs

    @property
    def n_nodes(self) -> int:
        return 3 * self.joints

    @property
    def body_partition(self) -> BodyPartition | None:
        return None if self.partition is None else BodyPartition.from_dict(self.partition)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Block:
    """Parameters of one multi-part graph scattering block."""

    def __init__(self, graphs: dict[str, PoseGraph], tree: ScatterTree, aggregator, fusion):
        self.graphs = graphs
        self.tree = tree
        self.aggregator = aggregator
        self.fusion = fusion

    @classmethod
    def init(cls, rng, cfg: ModelConfig, prefix: str) -> "Block":
        part = cfg.body_partition
        graphs = {"whole": PoseGraph.from_skeleton(rng, cfg.joints, cfg.bones, name=f"{prefix}A_whole")}
        if part is not None:
            graphs["upper"] = PoseGraph.from_skeleton(rng, cfg.joints, cfg.bones, part.upper_joints, name=f"{prefix}A_upper")
            graphs["lower"] = PoseGraph.from_skeleton(rng, cfg.joints, cfg.bones, part.lower_joints, name=f"{prefix}A_lower")
        tree = ScatterTree.init(
            rng, cfg.scatter_layers, cfg.filter_order, cfg.hidden, prefix=f"{prefix}scatter.", shared=cfg.share_branch_weights
        )
        agg = SpectrumAggregator.init(rng, cfg.hidden, prefix=f"{prefix}agg.") if cfg.aggregator == "spectrum" else None
        if part is not None:
            fusion = BipartiteFusion.init(rng, cfg.hidden, prefix=f"{prefix}fuse.")
        else:
            fusion = FusionMLP.init(rng, cfg.hidden, name=f"{prefix}fuse.mlp")
        return cls(graphs, tree, agg, fusion)

    @property
    def mlp(self) -> FusionMLP:
        return self.fusion.mlp if isinstance(self.fusion, BipartiteFusion) else self.fusion

    def parameters(self) -> list[ad.Tensor]:
        out = [g.adjacency for g in self.graphs.values()]
        out += self.tree.parameters()
        if self.aggregator is not None:
            out += self.aggregator.parameters()
        out += self.fusion.parameters()
        return out


class SPGSNParams:
    def __init__(self, in_proj: Affine, blocks: list[Block], out_proj: Affine):
        self.in_proj = in_proj
        self.blocks = blocks
        self.out_proj = out_proj

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "SPGSNParams":
        rng = np.random.default_rng(seed)
        in_proj = Affine.init(rng, cfg.n_coeffs, cfg.hidden, "in_proj")
        blocks = [Block.init(rng, cfg, f"block{b}.") for b in range(cfg.blocks)]
        out_proj = Affine.init(rng, cfg.hidden, cfg.n_coeffs, "out_proj")
        return cls(in_proj, blocks, out_proj)

    def parameters(self) -> list[ad.Tensor]:
        out = self.in_proj.parameters()
        for b in self.blocks:
            out += b.parameters()
        return out + self.out_proj.parameters()

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return {p.name: p for p in self.parameters()}

    def zero_(self) -> "SPGSNParams":
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def param_count(cfg: ModelConfig) -> int:
    return int(sum(p.size for p in SPGSNParams.init(cfg).parameters()))


# -- forward -----------------------------------------------------------------
def _aggregate(stacked: ad.Tensor, block: Block):
    if block.aggregator is None:
        return ad.mean(stacked, axis=0), None
    return aggregate_spectrum_stacked(stacked, block.aggregator)


def _scatter_part(x, graph: PoseGraph, block: Block, trace: dict | None, key: str):
    layers = scatter_stacked(x, graph.normalized(), block.tree)
    h, omega = _aggregate(layers[-1], block)
    if trace is not None:
        trace[f"{key}_layers"] = layers
        trace[f"{key}_omega"] = omega
    return h


def mpgsb_forward(h_in: ad.Tensor, block: Block, cfg: ModelConfig, trace: dict | None = None) -> ad.Tensor:
    h = _scatter_part(h_in, block.graphs["whole"], block, trace, "whole")
    part = cfg.body_partition
    if part is None:
        fused = block.mlp(ad.add(h, h))
    else:
        x_up, x_low = split_parts(h_in, part)
        h_up = _scatter_part(x_up, block.graphs["upper"], block, trace, "upper")
        h_low = _scatter_part(x_low, block.graphs["lower"], block, trace, "lower")
        new_up, new_low, affinities = bipartite_exchange(h_up, h_low, block.fusion, cfg.affinity_norm)
        if trace is not None:
            trace["affinity_up2low"], trace["affinity_low2up"] = affinities
        fused = place_and_fuse(h, new_up, new_low, part, block.mlp)
    return ad.add(h_in, fused) if cfg.block_residuals else fused


def encode_history(history: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """``(B, T, M, 3)`` -> padded-sequence DCT coefficients ``(B, 3M, C)``."""
    seq = pad_last_frame(flatten_spatial(history), cfg.horizon)
    return dct_encode(seq, cfg.n_coeffs)


def spgsn_forward(history, params: SPGSNParams, cfg: ModelConfig, trace: list | None = None) -> ad.Tensor:
    """Predict ``(B, dT, M, 3)`` future poses from ``(B, T, M, 3)`` histories.

    A single clip ``(T, M, 3)`` is accepted and gives ``(dT, M, 3)``.
    """
    history = np.asarray(history, dtype=np.float64)
    single = history.ndim == 3
    if single:
        history = history[None]
    if history.ndim != 4 or history.shape[1:] != (cfg.history, cfg.joints, 3):
        raise ad.ShapeError(f"expected histories of shape (B, {cfg.history}, {cfg.joints}, 3), got {history.shape}")
    x = ad.Tensor(encode_history(history, cfg))
    h = params.in_proj(x)
    for block in params.blocks:
        record = {} if trace is not None else None
        h = mpgsb_forward(h, block, cfg, record)
        if trace is not None:
            trace.append(record)
    y = params.out_proj(h)
    if cfg.global_skip:
        y = ad.add(y, x)
    seq = idct_decode(y, cfg.seq_len)
    future = ad.take(seq, np.arange(cfg.history, cfg.seq_len), axis=-2)
    out = ad.reshape(future, (history.shape[0], cfg.horizon, cfg.joints, 3))
    return ad.reshape(out, out.shape[1:]) if single else out


def predict(history, params: SPGSNParams, cfg: ModelConfig) -> np.ndarray:
    return spgsn_forward(history, params, cfg).data.copy()


# -- checkpoints -------------------------------------------------------------
MAGIC = b"SPGSN1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: SPGSNParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    """Magic, length-prefixed JSON config, then tensors in declaration order.

    Each tensor is written as ``uint32 ndim``, ``ndim x uint32`` dims and the
    little-endian float64 values. All integers are little-endian.
    """
    meta = {"model": cfg.to_dict()}
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    tensors = params.parameters()
    parts.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    atomic_write(path, b"".join(parts))


def load_checkpoint(path) -> tuple[SPGSNParams, ModelConfig, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (n_meta,) = read("<I")
    if pos + n_meta > len(raw):
        raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        meta = json.loads(raw[pos:pos + n_meta].decode("utf-8"))
        cfg = ModelConfig.from_dict(meta["model"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable config header ({exc})") from None
    pos += n_meta
    params = SPGSNParams.init(cfg)
    expected = params.parameters()
    (count,) = read("<I")
    if count != len(expected):
        raise CheckpointError(f"{path}: {count} tensors stored, config implies {len(expected)}")
    for t in expected:
        (ndim,) = read("<I")
        shape = read(f"<{ndim}I")
        if tuple(shape) != t.shape:
            raise CheckpointError(f"{path}: tensor {t.name} has shape {tuple(shape)}, config implies {t.shape}")
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=pos)
        pos += 8 * n
        t.data[...] = values.reshape(shape)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return params, cfg, meta
