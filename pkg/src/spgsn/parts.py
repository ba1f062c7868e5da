"""Two-part body partitions and bipartite cross-part feature fusion."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .scattering import uniform_weight, zeros_param


class PartitionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def joint_nodes(joints: Sequence[int]) -> list[int]:
    """Coordinate-row indices of ``joints`` (three rows per joint)."""
    return [3 * j + d for j in joints for d in range(3)]


@dataclass(frozen=True)
class BodyPartition:
    """Disjoint upper/lower joint sets covering a skeleton.

    Node index lists (``upper``/``lower``) address rows of the flattened
    ``3M``-node graph.
    """

    name: str
    upper_joints: tuple[int, ...]
    lower_joints: tuple[int, ...]

    def __post_init__(self):
        up, low = tuple(sorted(self.upper_joints)), tuple(sorted(self.lower_joints))
        object.__setattr__(self, "upper_joints", up)
        object.__setattr__(self, "lower_joints", low)
        if not up or not low:
            raise PartitionError(f"partition {self.name!r}: both parts must be non-empty")
        if set(up) & set(low):
            raise PartitionError(f"partition {self.name!r}: parts overlap at joints {sorted(set(up) & set(low))}")
        allj = sorted(up + low)
        if allj != list(range(len(allj))):
            raise PartitionError(f"partition {self.name!r}: joints must cover 0..{len(allj) - 1} exactly")

    @property
    def n_joints(self) -> int:
        return len(self.upper_joints) + len(self.lower_joints)

    @property
    def upper(self) -> list[int]:
        return joint_nodes(self.upper_joints)

    @property
    def lower(self) -> list[int]:
        return joint_nodes(self.lower_joints)

    def to_dict(self) -> dict:
        return {"name": self.name, "upper_joints": list(self.upper_joints), "lower_joints": list(self.lower_joints)}

    @classmethod
    def from_dict(cls, d: dict) -> "BodyPartition":
        try:
            return cls(d["name"], tuple(d["upper_joints"]), tuple(d["lower_joints"]))
        except KeyError as exc:
            raise ConfigError(f"partition record missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BodyPartition":
        return cls.from_dict(json.loads(text))


# H3.6M 22-joint layout used by the DCT-based predictors (joints kept after
# dropping the static ones). Index: name.
H36M_22_JOINTS = (
    "r_hip", "r_knee", "r_ankle", "r_toe", "l_hip", "l_knee", "l_ankle", "l_toe",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "l_hand", "l_thumb",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand", "r_thumb",
)
H36M_22_BONES = (
    (0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7), (0, 8), (4, 8),
    (8, 9), (9, 10), (10, 11),
    (9, 12), (12, 13), (13, 14), (14, 15), (14, 16),
    (9, 17), (17, 18), (18, 19), (19, 20), (19, 21),
)

TOY4_BONES = ((0, 1), (0, 2), (2, 3))

_PRESETS = {
    "h36m22": {
        "joints": 22,
        "bones": H36M_22_BONES,
        "upper-lower": (tuple(range(8, 22)), tuple(range(0, 8))),
        "left-right": ((4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16), (0, 1, 2, 3, 17, 18, 19, 20, 21)),
    },
    "toy4": {
        "joints": 4,
        "bones": TOY4_BONES,
        "upper-lower": ((0, 1), (2, 3)),
        "left-right": ((0, 1), (2, 3)),
    },
}


def skeleton_preset(layout: str) -> dict:
    if layout not in _PRESETS:
        raise ConfigError(f"unknown skeleton layout {layout!r}; known: {sorted(_PRESETS)}")
    p = _PRESETS[layout]
    return {"joints": p["joints"], "bones": [list(b) for b in p["bones"]]}


def builtin_partitions(layout: str, kind: str = "upper-lower", upper=None, lower=None) -> BodyPartition:
    """Named partition for a known skeleton, or explicit joint lists for a custom one."""
    if upper is not None and lower is not None:
        return BodyPartition(f"{layout}:{kind}", tuple(upper), tuple(lower))
    if layout not in _PRESETS:
        raise ConfigError(f"unknown skeleton layout {layout!r} and no explicit joint lists")
    if kind not in ("upper-lower", "left-right"):
        raise ConfigError(f"unknown partition kind {kind!r}")
    up, low = _PRESETS[layout][kind]
    return BodyPartition(f"{layout}:{kind}", up, low)


# -- fusion ops --------------------------------------------------------------
def split_parts(h: ad.Tensor, p: BodyPartition):
    n = h.shape[-2]
    if max(p.upper + p.lower) >= n:
        raise PartitionError(f"partition addresses node {max(p.upper + p.lower)} but features have {n} rows")
    return ad.take(h, p.upper, axis=-2), ad.take(h, p.lower, axis=-2)


def place_parts(h_up: ad.Tensor, h_low: ad.Tensor, p: BodyPartition) -> ad.Tensor:
    """Scatter part rows back to their whole-body indices."""
    if h_up.shape[-2] != len(p.upper) or h_low.shape[-2] != len(p.lower):
        raise PartitionError(
            f"part shapes {h_up.shape}, {h_low.shape} do not match partition sizes {len(p.upper)}, {len(p.lower)}"
        )
    order = np.array(p.upper + p.lower)
    inverse = np.argsort(order)
    return ad.take(ad.concat([h_up, h_low], axis=-2), inverse, axis=-2)


class Affine:
    def __init__(self, weight: ad.Tensor, bias: ad.Tensor):
        self.weight, self.bias = weight, bias

    @classmethod
    def init(cls, rng, fan_in: int, fan_out: int, name: str = "") -> "Affine":
        return cls(uniform_weight(rng, fan_in, fan_out, name=f"{name}.W"), zeros_param(fan_out, name=f"{name}.b"))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.linear(x, self.weight, self.bias)

    def parameters(self) -> list[ad.Tensor]:
        return [self.weight, self.bias]


class FusionMLP:
    """affine -> tanh -> affine; ``linear=True`` drops the tanh."""

    def __init__(self, first: Affine, second: Affine, linear: bool = False):
        self.first, self.second, self.linear = first, second, linear

    @classmethod
    def init(cls, rng, width: int, name: str = "mlp") -> "FusionMLP":
        return cls(Affine.init(rng, width, width, f"{name}.0"), Affine.init(rng, width, width, f"{name}.1"))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        z = self.first(x)
        if not self.linear:
            z = ad.tanh(z)
        return self.second(z)

    def parameters(self) -> list[ad.Tensor]:
        return self.first.parameters() + self.second.parameters()


def affinity(h_src: ad.Tensor, h_dst: ad.Tensor, f_src, f_dst, normalize: str = "source") -> ad.Tensor:
    """Directed part-to-part affinity ``(..., Ms, Md)``.

    ``normalize="source"`` applies softmax over source joints, so each column
    (one destination joint) sums to 1. ``"target"`` normalizes each row.
    """
    scores = ad.matmul(f_src(h_src), ad.transpose(f_dst(h_dst)))
    if normalize == "source":
        return ad.softmax(scores, axis=-2)
    if normalize == "target":
        return ad.softmax(scores, axis=-1)
    raise ConfigError(f"unknown affinity normalization {normalize!r}")


def cross_update(h_dst: ad.Tensor, h_src: ad.Tensor, a: ad.Tensor) -> ad.Tensor:
    """h_dst + A^T h_src."""
    return ad.add(h_dst, ad.matmul(ad.transpose(a), h_src))


class BipartiteFusion:
    def __init__(self, f_up: Affine, f_low: Affine, mlp: FusionMLP):
        self.f_up, self.f_low, self.mlp = f_up, f_low, mlp

    @classmethod
    def init(cls, rng, width: int, prefix: str = "") -> "BipartiteFusion":
        return cls(
            Affine.init(rng, width, width, f"{prefix}f_up"),
            Affine.init(rng, width, width, f"{prefix}f_low"),
            FusionMLP.init(rng, width, f"{prefix}mlp"),
        )

    def parameters(self) -> list[ad.Tensor]:
        return self.f_up.parameters() + self.f_low.parameters() + self.mlp.parameters()


def bipartite_exchange(h_up, h_low, fusion: BipartiteFusion, normalize: str = "source"):
    """Both directional updates, each computed from the original part features."""
    a_up2low = affinity(h_up, h_low, fusion.f_up, fusion.f_low, normalize)
    a_low2up = affinity(h_low, h_up, fusion.f_low, fusion.f_up, normalize)
    new_low = cross_update(h_low, h_up, a_up2low)
    new_up = cross_update(h_up, h_low, a_low2up)
    return new_up, new_low, (a_up2low, a_low2up)


def place_and_fuse(h: ad.Tensor, h_up: ad.Tensor, h_low: ad.Tensor, p: BodyPartition, mlp) -> ad.Tensor:
    """MLP(H + place(H_up, H_low))."""
    placed = place_parts(h_up, h_low, p)
    if placed.shape != h.shape:
        raise PartitionError(f"placed parts {placed.shape} do not match whole-body features {h.shape}")
    return mlp(ad.add(h, placed))
