"""JSON run configuration: model fields plus T, dT, epochs, seed, batch_size."""
from __future__ import annotations

import json
from pathlib import Path

from .network import ModelConfig
from .parts import BodyPartition, ConfigError, builtin_partitions, skeleton_preset
from .training import TrainConfig

_TRAIN_KEYS = {"epochs", "seed", "batch_size", "lr", "lr_decay", "decay_every", "stride", "train_fraction"}
_MODEL_KEYS = {
    "blocks", "scatter_layers", "filter_order", "hidden", "dct_coeffs", "block_residuals",
    "global_skip", "aggregator", "affinity_norm", "share_branch_weights",
}


def _resolve_partition(spec, manifest, joints: int, layout: str | None):
    if spec in (None, "1body"):
        return None
    if isinstance(spec, BodyPartition):
        return spec.to_dict()
    if isinstance(spec, dict):
        return BodyPartition.from_dict({"name": spec.get("name", "custom"), **spec}).to_dict()
    if isinstance(spec, str):
        if manifest is not None and spec in manifest.partitions:
            return manifest.partition(spec).to_dict()
        if layout is not None:
            return builtin_partitions(layout, spec).to_dict()
        half = joints // 2
        if spec == "upper-lower":
            return BodyPartition(spec, tuple(range(half)), tuple(range(half, joints))).to_dict()
    raise ConfigError(f"cannot resolve partition {spec!r}")


def build_configs(d: dict, manifest=None) -> tuple[ModelConfig, TrainConfig]:
    """Split a flat config record into model and training configs.

    Skeleton fields (``joints``, ``bones``) come from the record, a named
    ``layout`` preset, or the dataset manifest, in that order of precedence.
    """
    unknown = set(d) - _TRAIN_KEYS - _MODEL_KEYS - {"T", "dT", "joints", "bones", "partition", "layout"}
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "T" not in d or "dT" not in d:
        raise ConfigError("config needs 'T' and 'dT'")
    layout = d.get("layout")
    preset = skeleton_preset(layout) if layout else {}
    joints = d.get("joints", preset.get("joints", manifest.joints if manifest is not None else None))
    if joints is None:
        raise ConfigError("joint count unknown: give 'joints', 'layout' or a manifest")
    bones = d.get("bones", preset.get("bones", manifest.bones if manifest is not None else []))
    if manifest is not None and manifest.joints != joints:
        raise ConfigError(f"config skeleton has {joints} joints, manifest has {manifest.joints}")
    partition = _resolve_partition(d.get("partition", "upper-lower"), manifest, joints, layout)
    model = ModelConfig(
        joints=int(joints),
        history=int(d["T"]),
        horizon=int(d["dT"]),
        bones=bones,
        partition=partition,
        **{k: d[k] for k in _MODEL_KEYS if k in d},
    )
    return model, TrainConfig(**{k: d[k] for k in _TRAIN_KEYS if k in d})


def load_configs(path, manifest=None) -> tuple[ModelConfig, TrainConfig]:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return build_configs(d, manifest)
