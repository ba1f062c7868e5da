"""Clip files, dataset manifests, preprocessing and synthetic motion."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._fileio import atomic_write, fmt_float
from .parts import BodyPartition, ConfigError
from .training import MotionDataset

MOTIFS = ("sinusoid-limbs", "constant-velocity", "figure-eight")


class ClipParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class MotionClip:
    frames: np.ndarray  # (T, M, 3)
    frame_rate: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError(f"clip frames must be (T, M, 3), got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("clip holds non-finite coordinates")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


# -- clip files ------------------------------------------------------------
def format_clip(frames: np.ndarray) -> str:
    frames = np.asarray(frames, dtype=np.float64)
    t, m, _ = frames.shape
    rows = [f"{t} {m}"]
    rows += [" ".join(fmt_float(v) for v in frame.reshape(-1)) for frame in frames]
    return "\n".join(rows) + "\n"


def write_clip(path, clip) -> None:
    frames = clip.frames if isinstance(clip, MotionClip) else clip
    atomic_write(path, format_clip(frames))


def parse_clip(text: str, path="<clip>") -> np.ndarray:
    lines = text.splitlines()
    if not lines:
        raise ClipParseError(path, 1, "missing header")
    head = lines[0].split()
    try:
        t, m = (int(v) for v in head)
    except ValueError:
        raise ClipParseError(path, 1, f"header must be 'T M', got {lines[0]!r}") from None
    if t < 1 or m < 1:
        raise ClipParseError(path, 1, "T and M must be positive")
    if len(lines) - 1 < t:
        raise ClipParseError(path, len(lines) + 1, f"expected {t} frame lines, found {len(lines) - 1}")
    out = np.empty((t, 3 * m))
    for i in range(t):
        fields_ = lines[i + 1].split()
        if len(fields_) != 3 * m:
            raise ClipParseError(path, i + 2, f"expected {3 * m} values, found {len(fields_)}")
        try:
            out[i] = [float(v) for v in fields_]
        except ValueError:
            raise ClipParseError(path, i + 2, "unparseable value") from None
        if not np.isfinite(out[i]).all():
            raise ClipParseError(path, i + 2, "non-finite value")
    if any(s.strip() for s in lines[t + 1:]):
        raise ClipParseError(path, t + 2, "unexpected data after last frame")
    return out.reshape(t, m, 3)


def center_on_root(frames: np.ndarray, root: int = 0) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    return frames - frames[:, root:root + 1, :]


def load_clip(path, root: int | None = 0, frame_rate: float = 25.0) -> MotionClip:
    """Read a clip file; subtract joint ``root`` per frame unless ``root`` is None."""
    frames = parse_clip(Path(path).read_text(encoding="utf-8"), path)
    if root is not None:
        frames = center_on_root(frames, root)
    return MotionClip(frames, frame_rate)


# -- preprocessing ---------------------------------------------------------
def downsample(clip: MotionClip, factor: int) -> MotionClip:
    if factor < 1:
        raise ValueError("downsampling factor must be >= 1")
    return MotionClip(clip.frames[::factor].copy(), clip.frame_rate / factor)


def segment_clips(clip, history: int, horizon: int, stride: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sliding ``history + horizon`` windows; window i starts at frame ``i * stride``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    frames = clip.frames if isinstance(clip, MotionClip) else np.asarray(clip, dtype=np.float64)
    span = history + horizon
    out = []
    for start in range(0, frames.shape[0] - span + 1, stride):
        window = frames[start:start + span]
        out.append((window[:history].copy(), window[history:].copy()))
    return out


def ms_to_frames(ms: float, frame_rate: float) -> int:
    return int(round(ms * frame_rate / 1000.0))


# -- manifests -------------------------------------------------------------
@dataclass
class DatasetManifest:
    joints: int
    bones: list
    root: int
    partitions: dict
    unit: str
    frame_rate: float
    clips: list
    pre_centered: bool = False
    downsample: int = 1
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.unit not in ("mm", "m"):
            raise ConfigError(f"unit must be 'mm' or 'm', got {self.unit!r}")
        for a, b in self.bones:
            if not (0 <= a < self.joints and 0 <= b < self.joints):
                raise ConfigError(f"bone ({a}, {b}) outside 0..{self.joints - 1}")
        for name, rec in self.partitions.items():
            part = BodyPartition.from_dict({"name": name, **rec})
            if part.n_joints != self.joints:
                raise ConfigError(f"partition {name!r} covers {part.n_joints} joints, skeleton has {self.joints}")

    def partition(self, name: str) -> BodyPartition:
        if name not in self.partitions:
            raise ConfigError(f"manifest has no partition {name!r}; known: {sorted(self.partitions)}")
        return BodyPartition.from_dict({"name": name, **self.partitions[name]})

    def to_dict(self) -> dict:
        parts = {k: {"upper_joints": list(v["upper_joints"]), "lower_joints": list(v["lower_joints"])}
                 for k, v in self.partitions.items()}
        return {
            "skeleton": {"joints": self.joints, "bones": [list(b) for b in self.bones], "root": self.root, "partitions": parts},
            "unit": self.unit,
            "frame_rate": self.frame_rate,
            "pre_centered": self.pre_centered,
            "downsample": self.downsample,
            "clips": self.clips,
        }

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        d = json.loads(path.read_text(encoding="utf-8"))
        try:
            sk = d["skeleton"]
            return cls(
                joints=int(sk["joints"]),
                bones=[list(b) for b in sk.get("bones", [])],
                root=int(sk.get("root", 0)),
                partitions=sk.get("partitions", {}),
                unit=d.get("unit", "m"),
                frame_rate=float(d["frame_rate"]),
                clips=d["clips"],
                pre_centered=bool(d.get("pre_centered", False)),
                downsample=int(d.get("downsample", 1)),
                base_dir=path.parent,
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: manifest missing field {exc}") from None

    def save(self, path) -> None:
        atomic_write(path, json.dumps(self.to_dict(), indent=2) + "\n")

    def clip_paths(self) -> list[Path]:
        return [self.base_dir / (c["path"] if isinstance(c, dict) else c) for c in self.clips]

    def load_clips(self) -> list[MotionClip]:
        root = None if self.pre_centered else self.root
        out = []
        for p in self.clip_paths():
            clip = load_clip(p, root=root, frame_rate=self.frame_rate)
            if clip.n_joints != self.joints:
                raise ConfigError(f"{p}: clip has {clip.n_joints} joints, manifest declares {self.joints}")
            out.append(downsample(clip, self.downsample) if self.downsample > 1 else clip)
        return out

    @property
    def effective_frame_rate(self) -> float:
        return self.frame_rate / self.downsample


def load_dataset(manifest: DatasetManifest, history: int, horizon: int, stride: int = 1) -> MotionDataset:
    hist, fut, ids = [], [], []
    for i, clip in enumerate(manifest.load_clips()):
        for h, f in segment_clips(clip, history, horizon, stride):
            hist.append(h)
            fut.append(f)
            ids.append(i)
    m = manifest.joints
    if not hist:
        return MotionDataset(np.zeros((0, history, m, 3)), np.zeros((0, horizon, m, 3)), np.zeros(0, dtype=int))
    return MotionDataset(np.stack(hist), np.stack(fut), np.array(ids))


# -- synthetic data --------------------------------------------------------
def synthetic_skeleton(n_joints: int) -> dict:
    """Root 0 with an upper chain 0..h-1 and a lower chain h..M-1 hanging off the root."""
    if n_joints < 2:
        raise ValueError("need at least 2 joints")
    half = max(1, n_joints // 2)
    bones = [[i, i + 1] for i in range(half - 1)]
    bones.append([0, half])
    bones += [[i, i + 1] for i in range(half, n_joints - 1)]
    upper, lower = list(range(half)), list(range(half, n_joints))
    evens, odds = list(range(0, n_joints, 2)), list(range(1, n_joints, 2))
    rest = np.zeros((n_joints, 3))
    for j in range(1, half):
        rest[j] = [0.0, 0.25 * j, 0.0]
    for j in range(half, n_joints):
        rest[j] = [0.05, -0.25 * (j - half + 1), 0.0]
    return {
        "joints": n_joints,
        "bones": bones,
        "root": 0,
        "rest": rest,
        "partitions": {
            "upper-lower": {"upper_joints": upper, "lower_joints": lower},
            "left-right": {"upper_joints": evens, "lower_joints": odds},
        },
    }


UPPER_FREQ_HZ = 0.8
LOWER_FREQ_HZ = 1.3


def joint_phase_offsets(n_joints: int) -> np.ndarray:
    return 0.7 * np.arange(3 * n_joints).reshape(n_joints, 3)


def sinusoid_trajectory(n_frames: int, frame_rate: float, rest: np.ndarray, amp: float, phase: float) -> np.ndarray:
    """Non-root joints oscillate about ``rest``: upper joints at one frequency,
    lower joints at another, all locked to a shared clip phase."""
    m = rest.shape[0]
    half = max(1, m // 2)
    t = np.arange(n_frames)[:, None, None] / frame_rate
    freq = np.where(np.arange(m) < half, UPPER_FREQ_HZ, LOWER_FREQ_HZ)[None, :, None]
    out = rest[None] + amp * np.sin(2.0 * np.pi * freq * t + phase + joint_phase_offsets(m)[None])
    out[:, 0, :] = 0.0
    return out


def constant_velocity_trajectory(n_frames: int, rest: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Rigid translation of the whole skeleton by ``velocity`` per frame."""
    t = np.arange(n_frames)[:, None, None]
    return rest[None] + t * np.asarray(velocity)[None, None, :]


def figure_eight_trajectory(n_frames: int, frame_rate: float, rest: np.ndarray, amp: float, phase: float) -> np.ndarray:
    m = rest.shape[0]
    half = max(1, m // 2)
    s = 2.0 * np.pi * np.arange(n_frames) / frame_rate
    out = np.repeat(rest[None], n_frames, axis=0)
    for j in range(1, m):
        w = UPPER_FREQ_HZ if j < half else LOWER_FREQ_HZ
        a = w * s + phase + 0.5 * j
        out[:, j, 0] += amp * np.sin(a)
        out[:, j, 1] += amp * np.sin(a) * np.cos(a)
    return out


def gen_synthetic(out_dir, seed: int = 7, n_clips: int = 64, n_frames: int = 40, n_joints: int = 4,
                  motif: str = "sinusoid-limbs", frame_rate: float = 25.0) -> DatasetManifest:
    """Write ``n_clips`` deterministic clips plus ``manifest.json`` into ``out_dir``."""
    if motif not in MOTIFS:
        raise ConfigError(f"unknown motif {motif!r}; choose from {MOTIFS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    sk = synthetic_skeleton(n_joints)
    clips = []
    for i in range(n_clips):
        if motif == "sinusoid-limbs":
            amp, phase = rng.uniform(0.05, 0.15), rng.uniform(0.0, 2.0 * np.pi)
            frames = sinusoid_trajectory(n_frames, frame_rate, sk["rest"], amp, phase)
        elif motif == "constant-velocity":
            velocity = rng.normal(size=3) * 0.01
            frames = constant_velocity_trajectory(n_frames, sk["rest"], velocity)
        else:
            amp, phase = rng.uniform(0.05, 0.15), rng.uniform(0.0, 2.0 * np.pi)
            frames = figure_eight_trajectory(n_frames, frame_rate, sk["rest"], amp, phase)
        name = f"clip_{i:03d}.txt"
        write_clip(out_dir / name, frames)
        clips.append({"path": name, "action": motif})
    manifest = DatasetManifest(
        joints=n_joints,
        bones=sk["bones"],
        root=0,
        partitions=sk["partitions"],
        unit="m",
        frame_rate=frame_rate,
        clips=clips,
        pre_centered=motif == "constant-velocity",
        base_dir=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
