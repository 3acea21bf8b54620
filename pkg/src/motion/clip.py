"""
Motion data model
Skeleton, MotionClip, clip file I/O, resampling and MPJPE/MPKPE.

Positions are world frame, z-up, meters.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ClipParseError, ClipValidationError, ForgeIOError, ShapeMismatchError
from src.seeding import derive_seed

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy plus the joint roles the physics code needs"""
    joint_names: Tuple[str, ...]
    parent_index: Tuple[int, ...]  # -1 for the root
    bone_lengths: Tuple[float, ...]  # one per non-root joint, in joint order
    foot_joints: Tuple[int, int]  # (left, right)
    keypoint_joints: Tuple[int, ...]  # hands, feet, head

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def bone_pairs(self) -> List[Tuple[int, int]]:
        """(child, parent) for every non-root joint"""
        return [(j, p) for j, p in enumerate(self.parent_index) if p >= 0]

    def validate(self):
        n = self.n_joints
        if n < 1:
            raise ClipValidationError("Skeleton has no joints", field="joints")
        if len(self.parent_index) != n:
            raise ClipValidationError(
                f"parents has {len(self.parent_index)} entries for {n} joints", field="parents"
            )
        if self.parent_index[0] != -1:
            raise ClipValidationError("Joint 0 must be the root (parent -1)", field="parents")
        for j in range(1, n):
            p = self.parent_index[j]
            if not 0 <= p < n or p == j:
                raise ClipValidationError(f"Joint {j} has invalid parent {p}", field="parents")
        # every chain must reach the root without revisiting a joint
        for j in range(n):
            seen = set()
            k = j
            while k != 0:
                if k in seen:
                    raise ClipValidationError(f"Parent cycle through joint {j}", field="parents")
                seen.add(k)
                k = self.parent_index[k]
        if len(self.bone_lengths) != n - 1:
            raise ClipValidationError(
                f"bone_lengths has {len(self.bone_lengths)} entries for {n - 1} bones", field="bone_lengths"
            )
        for i, length in enumerate(self.bone_lengths):
            if not (math.isfinite(length) and length > 0):
                raise ClipValidationError(f"Bone {i} has non-positive length {length}", field="bone_lengths")
        if len(self.foot_joints) != 2:
            raise ClipValidationError("Exactly two foot joints are required", field="foot_joints")
        for name, indices in (("foot_joints", self.foot_joints), ("keypoint_joints", self.keypoint_joints)):
            for idx in indices:
                if not 0 <= idx < n:
                    raise ClipValidationError(f"{name} index {idx} out of range", field=name)


@dataclass(frozen=True, eq=False)
class MotionClip:
    """Fixed-rate sequence of 3-D joint positions"""
    skeleton: Skeleton
    fps: float
    frames: np.ndarray  # (T, J, 3) float64
    ground_height: float = 0.0
    label: str = ""
    tags: Tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return (self.n_frames - 1) / self.fps

    @property
    def feet(self) -> np.ndarray:
        """(T, 2, 3) foot positions"""
        return self.frames[:, list(self.skeleton.foot_joints)]

    def with_frames(self, frames: np.ndarray, **changes) -> "MotionClip":
        return replace(self, frames=frames, **changes)

    def validate(self) -> "MotionClip":
        if not (math.isfinite(float(self.fps)) and self.fps > 0):
            raise ClipValidationError(f"fps must be > 0, got {self.fps}", field="fps")
        if not math.isfinite(self.ground_height):
            raise ClipValidationError("ground_height must be finite", field="ground_height")
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ClipValidationError(f"frames must be T x J x 3, got {self.frames.shape}", field="frames")
        if self.frames.shape[0] < 2:
            raise ClipValidationError(f"A clip needs at least 2 frames, got {self.frames.shape[0]}", field="frames")
        if self.frames.shape[1] != self.skeleton.n_joints:
            raise ClipValidationError(
                f"frames have {self.frames.shape[1]} joints, skeleton has {self.skeleton.n_joints}", field="frames"
            )
        bad = np.argwhere(~np.isfinite(self.frames))
        if len(bad):
            t, j, _ = bad[0]
            raise ClipValidationError(f"Non-finite coordinate at frame {t}, joint {j}", field=f"frames[{t}][{j}]")
        self.skeleton.validate()
        return self


# ============================================================================
# FILE I/O
# ============================================================================

def bone_lengths_from_frames(frames: np.ndarray, parent_index: Sequence[int]) -> Tuple[float, ...]:
    """Per-bone mean length over frames"""
    lengths = []
    for j, p in enumerate(parent_index):
        if p < 0:
            continue
        lengths.append(float(np.linalg.norm(frames[:, j] - frames[:, p], axis=-1).mean()))
    return tuple(lengths)


def clip_to_dict(clip: MotionClip) -> Dict:
    sk = clip.skeleton
    return {
        "name": clip.name,
        "fps": clip.fps,
        "ground_height": clip.ground_height,
        "label": clip.label,
        "tags": list(clip.tags),
        "joints": list(sk.joint_names),
        "parents": list(sk.parent_index),
        "foot_joints": list(sk.foot_joints),
        "keypoint_joints": list(sk.keypoint_joints),
        "bone_lengths": list(sk.bone_lengths),
        "frames": clip.frames.tolist(),
    }


def _require(data: Dict, key: str):
    if key not in data:
        raise ClipParseError(f"Clip file is missing field '{key}'", field=key)
    return data[key]


def clip_from_dict(data: Dict, default_name: str = "") -> MotionClip:
    if not isinstance(data, dict):
        raise ClipParseError("Clip file root must be a JSON object", field="root")
    try:
        frames = np.asarray(_require(data, "frames"), dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ClipParseError(f"frames are not a rectangular number array: {e}", field="frames") from e
    try:
        joints = tuple(str(n) for n in _require(data, "joints"))
        parents = tuple(int(p) for p in _require(data, "parents"))
        feet = tuple(int(f) for f in _require(data, "foot_joints"))
        keypoints = tuple(int(k) for k in _require(data, "keypoint_joints"))
        fps = float(_require(data, "fps"))
        ground = float(_require(data, "ground_height"))
    except (TypeError, ValueError) as e:
        raise ClipParseError(f"Malformed clip header: {e}", field="header") from e

    if "bone_lengths" in data:
        bones = tuple(float(b) for b in data["bone_lengths"])
    elif frames.ndim == 3 and frames.shape[1] == len(parents) and len(parents) > 0 and parents[0] == -1:
        bones = bone_lengths_from_frames(frames, parents)
    else:
        bones = ()

    skeleton = Skeleton(
        joint_names=joints,
        parent_index=parents,
        bone_lengths=bones,
        foot_joints=feet,
        keypoint_joints=keypoints,
    )
    clip = MotionClip(
        skeleton=skeleton,
        fps=fps,
        frames=frames,
        ground_height=ground,
        label=str(_require(data, "label")),
        tags=tuple(str(t) for t in data.get("tags", [])),
        name=str(data.get("name") or default_name),
    )
    return clip.validate()


def load_clip(path) -> MotionClip:
    """
    Load and validate one clip file.

    Raises:
        ClipParseError: the file is missing or malformed
        ClipValidationError: an invariant is violated
    """
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ClipParseError(f"Clip file not found: {path}", field="path") from e
    except json.JSONDecodeError as e:
        raise ClipParseError(f"Clip file {path} is not valid JSON: {e}", field="json") from e
    return clip_from_dict(data, default_name=path.stem)


def save_clip(clip: MotionClip, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(clip_to_dict(clip), f)


def load_corpus(directory, split: Optional[str] = None) -> List[MotionClip]:
    """Load every clip listed in a corpus manifest, optionally one split only"""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise ForgeIOError(f"Corpus manifest not found: {manifest_path}", field="manifest") from e
    except json.JSONDecodeError as e:
        raise ForgeIOError(f"Corpus manifest {manifest_path} is not valid JSON: {e}", field="manifest") from e

    clips = []
    entries = manifest.get("clips", []) if isinstance(manifest, dict) else None
    if not isinstance(entries, list):
        raise ForgeIOError(f"Corpus manifest {manifest_path} has no clip list", field="manifest")
    for i, entry in enumerate(entries):
        try:
            entry_split, file_name = entry.get("split"), entry["file"]
        except (AttributeError, KeyError, TypeError) as e:
            raise ForgeIOError(
                f"Corpus manifest {manifest_path}: clip entry {i} needs a 'file' field, got {entry!r}",
                field="manifest",
            ) from e
        if split is not None and entry_split != split:
            continue
        clips.append(load_clip(directory / file_name))
    return clips


def save_corpus(clips: Sequence[MotionClip], directory, split: Union[str, Sequence[str]] = "train") -> Path:
    """
    Write clips plus a manifest; clip files are named after clip names.
    `split` is one split name for every clip or one name per clip.
    """
    splits = [split] * len(clips) if isinstance(split, str) else list(split)
    if len(splits) != len(clips):
        raise ShapeMismatchError(f"{len(splits)} split names for {len(clips)} clips", field="split")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (clip, clip_split) in enumerate(zip(clips, splits)):
        stem = clip.name or f"clip_{i:05d}"
        file_name = f"{stem}.json"
        save_clip(clip, directory / file_name)
        entries.append({"file": file_name, "split": clip_split})
    with open(directory / MANIFEST_NAME, "w") as f:
        json.dump({"version": 1, "clips": entries}, f, indent=2)
    return directory


def split_corpus(
    clips: Sequence[MotionClip], test_fraction: float = 0.2, seed: int = 0
) -> Tuple[List[MotionClip], List[MotionClip]]:
    """
    Stratified train/test split.

    Each label holds out round(test_fraction * n) of its n clips, at least
    one and never all of them; a label with a single clip stays in train.
    The held-out clips of a label are a seeded permutation prefix, and both
    halves keep the corpus order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ClipValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}", field="test_fraction")
    by_label: Dict[Optional[str], List[int]] = {}
    for i, clip in enumerate(clips):
        by_label.setdefault(clip.label, []).append(i)

    held_out = set()
    for label, rows in by_label.items():
        n_test = min(len(rows) - 1, max(1, int(round(test_fraction * len(rows)))))
        order = np.random.default_rng(derive_seed(seed, 0, f"split:{label}")).permutation(len(rows))
        held_out.update(rows[k] for k in order[:n_test])

    train = [c for i, c in enumerate(clips) if i not in held_out]
    test = [c for i, c in enumerate(clips) if i in held_out]
    return train, test


# ============================================================================
# RESAMPLING AND ERROR METRICS
# ============================================================================

def resample(clip: MotionClip, target_frames: int) -> MotionClip:
    """
    Linear time-interpolation onto `target_frames` uniform samples spanning
    the original duration. Equal frame counts return the clip unchanged.
    """
    if target_frames < 2:
        raise ClipValidationError(f"target_frames must be >= 2, got {target_frames}", field="target_frames")
    n = clip.n_frames
    if target_frames == n:
        return clip

    u = np.linspace(0.0, n - 1, target_frames)
    i0 = np.minimum(np.floor(u).astype(int), n - 2)
    w = (u - i0)[:, None, None]
    frames = (1.0 - w) * clip.frames[i0] + w * clip.frames[i0 + 1]
    fps = clip.fps * (target_frames - 1) / (n - 1)
    return clip.with_frames(frames, fps=fps)


def flatten(clip: MotionClip) -> np.ndarray:
    return clip.frames.reshape(-1)


def unflatten(vector: np.ndarray, n_joints: int) -> np.ndarray:
    return np.asarray(vector, dtype=np.float64).reshape(-1, n_joints, 3)


@dataclass(frozen=True)
class ClipError:
    """MPJPE / MPKPE between two aligned clips, in meters"""
    mpjpe: float
    mpkpe: float
    per_frame_mpjpe: Tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict:
        return {"mpjpe": self.mpjpe, "mpkpe": self.mpkpe}


def compute_clip_error(a: MotionClip, b: MotionClip, root_relative: bool = False) -> ClipError:
    """
    Mean per-joint and per-keypoint position error.

    Args:
        a, b: clips with the same skeleton and frame count
        root_relative: subtract the root joint per frame before comparing

    Raises:
        ShapeMismatchError: skeletons or frame counts differ
    """
    if a.frames.shape != b.frames.shape:
        raise ShapeMismatchError(f"Clip shapes differ: {a.frames.shape} vs {b.frames.shape}", field="frames")
    if a.skeleton.joint_names != b.skeleton.joint_names:
        raise ShapeMismatchError("Clips use different skeletons", field="skeleton")

    pa, pb = a.frames, b.frames
    if root_relative:
        pa = pa - pa[:, :1]
        pb = pb - pb[:, :1]
    dist = np.linalg.norm(pa - pb, axis=-1)  # (T, J)
    per_frame = dist.mean(axis=1)
    keypoints = list(a.skeleton.keypoint_joints) or list(range(a.skeleton.n_joints))
    return ClipError(
        mpjpe=float(per_frame.mean()),
        mpkpe=float(dist[:, keypoints].mean()),
        per_frame_mpjpe=tuple(float(v) for v in per_frame),
    )
