"""
Procedural gait corpus
Clean walk/jump/kick/idle clips on a 13-joint humanoid with analytically
known stance schedules, plus artifact injectors (skate, float, penetrate,
noise) whose effect on the plausibility metrics is known in closed form.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from src.config import ContactParams
from src.errors import ClipValidationError, UnknownCorruptionError
from src.motion.clip import MotionClip, Skeleton
from src.physics.contact import AIRBORNE_TAG, detect_contacts
from src.seeding import derive_seed

STANCE_TAG_PREFIX = "stance:"
CORRUPTION_TAG_PREFIX = "corrupted:"

GRAVITY = 9.81
THIGH = 0.45
SHIN = 0.45
FORWARD = np.array([1.0, 0.0, 0.0])

# ============================================================================
# CANONICAL SKELETON
# ============================================================================

JOINT_NAMES = (
    "root", "spine", "head",
    "left_shoulder", "left_hand", "right_shoulder", "right_hand",
    "left_hip", "left_knee", "left_foot",
    "right_hip", "right_knee", "right_foot",
)
PARENTS = (-1, 0, 1, 1, 3, 1, 5, 0, 7, 8, 0, 10, 11)
LEFT_FOOT, RIGHT_FOOT = 9, 12
KEYPOINTS = (4, 6, 9, 12, 2)

# rest offsets from the parent joint
SPINE_OFFSET = np.array([0.0, 0.0, 0.25])
HEAD_OFFSET = np.array([0.0, 0.0, 0.30])
SHOULDER_OFFSET = np.array([0.0, 0.18, 0.20])
ARM_LENGTH = 0.50
HIP_OFFSET = np.array([0.0, 0.10, -0.05])

_REST_OFFSETS = {
    1: SPINE_OFFSET,
    2: HEAD_OFFSET,
    3: SHOULDER_OFFSET,
    4: np.array([0.0, 0.0, -ARM_LENGTH]),
    5: SHOULDER_OFFSET * np.array([1.0, -1.0, 1.0]),
    6: np.array([0.0, 0.0, -ARM_LENGTH]),
    7: HIP_OFFSET,
    8: np.array([0.0, 0.0, -THIGH]),
    9: np.array([0.0, 0.0, -SHIN]),
    10: HIP_OFFSET * np.array([1.0, -1.0, 1.0]),
    11: np.array([0.0, 0.0, -THIGH]),
    12: np.array([0.0, 0.0, -SHIN]),
}

CANONICAL_SKELETON = Skeleton(
    joint_names=JOINT_NAMES,
    parent_index=PARENTS,
    bone_lengths=tuple(float(np.linalg.norm(_REST_OFFSETS[j])) for j in range(1, len(JOINT_NAMES))),
    foot_joints=(LEFT_FOOT, RIGHT_FOOT),
    keypoint_joints=KEYPOINTS,
)


class Category(Enum):
    WALK = "walk"
    JUMP = "jump"
    KICK = "kick"
    IDLE = "idle"


class CorruptionKind(Enum):
    SKATE = "skate"
    FLOAT = "float"
    PENETRATE = "penetrate"
    NOISE = "noise"


@dataclass(frozen=True)
class GaitSpec:
    category: str
    duration_s: float = 2.0
    fps: float = 30.0
    stride_m: float = 0.5
    step_period_s: float = 0.5
    seed: int = 0
    ground_height: float = 0.0

    def __post_init__(self):
        try:
            Category(self.category)
        except ValueError as e:
            raise ClipValidationError(f"Unknown gait category {self.category!r}", field="category") from e
        if not self.duration_s > 0:
            raise ClipValidationError("duration_s must be > 0", field="duration_s")
        if not self.fps > 0:
            raise ClipValidationError("fps must be > 0", field="fps")
        if not self.step_period_s > 0:
            raise ClipValidationError("step_period_s must be > 0", field="step_period_s")
        if self.stride_m < 0:
            raise ClipValidationError("stride_m must be >= 0", field="stride_m")
        if self.seed < 0:
            raise ClipValidationError("seed must be >= 0", field="seed")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ClipValidationError("magnitude must be >= 0", field="magnitude")


# ============================================================================
# STANCE SCHEDULE TAGS
# ============================================================================

def stance_tags(stance: np.ndarray) -> tuple:
    """Encode a (T, 2) stance schedule as clip tags"""
    bits = lambda column: "".join("1" if s else "0" for s in column)
    return (f"{STANCE_TAG_PREFIX}left:{bits(stance[:, 0])}", f"{STANCE_TAG_PREFIX}right:{bits(stance[:, 1])}")


def declared_stance(clip: MotionClip) -> Optional[np.ndarray]:
    """(T, 2) declared stance schedule, or None when the clip carries none"""
    columns = {}
    for tag in clip.tags:
        if tag.startswith(STANCE_TAG_PREFIX):
            side, _, bits = tag[len(STANCE_TAG_PREFIX):].partition(":")
            columns[side] = np.array([b == "1" for b in bits], dtype=bool)
    if set(columns) != {"left", "right"}:
        return None
    stance = np.stack([columns["left"], columns["right"]], axis=1)
    if stance.shape[0] != clip.n_frames:
        return None
    return stance


# ============================================================================
# GENERATION
# ============================================================================

def _solve_knee(hip: np.ndarray, foot: np.ndarray) -> np.ndarray:
    """Two-bone IK: knee position for fixed hip and foot, bending forward"""
    d_vec = foot - hip
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    d_c = np.clip(d, 1e-9, (THIGH + SHIN) * (1 - 1e-9))
    direction = d_vec / np.maximum(d, 1e-12)
    along = (THIGH ** 2 - SHIN ** 2 + d_c ** 2) / (2 * d_c)
    height = np.sqrt(np.maximum(THIGH ** 2 - along ** 2, 0.0))
    bend = FORWARD - (direction @ FORWARD)[:, None] * direction
    bend = bend / np.maximum(np.linalg.norm(bend, axis=-1, keepdims=True), 1e-12)
    return hip + along * direction + height * bend


def _cycloid(u: np.ndarray) -> np.ndarray:
    """0 → 1 with zero velocity at both ends"""
    return u - np.sin(2 * np.pi * u) / (2 * np.pi)


def _walk(t, spec, z_g, x0, y0, base_h, stride):
    period = 2 * spec.step_period_s
    root = np.stack([x0 + stride / period * t, np.full_like(t, y0), np.full_like(t, base_h)], axis=1)
    feet = np.zeros((len(t), 2, 3))
    stance = np.zeros((len(t), 2), dtype=bool)
    for f, (phase, side) in enumerate(((0.0, 1.0), (0.5, -1.0))):
        cycle = t / period + phase
        n = np.floor(cycle)
        c = cycle - n
        # the lift-off frame itself is still planted
        in_stance = c < 0.6 + 1e-9
        u = np.clip((c - 0.6) / 0.4, 0.0, 1.0)
        x_land = x0 + stride * (n + 0.3 - phase)
        feet[:, f, 0] = np.where(in_stance, x_land, x_land + stride * _cycloid(u))
        feet[:, f, 1] = y0 + side * HIP_OFFSET[1]
        feet[:, f, 2] = np.where(in_stance, z_g, z_g + 0.12 * (1 - np.cos(2 * np.pi * u)) / 2)
        stance[:, f] = in_stance
    return root, feet, stance


def _jump(t, spec, z_g, x0, y0, base_h):
    T = len(t)
    n_air = max(2, int(round(0.4 * spec.fps)))
    n_air = min(n_air, T - 1)
    k0 = int(min(max(1, round(0.35 * T)), max(0, T - 1 - n_air)))
    k = np.arange(T) - k0
    airborne = (k > 0) & (k < n_air)
    s = np.clip(k, 0, n_air) / spec.fps
    t_air = n_air / spec.fps
    v0 = GRAVITY * t_air / 2
    lift = np.where(airborne, v0 * s - 0.5 * GRAVITY * s ** 2, 0.0)
    tuck = np.where(airborne, 0.15 * np.sin(np.pi * s / t_air), 0.0)

    root = np.stack([np.full(T, x0), np.full(T, y0), base_h + lift], axis=1)
    feet = np.zeros((T, 2, 3))
    for f, side in enumerate((1.0, -1.0)):
        feet[:, f, 0] = x0
        feet[:, f, 1] = y0 + side * HIP_OFFSET[1]
        feet[:, f, 2] = np.where(airborne, z_g + lift + tuck, z_g)
    stance = np.stack([~airborne, ~airborne], axis=1)
    return root, feet, stance, lift


def _kick(t, spec, z_g, x0, y0, base_h):
    T = len(t)
    n_kick = max(2, int(round(0.5 * spec.fps)))
    n_kick = min(n_kick, T - 1)
    k0 = int(min(max(0, round(0.3 * T)), T - 1 - n_kick))
    s = np.clip((np.arange(T) - k0) / n_kick, 0.0, 1.0)
    bump = np.sin(np.pi * s) ** 2
    swinging = (s > 0) & (s < 1)

    root = np.stack([np.full(T, x0), np.full(T, y0), np.full(T, base_h)], axis=1)
    feet = np.zeros((T, 2, 3))
    feet[:, 0] = [x0, y0 + HIP_OFFSET[1], z_g]
    feet[:, 1, 0] = np.where(swinging, x0 + 0.45 * bump, x0)
    feet[:, 1, 1] = y0 - HIP_OFFSET[1]
    feet[:, 1, 2] = np.where(swinging, z_g + 0.40 * bump, z_g)
    stance = np.stack([np.ones(T, dtype=bool), ~swinging], axis=1)
    return root, feet, stance, bump


def _assemble(root, feet, arm_left, arm_right) -> np.ndarray:
    T = root.shape[0]
    frames = np.zeros((T, len(JOINT_NAMES), 3))
    frames[:, 0] = root
    frames[:, 1] = root + SPINE_OFFSET
    frames[:, 2] = frames[:, 1] + HEAD_OFFSET
    for shoulder, hand, angle, side in ((3, 4, arm_left, 1.0), (5, 6, arm_right, -1.0)):
        frames[:, shoulder] = frames[:, 1] + SHOULDER_OFFSET * np.array([1.0, side, 1.0])
        frames[:, hand] = frames[:, shoulder] + ARM_LENGTH * np.stack(
            [np.sin(angle), np.zeros(T), -np.cos(angle)], axis=1
        )
    for hip, knee, foot, f, side in ((7, 8, 9, 0, 1.0), (10, 11, 12, 1, -1.0)):
        frames[:, hip] = root + HIP_OFFSET * np.array([1.0, side, 1.0])
        frames[:, foot] = feet[:, f]
        frames[:, knee] = _solve_knee(frames[:, hip], feet[:, f])
    return frames


def generate_clip(spec: GaitSpec, name: str = "") -> MotionClip:
    """
    Generate one clean clip on the canonical skeleton.

    Stance feet sit exactly at the ground height and do not move
    horizontally; the stance schedule is stored in the clip tags.
    """
    rng = np.random.default_rng(spec.seed)
    x0, y0 = rng.uniform(-0.2, 0.2, size=2)
    height_jitter = rng.uniform(-0.02, 0.02)
    arm_amp = rng.uniform(0.2, 0.4)
    stride_scale = rng.uniform(0.9, 1.1)

    T = max(2, int(round(spec.duration_s * spec.fps)))
    t = np.arange(T) / spec.fps
    z_g = float(spec.ground_height)
    category = Category(spec.category)
    tags = []

    if category is Category.WALK:
        root, feet, stance = _walk(t, spec, z_g, x0, y0, z_g + 0.86 + height_jitter, spec.stride_m * stride_scale)
        swing = arm_amp * np.sin(2 * np.pi * t / (2 * spec.step_period_s))
        arm_left, arm_right = swing, -swing
    elif category is Category.JUMP:
        root, feet, stance, lift = _jump(t, spec, z_g, x0, y0, z_g + 0.90 + height_jitter)
        peak = max(float(lift.max()), 1e-9)
        arm_left = arm_right = 1.2 * arm_amp * lift / peak
        tags.append(AIRBORNE_TAG)
    elif category is Category.KICK:
        root, feet, stance, bump = _kick(t, spec, z_g, x0, y0, z_g + 0.90 + height_jitter)
        arm_left, arm_right = arm_amp * bump, -arm_amp * bump
    else:
        root = np.tile([x0, y0, z_g + 0.90 + height_jitter], (T, 1))
        feet = np.zeros((T, 2, 3))
        feet[:, 0] = [x0, y0 + HIP_OFFSET[1], z_g]
        feet[:, 1] = [x0, y0 - HIP_OFFSET[1], z_g]
        stance = np.ones((T, 2), dtype=bool)
        arm_left = arm_right = np.zeros(T)

    frames = _assemble(root, feet, arm_left, arm_right)
    return MotionClip(
        skeleton=CANONICAL_SKELETON,
        fps=float(spec.fps),
        frames=frames,
        ground_height=z_g,
        label=category.value,
        tags=tuple(tags) + stance_tags(stance),
        name=name,
    )


def generate_corpus(
    categories: Sequence[str] = ("walk", "jump", "kick", "idle"),
    clips_per_category: int = 50,
    seed: int = 0,
    duration_s: float = 2.0,
    fps: float = 30.0,
) -> List[MotionClip]:
    """Clean mixed corpus; clip i of a category uses a seed derived from (seed, category, i)"""
    clips = []
    for category in categories:
        for i in range(clips_per_category):
            spec = GaitSpec(
                category=category,
                duration_s=duration_s,
                fps=fps,
                seed=derive_seed(seed, 0, f"synth:{category}", i),
            )
            clips.append(generate_clip(spec, name=f"{category}_{i:04d}"))
    return clips


# ============================================================================
# CORRUPTION
# ============================================================================

def _stance_runs(column: np.ndarray):
    """Yield (start, stop) of maximal True runs"""
    padded = np.concatenate([[False], column, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return zip(edges[::2], edges[1::2])


def corrupt_clip(clip: MotionClip, spec: CorruptionSpec) -> MotionClip:
    """
    Inject one artifact.

    skate: stance feet slide backward by `magnitude` per frame within each stance run
    float: every joint raised by `magnitude` on frames where any foot is in stance
    penetrate: stance feet lowered by `magnitude`
    noise: i.i.d. Gaussian(0, magnitude^2) on all coordinates
    """
    try:
        kind = CorruptionKind(spec.kind)
    except ValueError as e:
        raise UnknownCorruptionError(f"Unknown corruption kind {spec.kind!r}", field="kind") from e

    stance = declared_stance(clip)
    if stance is None:
        stance = detect_contacts(clip, ContactParams()).contact

    frames = np.array(clip.frames)
    feet = clip.skeleton.foot_joints
    if kind is CorruptionKind.SKATE:
        for f, joint in enumerate(feet):
            for start, stop in _stance_runs(stance[:, f]):
                frames[start:stop, joint, 0] -= np.arange(stop - start) * spec.magnitude
    elif kind is CorruptionKind.FLOAT:
        frames[stance.any(axis=1), :, 2] += spec.magnitude
    elif kind is CorruptionKind.PENETRATE:
        for f, joint in enumerate(feet):
            frames[stance[:, f], joint, 2] -= spec.magnitude
    else:
        rng = np.random.default_rng(spec.seed)
        frames = frames + rng.normal(0.0, spec.magnitude, size=frames.shape)

    return clip.with_frames(frames, tags=clip.tags + (f"{CORRUPTION_TAG_PREFIX}{kind.value}",))


def corrupt_corpus(
    clips: Sequence[MotionClip],
    skate_fraction: float,
    float_fraction: float,
    skate_magnitude: float,
    float_magnitude: float,
    seed: int = 0,
) -> List[MotionClip]:
    """Corrupt a seeded random share of the corpus with skate, another share with float"""
    n = len(clips)
    order = np.random.default_rng(seed).permutation(n)
    n_skate = int(round(skate_fraction * n))
    n_float = min(n - n_skate, int(round(float_fraction * n)))
    kinds = {}
    for i in order[:n_skate]:
        kinds[int(i)] = CorruptionSpec("skate", skate_magnitude)
    for i in order[n_skate:n_skate + n_float]:
        kinds[int(i)] = CorruptionSpec("float", float_magnitude)
    return [corrupt_clip(c, kinds[i]) if i in kinds else c for i, c in enumerate(clips)]
