"""
Linear motion latent space
Principal subspace of the centered, flattened, time-resampled corpus.
encode projects onto the basis, decode maps back to a clip.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.errors import (
    ClipValidationError,
    CorpusTooSmallError,
    DimensionMismatchError,
    ShapeMismatchError,
)
from src.motion.clip import MotionClip, Skeleton, flatten, resample, unflatten

# tags that describe one clip's history rather than its category
_PER_CLIP_TAG_PREFIXES = ("stance:", "corrupted:")


@dataclass(frozen=True, eq=False)
class LatentCode:
    values: np.ndarray
    label: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ClipValidationError("Latent code has non-finite values", field="values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class LatentSpace:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (D, d), orthonormal columns
    t_fix: int
    skeleton: Skeleton
    fps: float
    ground_height: float = 0.0
    label_tags: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]


def _category_tags(clips: Sequence[MotionClip]) -> Dict[str, Tuple[str, ...]]:
    """Tags shared by every clip of a label"""
    shared: Dict[str, set] = {}
    for clip in clips:
        tags = {t for t in clip.tags if not t.startswith(_PER_CLIP_TAG_PREFIXES)}
        shared[clip.label] = shared[clip.label] & tags if clip.label in shared else tags
    return {label: tuple(sorted(tags)) for label, tags in sorted(shared.items())}


def fit_latent_space(corpus: Sequence[MotionClip], d: int, t_fix: int = 60) -> LatentSpace:
    """
    Fit the top-d principal subspace.

    Each basis column is sign-normalised so its largest-magnitude entry is
    positive, which makes the fit deterministic given the corpus order.

    Raises:
        CorpusTooSmallError: fewer clips than latent dimensions
        DimensionMismatchError: d exceeds the flattened clip size
        ShapeMismatchError: clips use different skeletons
    """
    if len(corpus) < d:
        raise CorpusTooSmallError(f"Corpus has {len(corpus)} clips, latent dimension is {d}", field="corpus")
    names = corpus[0].skeleton.joint_names
    if any(c.skeleton.joint_names != names for c in corpus):
        raise ShapeMismatchError("Corpus mixes skeletons", field="skeleton")

    clips = [resample(c, t_fix) for c in corpus]
    data = np.stack([flatten(c) for c in clips])
    if d > data.shape[1]:
        raise DimensionMismatchError(f"Latent dimension {d} exceeds input dimension {data.shape[1]}", field="d")

    mean = data.mean(axis=0)
    _, _, vt = np.linalg.svd(data - mean, full_matrices=False)
    basis = vt[:d].T.copy()
    pivot = np.abs(basis).argmax(axis=0)
    basis *= np.sign(basis[pivot, np.arange(d)])

    return LatentSpace(
        mean=mean,
        basis=basis,
        t_fix=t_fix,
        skeleton=clips[0].skeleton,
        fps=clips[0].fps,
        ground_height=clips[0].ground_height,
        label_tags=_category_tags(corpus),
    )


def encode(space: LatentSpace, clip: MotionClip) -> LatentCode:
    """Project a clip already resampled to t_fix frames"""
    vector = flatten(clip)
    if vector.shape[0] != space.input_dim:
        raise DimensionMismatchError(
            f"Clip flattens to {vector.shape[0]} values, latent space expects {space.input_dim}", field="frames"
        )
    return LatentCode(values=space.basis.T @ (vector - space.mean), label=clip.label)


def encode_clips(space: LatentSpace, clips: Sequence[MotionClip]) -> List[LatentCode]:
    """Resample to t_fix, then encode"""
    return [encode(space, resample(c, space.t_fix)) for c in clips]


def decode(space: LatentSpace, code: LatentCode, name: str = "") -> MotionClip:
    values = np.asarray(code.values)
    if values.shape != (space.dim,):
        raise DimensionMismatchError(
            f"Latent code has {values.shape[0]} values, latent space has {space.dim}", field="values"
        )
    frames = unflatten(space.mean + space.basis @ values, space.skeleton.n_joints)
    return MotionClip(
        skeleton=space.skeleton,
        fps=space.fps,
        frames=frames,
        ground_height=space.ground_height,
        label=code.label,
        tags=space.label_tags.get(code.label, ()),
        name=name,
    )
