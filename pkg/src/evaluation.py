"""
Generation quality statistics
FID, Diversity and label-based R-Precision, all computed on latent codes.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from src.errors import CorpusTooSmallError, ForgeValidationError, UnknownLabelError
from src.generator.latent_space import LatentCode

Codes = Union[np.ndarray, Sequence[LatentCode]]


def _as_matrix(codes: Codes) -> np.ndarray:
    if isinstance(codes, np.ndarray):
        return np.atleast_2d(codes).astype(np.float64)
    return np.stack([c.values for c in codes]) if len(codes) else np.zeros((0, 0))


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def fit_gaussian(codes: Codes) -> GaussianSummary:
    x = _as_matrix(codes)
    if x.shape[0] < 2:
        raise CorpusTooSmallError(f"Need at least 2 codes, got {x.shape[0]}", field="codes")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return GaussianSummary(mean=x.mean(axis=0), cov=(cov + cov.T) / 2, n=x.shape[0])


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clamped to zero"""
    values, vectors = linalg.eigh((matrix + matrix.T) / 2)
    return (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    root_a = _psd_sqrt(a.cov)
    cross = _psd_sqrt(root_a @ b.cov @ root_a)
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    return float(max(value, 0.0))


def fid(a: Codes, b: Codes) -> float:
    """Frechet distance between Gaussian fits of two code sets"""
    return frechet_distance(fit_gaussian(a), fit_gaussian(b))


def diversity(codes: Codes, subset_size: Optional[int] = None, seed: int = 0) -> float:
    """Mean distance between two disjoint random subsets paired element by element"""
    x = _as_matrix(codes)
    n = x.shape[0]
    if subset_size is None:
        subset_size = min(30, n // 2)
    if subset_size < 1 or n < 2 * subset_size:
        raise CorpusTooSmallError(
            f"Diversity needs at least {2 * max(subset_size, 1)} codes, got {n}", field="codes"
        )
    order = np.random.default_rng(seed).permutation(n)
    first = x[order[:subset_size]]
    second = x[order[subset_size:2 * subset_size]]
    return float(np.linalg.norm(first - second, axis=1).mean())


def diversity_gap(generated: Codes, reference: Codes, subset_size: Optional[int] = None, seed: int = 0) -> float:
    return abs(diversity(generated, subset_size, seed) - diversity(reference, subset_size, seed))


def label_centroids(codes: Sequence[LatentCode]) -> Dict[str, np.ndarray]:
    groups: Dict[str, list] = {}
    for code in codes:
        groups.setdefault(code.label, []).append(code.values)
    return {label: np.mean(values, axis=0) for label, values in sorted(groups.items())}


def r_precision(
    samples: Sequence[LatentCode],
    centroids: Dict[str, np.ndarray],
    pool_size: Optional[int] = None,
    seed: int = 0,
) -> Tuple[float, float, float]:
    """
    Retrieval accuracy of the true label among pool_size candidate centroids.

    Each sample's pool is its own label's centroid plus pool_size - 1
    distinct distractors drawn with the seed. The rank is the number of
    distractors strictly closer than the true centroid, so ties favour the
    true label.

    Returns:
        (top1, top2, top3) fractions
    """
    labels = sorted(centroids)
    if pool_size is None:
        pool_size = min(32, len(labels))
    if not 1 <= pool_size <= len(labels):
        raise ForgeValidationError(f"pool_size must lie in [1, {len(labels)}]", field="pool_size")
    if not samples:
        raise CorpusTooSmallError("R-precision needs at least one sample", field="samples")

    rng = np.random.default_rng(seed)
    hits = np.zeros(3)
    for code in samples:
        if code.label not in centroids:
            raise UnknownLabelError(f"Label {code.label!r} has no reference centroid", field="label")
        others = [l for l in labels if l != code.label]
        distractors = rng.choice(len(others), size=pool_size - 1, replace=False) if pool_size > 1 else []
        true_distance = np.linalg.norm(code.values - centroids[code.label])
        rank = sum(np.linalg.norm(code.values - centroids[others[i]]) < true_distance for i in distractors)
        hits += rank < np.arange(1, 4)
    top1, top2, top3 = hits / len(samples)
    return float(top1), float(top2), float(top3)
