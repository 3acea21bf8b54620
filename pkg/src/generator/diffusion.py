"""
Label-conditioned latent diffusion
Forward noising with a linear beta schedule, one affine noise predictor
per step fitted in closed form (weighted ridge regression on
[z_t, onehot(label)]), and ancestral sampling.

Codes are whitened before diffusion with a ZCA transform fitted on the
training corpus and kept fixed through fine-tuning, so the N(0, I)
prior matches z_n even when the schedule leaves alpha_bar_n well above 0.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.errors import (
    CorpusTooSmallError,
    DegenerateCorpusError,
    ForgeValidationError,
    UnknownLabelError,
    UntrainedModelError,
)
from src.generator.latent_space import LatentCode, LatentSpace, decode, encode_clips
from src.logger import get_logger
from src.motion.clip import MotionClip
from src.seeding import derive_seed

logger = get_logger()

EIGEN_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    n_steps: int
    betas: np.ndarray
    ridge_lambda: float = 1e-6
    samples_per_element: int = 64
    seed: int = 0
    labels: Tuple[str, ...] = ()
    # whitening, fitted once on the base corpus
    code_mean: Optional[np.ndarray] = None
    whiten: Optional[np.ndarray] = None
    unwhiten: Optional[np.ndarray] = None
    # per-step noise predictors: eps_hat = A_t @ [z_t, onehot] + b_t
    weights: Optional[np.ndarray] = None  # (n, d, d + L)
    biases: Optional[np.ndarray] = None  # (n, d)
    losses: Optional[np.ndarray] = None  # (n,) final empirical L_diff
    # corpus the model was first trained on, mixed back in by finetune
    base_codes: Optional[np.ndarray] = None
    base_labels: Tuple[str, ...] = ()

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def trained(self) -> bool:
        return self.weights is not None

    @property
    def dim(self) -> int:
        if self.code_mean is None:
            raise UntrainedModelError("Model has not been trained", field="model")
        return self.code_mean.shape[0]


def make_model(
    n_steps: int = 50,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    ridge_lambda: float = 1e-6,
    samples_per_element: int = 64,
    seed: int = 0,
) -> DiffusionModel:
    """Untrained model with a linear beta schedule"""
    if n_steps < 1:
        raise ForgeValidationError("n_steps must be >= 1", field="n_steps")
    if not 0 < beta_start <= beta_end < 1:
        raise ForgeValidationError("Need 0 < beta_start <= beta_end < 1", field="betas")
    if ridge_lambda < 0:
        raise ForgeValidationError("ridge_lambda must be >= 0", field="ridge_lambda")
    return DiffusionModel(
        n_steps=n_steps,
        betas=np.linspace(beta_start, beta_end, n_steps),
        ridge_lambda=ridge_lambda,
        samples_per_element=samples_per_element,
        seed=seed,
    )


def forward_noise(model: DiffusionModel, z0, t: int, noise: np.ndarray) -> np.ndarray:
    """z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) noise, for 1 <= t <= n_steps"""
    if not 1 <= t <= model.n_steps:
        raise ForgeValidationError(f"Step {t} outside [1, {model.n_steps}]", field="t")
    values = z0.values if isinstance(z0, LatentCode) else np.asarray(z0, dtype=np.float64)
    alpha_bar = model.alpha_bars[t - 1]
    return np.sqrt(alpha_bar) * values + np.sqrt(1.0 - alpha_bar) * np.asarray(noise, dtype=np.float64)


# ============================================================================
# TRAINING
# ============================================================================

def _fit_whitening(codes: np.ndarray):
    mean = codes.mean(axis=0)
    cov = np.atleast_2d(np.cov(codes, rowvar=False))
    values, vectors = linalg.eigh(cov)
    values = np.maximum(values, EIGEN_FLOOR)
    whiten = (vectors / np.sqrt(values)) @ vectors.T
    unwhiten = (vectors * np.sqrt(values)) @ vectors.T
    return mean, whiten, unwhiten


def _one_hot(labels: Sequence[str], vocabulary: Tuple[str, ...]) -> np.ndarray:
    index = {label: i for i, label in enumerate(vocabulary)}
    out = np.zeros((len(labels), len(vocabulary)))
    for row, label in enumerate(labels):
        if label not in index:
            raise UnknownLabelError(f"Label {label!r} is not known to the model", field="label")
        out[row, index[label]] = 1.0
    return out


def _fit_step(features, noise, row_weights, ridge_lambda):
    """Weighted ridge fit of noise on features; the intercept is not penalised"""
    total = row_weights.sum()
    feat_mean = row_weights @ features / total
    noise_mean = row_weights @ noise / total
    fc = features - feat_mean
    nc = noise - noise_mean
    weighted = fc * row_weights[:, None]
    gram = fc.T @ weighted + ridge_lambda * np.eye(features.shape[1])
    cross = nc.T @ weighted
    try:
        A = linalg.solve(gram, cross.T, assume_a="sym").T
    except linalg.LinAlgError as e:
        raise DegenerateCorpusError(f"Singular normal equations: {e}", field="corpus") from e
    b = noise_mean - A @ feat_mean
    residual = noise - features @ A.T - b
    loss = float(row_weights @ np.sum(residual ** 2, axis=1) / total)
    return A, b, loss


def train_denoiser(
    model: DiffusionModel,
    space: Optional[LatentSpace],
    corpus: Sequence[LatentCode],
    element_weights: Optional[np.ndarray] = None,
    refit_whitening: bool = True,
) -> DiffusionModel:
    """
    Fit every step's noise predictor in closed form.

    For each step t and corpus element i, samples_per_element noise vectors
    are drawn from a generator seeded by (seed, t, i), and the affine map
    minimising the (weighted) squared noise error plus ridge_lambda * |A_t|^2
    is solved from the normal equations.

    Args:
        model: schedule and training settings
        space: latent space the codes come from (dimension check only)
        corpus: training codes
        element_weights: optional per-element weights (fine-tuning mixtures)
        refit_whitening: fit whitening and the label vocabulary on this corpus;
            False keeps the model's

    Returns:
        DiffusionModel: a new trained model
    """
    if not corpus:
        raise CorpusTooSmallError("Cannot train on an empty corpus", field="corpus")
    codes = np.stack([c.values for c in corpus])
    labels = [c.label for c in corpus]
    if space is not None and codes.shape[1] != space.dim:
        raise ForgeValidationError(
            f"Codes have {codes.shape[1]} dimensions, latent space has {space.dim}", field="corpus"
        )

    if refit_whitening or model.whiten is None:
        vocabulary = tuple(sorted(set(labels)))
        for label in vocabulary:
            if labels.count(label) < 2:
                raise CorpusTooSmallError(f"Label {label!r} appears fewer than 2 times", field="labels")
        code_mean, whiten, unwhiten = _fit_whitening(codes)
        base_codes, base_labels = codes, tuple(labels)
    else:
        vocabulary = model.labels
        code_mean, whiten, unwhiten = model.code_mean, model.whiten, model.unwhiten
        base_codes, base_labels = model.base_codes, model.base_labels

    x0 = (codes - code_mean) @ whiten.T
    one_hot = _one_hot(labels, vocabulary)
    if element_weights is None:
        element_weights = np.ones(len(corpus))
    element_weights = np.asarray(element_weights, dtype=np.float64)

    n, d, S = model.n_steps, x0.shape[1], model.samples_per_element
    x0_rows = np.repeat(x0, S, axis=0)
    hot_rows = np.repeat(one_hot, S, axis=0)
    row_weights = np.repeat(element_weights, S)

    weights = np.zeros((n, d, d + len(vocabulary)))
    biases = np.zeros((n, d))
    losses = np.zeros(n)
    alpha_bars = model.alpha_bars
    for t in range(1, n + 1):
        noise = np.concatenate([
            np.random.default_rng(derive_seed(model.seed, t, "denoiser", i)).standard_normal((S, d))
            for i in range(len(corpus))
        ])
        z_t = np.sqrt(alpha_bars[t - 1]) * x0_rows + np.sqrt(1.0 - alpha_bars[t - 1]) * noise
        features = np.hstack([z_t, hot_rows])
        weights[t - 1], biases[t - 1], losses[t - 1] = _fit_step(features, noise, row_weights, model.ridge_lambda)

    logger.debug(
        f"Trained denoiser on {len(corpus)} codes: L_diff {losses[0]:.4f} (t=1) to {losses[-1]:.4f} (t={n})"
    )
    return replace(
        model,
        labels=vocabulary,
        code_mean=code_mean,
        whiten=whiten,
        unwhiten=unwhiten,
        weights=weights,
        biases=biases,
        losses=losses,
        base_codes=base_codes,
        base_labels=base_labels,
    )


def finetune(
    model: DiffusionModel,
    space: LatentSpace,
    accepted_corpus: Sequence[MotionClip],
    mix_ratio: float = 0.7,
    seed: Optional[int] = None,
) -> DiffusionModel:
    """
    Retrain on a mixture of the base corpus (weight 1 - mix_ratio) and the
    accepted clips (weight mix_ratio). The latent space, whitening and label
    vocabulary stay fixed. mix_ratio 0 or 1 trains on one corpus alone.

    Raises:
        CorpusTooSmallError: accepted_corpus is empty
    """
    if not accepted_corpus:
        raise CorpusTooSmallError("Fine-tuning needs at least one accepted clip", field="accepted_corpus")
    if not model.trained:
        raise UntrainedModelError("Fine-tuning needs a trained model", field="model")
    if not 0.0 <= mix_ratio <= 1.0:
        raise ForgeValidationError("mix_ratio must lie in [0, 1]", field="mix_ratio")
    if seed is not None:
        model = replace(model, seed=seed)

    base = [LatentCode(values=v, label=l) for v, l in zip(model.base_codes, model.base_labels)]
    accepted = encode_clips(space, accepted_corpus)
    if mix_ratio == 0.0:
        return train_denoiser(model, space, base, refit_whitening=False)
    if mix_ratio == 1.0:
        return train_denoiser(model, space, accepted, refit_whitening=False)

    element_weights = np.concatenate([
        np.full(len(base), (1.0 - mix_ratio) / len(base)),
        np.full(len(accepted), mix_ratio / len(accepted)),
    ])
    element_weights *= len(element_weights) / element_weights.sum()
    return train_denoiser(model, space, base + accepted, element_weights, refit_whitening=False)


# ============================================================================
# SAMPLING
# ============================================================================

def predict_noise(model: DiffusionModel, z_t: np.ndarray, t: int, label: str) -> np.ndarray:
    """eps_hat for a batch of (whitened) z_t rows sharing one label"""
    z_t = np.atleast_2d(z_t)
    hot = np.repeat(_one_hot([label], model.labels), z_t.shape[0], axis=0)
    return np.hstack([z_t, hot]) @ model.weights[t - 1].T + model.biases[t - 1]


def sample_codes(model: DiffusionModel, label: str, seeds: Sequence[int]) -> np.ndarray:
    """
    Ancestral sampling for a batch of seeds.

    Each seed owns its noise: row 0 is z_n, row t the noise injected at
    step t (step 1 adds none). Returns (len(seeds), d) unwhitened codes.
    """
    if not model.trained:
        raise UntrainedModelError("Sampling needs a trained model", field="model")
    if label not in model.labels:
        raise UnknownLabelError(f"Label {label!r} is not known to the model", field="label")

    n, d = model.n_steps, model.dim
    noise = np.stack([np.random.default_rng(s).standard_normal((n + 1, d)) for s in seeds])
    alphas, alpha_bars = model.alphas, model.alpha_bars
    z = noise[:, 0]
    for t in range(n, 0, -1):
        eps_hat = predict_noise(model, z, t, label)
        coef = (1.0 - alphas[t - 1]) / np.sqrt(1.0 - alpha_bars[t - 1])
        z = (z - coef * eps_hat) / np.sqrt(alphas[t - 1])
        if t > 1:
            sigma2 = model.betas[t - 1] * (1.0 - alpha_bars[t - 2]) / (1.0 - alpha_bars[t - 1])
            z = z + np.sqrt(sigma2) * noise[:, t]
    return z @ model.unwhiten.T + model.code_mean


def sample(model: DiffusionModel, space: LatentSpace, label: str, seed: int, name: str = "") -> MotionClip:
    """Draw one clip for a label; (model, label, seed) fully determine it"""
    values = sample_codes(model, label, [seed])[0]
    return decode(space, LatentCode(values=values, label=label), name=name)
