"""
Generator model files
One JSON document (schema version 1) holding the latent space and the
diffusion model, matrices as nested decimal arrays.
"""

import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from src.errors import ForgeIOError, ForgeValidationError
from src.generator.diffusion import DiffusionModel
from src.generator.latent_space import LatentSpace
from src.motion.clip import Skeleton

SCHEMA_VERSION = 1


def _array(value: Optional[np.ndarray]):
    return None if value is None else np.asarray(value).tolist()


def _load_array(value) -> Optional[np.ndarray]:
    return None if value is None else np.asarray(value, dtype=np.float64)


def space_to_dict(space: LatentSpace) -> Dict:
    sk = space.skeleton
    return {
        "mean": _array(space.mean),
        "basis": _array(space.basis),
        "t_fix": space.t_fix,
        "fps": space.fps,
        "ground_height": space.ground_height,
        "label_tags": {k: list(v) for k, v in space.label_tags.items()},
        "skeleton": {
            "joints": list(sk.joint_names),
            "parents": list(sk.parent_index),
            "bone_lengths": list(sk.bone_lengths),
            "foot_joints": list(sk.foot_joints),
            "keypoint_joints": list(sk.keypoint_joints),
        },
    }


def space_from_dict(data: Dict) -> LatentSpace:
    sk = data["skeleton"]
    return LatentSpace(
        mean=_load_array(data["mean"]),
        basis=_load_array(data["basis"]),
        t_fix=int(data["t_fix"]),
        skeleton=Skeleton(
            joint_names=tuple(sk["joints"]),
            parent_index=tuple(int(p) for p in sk["parents"]),
            bone_lengths=tuple(float(b) for b in sk["bone_lengths"]),
            foot_joints=tuple(int(f) for f in sk["foot_joints"]),
            keypoint_joints=tuple(int(k) for k in sk["keypoint_joints"]),
        ),
        fps=float(data["fps"]),
        ground_height=float(data["ground_height"]),
        label_tags={k: tuple(v) for k, v in data.get("label_tags", {}).items()},
    )


def model_to_dict(model: DiffusionModel) -> Dict:
    return {
        "n_steps": model.n_steps,
        "betas": _array(model.betas),
        "ridge_lambda": model.ridge_lambda,
        "samples_per_element": model.samples_per_element,
        "seed": model.seed,
        "labels": list(model.labels),
        "code_mean": _array(model.code_mean),
        "whiten": _array(model.whiten),
        "unwhiten": _array(model.unwhiten),
        "weights": _array(model.weights),
        "biases": _array(model.biases),
        "losses": _array(model.losses),
        "base_codes": _array(model.base_codes),
        "base_labels": list(model.base_labels),
    }


def model_from_dict(data: Dict) -> DiffusionModel:
    return DiffusionModel(
        n_steps=int(data["n_steps"]),
        betas=_load_array(data["betas"]),
        ridge_lambda=float(data["ridge_lambda"]),
        samples_per_element=int(data["samples_per_element"]),
        seed=int(data["seed"]),
        labels=tuple(data["labels"]),
        code_mean=_load_array(data["code_mean"]),
        whiten=_load_array(data["whiten"]),
        unwhiten=_load_array(data["unwhiten"]),
        weights=_load_array(data["weights"]),
        biases=_load_array(data["biases"]),
        losses=_load_array(data["losses"]),
        base_codes=_load_array(data["base_codes"]),
        base_labels=tuple(data["base_labels"]),
    )


def save_generator(path, space: LatentSpace, model: DiffusionModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"version": SCHEMA_VERSION, "latent_space": space_to_dict(space), "diffusion": model_to_dict(model)}
    with open(path, "w") as f:
        json.dump(document, f)
    return path


def load_generator(path) -> Tuple[LatentSpace, DiffusionModel]:
    """
    Raises:
        ForgeIOError: missing, unreadable or malformed file
        ForgeValidationError: unsupported schema version
    """
    try:
        with open(path) as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise ForgeIOError(f"Generator file not found: {path}", field="model") from e
    except json.JSONDecodeError as e:
        raise ForgeIOError(f"Generator file {path} is not valid JSON: {e}", field="model") from e

    if document.get("version") != SCHEMA_VERSION:
        raise ForgeValidationError(
            f"Unsupported generator schema version {document.get('version')!r}", field="version"
        )
    try:
        return space_from_dict(document["latent_space"]), model_from_dict(document["diffusion"])
    except (KeyError, TypeError, ValueError) as e:
        raise ForgeIOError(f"Generator file {path} is malformed: {e}", field="model") from e
