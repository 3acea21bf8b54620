import json
import os
from pathlib import Path
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.errors import ForgeIOError, ForgeValidationError

# Load environment variables from .env file
load_dotenv()


class Config:
    """Process-level settings for the forge pipeline"""

    # Logging
    LOG_LEVEL = os.getenv("FORGE_LOG_LEVEL", "INFO")
    LOG_DIR = os.getenv("FORGE_LOG_DIR", "logs")
    LOG_TO_FILE = os.getenv("FORGE_LOG_TO_FILE", "1") == "1"

    # Execution
    WORKERS = int(os.getenv("FORGE_WORKERS", "1"))
    OUT_DIR = os.getenv("FORGE_OUT_DIR", "runs/latest")

    @staticmethod
    def validate():
        """Validate process configuration"""
        if Config.WORKERS < 1:
            raise ForgeValidationError("FORGE_WORKERS must be >= 1", field="FORGE_WORKERS")
        if Config.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ForgeValidationError(f"Unknown FORGE_LOG_LEVEL {Config.LOG_LEVEL!r}", field="FORGE_LOG_LEVEL")


# Create config instance
config = Config()


# ============================================================================
# EXPERIMENT CONFIGURATION (versioned JSON, validated by pydantic)
# ============================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ContactParams(_Section):
    """Thresholds that turn foot kinematics into contact/float/penetration indicators"""
    h_contact: float = Field(0.05, gt=0)
    v_contact: float = Field(0.30, gt=0)
    h_float: float = Field(0.05, gt=0)
    airborne_allowed: bool = False
    jump_exit_velocity: float = Field(0.5, gt=0)
    # planted-but-sliding feet: near the ground and not moving vertically
    slide_contact: bool = False
    h_slide: float = Field(0.01, gt=0)
    vz_slide: float = Field(0.15, gt=0)


class RefineParams(_Section):
    w_fid: float = Field(1.0, ge=0)
    w_phys: float = Field(10.0, ge=0)
    w_smooth: float = Field(0.1, ge=0)
    w_limb: float = Field(1.0, ge=0)
    max_iters: int = Field(500, ge=1)
    step_init: float = Field(1e-2, gt=0)
    tol_rel: float = Field(1e-6, gt=0)


class QcParams(_Section):
    eta: float = Field(0.5, gt=0)
    excluded_tags: List[str] = Field(default_factory=lambda: ["object-interaction", "non-grounded"])


class TrackParams(_Section):
    gain: float = Field(0.8, gt=0, le=1)
    v_max: float = Field(5.0, gt=0)
    fail_root_drift: float = Field(1.0, gt=0)
    succ_mpjpe: float = Field(0.5, gt=0)


class GenSettings(_Section):
    """Latent generator settings (latent space, diffusion schedule, fine-tuning)"""
    latent_dim: int = Field(16, ge=1)
    t_fix: int = Field(60, ge=2)
    n_steps: int = Field(50, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.02, gt=0, lt=1)
    ridge_lambda: float = Field(1e-6, ge=0)
    samples_per_element: int = Field(64, ge=1)
    mix_ratio: float = Field(0.7, ge=0, le=1)


class CorpusSettings(_Section):
    """
    Corpus source: a directory, or the synthetic benchmark when `path` is unset.

    Both are split per label into train and held-out test clips; a directory
    manifest that already marks "test" clips keeps its own split.
    """
    path: Optional[str] = None
    clips_per_category: int = Field(50, ge=2)
    categories: List[Literal["walk", "jump", "kick", "idle"]] = Field(
        default_factory=lambda: ["walk", "jump", "kick", "idle"]
    )
    duration_s: float = Field(2.0, gt=0)
    fps: float = Field(30.0, gt=0)
    skate_fraction: float = Field(0.3, ge=0, le=1)
    float_fraction: float = Field(0.2, ge=0, le=1)
    skate_magnitude: float = Field(0.02, ge=0)
    float_magnitude: float = Field(0.08, ge=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)


class PipelineConfig(_Section):
    version: Literal[1] = 1
    seed: int = Field(0, ge=0, lt=2**64)
    rounds: int = Field(3, ge=1)
    samples_per_round: int = Field(500, ge=10)
    eval_samples: Optional[int] = Field(None, ge=10)
    workers: int = Field(default_factory=lambda: config.WORKERS, ge=1)
    contact: ContactParams = Field(default_factory=ContactParams)
    refine: RefineParams = Field(default_factory=RefineParams)
    qc: QcParams = Field(default_factory=QcParams)
    gen: GenSettings = Field(default_factory=GenSettings)
    track: TrackParams = Field(default_factory=TrackParams)
    corpus: CorpusSettings = Field(default_factory=CorpusSettings)
    out_dir: str = Field(default_factory=lambda: config.OUT_DIR)

    @property
    def n_eval_samples(self) -> int:
        return self.eval_samples if self.eval_samples is not None else self.samples_per_round


def load_pipeline_config(path: Optional[str] = None, **overrides) -> PipelineConfig:
    """
    Read and validate a pipeline config file.

    Args:
        path: JSON config path; None gives the defaults
        overrides: top-level fields to replace (None values are ignored)

    Returns:
        PipelineConfig: validated configuration
    """
    data = {}
    if path is not None:
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ForgeIOError(f"Config file not found: {path}", field="config") from e
        except json.JSONDecodeError as e:
            raise ForgeIOError(f"Config file {path} is not valid JSON: {e}", field="config") from e
        if not isinstance(data, dict):
            raise ForgeValidationError("Config root must be a JSON object", field="config")
        if "version" not in data:
            raise ForgeValidationError("Config is missing the schema 'version' field", field="version")

    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ForgeValidationError(f"Invalid config field {field}: {first['msg']}", field=field) from e


def save_pipeline_config(cfg: PipelineConfig, path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(cfg.model_dump(mode="json"), f, indent=2)
