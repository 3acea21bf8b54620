"""
Centralized logging for the forge pipeline
Tracks stage progress, refinement outcomes, QC verdicts and round summaries
"""

import logging
import sys
from datetime import datetime
from pathlib import Path

from src.config import config

# Create logger
logger = logging.getLogger("forge")
logger.setLevel(logging.DEBUG)
logger.propagate = False

# Formatter
formatter = logging.Formatter(
    '%(asctime)s - %(name)s - %(levelname)s - [%(funcName)s] - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)

if not logger.handlers:
    # File handler - detailed logs
    if config.LOG_TO_FILE:
        LOG_DIR = Path(config.LOG_DIR)
        LOG_DIR.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(
            LOG_DIR / f"forge_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    # Console handler - important info only
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, config.LOG_LEVEL.upper(), logging.INFO))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)


def log_stage_start(stage: str, n_items: int, round_index: int = None):
    """Log the start of a pipeline stage"""
    prefix = f"ROUND {round_index} " if round_index is not None else ""
    logger.info(f"{prefix}STAGE START: {stage} ({n_items} items)")


def log_stage_end(stage: str, duration: float, round_index: int = None):
    prefix = f"ROUND {round_index} " if round_index is not None else ""
    logger.info(f"{prefix}STAGE END: {stage} in {duration:.2f}s")


def log_refinement(clip_id: str, iterations: int, j_before: float, j_after: float):
    """Log one clip's refinement outcome"""
    logger.debug(f"REFINE: {clip_id} - {iterations} iterations, J {j_before:.4f} → {j_after:.4f}")


def log_qc_verdict(clip_id: str, reason: str, mpjpe: float):
    if reason == "ok":
        logger.debug(f"QC ACCEPT: {clip_id} (mpjpe {mpjpe:.4f} m)")
    else:
        logger.debug(f"QC REJECT: {clip_id} - {reason} (mpjpe {mpjpe:.4f} m)")


def log_round_summary(round_index: int, summary: dict):
    """Log the headline metrics of one loop round"""
    metrics = ", ".join(
        f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()
    )
    logger.info(f"ROUND {round_index} SUMMARY: {metrics}")


def log_empty_accepted_set(round_index: int):
    logger.warning(f"ROUND {round_index}: no clip passed QC, fine-tuning skipped")


def log_error(stage: str, error: Exception):
    """Log a stage error"""
    logger.error(f"ERROR in {stage}: {str(error)}", exc_info=True)


def get_logger():
    """Get the forge logger"""
    return logger
