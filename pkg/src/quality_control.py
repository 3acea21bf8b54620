"""
Quality Control Gate
MPJPE-gated acceptance of refined clips and tag-based exclusion of
non-grounded categories, producing the fine-tuning corpus
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.config import QcParams
from src.logger import log_qc_verdict
from src.motion.clip import MotionClip, compute_clip_error, save_corpus

REJECTIONS_FILE = "rejections.csv"


class QcReason(str, Enum):
    OK = "ok"
    OVER_THRESHOLD = "over_threshold"
    EXCLUDED_TAG = "excluded_tag"


@dataclass(frozen=True)
class QcVerdict:
    accepted: bool
    mpjpe: float
    reason: QcReason

    def to_dict(self) -> Dict:
        return {"accepted": self.accepted, "mpjpe": self.mpjpe, "reason": self.reason.value}


@dataclass
class FinetuneSet:
    """Accepted refined clips plus the audit trail of every verdict"""
    accepted: List[MotionClip] = field(default_factory=list)
    verdicts: List[Tuple[str, QcVerdict]] = field(default_factory=list)

    @property
    def rejections(self) -> List[Dict]:
        return [
            {"clip_id": clip_id, "reason": v.reason.value, "mpjpe": v.mpjpe}
            for clip_id, v in self.verdicts
            if not v.accepted
        ]

    @property
    def accepted_fraction(self) -> float:
        if not self.verdicts:
            return 0.0
        return len(self.accepted) / len(self.verdicts)


def gate_clip(original: MotionClip, refined: MotionClip, params: Optional[QcParams] = None) -> QcVerdict:
    """
    Accept a refined clip when MPJPE(original, refined) < eta and neither
    clip carries an excluded tag. A clip at exactly eta is rejected.

    Raises:
        ShapeMismatchError: the clips are not aligned
    """
    params = params or QcParams()
    mpjpe = compute_clip_error(original, refined).mpjpe
    excluded = set(params.excluded_tags)
    if excluded.intersection(original.tags) or excluded.intersection(refined.tags):
        return QcVerdict(accepted=False, mpjpe=mpjpe, reason=QcReason.EXCLUDED_TAG)
    if mpjpe < params.eta:
        return QcVerdict(accepted=True, mpjpe=mpjpe, reason=QcReason.OK)
    return QcVerdict(accepted=False, mpjpe=mpjpe, reason=QcReason.OVER_THRESHOLD)


def build_finetune_set(
    pairs: Sequence[Tuple[MotionClip, MotionClip]], params: Optional[QcParams] = None
) -> FinetuneSet:
    """Partition (original, refined) pairs by gate_clip, keeping corpus order"""
    params = params or QcParams()
    result = FinetuneSet()
    for index, (original, refined) in enumerate(pairs):
        clip_id = refined.name or original.name or f"clip_{index:05d}"
        verdict = gate_clip(original, refined, params)
        log_qc_verdict(clip_id, verdict.reason.value, verdict.mpjpe)
        result.verdicts.append((clip_id, verdict))
        if verdict.accepted:
            result.accepted.append(refined)
    return result


def write_finetune_set(finetune_set: FinetuneSet, out_dir) -> Path:
    """Write the accepted corpus under out_dir/accepted and the rejection log as CSV"""
    out_dir = Path(out_dir)
    save_corpus(finetune_set.accepted, out_dir / "accepted", split="finetune")
    pd.DataFrame(finetune_set.rejections, columns=["clip_id", "reason", "mpjpe"]).to_csv(
        out_dir / REJECTIONS_FILE, index=False
    )
    return out_dir
