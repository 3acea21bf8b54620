"""
Kinematic tracking harness
A first-order lag follower with per-joint speed limits, ground clamping
and contact pinning. Physically implausible references (sliding stance
feet) make the follower drift from them, which is what the success rate
and tracking errors measure.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config import ContactParams, TrackParams
from src.errors import ForgeValidationError
from src.motion.clip import MotionClip, compute_clip_error
from src.motion.synthgen import declared_stance
from src.parallel import parallel_map
from src.physics.contact import detect_contacts


@dataclass(frozen=True, eq=False)
class TrackResult:
    clip_id: str
    success: bool
    e_mpjpe: float
    e_mpkpe: float
    terminated_at: Optional[int]
    executed: MotionClip

    def to_dict(self) -> Dict:
        return {
            "clip_id": self.clip_id,
            "success": self.success,
            "e_mpjpe": self.e_mpjpe,
            "e_mpkpe": self.e_mpkpe,
            "terminated_at": self.terminated_at,
        }


@dataclass(frozen=True)
class BatchTrackResult:
    results: List[TrackResult]
    success_rate: float
    mean_e_mpjpe: float
    mean_e_mpkpe: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [r.to_dict() for r in self.results],
            columns=["clip_id", "success", "e_mpjpe", "e_mpkpe", "terminated_at"],
        )


def _contact_declaration(reference: MotionClip, contact_params: Optional[ContactParams]) -> np.ndarray:
    stance = declared_stance(reference)
    if stance is None:
        stance = detect_contacts(reference, contact_params).contact
    return stance


def execute(
    reference: MotionClip,
    params: Optional[TrackParams] = None,
    contact_params: Optional[ContactParams] = None,
) -> TrackResult:
    """
    Follow a reference clip frame by frame.

    Each joint moves gain * error toward the reference, capped at v_max / fps.
    A foot the reference declares in contact is pinned where it first touched
    down and the horizontal correction is taken out of the root. Feet never go
    below the ground. The run fails early once the root drifts more than
    fail_root_drift from the reference root.
    """
    params = params or TrackParams()
    ref = reference.frames
    z_g = reference.ground_height
    stance = _contact_declaration(reference, contact_params)
    feet = reference.skeleton.foot_joints
    max_step = params.v_max / reference.fps

    pose = np.array(ref[0])
    pose[list(feet), 2] = np.maximum(pose[list(feet), 2], z_g)
    executed = np.zeros_like(ref)
    pins: List[Optional[np.ndarray]] = [None, None]
    terminated_at = None

    for t in range(reference.n_frames):
        if t > 0:
            move = params.gain * (ref[t] - pose)
            length = np.linalg.norm(move, axis=-1, keepdims=True)
            scale = np.minimum(1.0, max_step / np.maximum(length, 1e-12))
            pose = pose + move * scale

        for f, joint in enumerate(feet):
            if stance[t, f]:
                if pins[f] is None:
                    pin = pose[joint].copy()
                    pin[2] = max(pin[2], z_g)
                    pins[f] = pin
                correction = pins[f][:2] - pose[joint, :2]
                pose[joint] = pins[f]
                pose[0, :2] -= correction
            else:
                pins[f] = None
            pose[joint, 2] = max(pose[joint, 2], z_g)

        executed[t] = pose
        if np.linalg.norm(pose[0, :2] - ref[t, 0, :2]) > params.fail_root_drift:
            terminated_at = t
            break

    n_done = reference.n_frames if terminated_at is None else terminated_at + 1
    executed_clip = reference.with_frames(executed[:n_done])
    error = compute_clip_error(reference.with_frames(ref[:n_done]), executed_clip)
    return TrackResult(
        clip_id=reference.name,
        success=terminated_at is None and error.mpjpe < params.succ_mpjpe,
        e_mpjpe=error.mpjpe,
        e_mpkpe=error.mpkpe,
        terminated_at=terminated_at,
        executed=executed_clip,
    )


def _execute_job(job) -> TrackResult:
    reference, params, contact_params = job
    return execute(reference, params, contact_params)


def batch_execute(
    corpus: Sequence[MotionClip],
    params: Optional[TrackParams] = None,
    contact_params: Optional[ContactParams] = None,
    workers: int = 1,
) -> BatchTrackResult:
    """Success rate and mean errors over a corpus; failed clips count with their partial errors"""
    if not corpus:
        raise ForgeValidationError("Cannot track an empty corpus", field="corpus")
    params = params or TrackParams()
    results = parallel_map(_execute_job, [(c, params, contact_params) for c in corpus], workers)
    return BatchTrackResult(
        results=results,
        success_rate=float(np.mean([r.success for r in results])),
        mean_e_mpjpe=float(np.mean([r.e_mpjpe for r in results])),
        mean_e_mpkpe=float(np.mean([r.e_mpkpe for r in results])),
    )


def write_track_results(batch: BatchTrackResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    batch.to_frame().to_csv(path, index=False)
    return path
