"""
Physical plausibility scoring
Per-frame skating, floating and penetration rewards, the per-frame and
sequence objectives built from them, and the clip-level Penetrate, Float
and Skate metrics (centimeters).

Rewards take values in (0, 1]; a perfect clip scores J = 3T.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.errors import FrameIndexError
from src.motion.clip import MotionClip
from src.physics.contact import ContactTrack

CM = 100.0


@dataclass(frozen=True, eq=False)
class PlausibilityReport:
    r_sk: np.ndarray
    r_fl: np.ndarray
    r_pen: np.ndarray
    J_t: np.ndarray
    J: float
    metric_penetrate: float  # cm
    metric_float: float  # cm
    metric_skate: float  # cm per contact frame

    def to_dict(self, per_frame: bool = False) -> Dict:
        data = {
            "J": self.J,
            "n_frames": int(len(self.J_t)),
            "penetrate": self.metric_penetrate,
            "float": self.metric_float,
            "skate": self.metric_skate,
        }
        if per_frame:
            data.update(
                r_sk=self.r_sk.tolist(), r_fl=self.r_fl.tolist(), r_pen=self.r_pen.tolist(), J_t=self.J_t.tolist()
            )
        return data


# ============================================================================
# VECTORISED REWARDS
# ============================================================================

def frame_rewards(feet: np.ndarray, track: ContactTrack, ground_height: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    All per-frame rewards at once.

    Args:
        feet: (T, 2, 3) foot positions
        track: indicators, held fixed
        ground_height: z_g

    Returns:
        (r_sk, r_fl, r_pen), each of length T
    """
    gate = (track.contact[1:] & track.contact[:-1])[:, :, None]
    step = (feet[1:] - feet[:-1]) * gate
    per_foot = np.exp(-np.sum(step ** 2, axis=-1))
    r_sk = np.concatenate([[1.0], per_foot.mean(axis=1)])

    z_low = feet[:, :, 2].min(axis=1)
    r_fl = np.exp(-((z_low - ground_height) * track.floating) ** 2)

    depth = (ground_height - feet[:, :, 2]) * track.penetration
    r_pen = np.exp(-depth ** 2).mean(axis=1)
    return r_sk, r_fl, r_pen


def _check_frame(t: int, lo: int, n_frames: int):
    if not lo <= t <= n_frames - 1:
        raise FrameIndexError(f"Frame index {t} outside [{lo}, {n_frames - 1}]", field="t")


def skate_reward(clip: MotionClip, track: ContactTrack, t: int) -> float:
    """Mean over feet of exp(-|p_t - p_(t-1)|^2), gated by contact on both frames"""
    _check_frame(t, 1, clip.n_frames)
    feet = clip.feet
    rewards = []
    for f in range(2):
        gate = float(track.contact[t, f] and track.contact[t - 1, f])
        delta = (feet[t, f] - feet[t - 1, f]) * gate
        rewards.append(np.exp(-float(delta @ delta)))
    return float(np.mean(rewards))


def float_reward(clip: MotionClip, track: ContactTrack, t: int) -> float:
    _check_frame(t, 0, clip.n_frames)
    gap = (clip.feet[t, :, 2].min() - clip.ground_height) * float(track.floating[t])
    return float(np.exp(-gap ** 2))


def penetration_reward(clip: MotionClip, track: ContactTrack, t: int) -> float:
    _check_frame(t, 0, clip.n_frames)
    depth = (clip.ground_height - clip.feet[t, :, 2]) * track.penetration[t]
    return float(np.exp(-depth ** 2).mean())


# ============================================================================
# OBJECTIVE AND METRICS
# ============================================================================

def clip_metrics(clip: MotionClip, track: ContactTrack) -> Tuple[float, float, float]:
    """(Penetrate, Float, Skate) in centimeters"""
    z_g = clip.ground_height
    feet = clip.feet

    penetrate = float(np.maximum(0.0, z_g - feet[:, :, 2]).max(axis=1).mean()) * CM

    if track.floating.any():
        z_low = feet[track.floating, :, 2].min(axis=1)
        float_cm = float((z_low - z_g).mean()) * CM
    else:
        float_cm = 0.0

    pairs = track.contact[1:] & track.contact[:-1]
    if pairs.any():
        slide = np.linalg.norm(feet[1:, :, :2] - feet[:-1, :, :2], axis=-1)
        skate = float(slide[pairs].mean()) * CM
    else:
        skate = 0.0
    return penetrate, float_cm, skate


def sequence_objective(clip: MotionClip, track: ContactTrack) -> PlausibilityReport:
    """Per-frame rewards, J_t = r_sk + r_fl + r_pen, J = sum of J_t, plus the clip metrics"""
    r_sk, r_fl, r_pen = frame_rewards(clip.feet, track, clip.ground_height)
    j_t = r_sk + r_fl + r_pen
    penetrate, float_cm, skate = clip_metrics(clip, track)
    return PlausibilityReport(
        r_sk=r_sk,
        r_fl=r_fl,
        r_pen=r_pen,
        J_t=j_t,
        J=float(j_t.sum()),
        metric_penetrate=penetrate,
        metric_float=float_cm,
        metric_skate=skate,
    )
