"""
Foot contact indicators
Turns foot kinematics into per-frame contact, floating and penetration
flags that gate the plausibility rewards.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.config import ContactParams
from src.errors import ShapeMismatchError
from src.motion.clip import MotionClip

AIRBORNE_TAG = "airborne-allowed"


@dataclass(frozen=True, eq=False)
class ContactTrack:
    contact: np.ndarray  # (T, 2) bool
    floating: np.ndarray  # (T,) bool, jump-exempt frames already removed
    penetration: np.ndarray  # (T, 2) bool
    foot_height: np.ndarray  # (T, 2) meters
    foot_speed: np.ndarray  # (T, 2) m/s
    airborne: np.ndarray  # (T,) bool, frames exempted as legitimate flight

    @property
    def n_frames(self) -> int:
        return self.contact.shape[0]


@dataclass(frozen=True)
class ContactSummary:
    contact_ratio: float
    float_ratio: float
    penetration_ratio: float
    n_frames: int

    def to_dict(self) -> Dict:
        return {
            "contact_ratio": self.contact_ratio,
            "float_ratio": self.float_ratio,
            "penetration_ratio": self.penetration_ratio,
            "n_frames": self.n_frames,
        }


def foot_speed(clip: MotionClip) -> np.ndarray:
    """(T, 2) foot speed: central differences inside, one-sided at the ends"""
    return np.linalg.norm(np.gradient(clip.feet, axis=0), axis=-1) * clip.fps


def _true_runs(column: np.ndarray):
    padded = np.concatenate([[False], column, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return zip(edges[::2], edges[1::2])


def _build_track(clip: MotionClip, contact: np.ndarray, params: ContactParams) -> ContactTrack:
    z_g = clip.ground_height
    height = clip.feet[:, :, 2]
    raw_float = (height > z_g + params.h_float).all(axis=1) & ~contact.any(axis=1)

    airborne = np.zeros(clip.n_frames, dtype=bool)
    if params.airborne_allowed or AIRBORNE_TAG in clip.tags:
        root_vz = np.gradient(clip.frames[:, 0, 2]) * clip.fps
        for start, stop in _true_runs(raw_float):
            if root_vz[start] > params.jump_exit_velocity:
                airborne[start:stop] = True

    return ContactTrack(
        contact=contact,
        floating=raw_float & ~airborne,
        penetration=height < z_g,
        foot_height=height,
        foot_speed=foot_speed(clip),
        airborne=airborne,
    )


def detect_contacts(clip: MotionClip, params: Optional[ContactParams] = None) -> ContactTrack:
    """
    Threshold foot height and speed into contact indicators.

    A foot is in contact when it is within h_contact of the ground and
    slower than v_contact. With slide_contact set, a foot within h_slide
    of the ground whose vertical speed stays under vz_slide also counts,
    whatever its horizontal speed, so a planted foot that skates is still
    flagged. A frame floats when both feet are above z_g + h_float and
    neither is in contact, except inside a flight window that starts with
    the root rising faster than jump_exit_velocity on a clip that allows
    flight.
    """
    params = params or ContactParams()
    height = clip.feet[:, :, 2]
    z_g = clip.ground_height
    contact = (height <= z_g + params.h_contact) & (foot_speed(clip) <= params.v_contact)
    if params.slide_contact:
        vertical = np.abs(np.gradient(height, axis=0)) * clip.fps
        contact |= (height <= z_g + params.h_slide) & (vertical <= params.vz_slide)
    return _build_track(clip, contact, params)


def track_from_schedule(
    clip: MotionClip, schedule: np.ndarray, params: Optional[ContactParams] = None
) -> ContactTrack:
    """Track whose contact indicator is a declared (T, 2) stance schedule"""
    schedule = np.asarray(schedule, dtype=bool)
    if schedule.shape != (clip.n_frames, 2):
        raise ShapeMismatchError(
            f"Stance schedule shape {schedule.shape} does not match ({clip.n_frames}, 2)", field="schedule"
        )
    return _build_track(clip, schedule.copy(), params or ContactParams())


def contact_stats(track: ContactTrack) -> ContactSummary:
    """Share of frames where each indicator holds (for either foot)"""
    T = track.n_frames
    return ContactSummary(
        contact_ratio=float(track.contact.any(axis=1).sum() / T),
        float_ratio=float(track.floating.sum() / T),
        penetration_ratio=float(track.penetration.any(axis=1).sum() / T),
        n_frames=T,
    )
