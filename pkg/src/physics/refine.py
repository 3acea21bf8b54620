"""
Plausibility refinement
Stage A projects feet onto the ground during contact runs; stage B runs
projected gradient descent on

    E(X) = w_fid * sum |X - X0|^2 + w_phys * (3T - J(X))
         + w_smooth * sum |a(X)[t] - a(X0)[t]|^2
         + w_limb * sum (bone length - rest length)^2

where a(X)[t] = X[t+1] - 2X[t] + X[t-1] is the discrete acceleration, so
only accelerations the refinement adds are penalised. Contact indicators
are frozen from the original clip. Contact-frame foot coordinates and
penetration-frame foot heights stay at their stage A values; every other
foot height is kept at or above the ground.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import ContactParams, RefineParams
from src.errors import NonFiniteObjectiveError
from src.logger import log_refinement
from src.motion.clip import MotionClip, Skeleton
from src.parallel import parallel_map
from src.physics.contact import ContactTrack, detect_contacts
from src.physics.plausibility import PlausibilityReport, frame_rewards, sequence_objective

MAX_HALVINGS = 50
GRAD_EPS = 1e-12


def _accel(X: np.ndarray) -> np.ndarray:
    return X[2:] - 2 * X[1:-1] + X[:-2]


@dataclass(frozen=True, eq=False)
class RefineResult:
    refined: MotionClip
    iterations: int
    objective_trace: Tuple[float, ...]
    report_before: PlausibilityReport
    report_after: PlausibilityReport
    bone_length_error: float  # mean |length - rest length|, meters

    def to_dict(self) -> Dict:
        return {
            "clip_id": self.refined.name,
            "iterations": self.iterations,
            "objective_start": self.objective_trace[0],
            "objective_end": self.objective_trace[-1],
            "bone_length_error": self.bone_length_error,
            "before": self.report_before.to_dict(),
            "after": self.report_after.to_dict(),
        }


def _true_runs(column: np.ndarray):
    padded = np.concatenate([[False], column, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return zip(edges[::2], edges[1::2])


def bone_length_error(frames: np.ndarray, skeleton: Skeleton) -> float:
    errors = [
        np.abs(np.linalg.norm(frames[:, j] - frames[:, p], axis=-1) - rest)
        for (j, p), rest in zip(skeleton.bone_pairs, skeleton.bone_lengths)
    ]
    return float(np.mean(errors)) if errors else 0.0


# ============================================================================
# STAGE A: HARD PROJECTION
# ============================================================================

def project_contacts(clip: MotionClip, track: ContactTrack) -> MotionClip:
    """
    Pin every contact run to the ground at its mean horizontal position
    and lift penetrating feet to the ground. Other joints are untouched.
    """
    frames = np.array(clip.frames)
    z_g = clip.ground_height
    for f, joint in enumerate(clip.skeleton.foot_joints):
        for start, stop in _true_runs(track.contact[:, f]):
            run = frames[start:stop, joint]
            if not (run[:, :2] == run[0, :2]).all():
                run[:, :2] = run[:, :2].mean(axis=0)
            run[:, 2] = z_g
        frames[track.penetration[:, f], joint, 2] = z_g
    return clip.with_frames(frames)


def pinned_mask(skeleton: Skeleton, track: ContactTrack) -> np.ndarray:
    """(T, J, 3) True where a coordinate is excluded from the descent"""
    mask = np.zeros((track.n_frames, skeleton.n_joints, 3), dtype=bool)
    for f, joint in enumerate(skeleton.foot_joints):
        mask[track.contact[:, f], joint, :] = True
        mask[track.penetration[:, f], joint, 2] = True
    return mask


# ============================================================================
# STAGE B: SMOOTH OBJECTIVE
# ============================================================================

class RefinementObjective:
    """E(X) and its analytic gradient for a frozen contact track"""

    def __init__(
        self,
        original: np.ndarray,
        track: ContactTrack,
        skeleton: Skeleton,
        ground_height: float,
        params: RefineParams,
    ):
        self.original = np.asarray(original, dtype=np.float64)
        self.track = track
        self.skeleton = skeleton
        self.ground_height = ground_height
        self.params = params
        self.feet = list(skeleton.foot_joints)
        self.bones = skeleton.bone_pairs
        self.rest = np.asarray(skeleton.bone_lengths, dtype=np.float64)
        self.original_accel = _accel(self.original)

    def objective_and_J(self, X: np.ndarray) -> Tuple[float, float]:
        p = self.params
        r_sk, r_fl, r_pen = frame_rewards(X[:, self.feet], self.track, self.ground_height)
        J = float(r_sk.sum() + r_fl.sum() + r_pen.sum())

        fid = np.sum((X - self.original) ** 2)
        smooth = np.sum((_accel(X) - self.original_accel) ** 2)
        limb = 0.0
        for (j, parent), rest in zip(self.bones, self.rest):
            length = np.linalg.norm(X[:, j] - X[:, parent], axis=-1)
            limb += np.sum((length - rest) ** 2)

        energy = p.w_fid * fid + p.w_phys * (3 * X.shape[0] - J) + p.w_smooth * smooth + p.w_limb * limb
        return float(energy), J

    def value(self, X: np.ndarray) -> float:
        return self.objective_and_J(X)[0]

    def gradient(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        track = self.track
        z_g = self.ground_height
        feet = X[:, self.feet]
        grad = 2 * p.w_fid * (X - self.original)

        # dJ/d(feet)
        dJ = np.zeros_like(feet)
        gate = (track.contact[1:] & track.contact[:-1]).astype(np.float64)[:, :, None]
        step = (feet[1:] - feet[:-1]) * gate
        e_sk = np.exp(-np.sum(step ** 2, axis=-1))[:, :, None]
        dJ[1:] -= e_sk * step
        dJ[:-1] += e_sk * step

        lowest = feet[:, :, 2].argmin(axis=1)
        rows = np.arange(X.shape[0])
        gap = (feet[rows, lowest, 2] - z_g) * track.floating
        dJ[rows, lowest, 2] += -2 * gap * np.exp(-gap ** 2)

        depth = (z_g - feet[:, :, 2]) * track.penetration
        dJ[:, :, 2] += depth * np.exp(-depth ** 2)

        grad[:, self.feet] -= p.w_phys * dJ

        accel = _accel(X) - self.original_accel
        grad[2:] += 2 * p.w_smooth * accel
        grad[1:-1] -= 4 * p.w_smooth * accel
        grad[:-2] += 2 * p.w_smooth * accel

        for (j, parent), rest in zip(self.bones, self.rest):
            v = X[:, j] - X[:, parent]
            length = np.linalg.norm(v, axis=-1, keepdims=True)
            pull = 2 * p.w_limb * (length - rest) * v / np.maximum(length, GRAD_EPS)
            grad[:, j] += pull
            grad[:, parent] -= pull
        return grad


def _project_feet(X: np.ndarray, feet: List[int], ground_height: float) -> np.ndarray:
    X[:, feet, 2] = np.maximum(X[:, feet, 2], ground_height)
    return X


def smooth_refine(
    clip: MotionClip,
    original: MotionClip,
    track: ContactTrack,
    params: Optional[RefineParams] = None,
) -> RefineResult:
    """
    Projected gradient descent from the stage A clip.

    A step is accepted when E decreases and J stays at or above its stage A
    value; otherwise the step is halved. Accepted steps double the next
    trial step. Stops when the decrease relative to max(|E|, 1) drops below
    tol_rel, the gradient vanishes, or max_iters is reached.

    Raises:
        NonFiniteObjectiveError: E is not finite at the starting point
    """
    params = params or RefineParams()
    objective = RefinementObjective(original.frames, track, clip.skeleton, clip.ground_height, params)
    free = ~pinned_mask(clip.skeleton, track)
    feet = list(clip.skeleton.foot_joints)

    X = np.array(clip.frames)
    energy, j_floor = objective.objective_and_J(X)
    if not np.isfinite(energy):
        raise NonFiniteObjectiveError(f"Refinement objective is {energy} for clip {clip.name!r}", field="frames")

    trace = [energy]
    step = params.step_init
    iterations = 0
    while iterations < params.max_iters:
        grad = objective.gradient(X) * free
        if np.max(np.abs(grad)) < GRAD_EPS:
            break

        accepted = None
        for _ in range(MAX_HALVINGS):
            candidate = _project_feet(X - step * grad, feet, clip.ground_height)
            cand_energy, cand_J = objective.objective_and_J(candidate)
            if np.isfinite(cand_energy) and cand_energy < energy and cand_J >= j_floor:
                accepted = candidate
                break
            step /= 2
        if accepted is None:
            break

        decrease = (energy - cand_energy) / max(abs(energy), 1.0)
        X, energy = accepted, cand_energy
        trace.append(energy)
        iterations += 1
        step *= 2
        if decrease < params.tol_rel:
            break

    refined = clip.with_frames(X)
    return RefineResult(
        refined=refined,
        iterations=iterations,
        objective_trace=tuple(trace),
        report_before=sequence_objective(original, track),
        report_after=sequence_objective(refined, track),
        bone_length_error=bone_length_error(X, clip.skeleton),
    )


def refine_clip(
    clip: MotionClip,
    params: Optional[RefineParams] = None,
    contact_params: Optional[ContactParams] = None,
) -> RefineResult:
    """detect_contacts, then project_contacts, then smooth_refine"""
    track = detect_contacts(clip, contact_params)
    stage_a = project_contacts(clip, track)
    return smooth_refine(stage_a, clip, track, params)


def _refine_job(job) -> RefineResult:
    clip, params, contact_params = job
    return refine_clip(clip, params, contact_params)


def refine_corpus(
    clips: Sequence[MotionClip],
    params: Optional[RefineParams] = None,
    contact_params: Optional[ContactParams] = None,
    workers: int = 1,
) -> List[RefineResult]:
    """Refine every clip; results are in input order whatever the worker count"""
    params = params or RefineParams()
    contact_params = contact_params or ContactParams()
    results = parallel_map(_refine_job, [(c, params, contact_params) for c in clips], workers)
    for result in results:
        log_refinement(result.refined.name, result.iterations, result.report_before.J, result.report_after.J)
    return results
