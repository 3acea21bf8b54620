#!/usr/bin/env python3
"""
Tests for contact detection, plausibility scoring, refinement and the
tracking harness
Run directly (python test_physics.py) or through pytest
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose, assert_array_equal

from src.config import ContactParams, RefineParams, TrackParams
from src.errors import ForgeValidationError, FrameIndexError, ShapeMismatchError
from src.motion.clip import MotionClip, compute_clip_error
from src.motion.synthgen import (
    AIRBORNE_TAG,
    CANONICAL_SKELETON,
    CorruptionSpec,
    GaitSpec,
    corrupt_clip,
    declared_stance,
    generate_clip,
)
from src.physics.contact import ContactTrack, contact_stats, detect_contacts, track_from_schedule
from src.physics.plausibility import (
    clip_metrics,
    float_reward,
    penetration_reward,
    sequence_objective,
    skate_reward,
)
from src.physics.refine import RefinementObjective, project_contacts, refine_clip, refine_corpus
from src.physics.tracking import batch_execute, execute, write_track_results


SLIDE_CONTACTS = ContactParams(slide_contact=True)


def _idle(seed=0):
    return generate_clip(GaitSpec("idle", seed=seed), name="idle")


def _walk(seed=0):
    return generate_clip(GaitSpec("walk", seed=seed), name="walk")


def _track(contact, floating=None, penetration=None):
    contact = np.asarray(contact, dtype=bool)
    T = contact.shape[0]
    return ContactTrack(
        contact=contact,
        floating=np.zeros(T, dtype=bool) if floating is None else np.asarray(floating, dtype=bool),
        penetration=np.zeros((T, 2), dtype=bool) if penetration is None else np.asarray(penetration, dtype=bool),
        foot_height=np.zeros((T, 2)),
        foot_speed=np.zeros((T, 2)),
        airborne=np.zeros(T, dtype=bool),
    )


# ============================================================================
# CONTACT
# ============================================================================

def test_idle_contacts():
    track = detect_contacts(_idle())
    assert track.contact.all()
    assert not track.floating.any()
    assert not track.penetration.any()
    assert contact_stats(track).contact_ratio == 1.0


def test_raised_feet_float():
    clip = _idle()
    frames = np.array(clip.frames)
    frames[:, 9, 2] += 1.0
    one_up = detect_contacts(clip.with_frames(frames))
    assert not one_up.contact[:, 0].any()
    assert one_up.contact[:, 1].all()
    assert not one_up.floating.any()

    frames[:, 12, 2] += 1.0
    both_up = detect_contacts(clip.with_frames(frames))
    assert both_up.floating.all()
    assert contact_stats(both_up).float_ratio == 1.0


def test_contact_and_floating_are_exclusive():
    for category in ("walk", "jump", "kick"):
        clip = corrupt_clip(generate_clip(GaitSpec(category, seed=1)), CorruptionSpec("noise", 0.02, seed=2))
        track = detect_contacts(clip)
        assert not (track.contact & track.floating[:, None]).any()


def test_walk_detection_agrees_with_schedule():
    clip = _walk(seed=8)
    agreement = np.mean(detect_contacts(clip).contact == declared_stance(clip))
    assert agreement >= 0.95


def test_sliding_stance_is_detected():
    for magnitude in (0.01, 0.03, 0.1):
        clip = corrupt_clip(_walk(seed=3), CorruptionSpec("skate", magnitude))
        agreement = np.mean(detect_contacts(clip, SLIDE_CONTACTS).contact == declared_stance(clip))
        assert agreement >= 0.95, magnitude

    fast = corrupt_clip(_walk(seed=3), CorruptionSpec("skate", 0.03))
    assert np.mean(detect_contacts(fast).contact == declared_stance(fast)) < 0.95
    for category in ("walk", "jump", "kick"):
        clean = generate_clip(GaitSpec(category, seed=4))
        assert_array_equal(detect_contacts(clean, SLIDE_CONTACTS).contact, detect_contacts(clean).contact)


def test_contact_ratio_monotone_in_threshold():
    clip = corrupt_clip(_walk(), CorruptionSpec("noise", 0.02, seed=4))
    ratios = [
        contact_stats(detect_contacts(clip, ContactParams(h_contact=h))).contact_ratio
        for h in (0.01, 0.02, 0.05, 0.1, 0.2)
    ]
    assert ratios == sorted(ratios)


def test_jump_flight_is_exempt():
    jump = generate_clip(GaitSpec("jump", seed=5))
    track = detect_contacts(jump)
    assert track.airborne.any()
    assert not track.floating.any()

    untagged = jump.with_frames(jump.frames, tags=tuple(t for t in jump.tags if t != AIRBORNE_TAG))
    assert detect_contacts(untagged).floating.any()
    assert not detect_contacts(untagged, ContactParams(airborne_allowed=True)).floating.any()


def test_schedule_shape_checked():
    clip = _walk()
    try:
        track_from_schedule(clip, np.ones((10, 2)))
        raise AssertionError("schedule of the wrong length accepted")
    except ShapeMismatchError:
        pass


# ============================================================================
# PLAUSIBILITY
# ============================================================================

def test_skate_reward_single_slide():
    clip = _idle()
    frames = np.array(clip.frames[:2])
    frames[1, 9, 0] += 0.1
    pair = clip.with_frames(frames)
    track = _track([[True, False], [True, False]])
    assert_allclose(skate_reward(pair, track, 1), (np.exp(-0.01) + 1.0) / 2, atol=1e-12)


def test_float_reward_uses_lowest_foot():
    clip = _idle()
    frames = np.array(clip.frames[:2])
    frames[:, 9, 2] = 0.2
    frames[:, 12, 2] = 0.3
    track = _track([[False, False]] * 2, floating=[True, True])
    assert_allclose(float_reward(clip.with_frames(frames), track, 0), np.exp(-0.04), atol=1e-12)


def test_penetration_reward():
    clip = _idle()
    frames = np.array(clip.frames[:2])
    frames[:, 9, 2] = -0.1
    pen = [[True, False], [True, False]]
    value = penetration_reward(clip.with_frames(frames), _track([[True, True]] * 2, penetration=pen), 0)
    assert_allclose(value, (np.exp(-0.01) + 1.0) / 2, atol=1e-12)

    on_ground = detect_contacts(clip)
    assert penetration_reward(clip, on_ground, 0) == 1.0


def test_frame_index_checked():
    clip = _idle()
    track = detect_contacts(clip)
    for fn, t in ((skate_reward, 0), (float_reward, clip.n_frames), (penetration_reward, -1)):
        try:
            fn(clip, track, t)
            raise AssertionError(f"{fn.__name__} accepted frame {t}")
        except FrameIndexError:
            pass


def test_clean_idle_scores_perfectly():
    clip = _idle()
    report = sequence_objective(clip, detect_contacts(clip))
    assert report.J == 180.0
    assert report.metric_penetrate == 0.0
    assert report.metric_float == 0.0
    assert report.metric_skate == 0.0


def test_penetration_metric():
    clip = corrupt_clip(_idle(), CorruptionSpec("penetrate", 0.03))
    report = sequence_objective(clip, detect_contacts(clip))
    assert report.J < 180.0
    assert_allclose(report.metric_penetrate, 3.0, rtol=1e-9)


def test_float_metric():
    clip = corrupt_clip(_idle(), CorruptionSpec("float", 0.08))
    penetrate, float_cm, skate = clip_metrics(clip, detect_contacts(clip))
    assert_allclose(float_cm, 8.0, rtol=1e-9)
    assert penetrate == 0.0 and skate == 0.0


def test_skate_metric_with_declared_stance():
    clean = _walk(seed=3)
    clean_track = track_from_schedule(clean, declared_stance(clean))
    assert clip_metrics(clean, clean_track) == (0.0, 0.0, 0.0)

    skated = corrupt_clip(clean, CorruptionSpec("skate", 0.02))
    _, _, skate = clip_metrics(skated, track_from_schedule(skated, declared_stance(skated)))
    assert_allclose(skate, 2.0, rtol=1e-9)


def test_objective_matches_per_frame_rewards():
    clip = corrupt_clip(_walk(seed=2), CorruptionSpec("noise", 0.03, seed=7))
    track = detect_contacts(clip)
    report = sequence_objective(clip, track)
    total = 1.0 + sum(skate_reward(clip, track, t) for t in range(1, clip.n_frames))
    total += sum(float_reward(clip, track, t) + penetration_reward(clip, track, t) for t in range(clip.n_frames))
    assert_allclose(report.J, total, rtol=1e-12)
    assert_allclose(report.J, report.J_t.sum(), rtol=1e-12)
    for rewards in (report.r_sk, report.r_fl, report.r_pen):
        assert np.all((rewards > 0.0) & (rewards <= 1.0))


def test_objective_translation_invariant():
    clip = corrupt_clip(_walk(seed=2), CorruptionSpec("noise", 0.03, seed=7))
    track = detect_contacts(clip)
    moved = clip.with_frames(clip.frames + np.array([1.25, -0.5, 0.0]))
    assert_allclose(sequence_objective(moved, track).J, sequence_objective(clip, track).J, rtol=1e-9)


def test_objective_identity_on_random_clips():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        T = int(rng.integers(2, 12))
        clip = MotionClip(skeleton=CANONICAL_SKELETON, fps=30.0, frames=rng.uniform(-0.5, 0.5, size=(T, 13, 3)))
        report = sequence_objective(clip, detect_contacts(clip))
        assert_allclose(report.J, report.J_t.sum(), rtol=1e-12)
        assert 0.0 < report.J <= 3 * T


# ============================================================================
# REFINEMENT
# ============================================================================

def test_clean_gaits_are_left_alone():
    for category in ("idle", "walk", "kick", "jump"):
        clip = generate_clip(GaitSpec(category, seed=3))
        for contact_params in (ContactParams(), SLIDE_CONTACTS):
            result = refine_clip(clip, contact_params=contact_params)
            assert result.iterations <= 1, category
            assert compute_clip_error(clip, result.refined).mpjpe < 1e-6, category


def test_refinement_removes_penetration():
    clean = _idle()
    clip = corrupt_clip(clean, CorruptionSpec("penetrate", 0.03))
    result = refine_clip(clip)
    assert result.report_after.metric_penetrate == 0.0
    assert result.report_after.J > result.report_before.J
    assert_allclose(compute_clip_error(clip, result.refined).mpjpe, 2 * 0.03 / 13, atol=1e-9)


def test_refinement_lowers_floating():
    clip = corrupt_clip(_idle(), CorruptionSpec("float", 0.08))
    result = refine_clip(clip)
    assert result.iterations > 0
    assert result.report_after.J > result.report_before.J
    assert result.report_after.metric_float < result.report_before.metric_float


def test_refinement_pins_contact_runs():
    clip = corrupt_clip(_walk(seed=1), CorruptionSpec("skate", 0.005))
    result = refine_clip(clip)
    assert result.report_after.metric_skate == 0.0
    assert result.report_after.metric_penetrate == 0.0
    assert result.report_after.J >= result.report_before.J
    trace = np.array(result.objective_trace)
    assert np.all(np.diff(trace) < 0)


def test_refinement_clears_declared_stance_artifacts():
    params = RefineParams(max_iters=50)
    for magnitude in (0.01, 0.03, 0.1):
        skated = corrupt_clip(_walk(seed=3), CorruptionSpec("skate", magnitude))
        result = refine_clip(skated, params, SLIDE_CONTACTS)
        refined = result.refined
        penetrate, _, skate = clip_metrics(refined, track_from_schedule(refined, declared_stance(refined)))
        assert skate == 0.0 and penetrate == 0.0, magnitude
        assert np.all(np.diff(result.objective_trace) <= 0.0)

        sunk = corrupt_clip(_walk(seed=3), CorruptionSpec("penetrate", magnitude))
        refined = refine_clip(sunk, params, SLIDE_CONTACTS).refined
        assert clip_metrics(refined, detect_contacts(refined, SLIDE_CONTACTS))[0] == 0.0, magnitude


def test_feet_never_below_ground_after_refinement():
    for seed in range(3):
        clip = corrupt_clip(_walk(seed=seed), CorruptionSpec("noise", 0.03, seed=seed))
        refined = refine_clip(clip, RefineParams(max_iters=50)).refined
        assert np.all(refined.feet[:, :, 2] >= refined.ground_height)


def test_projection_only_moves_feet():
    clip = corrupt_clip(_walk(seed=1), CorruptionSpec("skate", 0.005))
    projected = project_contacts(clip, detect_contacts(clip))
    others = [j for j in range(13) if j not in (9, 12)]
    assert_array_equal(projected.frames[:, others], clip.frames[:, others])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    base = generate_clip(GaitSpec("walk", duration_s=1 / 3, seed=3))
    T = base.n_frames
    params = RefineParams(w_fid=1.0, w_phys=10.0, w_smooth=0.1, w_limb=1.0)
    for _ in range(5):
        X = base.frames + rng.normal(0.0, 0.05, base.frames.shape)
        X0 = base.frames + rng.normal(0.0, 0.05, base.frames.shape)
        X[:, [9, 12], 2] = rng.uniform(-0.1, 0.2, (T, 2))
        track = _track(
            rng.random((T, 2)) < 0.5,
            floating=rng.random(T) < 0.5,
            penetration=rng.random((T, 2)) < 0.5,
        )
        objective = RefinementObjective(X0, track, CANONICAL_SKELETON, 0.0, params)
        grad = objective.gradient(X)
        numeric = np.zeros_like(X)
        h = 1e-6
        for idx in np.ndindex(X.shape):
            plus, minus = X.copy(), X.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (objective.value(plus) - objective.value(minus)) / (2 * h)
        assert np.linalg.norm(numeric - grad) <= 1e-5 * np.linalg.norm(grad)


def test_refine_corpus_keeps_order():
    clips = []
    for i in range(3):
        clip = corrupt_clip(_idle(seed=i), CorruptionSpec("penetrate", 0.01 * (i + 1)))
        clips.append(clip.with_frames(clip.frames, name=f"clip_{i}"))
    results = refine_corpus(clips, workers=1)
    assert [r.refined.name for r in results] == ["clip_0", "clip_1", "clip_2"]
    assert all(r.report_after.metric_penetrate == 0.0 for r in results)


# ============================================================================
# TRACKING
# ============================================================================

def test_static_reference_is_tracked_exactly():
    result = execute(_idle())
    assert result.success
    assert result.e_mpjpe == 0.0
    assert result.terminated_at is None


def test_executed_feet_stay_above_ground():
    clip = corrupt_clip(_walk(seed=2), CorruptionSpec("penetrate", 0.03))
    result = execute(clip)
    assert np.all(result.executed.feet[:, :, 2] >= clip.ground_height)


def test_stance_feet_are_pinned():
    clip = _walk(seed=2)
    result = execute(clip)
    assert result.success
    stance = declared_stance(clip)
    feet = result.executed.feet
    for f in range(2):
        both = stance[1:, f] & stance[:-1, f]
        assert np.all((feet[1:, f] - feet[:-1, f])[both] == 0.0)


def test_tracking_margin_shrinks_with_skate():
    params = TrackParams()
    margins = []
    for magnitude in (0.0, 0.01, 0.02, 0.05):
        result = execute(corrupt_clip(_walk(seed=6), CorruptionSpec("skate", magnitude)), params)
        margins.append(params.succ_mpjpe - result.e_mpjpe if result.terminated_at is None else -np.inf)
    assert all(a >= b for a, b in zip(margins, margins[1:]))
    assert margins[0] > margins[-1]


def test_refined_reference_tracks_closer():
    clip = corrupt_clip(_walk(seed=6), CorruptionSpec("skate", 0.02))
    refined = refine_clip(clip, RefineParams(max_iters=50), SLIDE_CONTACTS).refined
    raw, fixed = execute(clip), execute(refined)
    assert fixed.success >= raw.success
    assert fixed.e_mpjpe <= raw.e_mpjpe


def test_batch_execute():
    clips = [_idle(seed=1), _walk(seed=1)]
    batch = batch_execute(clips)
    assert len(batch.results) == 2
    assert batch.results[0].clip_id == "idle"
    assert batch.success_rate == 1.0
    assert_allclose(batch.mean_e_mpjpe, np.mean([r.e_mpjpe for r in batch.results]))
    assert list(batch.to_frame().columns) == ["clip_id", "success", "e_mpjpe", "e_mpkpe", "terminated_at"]

    single = execute(clips[1])
    assert batch.results[1].e_mpjpe == single.e_mpjpe

    try:
        batch_execute([])
        raise AssertionError("empty corpus tracked")
    except ForgeValidationError:
        pass


def test_track_results_csv():
    batch = batch_execute([_idle(seed=2), _walk(seed=2)])
    with tempfile.TemporaryDirectory() as tmp:
        path = write_track_results(batch, Path(tmp) / "track" / "results.csv")
        table = pd.read_csv(path)
    assert list(table["clip_id"]) == ["idle", "walk"]
    assert list(table["success"]) == [r.success for r in batch.results]
    assert_allclose(table["e_mpjpe"], [r.e_mpjpe for r in batch.results])


def run_all_tests():
    """Run every test in this file and print a summary"""
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_") and callable(fn)]
    results = []
    for name, fn in tests:
        try:
            fn()
            results.append((name, True))
        except Exception as e:
            print(f"❌ {name}: {type(e).__name__}: {e}")
            results.append((name, False))

    print("\n" + "=" * 80)
    print("📊 PHYSICS TEST SUMMARY")
    print("=" * 80)
    for name, ok in results:
        print(f"{'✅ PASS' if ok else '❌ FAIL'}: {name}")
    passed = sum(1 for _, ok in results if ok)
    print(f"\nTotal: {passed}/{len(results)} tests passed")
    return passed == len(results)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
