#!/usr/bin/env python3
"""
Tests for the QC gate, pipeline configuration, round reports, the closed
loop and the command line
Run directly (python test_pipeline.py) or through pytest
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose, assert_array_equal

from forge import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from src.config import ContactParams, PipelineConfig, QcParams, load_pipeline_config, save_pipeline_config
from src.errors import ForgeIOError, ForgeValidationError, ReportError
from src.motion.clip import save_corpus
from src.motion.synthgen import CorruptionSpec, GaitSpec, corrupt_clip, generate_clip, generate_corpus
from src.orchestrator import LoopOrchestrator, run_loop, run_round
from src.physics.refine import refine_clip
from src.quality_control import QcReason, build_finetune_set, gate_clip, write_finetune_set
from src.reporting import RoundReport, build_report, report_columns, write_round_report
from src.seeding import derive_seed

BENCHMARK_PATH = Path(__file__).parent / "configs" / "benchmark.json"

# round-over-round slack, as a share of the round-0 value
TREND_TOLERANCE = 0.02

SMALL_CONFIG = {
    "version": 1,
    "seed": 5,
    "rounds": 1,
    "samples_per_round": 10,
    "eval_samples": 10,
    "workers": 1,
    "refine": {"max_iters": 30},
    "gen": {"latent_dim": 4, "t_fix": 15, "n_steps": 5, "samples_per_element": 4},
    "corpus": {"clips_per_category": 3, "duration_s": 0.5},
}


def _walk(seed=0, name="walk"):
    return generate_clip(GaitSpec("walk", seed=seed), name=name)


def _small_config(out_dir) -> PipelineConfig:
    return PipelineConfig.model_validate({**SMALL_CONFIG, "out_dir": str(out_dir)})


def _report(round_index, **changes):
    values = {name: 0.0 for name in report_columns()}
    values.update(round=round_index, finetuned=False, n_samples=10, fid=1.5 / (round_index + 1), succ=0.25)
    values.update(changes)
    return RoundReport(**values)


# ============================================================================
# QC GATE
# ============================================================================

def test_identity_pair_is_accepted():
    clip = _walk()
    verdict = gate_clip(clip, clip)
    assert verdict.accepted and verdict.mpjpe == 0.0 and verdict.reason is QcReason.OK


def test_excluded_tag_rejects_regardless_of_error():
    clip = _walk()
    tagged = clip.with_frames(clip.frames, tags=clip.tags + ("object-interaction",))
    verdict = gate_clip(tagged, tagged)
    assert not verdict.accepted
    assert verdict.reason is QcReason.EXCLUDED_TAG
    assert verdict.mpjpe == 0.0


def test_threshold_is_strict():
    clip = _walk()
    shifted = clip.with_frames(clip.frames + np.array([0.25, 0.0, 0.0]))
    mpjpe = gate_clip(clip, shifted).mpjpe
    assert_allclose(mpjpe, 0.25)
    assert not gate_clip(clip, shifted, QcParams(eta=mpjpe)).accepted
    assert gate_clip(clip, shifted, QcParams(eta=mpjpe * 1.000001)).accepted


def test_heavy_noise_is_rejected():
    clean = _walk(seed=1)
    noisy = corrupt_clip(clean, CorruptionSpec("noise", 1.0, seed=3))
    verdict = gate_clip(clean, noisy)
    assert verdict.reason is QcReason.OVER_THRESHOLD
    refined = refine_clip(noisy).refined
    assert gate_clip(clean, refined).reason is QcReason.OVER_THRESHOLD


def test_acceptance_grows_with_eta():
    clean = _walk(seed=2)
    pairs = [
        (clean, corrupt_clip(clean, CorruptionSpec("noise", sigma, seed=i)))
        for i, sigma in enumerate((0.01, 0.05, 0.1, 0.2, 0.4, 0.8))
    ]
    counts = [len(build_finetune_set(pairs, QcParams(eta=eta)).accepted) for eta in np.linspace(0.01, 2.0, 10)]
    assert counts == sorted(counts)
    assert counts[-1] == len(pairs)


def test_finetune_set_partition_and_files():
    pairs = []
    for i in range(10):
        clip = _walk(seed=i, name=f"clip_{i}")
        if i < 3:
            clip = clip.with_frames(clip.frames, tags=clip.tags + ("non-grounded",))
        sigma = 0.01 if i % 2 == 0 else 1.0
        noise = np.random.default_rng(i).normal(0.0, sigma, clip.frames.shape)
        pairs.append((clip, clip.with_frames(clip.frames + noise)))

    finetune_set = build_finetune_set(pairs)
    expected = [f"clip_{i}" for i in range(3, 10) if i % 2 == 0]
    assert [c.name for c in finetune_set.accepted] == expected
    assert len(finetune_set.verdicts) == 10
    assert_allclose(finetune_set.accepted_fraction, len(expected) / 10)
    reasons = {r["clip_id"]: r["reason"] for r in finetune_set.rejections}
    assert all(reasons[f"clip_{i}"] == "excluded_tag" for i in range(3))

    with tempfile.TemporaryDirectory() as tmp:
        write_finetune_set(finetune_set, tmp)
        rejected = pd.read_csv(Path(tmp) / "rejections.csv")
        manifest = json.loads((Path(tmp) / "accepted" / "manifest.json").read_text())
    accepted_ids = [entry["file"][: -len(".json")] for entry in manifest["clips"]]
    assert sorted(accepted_ids + list(rejected["clip_id"])) == sorted(f"clip_{i}" for i in range(10))
    assert list(rejected.columns) == ["clip_id", "reason", "mpjpe"]


# ============================================================================
# CONFIGURATION
# ============================================================================

def test_benchmark_config_loads():
    cfg = load_pipeline_config(str(BENCHMARK_PATH))
    assert cfg.seed == 7
    assert cfg.contact.slide_contact and not ContactParams().slide_contact
    assert cfg.gen.latent_dim == 16
    assert cfg.n_eval_samples == cfg.samples_per_round


def test_overrides_and_defaults():
    cfg = load_pipeline_config(None, seed=3, rounds=None)
    assert cfg.seed == 3
    assert cfg.rounds == 3
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "config.json"
        save_pipeline_config(cfg, path)
        assert load_pipeline_config(str(path)) == cfg


def test_config_errors_name_the_field():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "config.json"
        path.write_text(json.dumps({"version": 1, "refine": {"w_fid": -1.0}}))
        try:
            load_pipeline_config(str(path))
            raise AssertionError("negative weight accepted")
        except ForgeValidationError as e:
            assert e.field == "refine.w_fid"

        path.write_text(json.dumps({"seed": 1}))
        try:
            load_pipeline_config(str(path))
            raise AssertionError("unversioned config accepted")
        except ForgeValidationError as e:
            assert e.field == "version"

        try:
            load_pipeline_config(str(Path(tmp) / "missing.json"))
            raise AssertionError("missing config loaded")
        except ForgeIOError:
            pass


# ============================================================================
# REPORTS
# ============================================================================

def test_summary_matches_round_reports():
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            write_round_report(_report(k, penetrate_cm=0.125 * k), tmp)
        written = build_report(tmp)
        summary = pd.read_csv(written["summary"], float_precision="round_trip")
        assert list(summary.columns) == report_columns()
        assert len(summary) == 2
        for k in range(2):
            data = json.loads((Path(tmp) / f"round_{k}" / "report.json").read_text())
            assert summary.loc[k, "fid"] == data["fid"]
            assert summary.loc[k, "penetrate_cm"] == data["penetrate_cm"]
        assert all(Path(p).exists() for p in written.values())


def test_report_without_rounds_fails():
    with tempfile.TemporaryDirectory() as tmp:
        try:
            build_report(tmp)
            raise AssertionError("empty run reported")
        except ReportError:
            pass


# ============================================================================
# CLOSED LOOP
# ============================================================================

def test_loop_is_deterministic_and_audited():
    with tempfile.TemporaryDirectory() as tmp:
        first, second = Path(tmp) / "a", Path(tmp) / "b"
        reports = run_loop(_small_config(first))
        LoopOrchestrator(_small_config(second)).run_loop()

        assert [r.round for r in reports] == [0, 1]
        assert reports[0].accepted_fraction == 0.0 and not reports[0].finetuned
        assert reports[1].finetuned == (reports[1].accepted_fraction > 0)
        assert (first / "reports.csv").read_bytes() == (second / "reports.csv").read_bytes()
        assert (first / "generator.json").exists() and (first / "config.json").exists()

        round_1 = first / "round_1"
        rejected = list(pd.read_csv(round_1 / "rejections.csv")["clip_id"])
        manifest = json.loads((round_1 / "accepted" / "manifest.json").read_text())
        accepted = [entry["file"][: -len(".json")] for entry in manifest["clips"]]
        assert sorted(rejected + accepted) == [f"r1_s{i:04d}" for i in range(10)]
        assert_allclose(reports[1].accepted_fraction, len(accepted) / 10)


def test_synthetic_corpus_holds_out_clean_clips():
    cfg = PipelineConfig.model_validate({**SMALL_CONFIG, "corpus": {"clips_per_category": 10, "duration_s": 0.5}})
    train, reference = LoopOrchestrator(cfg).load_corpora()
    assert len(train) == 32 and len(reference) == 8
    for label in cfg.corpus.categories:
        assert sum(c.label == label for c in reference) == 2
    assert not {c.name for c in train} & {c.name for c in reference}
    generated = generate_corpus(clips_per_category=10, seed=derive_seed(5, 0, "synth"), duration_s=0.5)
    clean = {c.name: c for c in generated}
    for clip in reference:
        assert_array_equal(clip.frames, clean[clip.name].frames)
    assert any(not np.array_equal(c.frames, clean[c.name].frames) for c in train)


def test_corpus_directory_keeps_its_test_split():
    clips = [_walk(seed=i, name=f"clip_{i}") for i in range(5)]
    with tempfile.TemporaryDirectory() as tmp:
        save_corpus(clips, tmp, split=["train", "train", "test", "train", "test"])
        cfg = PipelineConfig.model_validate({**SMALL_CONFIG, "corpus": {"path": tmp}})
        train, reference = LoopOrchestrator(cfg).load_corpora()
    assert [c.name for c in train] == ["clip_0", "clip_1", "clip_3"]
    assert [c.name for c in reference] == ["clip_2", "clip_4"]


def test_single_round_against_reference():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = _small_config(tmp)
        orchestrator = LoopOrchestrator(cfg)
        space, model = orchestrator.train_initial(*orchestrator.load_corpora())
        tuned, report = run_round(model, space, cfg, 1, orchestrator.reference_codes)
        assert report.round == 1
        assert report.finetuned == (report.accepted_fraction > 0)
        assert (Path(tmp) / "round_1" / "rejections.csv").exists()

        _, again = orchestrator.run_round(model, space, 1)
        assert again.to_dict() == report.to_dict()
        assert tuned.labels == model.labels


def test_worker_count_does_not_change_reports():
    with tempfile.TemporaryDirectory() as tmp:
        single, pooled = Path(tmp) / "one", Path(tmp) / "three"
        run_loop(_small_config(single))
        run_loop(PipelineConfig.model_validate({**SMALL_CONFIG, "workers": 3, "out_dir": str(pooled)}))
        assert (single / "reports.csv").read_bytes() == (pooled / "reports.csv").read_bytes()


def test_loop_lowers_artifacts_round_over_round():
    benchmark = json.loads(BENCHMARK_PATH.read_text())
    benchmark.update(samples_per_round=100, eval_samples=100)
    benchmark["refine"]["max_iters"] = 100
    benchmark["corpus"]["clips_per_category"] = 20
    with tempfile.TemporaryDirectory() as tmp:
        reports = run_loop(PipelineConfig.model_validate({**benchmark, "out_dir": tmp}))

    assert [r.round for r in reports] == [0, 1, 2, 3]
    assert all(r.finetuned for r in reports[1:])
    for metric in ("penetrate_cm", "float_cm", "skate_cm"):
        values = [getattr(r, metric) for r in reports]
        slack = TREND_TOLERANCE * values[0] + 1e-9
        assert all(later <= earlier + slack for earlier, later in zip(values, values[1:])), (metric, values)
    skate = [r.skate_cm for r in reports]
    assert skate[1] < skate[0]
    assert skate[2] - skate[3] <= skate[0] - skate[1] + TREND_TOLERANCE * skate[0]

    baseline = reports[0]
    assert baseline.succ >= baseline.succ_raw
    assert baseline.e_mpjpe <= baseline.e_mpjpe_raw


def test_cli_loop_and_report():
    with tempfile.TemporaryDirectory() as tmp:
        config_path = Path(tmp) / "small.json"
        config_path.write_text(json.dumps(SMALL_CONFIG))
        out = Path(tmp) / "run"
        assert main(["loop", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
        assert main(["report", "--out", str(out)]) == EXIT_OK
        assert (out / "summary.csv").exists()
        assert main(["report", "--out", str(Path(tmp) / "empty")]) == EXIT_IO


def test_cli_exit_codes_for_bad_input():
    with tempfile.TemporaryDirectory() as tmp:
        bad = Path(tmp) / "bad.json"
        bad.write_text(json.dumps({**SMALL_CONFIG, "rounds": 0}))
        assert main(["loop", "--config", str(bad), "--out", tmp]) == EXIT_VALIDATION
        assert main(["loop", "--config", str(Path(tmp) / "missing.json")]) == EXIT_IO
        assert main(["refine", "--corpus", str(Path(tmp) / "nothing"), "--out", tmp]) == EXIT_IO


def test_cli_generator_chain():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config_path = tmp / "small.json"
        config_path.write_text(json.dumps(SMALL_CONFIG))
        common = ["--config", str(config_path)]
        assert main(["synth", *common, "--out", str(tmp / "corpus"), "--clean"]) == EXIT_OK
        manifest = json.loads((tmp / "corpus" / "manifest.json").read_text())
        assert sorted({entry["split"] for entry in manifest["clips"]}) == ["test", "train"]

        model = str(tmp / "generator.json")
        tuned = str(tmp / "tuned.json")
        assert main(["train-gen", *common, "--corpus", str(tmp / "corpus"), "--out", model]) == EXIT_OK
        tune = ["finetune", *common, "--model", model, "--corpus", str(tmp / "corpus"), "--out", tuned]
        assert main(tune) == EXIT_OK
        assert main(["sample", "--model", tuned, "--label", "walk", "--n", "2", "--out", str(tmp / "s")]) == EXIT_OK
        assert len(json.loads((tmp / "s" / "manifest.json").read_text())["clips"]) == 2
        overmixed = ["finetune", "--model", model, "--corpus", str(tmp / "corpus"), "--mix-ratio", "2", "--out", tuned]
        assert main(overmixed) == EXIT_VALIDATION


def test_cli_rejects_malformed_manifest():
    with tempfile.TemporaryDirectory() as tmp:
        (Path(tmp) / "manifest.json").write_text(json.dumps({"version": 1, "clips": [{"split": "train"}]}))
        assert main(["eval", "--corpus", tmp, "--out", str(Path(tmp) / "eval.csv")]) == EXIT_IO


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
    print("📊 PIPELINE TEST SUMMARY")
    print("=" * 80)
    for name, ok in results:
        print(f"{'✅ PASS' if ok else '❌ FAIL'}: {name}")
    passed = sum(1 for _, ok in results if ok)
    print(f"\nTotal: {passed}/{len(results)} tests passed")
    return passed == len(results)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
