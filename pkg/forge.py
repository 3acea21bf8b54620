"""
forge - closed-loop motion plausibility pipeline

USAGE:
  python forge.py synth     --config configs/benchmark.json --out data/corpus [--clean]
  python forge.py eval      --corpus data/corpus --out eval.csv
  python forge.py refine    --corpus data/corpus --out data/refined
  python forge.py qc        --original data/corpus --refined data/refined --out data/qc
  python forge.py train-gen --config configs/benchmark.json --out models/generator.json [--corpus DIR]
  python forge.py finetune  --model models/generator.json --corpus data/qc/accepted --out models/tuned.json
  python forge.py sample    --model models/generator.json --label walk --n 10 --out data/samples
  python forge.py track     --corpus data/refined --out track.csv
  python forge.py loop      --config configs/benchmark.json [--seed N] [--rounds N] [--out DIR]
  python forge.py report    --out runs/latest

EXIT CODES:
  0 success, 2 validation error, 3 I/O error
"""

import argparse
import json
import sys
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

from src.config import Config, config, load_pipeline_config
from src.errors import ForgeIOError, ForgeValidationError
from src.generator.diffusion import finetune, make_model, sample, train_denoiser
from src.generator.latent_space import encode_clips, fit_latent_space
from src.generator.model_io import load_generator, save_generator
from src.logger import get_logger, log_error
from src.motion.clip import load_corpus, save_corpus, split_corpus
from src.motion.synthgen import generate_corpus
from src.orchestrator import LoopOrchestrator
from src.physics.contact import contact_stats, detect_contacts
from src.physics.plausibility import sequence_objective
from src.physics.refine import refine_corpus
from src.physics.tracking import batch_execute, write_track_results
from src.quality_control import build_finetune_set, write_finetune_set
from src.reporting import ReportTracker, build_report, load_round_reports
from src.seeding import derive_seed

logger = get_logger()

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def _pipeline_config(args):
    return load_pipeline_config(
        getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        rounds=getattr(args, "rounds", None),
        out_dir=getattr(args, "out", None) if args.command == "loop" else None,
        workers=getattr(args, "workers", None),
    )


def cmd_synth(args) -> int:
    cfg = _pipeline_config(args)
    if args.clean:
        settings = cfg.corpus
        clips = generate_corpus(
            categories=settings.categories,
            clips_per_category=settings.clips_per_category,
            seed=derive_seed(cfg.seed, 0, "synth"),
            duration_s=settings.duration_s,
            fps=settings.fps,
        )
        train, test = split_corpus(clips, settings.test_fraction, derive_seed(cfg.seed, 0, "split"))
    else:
        train, test = LoopOrchestrator(cfg).load_corpora()
    save_corpus(train + test, args.out, split=["train"] * len(train) + ["test"] * len(test))
    logger.info(f"Wrote {len(train)} train and {len(test)} test clips to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _pipeline_config(args)
    rows = []
    for clip in load_corpus(args.corpus):
        track = detect_contacts(clip, cfg.contact)
        report = sequence_objective(clip, track)
        rows.append({"clip_id": clip.name, "label": clip.label, **report.to_dict(), **contact_stats(track).to_dict()})
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(args.out, index=False)
    logger.info(f"Evaluated {len(rows)} clips into {args.out}")
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = _pipeline_config(args)
    clips = load_corpus(args.corpus)
    results = refine_corpus(clips, cfg.refine, cfg.contact, workers=cfg.workers)
    save_corpus([r.refined for r in results], args.out, split="refined")
    with open(Path(args.out) / "refine_report.json", "w") as f:
        json.dump([r.to_dict() for r in results], f, indent=2)
    logger.info(f"Refined {len(results)} clips into {args.out}")
    return EXIT_OK


def cmd_qc(args) -> int:
    cfg = _pipeline_config(args)
    originals = {c.name: c for c in load_corpus(args.original)}
    refined = load_corpus(args.refined)
    missing = [c.name for c in refined if c.name not in originals]
    if missing:
        raise ForgeValidationError(f"Refined clips without an original: {missing[:5]}", field="refined")
    finetune_set = build_finetune_set([(originals[c.name], c) for c in refined], cfg.qc)
    write_finetune_set(finetune_set, args.out)
    logger.info(f"QC accepted {len(finetune_set.accepted)} of {len(refined)} clips")
    return EXIT_OK


def cmd_train_gen(args) -> int:
    cfg = _pipeline_config(args)
    if args.corpus:
        corpus = load_corpus(args.corpus, split="train") or load_corpus(args.corpus)
    else:
        corpus = LoopOrchestrator(cfg).load_corpora()[0]
    gen = cfg.gen
    space = fit_latent_space(corpus, gen.latent_dim, gen.t_fix)
    model = make_model(
        n_steps=gen.n_steps,
        beta_start=gen.beta_start,
        beta_end=gen.beta_end,
        ridge_lambda=gen.ridge_lambda,
        samples_per_element=gen.samples_per_element,
        seed=derive_seed(cfg.seed, 0, "train"),
    )
    model = train_denoiser(model, space, encode_clips(space, corpus))
    save_generator(args.out, space, model)
    logger.info(f"Trained generator on {len(corpus)} clips, saved to {args.out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _pipeline_config(args)
    space, model = load_generator(args.model)
    accepted = load_corpus(args.corpus)
    mix_ratio = cfg.gen.mix_ratio if args.mix_ratio is None else args.mix_ratio
    model = finetune(model, space, accepted, mix_ratio=mix_ratio)
    save_generator(args.out, space, model)
    logger.info(f"Fine-tuned generator on {len(accepted)} clips (mix {mix_ratio}), saved to {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    space, model = load_generator(args.model)
    clips = [
        sample(model, space, args.label, derive_seed(args.seed, 0, "sample", i), name=f"{args.label}_{i:04d}")
        for i in range(args.n)
    ]
    save_corpus(clips, args.out, split="sample")
    logger.info(f"Sampled {len(clips)} {args.label} clips into {args.out}")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _pipeline_config(args)
    batch = batch_execute(load_corpus(args.corpus), cfg.track, cfg.contact, workers=cfg.workers)
    write_track_results(batch, args.out)
    logger.info(
        f"Tracked {len(batch.results)} clips: success {batch.success_rate:.3f}, "
        f"E_mpjpe {batch.mean_e_mpjpe:.4f} m, E_mpkpe {batch.mean_e_mpkpe:.4f} m"
    )
    return EXIT_OK


def cmd_loop(args) -> int:
    cfg = _pipeline_config(args)
    orchestrator = LoopOrchestrator(cfg)
    orchestrator.run_loop()
    orchestrator.tracker.print_report()
    return EXIT_OK


def cmd_report(args) -> int:
    written = build_report(args.out)
    tracker = ReportTracker()
    for report in load_round_reports(args.out):
        tracker.record_round(report)
    tracker.print_report()
    logger.info(f"Summary written to {written['summary']}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "eval": cmd_eval,
    "refine": cmd_refine,
    "qc": cmd_qc,
    "train-gen": cmd_train_gen,
    "finetune": cmd_finetune,
    "sample": cmd_sample,
    "track": cmd_track,
    "loop": cmd_loop,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description="Closed-loop motion plausibility pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="Pipeline config JSON (version 1)")
        p.add_argument("--seed", type=int, help="Override config seed")
        p.add_argument("--workers", type=int, help="Worker processes")
        return p

    p = with_config(sub.add_parser("synth", help="Write the synthetic benchmark corpus"))
    p.add_argument("--out", required=True)
    p.add_argument("--clean", action="store_true", help="Skip artifact injection")

    p = with_config(sub.add_parser("eval", help="Per-clip plausibility CSV"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("refine", help="Refine a corpus"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("qc", help="Gate refined clips against their originals"))
    p.add_argument("--original", required=True)
    p.add_argument("--refined", required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("train-gen", help="Fit latent space and denoiser"))
    p.add_argument("--corpus", help="Corpus directory, train split when marked (default: synthetic benchmark)")
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("finetune", help="Fine-tune a trained generator on accepted clips"))
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="Accepted clips, e.g. a qc accepted/ directory")
    p.add_argument("--mix-ratio", type=float, help="Accepted-clip share (default: config gen.mix_ratio)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="Sample clips from a trained generator")
    p.add_argument("--model", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("track", help="Run the tracking harness over a corpus"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("loop", help="Run the closed loop"))
    p.add_argument("--rounds", type=int, help="Override config rounds")
    p.add_argument("--out", help="Output directory (default: config out_dir)")

    p = sub.add_parser("report", help="Consolidate round reports into a summary and plots")
    p.add_argument("--out", default=config.OUT_DIR, help="Loop output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        Config.validate()
        return COMMANDS[args.command](args)
    except (ForgeValidationError, ValidationError) as e:
        log_error(args.command, e)
        return EXIT_VALIDATION
    except (ForgeIOError, OSError) as e:
        log_error(args.command, e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
