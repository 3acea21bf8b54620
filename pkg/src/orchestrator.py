"""
Closed-Loop Orchestrator

Coordinates the generate → execute → filter → re-generate loop.

Round flow:
1. Sample clips from the generator (labels round-robin)
2. Refine each sample (contact projection + smooth descent)
3. Gate refined samples by MPJPE and tags
4. Fine-tune the generator on the accepted set
5. Evaluate the updated generator on the shared evaluation draws

Round 0 evaluates the initial generator before any fine-tuning.
"""

import time
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import PipelineConfig, save_pipeline_config
from src.errors import ForgeError, with_context
from src.evaluation import diversity, diversity_gap, fid, label_centroids, r_precision
from src.generator.diffusion import DiffusionModel, finetune, make_model, sample_codes, train_denoiser
from src.generator.latent_space import LatentCode, LatentSpace, decode, encode_clips, fit_latent_space
from src.generator.model_io import save_generator
from src.logger import log_empty_accepted_set, log_round_summary, log_stage_end, log_stage_start, get_logger
from src.motion.clip import MotionClip, load_corpus, split_corpus
from src.motion.synthgen import corrupt_corpus, generate_corpus
from src.physics.contact import detect_contacts
from src.physics.plausibility import clip_metrics
from src.physics.refine import refine_corpus
from src.physics.tracking import batch_execute
from src.quality_control import build_finetune_set, write_finetune_set
from src.reporting import ReportTracker, RoundReport, round_dir
from src.seeding import derive_seed

logger = get_logger()

GENERATOR_FILE = "generator.json"
CONFIG_FILE = "config.json"


class LoopOrchestrator:
    """
    Runs the closed refinement loop for one PipelineConfig.

    Every random draw is seeded from (config.seed, stage, index) and the
    sample and evaluation draws repeat each round, so the whole run is a
    pure function of the config and the input corpus.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.tracker = ReportTracker()
        self.reference_codes: List[LatentCode] = []
        self.centroids = {}

    @contextmanager
    def _stage(self, name: str, round_index: Optional[int], n_items: int):
        """Log stage timing and re-raise pipeline errors with round context"""
        log_stage_start(name, n_items, round_index)
        start = time.time()
        try:
            yield
        except ForgeError as e:
            context = f"round {round_index}: {name}" if round_index is not None else name
            raise with_context(e, context) from e
        log_stage_end(name, time.time() - start, round_index)

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def load_corpora(self) -> Tuple[List[MotionClip], List[MotionClip]]:
        """
        (train, reference) clips.

        A corpus directory keeps the test split its manifest declares, or is
        split per label when it declares none. The synthetic benchmark holds
        out clean clips and corrupts only the training half.
        """
        settings = self.config.corpus
        split_seed = derive_seed(self.config.seed, 0, "split")
        if settings.path:
            reference = load_corpus(settings.path, split="test")
            if reference:
                return load_corpus(settings.path, split="train"), reference
            return split_corpus(load_corpus(settings.path), settings.test_fraction, split_seed)

        clean = generate_corpus(
            categories=settings.categories,
            clips_per_category=settings.clips_per_category,
            seed=derive_seed(self.config.seed, 0, "synth"),
            duration_s=settings.duration_s,
            fps=settings.fps,
        )
        train, reference = split_corpus(clean, settings.test_fraction, split_seed)
        corrupted = corrupt_corpus(
            train,
            skate_fraction=settings.skate_fraction,
            float_fraction=settings.float_fraction,
            skate_magnitude=settings.skate_magnitude,
            float_magnitude=settings.float_magnitude,
            seed=derive_seed(self.config.seed, 0, "corrupt"),
        )
        return corrupted, reference

    def train_initial(
        self, corpus: Sequence[MotionClip], reference: Sequence[MotionClip]
    ) -> Tuple[LatentSpace, DiffusionModel]:
        """Fit the latent space and generator on `corpus`; `reference` becomes the evaluation target"""
        gen = self.config.gen
        with self._stage("train-gen", 0, len(corpus)):
            space = fit_latent_space(corpus, gen.latent_dim, gen.t_fix)
            self.reference_codes = encode_clips(space, reference)
            self.centroids = label_centroids(self.reference_codes)
            model = make_model(
                n_steps=gen.n_steps,
                beta_start=gen.beta_start,
                beta_end=gen.beta_end,
                ridge_lambda=gen.ridge_lambda,
                samples_per_element=gen.samples_per_element,
                seed=derive_seed(self.config.seed, 0, "train"),
            )
            model = train_denoiser(model, space, encode_clips(space, corpus))
        return space, model

    # ------------------------------------------------------------------
    # Round stages
    # ------------------------------------------------------------------

    def sample_batch(
        self, model: DiffusionModel, space: LatentSpace, round_index: int, stage: str, n: int
    ) -> Tuple[List[MotionClip], List[LatentCode]]:
        """
        n samples with labels assigned round-robin over the sorted label set.

        Draws depend on (seed, stage, index) only, so every round reuses the
        same noise and round-to-round differences come from the model.
        """
        labels = sorted(model.labels)
        assigned = [labels[i % len(labels)] for i in range(n)]
        seeds = [derive_seed(self.config.seed, 0, stage, i) for i in range(n)]
        prefix = "s" if stage == "generate" else "e"

        values = np.zeros((n, model.dim))
        for label in labels:
            rows = [i for i in range(n) if assigned[i] == label]
            if rows:
                values[rows] = sample_codes(model, label, [seeds[i] for i in rows])

        codes = [LatentCode(values=values[i], label=assigned[i]) for i in range(n)]
        clips = [decode(space, code, name=f"r{round_index}_{prefix}{i:04d}") for i, code in enumerate(codes)]
        return clips, codes

    def evaluate(
        self,
        model: DiffusionModel,
        space: LatentSpace,
        round_index: int,
        accepted_fraction: float,
        finetuned: bool,
    ) -> RoundReport:
        """Generation statistics, physics metrics and tracking on the shared evaluation draws"""
        cfg = self.config
        n = cfg.n_eval_samples
        with self._stage("evaluate", round_index, n):
            clips, codes = self.sample_batch(model, space, round_index, "eval", n)
            stat_seed = derive_seed(cfg.seed, 0, "stats")
            top1, top2, top3 = r_precision(codes, self.centroids, seed=stat_seed)

            metrics = np.array([clip_metrics(c, detect_contacts(c, cfg.contact)) for c in clips])
            raw = batch_execute(clips, cfg.track, cfg.contact, workers=cfg.workers)
            refined = [r.refined for r in refine_corpus(clips, cfg.refine, cfg.contact, workers=cfg.workers)]
            tracked = batch_execute(refined, cfg.track, cfg.contact, workers=cfg.workers)

            report = RoundReport(
                round=round_index,
                r_top1=top1,
                r_top2=top2,
                r_top3=top3,
                fid=fid(codes, self.reference_codes),
                div=diversity(codes, seed=stat_seed),
                div_gap=diversity_gap(codes, self.reference_codes, seed=stat_seed),
                penetrate_cm=float(metrics[:, 0].mean()),
                float_cm=float(metrics[:, 1].mean()),
                skate_cm=float(metrics[:, 2].mean()),
                succ=tracked.success_rate,
                e_mpjpe=tracked.mean_e_mpjpe,
                e_mpkpe=tracked.mean_e_mpkpe,
                succ_raw=raw.success_rate,
                e_mpjpe_raw=raw.mean_e_mpjpe,
                e_mpkpe_raw=raw.mean_e_mpkpe,
                accepted_fraction=accepted_fraction,
                finetuned=finetuned,
                n_samples=n,
            )
        return report

    def run_round(self, model: DiffusionModel, space: LatentSpace, round_index: int) -> Tuple[DiffusionModel, RoundReport]:
        """
        One pass of sample → refine → gate → fine-tune → evaluate.

        An empty accepted set skips fine-tuning; the round still reports.
        """
        cfg = self.config
        n = cfg.samples_per_round
        with self._stage("sample", round_index, n):
            samples, _ = self.sample_batch(model, space, round_index, "generate", n)

        with self._stage("refine", round_index, n):
            results = refine_corpus(samples, cfg.refine, cfg.contact, workers=cfg.workers)

        with self._stage("qc", round_index, n):
            finetune_set = build_finetune_set([(s, r.refined) for s, r in zip(samples, results)], cfg.qc)
            write_finetune_set(finetune_set, round_dir(self.out_dir, round_index))

        finetuned = False
        if finetune_set.accepted:
            with self._stage("finetune", round_index, len(finetune_set.accepted)):
                model = finetune(model, space, finetune_set.accepted, mix_ratio=cfg.gen.mix_ratio)
                finetuned = True
        else:
            log_empty_accepted_set(round_index)

        report = self.evaluate(model, space, round_index, finetune_set.accepted_fraction, finetuned)
        return model, report

    # ------------------------------------------------------------------
    # Full loop
    # ------------------------------------------------------------------

    def run_loop(self) -> List[RoundReport]:
        """Train, evaluate the baseline, then run `rounds` rounds; writes everything to out_dir"""
        cfg = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_pipeline_config(cfg, self.out_dir / CONFIG_FILE)

        with self._stage("load-corpus", None, 0):
            corpus, reference = self.load_corpora()
        space, model = self.train_initial(corpus, reference)

        baseline = self.evaluate(model, space, 0, accepted_fraction=0.0, finetuned=False)
        self._record(baseline)

        for round_index in range(1, cfg.rounds + 1):
            model, report = self.run_round(model, space, round_index)
            self._record(report)

        save_generator(self.out_dir / GENERATOR_FILE, space, model)
        return list(self.tracker.reports)

    def _record(self, report: RoundReport):
        self.tracker.record_round(report)
        self.tracker.export_reports(self.out_dir)
        log_round_summary(
            report.round,
            {
                "fid": report.fid,
                "skate_cm": report.skate_cm,
                "float_cm": report.float_cm,
                "penetrate_cm": report.penetrate_cm,
                "succ": report.succ,
                "accepted": report.accepted_fraction,
            },
        )


def run_loop(config: PipelineConfig) -> List[RoundReport]:
    return LoopOrchestrator(config).run_loop()


def run_round(
    model: DiffusionModel, space: LatentSpace, config: PipelineConfig, round_index: int,
    reference_codes: Sequence[LatentCode],
) -> Tuple[DiffusionModel, RoundReport]:
    """Single round outside a full loop, against an explicit reference corpus"""
    orchestrator = LoopOrchestrator(config)
    orchestrator.reference_codes = list(reference_codes)
    orchestrator.centroids = label_centroids(reference_codes)
    return orchestrator.run_round(model, space, round_index)
