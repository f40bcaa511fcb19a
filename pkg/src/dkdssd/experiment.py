"""Seed-averaged variant comparison on the toy corpus."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import runner
from .config import ExperimentConfig, toy_config
from .metrics import eer_of

log = logging.getLogger(__name__)

ORDERING_VARIANTS = ("noise-free", "cascade", "dkdssd-ablation:no-kd", "dkdssd")


@dataclass
class SeedResult:
    seed: int
    eer: dict = field(default_factory=dict)  # (variant, protocol) -> pooled EER
    eer_unseen_0db: dict = field(default_factory=dict)  # variant -> EER on 0 dB unseen trials
    mask_mean: float | None = None
    seconds: float = 0.0


def seed_config(workdir, seed: int, epochs: int) -> ExperimentConfig:
    workdir = Path(workdir)
    cfg = toy_config(output_dir=workdir / f"seed{seed}", corpus_dir=workdir / "toy", seed=seed)
    cfg.train.epochs = epochs
    return cfg


def prepare_corpus(workdir, counts=None, corpus_seed: int = 17) -> dict:
    cfg = toy_config(output_dir=Path(workdir) / "unused", corpus_dir=Path(workdir) / "toy", seed=corpus_seed)
    return runner.gen_toy(cfg, counts or {"train": 400, "dev": 100, "eval": 200})


def run_seed(workdir, seed: int, epochs: int = 6, variants=ORDERING_VARIANTS) -> SeedResult:
    start = time.time()
    result = SeedResult(seed)
    base = seed_config(workdir, seed, epochs)
    runner.simulate(base)
    for variant in variants:
        cfg = seed_config(workdir, seed, epochs)
        cfg.train.variant = variant
        runner.train(cfg)
        reports = runner.evaluate(cfg)
        for protocol, rep in reports.items():
            result.eer[(variant, protocol)] = rep.pooled
        trials = runner.metrics.read_scores(runner.variant_dir(cfg) / "eval" / "eval_unseen.scores",
                                            _conditions(runner.manifest_path(cfg, "eval_unseen")))
        result.eer_unseen_0db[variant] = eer_of([t for t in trials if t.snr_db == 0.0])
        if variant == "dkdssd":
            result.mask_mean = runner.maskstats(cfg)["pooled_mean"]
        log.info("seed %d %s done after %.0fs", seed, variant, time.time() - start)
    result.seconds = time.time() - start
    return result


def _conditions(manifest) -> dict:
    return {e.utt_id: (e.noise_id, e.snr_db) for e in runner.data.read_manifest(manifest)}


def summary_tsv(results: list[SeedResult]) -> str:
    variants = sorted({v for r in results for v, _ in r.eer}, key=lambda v: ORDERING_VARIANTS.index(v)
                      if v in ORDERING_VARIANTS else 99)
    lines = ["seed\tvariant\teval_seen\teval_unseen\teval_clean\tunseen_0dB"]
    for r in results:
        for v in variants:
            cells = [f"{100 * r.eer[(v, p)]:.2f}" for p in runner.EVAL_PROTOCOLS]
            lines.append("\t".join([str(r.seed), v, *cells, f"{100 * r.eer_unseen_0db[v]:.2f}"]))
    for v in variants:
        cells = [f"{100 * np.mean([r.eer[(v, p)] for r in results]):.2f}" for p in runner.EVAL_PROTOCOLS]
        lines.append("\t".join(["mean", v, *cells, f"{100 * np.mean([r.eer_unseen_0db[v] for r in results]):.2f}"]))
    return "\n".join(lines) + "\n"
