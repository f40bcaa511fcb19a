"""Experiment driver: corpus simulation, training, evaluation and mask reports.

Directory layout under ``paths.output_dir``::

    manifests/{train,dev,eval_seen,eval_unseen,eval_clean}.tsv
    <variant>/config.ini, metrics.tsv, steps.tsv, best.ckpt, last.ckpt
    <variant>/eval/<protocol>.scores, <protocol>.tsv
    <variant>/maskstats.tsv

Paths inside a manifest are relative to the manifest's own directory.
"""
from __future__ import annotations

import logging
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data, metrics
from .config import ExperimentConfig
from .distill import NumericError, System, Trainer, evaluate_loss, infer_with_mask, load_student
from .fusion import mask_statistics, write_mask_report
from . import tensor as T

log = logging.getLogger(__name__)

EVAL_PROTOCOLS = ("eval_seen", "eval_unseen", "eval_clean")
METRIC_COLUMNS = ("epoch", "L", "L_SE", "L_SL", "L_KD", "L_TL", "dev_loss")


class UserError(ValueError):
    """Bad paths, configs or inputs; the CLI maps this to exit code 1."""


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.paths.output_dir)


def variant_dir(cfg: ExperimentConfig) -> Path:
    return output_dir(cfg) / cfg.train.variant.replace(":", "-")


def manifest_path(cfg: ExperimentConfig, protocol: str) -> Path:
    return output_dir(cfg) / "manifests" / f"{protocol}.tsv"


def _noise_bank(cfg: ExperimentConfig) -> data.NoiseBank:
    try:
        return data.NoiseBank(cfg.paths.noise_dir)
    except data.DataError as exc:
        raise UserError(str(exc)) from None


def _read(path: Path) -> list[data.ManifestEntry]:
    try:
        return data.read_manifest(path)
    except data.DataError as exc:
        raise UserError(str(exc)) from None


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def simulate(cfg: ExperimentConfig) -> dict[str, Path]:
    """Write one frozen manifest per protocol from the corpus manifest."""
    corpus = Path(cfg.paths.corpus_manifest)
    entries = _read(corpus)
    bank = _noise_bank(cfg)
    out = {}
    for protocol in data.PROTOCOLS:
        path = manifest_path(cfg, protocol)
        path.parent.mkdir(parents=True, exist_ok=True)
        split = data.build_noisy_split(entries, bank, protocol, cfg.train.seed)
        rebased = [
            replace(e, path=os.path.relpath(data.resolve(e, corpus.parent).resolve(), path.parent.resolve()))
            for e in split
        ]
        data.write_manifest(path, rebased)
        out[protocol] = path
    return out


def gen_toy(cfg: ExperimentConfig, counts: dict | None = None, spec: data.ToySpec | None = None) -> dict:
    spec = spec or data.ToySpec(seconds=cfg.dsp.segment_samples / 16000.0, seed=cfg.train.seed)
    corpus_dir = Path(cfg.paths.corpus_manifest).parent
    _, report = data.generate_toy_corpus(corpus_dir, spec, counts)
    data.generate_noise_pack(cfg.paths.noise_dir, seed=cfg.train.seed)
    return report


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def build_system(cfg: ExperimentConfig) -> System:
    return System(cfg.distill_config(), cfg, cfg.train.seed, np.dtype(cfg.train.dtype))


def _loader(cfg, entries, root, bank, input_mode, noise_corpus="seen") -> data.BatchLoader:
    return data.BatchLoader(
        entries, root, bank, cfg.train.seed, cfg.dsp.segment_samples, input_mode, noise_corpus,
        workers=cfg.train.workers, prefetch=cfg.train.prefetch,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def train(cfg: ExperimentConfig) -> Path:
    """Train ``cfg.train.variant``; returns the variant directory.

    The checkpoint with the lowest dev loss is kept as ``best.ckpt``. A
    non-finite loss stops training with :class:`NumericError` after writing
    a diagnostic; checkpoints from earlier epochs are left in place.
    """
    dcfg = cfg.distill_config()
    paths = {p: manifest_path(cfg, p) for p in ("train", "dev")}
    for p in paths.values():
        if not p.exists():
            raise UserError(f"manifest {p} missing; run 'simulate' first")
    mode = dcfg.input_mode
    bank = None if mode == "clean" else _noise_bank(cfg)
    train_loader = _loader(cfg, _read(paths["train"]), paths["train"].parent, bank, mode)
    dev_loader = _loader(cfg, _read(paths["dev"]), paths["dev"].parent, bank, mode)
    out = variant_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")

    system = build_system(cfg)
    trainer = Trainer(system, cfg.train.lr)
    bs = cfg.train.batch_size
    step_lines = ["phase\tepoch\tstep\t" + "\t".join(METRIC_COLUMNS[1:-1])]
    metric_lines = ["\t".join(METRIC_COLUMNS)]
    best = np.inf
    step = 0

    def run_epoch(phase: str, epoch: int) -> dict[str, float]:
        nonlocal step
        sums = dict.fromkeys(METRIC_COLUMNS[1:-1], 0.0)
        n = 0
        for batch in train_loader.batches(bs, epoch=f"{phase}{epoch}", shuffle=True):
            try:
                vals = trainer.step(batch, phase)
            except NumericError as exc:
                diag = out / "diagnostic.txt"
                diag.write_text(f"phase {phase} epoch {epoch} step {step}: {exc}\nutts: {batch.utt_ids}\n")
                (out / "steps.tsv").write_text("\n".join(step_lines) + "\n")
                raise NumericError(f"{exc}; see {diag}; last good checkpoint kept in {out}") from None
            step += 1
            step_lines.append(f"{phase}\t{epoch}\t{step}\t" + "\t".join(_fmt(vals[k]) for k in sums))
            for k in sums:
                sums[k] += vals[k] * len(batch)
            n += len(batch)
        return {k: v / n for k, v in sums.items()}

    if dcfg.offline_teacher:
        for epoch in range(cfg.distill.teacher_epochs):
            avg = run_epoch("teacher", epoch)
            log.info("teacher epoch %d: L_TL %.4f", epoch, avg["L_TL"])
        trainer.freeze_teacher()

    for epoch in range(cfg.train.epochs):
        avg = run_epoch("student", epoch)
        dev = evaluate_loss(system, dev_loader.batches(bs, epoch="dev"))
        if not np.isfinite(dev):
            raise NumericError(f"non-finite dev loss at epoch {epoch}")
        metric_lines.append("\t".join([str(epoch)] + [_fmt(avg[k]) for k in METRIC_COLUMNS[1:-1]] + [_fmt(dev)]))
        ckpt.save_checkpoint(out / "last.ckpt", system.state_dict())
        if dev < best:
            best = dev
            ckpt.save_checkpoint(out / "best.ckpt", system.state_dict())
        log.info("%s epoch %d: L %.4f dev %.4f", cfg.train.variant, epoch, avg["L"], dev)
        (out / "metrics.tsv").write_text("\n".join(metric_lines) + "\n")
    (out / "steps.tsv").write_text("\n".join(step_lines) + "\n")
    return out


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def load_trained(cfg: ExperimentConfig, checkpoint=None) -> System:
    path = Path(checkpoint) if checkpoint else variant_dir(cfg) / "best.ckpt"
    system = build_system(cfg)
    try:
        return load_student(system, path)
    except ckpt.CheckpointError as exc:
        raise UserError(str(exc)) from None
    except ValueError as exc:
        raise UserError(f"{path}: {exc}") from None


def score_manifest(cfg: ExperimentConfig, system: System, manifest: Path, protocol: str | None = None):
    entries = _read(manifest)
    clean = protocol == "eval_clean" or not any(e.frozen for e in entries)
    bank = None if clean else _noise_bank(cfg)
    loader = _loader(cfg, entries, manifest.parent, bank, "clean" if clean else "noisy")
    trials = []
    for batch in loader.batches(cfg.train.batch_size, epoch="eval"):
        with T.no_grad():
            out, _, _ = system.student(batch.noisy)
        for utt, s, lab, nid, snr in zip(batch.utt_ids, out.scores(), batch.labels, batch.noise_ids, batch.snrs):
            if not np.isfinite(s):
                raise NumericError(f"{utt}: non-finite score")
            trials.append(metrics.TrialScore(utt, float(s), data.LABELS[lab], snr, nid))
    return trials


def evaluate(cfg: ExperimentConfig, checkpoint=None, manifests=None) -> dict[str, metrics.EvalReport]:
    """Score each eval protocol and write score files plus EER tables."""
    system = load_trained(cfg, checkpoint)
    manifests = manifests or {p: manifest_path(cfg, p) for p in EVAL_PROTOCOLS}
    out = variant_dir(cfg) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for protocol, path in manifests.items():
        path = Path(path)
        if not path.exists():
            raise UserError(f"manifest {path} missing; run 'simulate' first")
        trials = score_manifest(cfg, system, path, protocol)
        metrics.write_scores(out / f"{protocol}.scores", trials)
        report = metrics.breakdown_report(trials)
        metrics.write_report(out / f"{protocol}.tsv", report)
        reports[protocol] = report
    return reports


def maskstats(cfg: ExperimentConfig, checkpoint=None, manifest=None) -> dict:
    """Per-utterance fusion-mask statistics over a manifest."""
    if not cfg.distill_config().with_if or not cfg.distill_config().with_se:
        raise UserError(f"variant {cfg.train.variant!r} has no interactive fusion module")
    system = load_trained(cfg, checkpoint)
    manifest = Path(manifest) if manifest else manifest_path(cfg, "eval_unseen")
    entries = _read(manifest)
    frozen = any(e.frozen for e in entries)
    loader = _loader(cfg, entries, manifest.parent, _noise_bank(cfg) if frozen else None,
                     "noisy" if frozen else "clean")
    masks, ids = [], []
    for batch in loader.batches(cfg.train.batch_size, epoch="eval"):
        _, mask = infer_with_mask(system, batch.noisy)
        masks.extend(mask[i] for i in range(len(batch)))
        ids.extend(batch.utt_ids)
    stats = mask_statistics(masks, ids)
    write_mask_report(variant_dir(cfg) / "maskstats.tsv", stats)
    return stats
