"""Command-line entry point.

    dkdssd gen-toy   --config exp.ini
    dkdssd simulate  --config exp.ini
    dkdssd train     --config exp.ini --set train.variant=cascade
    dkdssd eval      --config exp.ini [--checkpoint best.ckpt] [--manifest m.tsv]
    dkdssd maskstats --config exp.ini [--checkpoint best.ckpt] [--manifest m.tsv]

Exit status is 0 on success, 1 for user errors (paths, config, checkpoints)
and 2 for numeric failures such as a non-finite loss.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import checkpoint, data, runner
from .config import ConfigError, ExperimentConfig, toy_config
from .distill import NumericError

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dkdssd", description="Noise-robust synthetic speech detection experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI experiment config (defaults to the toy preset)")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
        return sp

    sp = add("gen-toy", "write the synthetic toy corpus and noise pack")
    sp.add_argument("--train", type=int, default=400)
    sp.add_argument("--dev", type=int, default=100)
    sp.add_argument("--eval", type=int, default=200)
    sp.add_argument("--spoof-kind", default="band-limit", choices=("band-limit", "even-harmonic"))
    add("simulate", "freeze the noise protocols into manifests")
    add("train", "train the configured variant")
    for name, help_ in (("eval", "score eval protocols and write EER reports"),
                        ("maskstats", "fusion-mask statistics for a manifest")):
        sp = add(name, help_)
        sp.add_argument("--checkpoint")
        sp.add_argument("--manifest")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else toy_config()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    cfg.distill_config()  # validates the variant and hyperparameters
    return cfg


def run(args) -> None:
    cfg = load_config(args)
    if args.command == "gen-toy":
        counts = {"train": args.train, "dev": args.dev, "eval": args.eval}
        spec = data.ToySpec(seconds=cfg.dsp.segment_samples / 16000.0, seed=cfg.train.seed, spoof_kind=args.spoof_kind)
        report = runner.gen_toy(cfg, counts, spec)
        print(f"toy corpus: {report['n_utterances']} utterances, "
              f"separability accuracy {report['separability_accuracy']:.3f}")
    elif args.command == "simulate":
        for protocol, path in runner.simulate(cfg).items():
            print(f"{protocol}\t{path}")
    elif args.command == "train":
        out = runner.train(cfg)
        print(f"trained {cfg.train.variant}: {out}")
    elif args.command == "eval":
        manifests = {"custom": args.manifest} if args.manifest else None
        for protocol, rep in runner.evaluate(cfg, args.checkpoint, manifests).items():
            print(f"{protocol}\tEER {100 * rep.pooled:.2f}%\t({rep.n_trials} trials)")
    elif args.command == "maskstats":
        stats = runner.maskstats(cfg, args.checkpoint, args.manifest)
        print(f"{len(stats['rows'])} utterances, pooled mask mean {stats['pooled_mean']:.4f}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (runner.UserError, ConfigError, data.DataError, checkpoint.CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
