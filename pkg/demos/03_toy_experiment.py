# coding: utf-8

# # A small end-to-end run
#
# Builds a toy corpus in a temporary directory, freezes the noise protocols,
# trains two systems for a few epochs and prints their EER tables. The
# command-line tool does the same thing step by step:
#
#     dkdssd gen-toy --set paths.output_dir=runs/toy
#     dkdssd simulate
#     dkdssd train --set train.variant=mct2
#     dkdssd eval --set train.variant=mct2
#
# Expect a few minutes on one core.

import logging
import sys
import tempfile
from pathlib import Path

from dkdssd import runner
from dkdssd.config import toy_config
from dkdssd.metrics import report_tsv

logging.basicConfig(level=logging.INFO, format="%(message)s")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3

work = Path(tempfile.mkdtemp(prefix="dkdssd-demo-"))
cfg = toy_config(output_dir=work / "runs", corpus_dir=work / "toy")
cfg.train.epochs = epochs
report = runner.gen_toy(cfg, {"train": 120, "dev": 40, "eval": 80})
print("corpus separability:", report["separability_accuracy"])
runner.simulate(cfg)


# ## Train and evaluate
#
# mct2 sees only noisy audio and has no enhancer. dkdssd adds the enhancer,
# fusion and an online teacher that listens to the clean signal.

for variant in ("mct2", "dkdssd"):
    cfg.train.variant = variant
    runner.train(cfg)
    reports = runner.evaluate(cfg)
    for protocol in ("eval_clean", "eval_unseen"):
        print(f"\n{variant} / {protocol}")
        print(report_tsv(reports[protocol]))


# ## Where the fusion mask sits
#
# Values above 0.5 mean the fused features lean on the noisy branch.

stats = runner.maskstats(cfg)
print("pooled mask mean:", round(stats["pooled_mean"], 3))
print("outputs in", work)
