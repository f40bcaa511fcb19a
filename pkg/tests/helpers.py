import numpy as np

from dkdssd.config import toy_config
from dkdssd.data import Batch, ToySpec, toy_utterance


def micro_cfg():
    cfg = toy_config()
    cfg.dsp.segment_samples = 3200
    return cfg


def micro_batch(seed: int = 0, n: int = 2, length: int = 3200) -> Batch:
    """Paired toy utterances (alternating labels) with white noise at about 5 dB."""
    rng = np.random.default_rng(seed)
    spec = ToySpec(seconds=length / 16000)
    clean = np.stack([toy_utterance(spec, i % 2 == 1, rng) for i in range(n)])
    noisy = clean + 0.056 * rng.standard_normal(clean.shape)
    return Batch([f"u{i}" for i in range(n)], clean, noisy, np.arange(n) % 2, [None] * n, [None] * n)
