"""Noise-robust synthetic speech detection with dual-branch knowledge distillation."""
from .classifier import Classifier, hard_loss
from .config import DistillConfig, ExperimentConfig, toy_config, wiring
from .distill import System, Trainer, infer, kd_loss, ssd_loss
from .dsp import istft, lowband_logmag, mix_at_snr, stft
from .enhancer import Enhancer, se_loss
from .fusion import InteractiveFusion
from .metrics import breakdown_report, compute_eer

__all__ = [
    "Classifier", "DistillConfig", "Enhancer", "ExperimentConfig", "InteractiveFusion", "System", "Trainer",
    "breakdown_report", "compute_eer", "hard_loss", "infer", "istft", "kd_loss", "lowband_logmag",
    "mix_at_snr", "se_loss", "ssd_loss", "stft", "toy_config", "wiring",
]
__version__ = "0.1.0"
