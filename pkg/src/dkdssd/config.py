"""Experiment configuration, system variants and seeded random substreams."""
from __future__ import annotations

import configparser
import dataclasses
import io
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import LowbandSpec, StftGeometry


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

class Streams:
    """Named, independent random substreams derived from one master seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def rng(self, *names) -> np.random.Generator:
        keys = [zlib.crc32(str(n).encode()) for n in names]
        return np.random.default_rng(np.random.SeedSequence([self.seed, *keys]))


# ---------------------------------------------------------------------------
# variants
# ---------------------------------------------------------------------------

@dataclass
class DistillConfig:
    """Wiring switches plus the distillation hyperparameters.

    ``input_mode`` selects what the student sees when no enhancer is used:
    clean audio, noisy audio, or a 50/50 clean/noisy mix per epoch.
    """

    tau: float = 3.0
    alpha: float = 0.05
    with_kd: bool = True
    with_if: bool = True
    with_joint: bool = True
    with_se: bool = True
    with_teacher: bool = True
    offline_teacher: bool = False
    detach_teacher: bool = True
    oa_fusion: bool = False
    oa_ratio: float = 0.7
    input_mode: str = "noisy"

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.input_mode not in ("clean", "noisy", "mct1"):
            raise ConfigError(f"unknown input_mode {self.input_mode!r}")
        if self.with_kd and not self.with_teacher:
            raise ConfigError("knowledge distillation needs the teacher branch")


_PLAIN = dict(with_se=False, with_if=False, with_teacher=False, with_kd=False, with_joint=False)
_SE_ONLY = dict(with_se=True, with_if=False, with_teacher=False, with_kd=False)

VARIANTS: dict[str, dict] = {
    "noise-free": dict(_PLAIN, input_mode="clean"),
    "mct1": dict(_PLAIN, input_mode="mct1"),
    "mct2": dict(_PLAIN, input_mode="noisy"),
    "cascade": dict(_SE_ONLY, with_joint=False),
    "joint": dict(_SE_ONLY, with_joint=True),
    "dkdssd": dict(),
    "dkdssd-ablation:no-kd": dict(with_kd=False),
    "dkdssd-ablation:no-if": dict(with_if=False),
    "dkdssd-ablation:no-joint": dict(with_joint=False),
    "dkdssd-ablation:pkd": dict(offline_teacher=True),
    "dkdssd-ablation:oa-fusion": dict(with_if=False, oa_fusion=True),
}


def wiring(variant: str, **overrides) -> DistillConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return DistillConfig(**{**VARIANTS[variant], **overrides})


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------

@dataclass
class PathsSection:
    corpus_manifest: str = "toy/manifest.tsv"
    noise_dir: str = "toy/noise"
    output_dir: str = "runs/default"


@dataclass
class DspSection:
    cls_n_fft: int = 1728
    cls_hop: int = 130
    cls_window: str = "blackman"
    cls_max_hz: float = 4000.0
    cls_frames: int = 600
    se_n_fft: int = 320
    se_hop: int = 160
    se_window: str = "hann"
    segment_samples: int = 78000

    def lowband(self) -> LowbandSpec:
        return LowbandSpec(StftGeometry(self.cls_n_fft, self.cls_hop, self.cls_window), self.cls_max_hz, self.cls_frames)

    def enhancer_geometry(self) -> StftGeometry:
        return StftGeometry(self.se_n_fft, self.se_hop, self.se_window)


@dataclass
class ModelSection:
    classifier_preset: str = "tiny"
    emb_dim: int = 128
    stem_channels: int = 16
    input_scale: float = 0.1
    enhancer_channels: str = "8,16"
    enhancer_hidden: int = 32
    mask_kernel: int = 7
    margin_m: int = 2
    margin_enabled: bool = True
    lambda_base: float = 1000.0
    lambda_gamma: float = 0.99
    lambda_min: float = 5.0


@dataclass
class DistillSection:
    tau: float = 3.0
    alpha: float = 0.05
    detach_teacher: bool = True
    oa_ratio: float = 0.7
    teacher_epochs: int = 4


@dataclass
class TrainSection:
    variant: str = "dkdssd"
    seed: int = 17
    epochs: int = 32
    batch_size: int = 4
    lr: float = 1e-3
    dtype: str = "float32"
    workers: int = 2
    prefetch: int = 4


@dataclass
class ExperimentConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    dsp: DspSection = field(default_factory=DspSection)
    model: ModelSection = field(default_factory=ModelSection)
    distill: DistillSection = field(default_factory=DistillSection)
    train: TrainSection = field(default_factory=TrainSection)

    def distill_config(self) -> DistillConfig:
        return wiring(
            self.train.variant,
            tau=self.distill.tau,
            alpha=self.distill.alpha,
            detach_teacher=self.distill.detach_teacher,
            oa_ratio=self.distill.oa_ratio,
        )

    # -- serialisation ---------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for sec in dataclasses.fields(self):
            section = getattr(self, sec.name)
            cp[sec.name] = {f.name: _fmt(getattr(section, f.name)) for f in dataclasses.fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        cfg = cls()
        for name in cp.sections():
            for key, value in cp[name].items():
                cfg.set(f"{name}.{key}", value)
        return cfg

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_ini())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_ini(path.read_text())

    def set(self, dotted: str, value: str) -> None:
        """Override one ``section.key`` from its string form."""
        try:
            sec_name, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"override must be section.key=value, got {dotted!r}") from None
        section = getattr(self, sec_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigError(f"unknown config section {sec_name!r}")
        types = {f.name: f.type for f in dataclasses.fields(section)}
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in section [{sec_name}]")
        setattr(section, key, _parse(value, types[key], dotted))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, typ, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    text = str(text).strip()
    try:
        if typ == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ}") from None
    return text


def toy_config(output_dir="runs/toy", corpus_dir="toy", **train) -> ExperimentConfig:
    """Desk-scale preset: 1 s utterances and a compact classifier feature grid."""
    cfg = ExperimentConfig()
    cfg.paths = PathsSection(f"{corpus_dir}/manifest.tsv", f"{corpus_dir}/noise", str(output_dir))
    cfg.dsp = DspSection(cls_n_fft=256, cls_hop=256, cls_frames=64, segment_samples=16000)
    cfg.train = TrainSection(epochs=8, batch_size=8, lr=2e-3, **train)
    cfg.distill.teacher_epochs = 3
    return cfg
