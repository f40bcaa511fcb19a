"""Dual-branch distillation: clean teacher, noisy student, joint enhancer.

One :class:`System` covers every variant; :class:`~dkdssd.config.DistillConfig`
switches decide which parts exist and how the losses combine. The teacher
reads clean audio, the student reads (optionally enhanced) noisy audio, and
only the student is used at inference time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dsp
from . import tensor as T
from .checkpoint import load_checkpoint
from .classifier import PRESETS, Classifier, ClassifierOutput, MarginConfig, hard_loss
from .config import DistillConfig, ExperimentConfig, Streams
from .enhancer import Enhancer, se_loss
from .fusion import InteractiveFusion, Stem
from .nn import Module
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

TEACHER_PREFIX = "teacher."


class NumericError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def kd_loss(y_s, y_t, tau: float, detach: bool = True) -> Tensor:
    """``tau^2 * KL(softmax(y_t / tau) || softmax(y_s / tau))``, batch-averaged.

    The teacher distribution is the target. With ``detach`` the teacher
    logits are treated as constants.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    y_s, y_t = T.as_tensor(y_s), T.as_tensor(y_t)
    if y_s.shape != y_t.shape:
        raise T.ShapeError(f"logit shapes differ: {y_s.shape} vs {y_t.shape}")
    if y_s.ndim == 1:
        y_s, y_t = T.reshape(y_s, (1, -1)), T.reshape(y_t, (1, -1))
    if detach:
        y_t = T.detach(y_t)
    log_p_t = T.log_softmax(y_t / tau, axis=1)
    log_p_s = T.log_softmax(y_s / tau, axis=1)
    p_t = T.exp(log_p_t)
    kl = T.tsum(p_t * (log_p_t - log_p_s)) / float(y_s.shape[0])
    return kl * (tau * tau)


def ssd_loss(l_sl, l_kd, l_tl, alpha: float):
    """``(1 - alpha) * L_SL + alpha * L_KD + L_TL``."""
    return l_sl * (1.0 - alpha) + l_kd * alpha + l_tl


# ---------------------------------------------------------------------------
# system
# ---------------------------------------------------------------------------

class Teacher(Module):
    def __init__(self, stem: Stem, classifier: Classifier):
        self.stem = stem
        self.classifier = classifier

    def forward(self, logmag) -> ClassifierOutput:
        return self.classifier(self.stem(logmag))


@dataclass
class BranchOutputs:
    y_s: Tensor
    y_t: Tensor | None
    L_SL: Tensor
    L_TL: Tensor | None
    L_KD: Tensor | None
    L_SSD: Tensor
    L_SE: Tensor | None
    L: Tensor
    student: ClassifierOutput
    mask: Tensor | None = None
    tau: float = 3.0

    @property
    def y_s_soft(self) -> np.ndarray:
        return self.y_s.data / self.tau

    @property
    def y_t_soft(self) -> np.ndarray | None:
        return None if self.y_t is None else self.y_t.data / self.tau

    def values(self) -> dict[str, float]:
        def f(t):
            return 0.0 if t is None else float(t.data)

        return {"L": f(self.L), "L_SE": f(self.L_SE), "L_SL": f(self.L_SL), "L_KD": f(self.L_KD), "L_TL": f(self.L_TL)}


class System(Module):
    """All trainable parts of one variant.

    Parameters are drawn from role-named random substreams, so parts shared
    between variants (student stem and classifier, teacher, enhancer) start
    from identical weights under the same seed.
    """

    def __init__(self, dcfg: DistillConfig, cfg: ExperimentConfig | None = None, seed: int = 17,
                 dtype=np.float64):
        cfg = cfg or ExperimentConfig()
        self.dcfg = dcfg
        self.dtype = np.dtype(dtype)
        self.lowband = cfg.dsp.lowband()
        self.se_geometry = cfg.dsp.enhancer_geometry()
        m = cfg.model
        if m.classifier_preset not in PRESETS:
            raise ValueError(f"unknown classifier preset {m.classifier_preset!r}")
        preset = PRESETS[m.classifier_preset]
        streams = Streams(seed)

        def stem(*role):
            return Stem(m.stem_channels, m.input_scale, rng=streams.rng("init", *role), dtype=dtype)

        def classifier(*role):
            return Classifier(m.stem_channels, preset["widths"], preset["depths"], m.emb_dim,
                              rng=streams.rng("init", *role), dtype=dtype)

        def margin():
            return MarginConfig(m.margin_m, m.lambda_base, m.lambda_gamma, m.lambda_min, m.margin_enabled)

        self.stem = stem("student", "stem")
        self.classifier = classifier("student", "classifier")
        self.student_margin = margin()
        self.enhancer = None
        self.stem_e = None
        self.fusion = None
        self.teacher = None
        self.teacher_margin = None
        if dcfg.with_se:
            channels = tuple(int(c) for c in str(m.enhancer_channels).split(","))
            self.enhancer = Enhancer(self.se_geometry.n_bins, channels, m.enhancer_hidden,
                                     rng=streams.rng("init", "enhancer"), dtype=dtype)
            if dcfg.with_if:
                self.stem_e = stem("student", "stem_e")
                self.fusion = InteractiveFusion(m.stem_channels, m.mask_kernel,
                                                rng=streams.rng("init", "fusion"), dtype=dtype)
        if dcfg.with_teacher:
            self.teacher = Teacher(stem("teacher", "stem"), classifier("teacher", "classifier"))
            self.teacher_margin = margin()
        self.teacher_frozen = False

    # -- parameter groups -------------------------------------------------
    def student_parameters(self) -> list:
        return [p for k, p in self.named_parameters() if not k.startswith(TEACHER_PREFIX)]

    def teacher_parameters(self) -> list:
        return [] if self.teacher is None else self.teacher.parameters()

    def student_state(self) -> dict:
        return {k: v for k, v in self.state_dict().items() if not k.startswith(TEACHER_PREFIX)}

    # -- features ---------------------------------------------------------
    def _const(self, x) -> Tensor:
        return T.Tensor(np.asarray(x, dtype=self.dtype))

    def logmag(self, wav) -> Tensor:
        wav = wav if isinstance(wav, Tensor) else self._const(np.atleast_2d(wav))
        return dsp.lowband_logmag_graph(wav, self.lowband)

    def se_spectra(self, wav: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.se_geometry
        spec = dsp.stft(np.asarray(wav, dtype=np.float64), g.n_fft, g.hop, g.window)
        mag, phase = dsp.magphase(spec)
        return mag.astype(self.dtype), phase.astype(self.dtype)

    # -- branches ---------------------------------------------------------
    def student(self, noisy: np.ndarray, clean: np.ndarray | None = None):
        """Student forward on [B, L] audio: (output, L_SE or None, fusion mask or None)."""
        noisy = np.atleast_2d(noisy)
        d = self.dcfg
        if self.enhancer is None:
            return self.classifier(self.stem(self.logmag(noisy))), None, None
        noisy_mag, noisy_phase = self.se_spectra(noisy)
        enhanced = self.enhancer(noisy_mag)
        l_se = None
        if clean is not None:
            clean_mag, _ = self.se_spectra(np.atleast_2d(clean))
            l_se = se_loss(enhanced, clean_mag)
        if not d.with_joint:
            enhanced = T.detach(enhanced)
        wav = dsp.istft_graph(enhanced, noisy_phase, self.se_geometry, noisy.shape[-1])
        if d.oa_fusion:
            wav = wav * d.oa_ratio + self._const(noisy) * (1.0 - d.oa_ratio)
        feat_e = self.logmag(wav)
        if self.fusion is None:
            return self.classifier(self.stem(feat_e)), l_se, None
        state = self.fusion(self.stem_e(feat_e), self.stem(self.logmag(noisy)))
        return self.classifier(state.x_inter), l_se, state.mask

    def forward(self, batch, teacher_only: bool = False) -> BranchOutputs:
        """Build every loss term for one paired batch."""
        batch.check_paired()
        d = self.dcfg
        labels = batch.labels
        y_t = l_tl = None
        if self.teacher is not None:
            if self.teacher_frozen:
                with T.no_grad():
                    t_out = self.teacher(self.logmag(batch.clean))
                    l_tl = hard_loss(t_out.logits, labels, self.teacher_margin, t_out.norm)
            else:
                t_out = self.teacher(self.logmag(batch.clean))
                l_tl = hard_loss(t_out.logits, labels, self.teacher_margin, t_out.norm)
            y_t = t_out.logits
        if teacher_only:
            if l_tl is None:
                raise ValueError("variant has no teacher")
            return BranchOutputs(y_t, y_t, l_tl, l_tl, None, l_tl, None, l_tl, t_out, tau=d.tau)
        out, l_se, mask = self.student(batch.noisy, batch.clean)
        l_sl = hard_loss(out.logits, labels, self.student_margin, out.norm)
        l_kd = kd_loss(out.logits, y_t, d.tau, d.detach_teacher) if d.with_kd else None
        if d.with_kd:
            l_ssd = ssd_loss(l_sl, l_kd, l_tl, d.alpha)
        else:
            l_ssd = l_sl if l_tl is None else l_sl + l_tl
        total = l_ssd if l_se is None else l_ssd + l_se
        return BranchOutputs(out.logits, y_t, l_sl, l_tl, l_kd, l_ssd, l_se, total, out, mask, d.tau)

    def advance_margins(self) -> None:
        self.student_margin.advance()
        if self.teacher_margin is not None and not self.teacher_frozen:
            self.teacher_margin.advance()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class Trainer:
    """Single-backward optimisation of a :class:`System`.

    In offline-teacher mode the teacher is first trained on its own
    (``phase="teacher"``), then frozen while the student trains.
    """

    def __init__(self, system: System, lr: float = 1e-3):
        self.system = system
        self.lr = lr
        if system.dcfg.offline_teacher and system.teacher is not None:
            self.teacher_opt = Adam(system.teacher_parameters(), lr)
            self.opt = Adam(system.student_parameters(), lr)
        else:
            self.teacher_opt = None
            self.opt = Adam(system.parameters(), lr)

    def freeze_teacher(self) -> None:
        self.system.teacher_frozen = True
        for p in self.system.teacher_parameters():
            p.requires_grad = False

    def step(self, batch, phase: str = "student") -> dict[str, float]:
        teacher_phase = phase == "teacher"
        if teacher_phase and self.teacher_opt is None:
            raise ValueError("teacher phase needs an offline-teacher variant")
        out = self.system(batch, teacher_only=teacher_phase)
        values = out.values()
        if not np.isfinite(values["L"]):
            raise NumericError(f"non-finite loss {values}")
        self.system.zero_grad()
        T.backward(out.L)
        (self.teacher_opt if teacher_phase else self.opt).step()
        if teacher_phase:
            self.system.teacher_margin.advance()
        else:
            self.system.advance_margins()
        return values


def train_step(system: System, trainer: Trainer, batch) -> dict[str, float]:
    return trainer.step(batch)


def evaluate_loss(system: System, batches) -> float:
    """Mean total loss over ``batches`` without gradient tracking."""
    total, n = 0.0, 0
    with T.no_grad():
        for b in batches:
            total += system(b).values()["L"] * len(b)
            n += len(b)
    return total / max(n, 1)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def infer(system: System, wav) -> np.ndarray:
    """Detection scores for [L] or [B, L] audio; only the student runs."""
    wav = np.asarray(wav, dtype=np.float64)
    single = wav.ndim == 1
    with T.no_grad():
        out, _, _ = system.student(np.atleast_2d(wav))
    scores = out.scores()
    return scores[0] if single else scores


def infer_with_mask(system: System, wav) -> tuple[np.ndarray, np.ndarray]:
    if system.fusion is None:
        raise ValueError("variant has no interactive fusion module")
    with T.no_grad():
        out, _, mask = system.student(np.atleast_2d(np.asarray(wav, dtype=np.float64)))
    return out.scores(), mask.data


def load_student(system: System, path) -> System:
    """Load student weights from a checkpoint, ignoring any teacher entries."""
    state = load_checkpoint(path)
    student = {k: v for k, v in state.items() if not k.startswith(TEACHER_PREFIX)}
    expected = {k: tuple(s) for k, s in system.shape_manifest().items() if not k.startswith(TEACHER_PREFIX)}
    found = {k: v.shape for k, v in student.items()}
    if expected != found:
        missing = sorted(set(expected) - set(found))
        extra = sorted(set(found) - set(expected))
        wrong = sorted(k for k in set(expected) & set(found) if expected[k] != found[k])
        raise ValueError(f"checkpoint does not match model: missing {missing[:3]}, unexpected {extra[:3]}, "
                         f"shape mismatch {wrong[:3]}")
    system.load_state_dict(student, strict=False)
    return system
