"""SE-residual detection backbone with an angular-margin softmax head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Linear, Module, Parameter
from .tensor import Tensor

LABELS = ("bonafide", "spoof")
BONAFIDE, SPOOF = 0, 1

PRESETS = {
    "tiny": {"widths": (16, 32, 64), "depths": (1, 1, 1)},
    "deep": {"widths": (16, 32, 64, 128), "depths": (3, 4, 6, 3)},
}


def label_index(label) -> int:
    if isinstance(label, str):
        if label not in LABELS:
            raise ValueError(f"invalid label {label!r}; expected one of {LABELS}")
        return LABELS.index(label)
    label = int(label)
    if label not in (BONAFIDE, SPOOF):
        raise ValueError(f"invalid label index {label}")
    return label


class SEBlock(Module):
    """Two 3x3 convs, squeeze-excitation channel gate, residual add."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1, reduction: int = 4, *, rng, dtype=np.float64):
        self.conv1 = Conv2d(c_in, c_out, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, padding=1, rng=rng, dtype=dtype)
        squeeze = max(1, c_out // reduction)
        self.fc1 = Linear(c_out, squeeze, rng=rng, dtype=dtype)
        self.fc2 = Linear(squeeze, c_out, rng=rng, dtype=dtype)
        self.shortcut = (
            Conv2d(c_in, c_out, 1, stride=stride, rng=rng, dtype=dtype)
            if stride != 1 or c_in != c_out
            else None
        )

    def gate(self, h: Tensor) -> Tensor:
        z = T.mean(h, axis=(2, 3))
        return T.sigmoid(self.fc2(T.relu(self.fc1(z))))

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(T.relu(self.conv1(x)))
        b, c = h.shape[:2]
        s = T.broadcast_to(T.reshape(self.gate(h), (b, c, 1, 1)), h.shape)
        res = x if self.shortcut is None else self.shortcut(x)
        return T.relu(h * s + res)


@dataclass
class ClassifierOutput:
    logits: Tensor  # [B, 2], ||x|| cos(theta_j)
    embedding: Tensor  # [B, emb_dim]
    norm: Tensor  # [B, 1], ||x||

    def scores(self) -> np.ndarray:
        """Detection score per utterance: bonafide logit minus spoof logit."""
        d = self.logits.data
        return d[:, BONAFIDE] - d[:, SPOOF]


class Classifier(Module):
    def __init__(self, in_channels: int = 16, widths=(16, 32, 64), depths=(1, 1, 1), emb_dim: int = 128,
                 n_classes: int = 2, *, rng, dtype=np.float64):
        self.blocks = []
        c = in_channels
        for width, depth in zip(widths, depths):
            for i in range(depth):
                self.blocks.append(SEBlock(c, width, stride=2 if i == 0 else 1, rng=rng, dtype=dtype))
                c = width
        self.embed = Linear(c, emb_dim, rng=rng, dtype=dtype)
        w = rng.standard_normal((n_classes, emb_dim)) / np.sqrt(emb_dim)
        self.head = Parameter(w.astype(dtype))

    def forward(self, feat) -> ClassifierOutput:
        x = T.as_tensor(feat)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        for block in self.blocks:
            x = block(x)
        emb = self.embed(T.mean(x, axis=(2, 3)))
        w_norm = T.sqrt(T.tsum(self.head * self.head, axis=1, keepdims=True))
        w_hat = self.head / T.broadcast_to(w_norm, self.head.shape)
        logits = T.affine(emb, w_hat)
        norm = T.sqrt(T.tsum(emb * emb, axis=1, keepdims=True) + 1e-12)
        return ClassifierOutput(logits, emb, norm)


def classify(model: Classifier, feat) -> ClassifierOutput:
    return model(feat)


@dataclass
class MarginConfig:
    """A-softmax settings; ``lam`` decays per training step towards ``lambda_min``."""

    m: int = 2
    lambda_base: float = 1000.0
    lambda_gamma: float = 0.99
    lambda_min: float = 5.0
    enabled: bool = True
    step: int = 0

    @property
    def lam(self) -> float:
        return max(self.lambda_min, self.lambda_base * self.lambda_gamma**self.step)

    def advance(self) -> None:
        self.step += 1


def _cos_multiple(c: Tensor, m: int) -> Tensor:
    """cos(m * theta) as a Chebyshev polynomial of cos(theta)."""
    t_prev, t_cur = T.as_tensor(np.ones_like(c.data)), c
    if m == 0:
        return t_prev
    for _ in range(m - 1):
        t_prev, t_cur = t_cur, 2.0 * c * t_cur - t_prev
    return t_cur


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp)
    logp = T.log_softmax(logits, axis=1)
    onehot = np.eye(logits.shape[1], dtype=logits.dtype)[labels]
    return -T.tsum(logp * onehot) / float(len(labels))


def hard_loss(logits: Tensor, labels, margin: MarginConfig | None = None, norm: Tensor | None = None) -> Tensor:
    """Angular-margin softmax cross-entropy, averaged over the batch.

    The true-class logit ``||x|| cos(theta)`` is replaced by
    ``(lam * ||x|| cos(theta) + ||x|| psi(theta)) / (1 + lam)`` with
    ``psi(theta) = (-1)^k cos(m theta) - 2k`` on ``[k pi/m, (k+1) pi/m]``.
    With the margin disabled, or ``m == 1`` and no norm, this is plain
    softmax cross-entropy.
    """
    logits = T.as_tensor(logits)
    labels = np.asarray([label_index(l) for l in np.atleast_1d(labels)], dtype=np.intp)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, -1))
    if len(labels) != logits.shape[0]:
        raise T.ShapeError(f"{len(labels)} labels for {logits.shape[0]} logit rows")
    if margin is None or not margin.enabled or (margin.m == 1 and norm is None):
        return cross_entropy(logits, labels)
    if norm is None:
        raise ValueError("angular margin needs the embedding norm")
    b, k = logits.shape
    onehot = np.eye(k, dtype=logits.dtype)[labels]
    nb = T.broadcast_to(norm, logits.shape)
    cos = T.clip(logits / nb, -1.0, 1.0)
    cos_y = T.tsum(cos * onehot, axis=1)
    logit_y = T.tsum(logits * onehot, axis=1)
    theta = np.arccos(np.clip(cos_y.data, -1.0, 1.0))
    kk = np.floor(margin.m * theta / np.pi)
    kk = np.minimum(kk, margin.m - 1).astype(logits.dtype)
    sign = np.where(kk % 2 == 0, 1.0, -1.0).astype(logits.dtype)
    psi = _cos_multiple(cos_y, margin.m) * sign - 2.0 * kk
    lam = margin.lam
    norm_flat = T.reshape(norm, (b,))
    f_y = (logit_y * lam + norm_flat * psi) / (1.0 + lam)
    delta = T.broadcast_to(T.reshape(f_y - logit_y, (b, 1)), (b, k))
    return cross_entropy(logits + delta * onehot, labels)
