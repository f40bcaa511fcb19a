"""Convolutional-recurrent magnitude enhancer.

A two-layer conv encoder halves the frequency axis twice, a GRU runs over
time at the bottleneck, and a mirrored transposed-conv decoder with skip
connections restores the input grid. A softplus head keeps the output
magnitude nonnegative.
"""
from __future__ import annotations

import numpy as np

from . import dsp
from . import tensor as T
from .nn import GRU, Conv2d, ConvTranspose2d, Linear, Module
from .tensor import Tensor


class Enhancer(Module):
    def __init__(self, n_bins: int = 161, channels=(8, 16), hidden: int = 32, *, rng, dtype=np.float64):
        if (n_bins - 1) % 4:
            raise ValueError(f"n_bins - 1 must be divisible by 4 for the mirrored decoder, got {n_bins}")
        c1, c2 = channels
        self.n_bins = n_bins
        self.f1 = (n_bins - 1) // 2 + 1
        self.f2 = (self.f1 - 1) // 2 + 1
        self.c2 = c2
        self.enc1 = Conv2d(1, c1, 3, stride=(2, 1), padding=1, rng=rng, dtype=dtype)
        self.enc2 = Conv2d(c1, c2, 3, stride=(2, 1), padding=1, rng=rng, dtype=dtype)
        self.rnn = GRU(c2 * self.f2, hidden, rng=rng, dtype=dtype)
        self.proj = Linear(hidden, c2 * self.f2, rng=rng, dtype=dtype)
        self.dec2 = ConvTranspose2d(2 * c2, c1, 3, stride=(2, 1), padding=1, rng=rng, dtype=dtype)
        self.dec1 = ConvTranspose2d(2 * c1, 1, 3, stride=(2, 1), padding=1, rng=rng, dtype=dtype)

    def forward(self, noisy_mag) -> Tensor:
        """[B, F, T] noisy magnitude -> [B, F, T] enhanced magnitude."""
        noisy_mag = T.as_tensor(noisy_mag)
        b, f, t = noisy_mag.shape
        if f != self.n_bins:
            raise T.ShapeError(f"enhancer expects {self.n_bins} bins, got {f}")
        x = T.reshape(T.log(noisy_mag + 1.0), (b, 1, f, t))
        e1 = T.relu(self.enc1(x))
        e2 = T.relu(self.enc2(e1))
        seq = T.transpose(T.reshape(e2, (b, self.c2 * self.f2, t)), (0, 2, 1))
        h = self.proj(self.rnn(seq))
        d = T.reshape(T.transpose(h, (0, 2, 1)), (b, self.c2, self.f2, t))
        d2 = T.relu(self.dec2(T.concat([d, e2], axis=1)))
        out = T.softplus(self.dec1(T.concat([d2, e1], axis=1)))
        return T.reshape(out, (b, f, t))


def enhance(model: Enhancer, noisy_mag) -> Tensor:
    return model(noisy_mag)


def se_loss(enhanced, clean) -> Tensor:
    """Mean squared magnitude error over all frequency-time cells."""
    enhanced, clean = T.as_tensor(enhanced), T.as_tensor(clean)
    if enhanced.shape != clean.shape:
        raise T.ShapeError(f"se_loss shapes differ: {enhanced.shape} vs {clean.shape}")
    diff = enhanced - clean
    return T.mean(diff * diff)


def reconstruct_time(enhanced_mag, noisy_phase: np.ndarray, length: int,
                     geometry: dsp.StftGeometry = dsp.ENHANCER_GEOMETRY):
    """Waveform from enhanced magnitude and the noisy phase.

    Tensor input stays on the graph; an ndarray goes through the numpy iSTFT.
    """
    if isinstance(enhanced_mag, Tensor):
        mag = enhanced_mag
        if mag.ndim == 2:
            return T.reshape(dsp.istft_graph(T.reshape(mag, (1,) + mag.shape), noisy_phase[None], geometry, length), (length,))
        return dsp.istft_graph(mag, noisy_phase, geometry, length)
    spec = np.asarray(enhanced_mag) * np.exp(1j * np.asarray(noisy_phase))
    return dsp.istft(spec, geometry.hop, geometry.window, length)
