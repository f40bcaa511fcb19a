"""Interactive fusion of enhanced and noisy feature maps.

Channel interaction mixes the two 16-channel stacks through a shared fusion
feature and a sigmoid weight; spatial fusion then blends the results with a
single-channel mask computed from the noisy branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor


class Stem(Module):
    """7x7 conv (1 -> channels) then 2x2 max pool, over a [B, F, T] log-magnitude grid.

    ``input_scale`` is a fixed multiplier keeping log magnitudes near unit range.
    """

    def __init__(self, channels: int = 16, input_scale: float = 0.1, *, rng, dtype=np.float64):
        self.input_scale = input_scale
        self.conv = Conv2d(1, channels, 7, padding=3, rng=rng, dtype=dtype)

    def forward(self, logmag) -> Tensor:
        logmag = T.as_tensor(logmag)
        b, f, t = logmag.shape
        x = T.reshape(logmag * self.input_scale, (b, 1, f, t))
        return T.pool2d(self.conv(x), 2, 2, "max")


@dataclass
class FusionState:
    x_concat: Tensor
    x_fusion: Tensor
    w: Tensor
    xe_tilde: Tensor
    xn_tilde: Tensor
    mask: Tensor | None = None
    x_inter: Tensor | None = None


class InteractiveFusion(Module):
    def __init__(self, channels: int = 16, mask_kernel: int = 7, zero_init_mask: bool = True, *, rng, dtype=np.float64):
        self.channels = channels
        self.conv1 = Conv2d(2 * channels, channels, 3, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(2 * channels, channels, 3, padding=1, rng=rng, dtype=dtype)
        self.mask_conv = Conv2d(2, 1, mask_kernel, padding=mask_kernel // 2, rng=rng, dtype=dtype)
        if zero_init_mask:
            self.mask_conv.weight.data[...] = 0.0

    def channel_interact(self, xe: Tensor, xn: Tensor) -> FusionState:
        if xe.shape != xn.shape:
            raise T.ShapeError(f"branch shapes differ: {xe.shape} vs {xn.shape}")
        if xe.shape[1] != self.channels:
            raise T.ShapeError(f"expected {self.channels} channels, got {xe.shape[1]}")
        x_concat = T.concat([xe, xn], axis=1)
        x_fusion = self.conv1(x_concat)
        w = T.sigmoid(self.conv2(x_concat))
        return FusionState(x_concat, x_fusion, w, x_fusion + w * xe, x_fusion + w * xn)

    def spatial_mask(self, xn_tilde: Tensor) -> Tensor:
        pooled = T.concat(
            [T.amax(xn_tilde, axis=1, keepdims=True), T.mean(xn_tilde, axis=1, keepdims=True)], axis=1
        )
        return T.sigmoid(self.mask_conv(pooled))

    def spatial_fuse(self, xe_tilde: Tensor, xn_tilde: Tensor) -> tuple[Tensor, Tensor]:
        if xe_tilde.shape != xn_tilde.shape:
            raise T.ShapeError(f"branch shapes differ: {xe_tilde.shape} vs {xn_tilde.shape}")
        mask = self.spatial_mask(xn_tilde)
        return blend(xe_tilde, xn_tilde, mask), mask

    def forward(self, xe: Tensor, xn: Tensor) -> FusionState:
        state = self.channel_interact(xe, xn)
        state.x_inter, state.mask = self.spatial_fuse(state.xe_tilde, state.xn_tilde)
        return state


def blend(xe: Tensor, xn: Tensor, mask: Tensor) -> Tensor:
    """``(1 - M) * xe + M * xn`` with the single-channel mask spread over channels."""
    m = T.broadcast_to(mask, xe.shape)
    return (1.0 - m) * xe + m * xn


def mask_statistics(masks, utt_ids=None, bins: int = 20) -> dict:
    """Per-utterance max/min/mean/median of fusion masks plus a pooled histogram.

    ``masks`` is an iterable of arrays (any shape per utterance).
    """
    masks = [np.asarray(m, dtype=np.float64).ravel() for m in masks]
    if not masks:
        raise ValueError("need at least one mask")
    if utt_ids is None:
        utt_ids = [f"utt{i}" for i in range(len(masks))]
    rows = [
        {"utt_id": u, "max": m.max(), "min": m.min(), "mean": m.mean(), "median": float(np.median(m))}
        for u, m in zip(utt_ids, masks)
    ]
    pooled = np.concatenate(masks)
    counts, edges = np.histogram(pooled, bins=bins, range=(0.0, 1.0))
    return {"rows": rows, "hist_counts": counts, "hist_edges": edges, "pooled_mean": float(pooled.mean())}


def write_mask_report(path, stats: dict) -> None:
    lines = ["utt_id\tmax\tmin\tmean\tmedian"]
    for r in stats["rows"]:
        lines.append(f"{r['utt_id']}\t{r['max']:.6f}\t{r['min']:.6f}\t{r['mean']:.6f}\t{r['median']:.6f}")
    lines.append("")
    lines.append("bin_lo\tbin_hi\tcount")
    e = stats["hist_edges"]
    for lo, hi, c in zip(e[:-1], e[1:], stats["hist_counts"]):
        lines.append(f"{lo:.2f}\t{hi:.2f}\t{int(c)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
