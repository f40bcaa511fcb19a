"""Signal-domain processing: STFT/iSTFT, noise mixing, log-magnitude features.

Numpy functions operate on plain arrays sampled at :data:`SAMPLE_RATE`.
The ``*_graph`` variants build the same computations out of tensor ops so
gradients can flow from the classifier features back into the enhancer.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from . import tensor as T
from .tensor import Tensor

SAMPLE_RATE = 16000
LOG_EPS = T.LOG_EPS
WINDOWS = ("blackman", "hann", "boxcar")


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class StftGeometry:
    n_fft: int
    hop: int
    window: str

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


# classifier path and enhancer path
CLASSIFIER_GEOMETRY = StftGeometry(1728, 130, "blackman")
ENHANCER_GEOMETRY = StftGeometry(320, 160, "hann")


@dataclass(frozen=True)
class LowbandSpec:
    """Classifier-path feature: low band of a log-magnitude STFT, fixed frame count."""

    geometry: StftGeometry = CLASSIFIER_GEOMETRY
    max_hz: float = 4000.0
    n_frames: int = 600

    @property
    def n_bins(self) -> int:
        return lowband_bins(self.geometry.n_fft, self.max_hz)


def lowband_bins(n_fft: int, max_hz: float = 4000.0, sr: int = SAMPLE_RATE) -> int:
    """Number of bins from DC up to and including ``max_hz``."""
    return int(np.floor(max_hz * n_fft / sr + 1e-9)) + 1


@lru_cache(maxsize=None)
def window(kind: str, n: int) -> np.ndarray:
    if kind not in WINDOWS:
        raise SignalError(f"unsupported window {kind!r}; expected one of {WINDOWS}")
    w = get_window(kind, n, fftbins=True).astype(np.float64)
    w.setflags(write=False)
    return w


def _check_geometry(n_fft: int, hop: int) -> None:
    if hop <= 0 or n_fft < hop:
        raise SignalError(f"need n_fft >= hop > 0, got n_fft={n_fft}, hop={hop}")


def n_frames_for(length: int, n_fft: int, hop: int) -> int:
    return 1 + length // hop if n_fft % 2 == 0 else 1 + (length + 2 * (n_fft // 2) - n_fft) // hop


@lru_cache(maxsize=64)
def frame_index(length: int, n_fft: int, hop: int) -> np.ndarray:
    """Index into the *unpadded* signal for every frame sample, reflect padding folded in."""
    pad = n_fft // 2
    reflect = np.pad(np.arange(length), pad, mode="reflect")
    n = n_frames_for(length, n_fft, hop)
    starts = np.arange(n)[:, None] * hop
    idx = reflect[starts + np.arange(n_fft)[None, :]]
    idx.setflags(write=False)
    return idx


def _check_signal(x: np.ndarray, hop: int) -> None:
    if x.shape[-1] < max(hop, 2):
        raise SignalError(f"waveform of {x.shape[-1]} samples is shorter than one hop ({hop})")
    if not np.all(np.isfinite(x)):
        raise SignalError("waveform contains non-finite samples")


def stft(x: np.ndarray, n_fft: int, hop: int, window_kind: str = "hann") -> np.ndarray:
    """Complex one-sided STFT, shape (..., n_fft // 2 + 1, frames).

    Frame ``t`` covers samples ``[t * hop, t * hop + n_fft)`` of the signal
    reflect-padded by ``n_fft // 2`` on both sides.
    """
    _check_geometry(n_fft, hop)
    x = np.asarray(x, dtype=np.float64)
    _check_signal(x, hop)
    frames = x[..., frame_index(x.shape[-1], n_fft, hop)] * window(window_kind, n_fft)
    return np.swapaxes(np.fft.rfft(frames, axis=-1), -1, -2)


@lru_cache(maxsize=16)
def _ola_denominator(length: int, n_fft: int, hop: int, window_kind: str) -> np.ndarray:
    pad = n_fft // 2
    n = n_frames_for(length, n_fft, hop)
    w2 = window(window_kind, n_fft) ** 2
    total = length + 2 * pad
    starts = np.arange(n)[:, None] * hop + np.arange(n_fft)[None, :]
    den = np.bincount(starts.ravel(), weights=np.tile(w2, n), minlength=total)[pad : pad + length]
    if den.min() <= 1e-10:
        raise SignalError(
            f"overlap-add normalisation vanishes for {window_kind} n_fft={n_fft} hop={hop}"
        )
    den.setflags(write=False)
    return den


def _ola_index(length: int, n_fft: int, hop: int) -> np.ndarray:
    n = n_frames_for(length, n_fft, hop)
    return np.arange(n)[:, None] * hop + np.arange(n_fft)[None, :]


def istft(spec: np.ndarray, hop: int, window_kind: str = "hann", length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` with window-squared normalisation."""
    spec = np.asarray(spec)
    n_bins, n = spec.shape[-2], spec.shape[-1]
    n_fft = 2 * (n_bins - 1)
    _check_geometry(n_fft, hop)
    if length is None:
        length = (n - 1) * hop
    if n_frames_for(length, n_fft, hop) != n:
        raise SignalError(f"{n} frames inconsistent with length {length} and hop {hop}")
    pad = n_fft // 2
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=n_fft, axis=-1) * window(window_kind, n_fft)
    lead = frames.shape[:-2]
    flat = frames.reshape(-1, n * n_fft)
    idx = _ola_index(length, n_fft, hop).ravel()
    total = length + 2 * pad
    out = np.stack([np.bincount(idx, weights=row, minlength=total) for row in flat])
    out = out[:, pad : pad + length] / _ola_denominator(length, n_fft, hop, window_kind)
    return out.reshape(lead + (length,))


def magphase(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.abs(spec), np.angle(spec)


def normalize_index(n: int, target: int) -> np.ndarray:
    """Frame index implementing truncate-or-repeat to ``target`` frames."""
    if n < 1:
        raise SignalError("need at least one frame")
    return np.arange(target) % n


def normalize_frames(grid: np.ndarray, target: int = 600) -> np.ndarray:
    """Truncate to the first ``target`` frames, or repeat-concatenate then truncate."""
    grid = np.asarray(grid)
    return grid[..., normalize_index(grid.shape[-1], target)]


def lowband_logmag(x: np.ndarray, spec: LowbandSpec = LowbandSpec(), eps: float = LOG_EPS) -> np.ndarray:
    """Natural-log magnitude, bins 0..max_hz inclusive, normalised to ``spec.n_frames``."""
    g = spec.geometry
    mag = np.abs(stft(x, g.n_fft, g.hop, g.window))[..., : spec.n_bins, :]
    return normalize_frames(np.log(np.maximum(mag, eps)), spec.n_frames)


# ---------------------------------------------------------------------------
# noise mixing
# ---------------------------------------------------------------------------

def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(power(x)))


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(power(clean) / power(noise))


@dataclass
class Mixture:
    noisy: np.ndarray
    noise: np.ndarray  # scaled segment actually added
    offset: int
    gain: float
    snr_db: float


def noise_segment(noise: np.ndarray, length: int, offset: int) -> np.ndarray:
    """``length`` samples of ``noise`` starting at ``offset``, looping as needed."""
    return noise[(offset + np.arange(length)) % len(noise)]


def mix_at_snr(
    clean: np.ndarray,
    noise: np.ndarray,
    snr_db: float,
    rng: np.random.Generator | None = None,
    offset: int | None = None,
    max_retries: int = 10,
) -> Mixture:
    """Add a gain-scaled noise segment so that clean-to-noise power hits ``snr_db``.

    The clean component is never rescaled. With ``offset=None`` a uniform
    random offset into the looped noise is drawn from ``rng``; silent
    segments trigger a redraw, up to ``max_retries`` times.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) == 0:
        raise SignalError("empty noise signal")
    p_clean = power(clean)
    if p_clean <= 0.0:
        raise SignalError("clean signal has zero power")
    fixed = offset is not None
    if not fixed and rng is None:
        raise SignalError("need an rng or an explicit offset")
    for _ in range(1 if fixed else max_retries):
        off = int(offset) if fixed else int(rng.integers(len(noise)))
        seg = noise_segment(noise, len(clean), off)
        p_seg = power(seg)
        if p_seg > 0.0:
            gain = np.sqrt(p_clean / (p_seg * 10.0 ** (snr_db / 10.0)))
            scaled = gain * seg
            return Mixture(clean + scaled, scaled, off, float(gain), float(snr_db))
    raise SignalError("noise segment has zero power" + ("" if fixed else f" after {max_retries} draws"))


# ---------------------------------------------------------------------------
# differentiable counterparts
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _dft_matrices(n_fft: int, n_bins: int, window_kind: str, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Windowed forward DFT as real matrices: frame @ (cos, -sin)."""
    n = np.arange(n_fft)[:, None]
    k = np.arange(n_bins)[None, :]
    ang = 2.0 * np.pi * ((n * k) % n_fft) / n_fft
    w = window(window_kind, n_fft)[:, None]
    return (w * np.cos(ang)).astype(dtype), (-w * np.sin(ang)).astype(dtype)


@lru_cache(maxsize=16)
def _idft_matrices(n_fft: int, window_kind: str, dtype) -> tuple[np.ndarray, np.ndarray]:
    """One-sided inverse DFT followed by the synthesis window, as real matrices."""
    n_bins = n_fft // 2 + 1
    k = np.arange(n_bins)[:, None]
    n = np.arange(n_fft)[None, :]
    c = np.full((n_bins, 1), 2.0)
    c[0] = 1.0
    c[-1] = 1.0
    ang = 2.0 * np.pi * ((k * n) % n_fft) / n_fft
    w = window(window_kind, n_fft)[None, :]
    return (c * np.cos(ang) / n_fft * w).astype(dtype), (-c * np.sin(ang) / n_fft * w).astype(dtype)


def istft_graph(mag: Tensor, phase: np.ndarray, geometry: StftGeometry, length: int) -> Tensor:
    """iSTFT of ``mag * exp(i * phase)`` built from tensor ops.

    ``mag`` is [B, F, T] and ``phase`` a matching array; returns [B, length].
    """
    if mag.shape != phase.shape:
        raise T.ShapeError(f"magnitude {mag.shape} and phase {phase.shape} differ")
    n_fft, hop = geometry.n_fft, geometry.hop
    if mag.shape[-2] != geometry.n_bins:
        raise T.ShapeError(f"expected {geometry.n_bins} bins, got {mag.shape[-2]}")
    dt = mag.dtype
    real = mag * np.cos(phase).astype(dt)
    imag = mag * np.sin(phase).astype(dt)
    a_re, a_im = _idft_matrices(n_fft, geometry.window, dt.type)
    frames = T.matmul(T.transpose(real, (0, 2, 1)), a_re) + T.matmul(T.transpose(imag, (0, 2, 1)), a_im)
    pad = n_fft // 2
    ola = T.scatter_add(frames, _ola_index(length, n_fft, hop), length + 2 * pad)
    den = _ola_denominator(length, n_fft, hop, geometry.window).astype(dt)
    return T.take(ola, np.arange(pad, pad + length), axis=-1) / den


def lowband_logmag_graph(x: Tensor, spec: LowbandSpec = LowbandSpec(), eps: float = LOG_EPS) -> Tensor:
    """Differentiable :func:`lowband_logmag` for a [B, L] waveform tensor -> [B, F, frames]."""
    g = spec.geometry
    _check_geometry(g.n_fft, g.hop)
    if x.shape[-1] < max(g.hop, 2):
        raise SignalError(f"waveform of {x.shape[-1]} samples is shorter than one hop ({g.hop})")
    frames = T.take(x, frame_index(x.shape[-1], g.n_fft, g.hop), axis=-1)  # B, T, n_fft
    c, s = _dft_matrices(g.n_fft, spec.n_bins, g.window, x.dtype.type)
    re = T.matmul(frames, c)
    im = T.matmul(frames, s)
    logmag = T.log(re * re + im * im, eps * eps) * 0.5  # log(max(|X|, eps))
    logmag = T.transpose(logmag, (0, 2, 1))
    return T.take(logmag, normalize_index(logmag.shape[-1], spec.n_frames), axis=-1)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def read_wav(path) -> np.ndarray:
    """Read 16-bit PCM mono 16 kHz audio as float64 in [-1, 1)."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise SignalError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise SignalError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        if f.getframerate() != SAMPLE_RATE:
            raise SignalError(f"{path}: sample rate {f.getframerate()} Hz, expected {SAMPLE_RATE}")
        raw = f.readframes(f.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, x: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(x) * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(pcm.tobytes())
