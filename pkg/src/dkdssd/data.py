"""Corpus manifests, noise protocols, the toy corpus and batch loading."""
from __future__ import annotations

import csv
import logging
import wave
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import dsp
from .classifier import LABELS, label_index
from .config import Streams

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "eval")
PROTOCOLS = ("train", "dev", "eval_seen", "eval_unseen", "eval_clean")
EVAL_SNRS = (0.0, 5.0, 10.0, 15.0, 20.0)
TRAIN_SNR_RANGE = (0.0, 20.0)
MANIFEST_HEADER = ("utt_id", "path", "label", "split", "noise_id", "snr_db", "offset")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str
    label: str
    split: str
    noise_id: str | None = None
    snr_db: float | None = None
    offset: int | None = None

    @property
    def frozen(self) -> bool:
        return self.noise_id is not None


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            w.writerow([
                e.utt_id, e.path, e.label, e.split,
                "-" if e.noise_id is None else e.noise_id,
                "-" if e.snr_db is None else repr(float(e.snr_db)),
                "-" if e.offset is None else str(int(e.offset)),
            ])


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise DataError(f"{path}: bad manifest header {rows[0] if rows else None}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_HEADER):
            raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
        utt, p, label, split, nid, snr, off = row
        if label not in LABELS:
            raise DataError(f"{path}:{lineno}: invalid label {label!r}")
        entries.append(ManifestEntry(
            utt, p, label, split,
            None if nid == "-" else nid,
            None if snr == "-" else float(snr),
            None if off == "-" else int(off),
        ))
    ids = [e.utt_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate utt_ids")
    return entries


def resolve(entry: ManifestEntry, root) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(root) / p


# ---------------------------------------------------------------------------
# noise corpora
# ---------------------------------------------------------------------------

class NoiseBank:
    """Noise signals from ``<dir>/seen/*.wav`` and ``<dir>/unseen/*.wav``.

    Ids carry the corpus as a prefix, e.g. ``unseen/white``.
    """

    def __init__(self, noise_dir):
        self.root = Path(noise_dir)
        self.signals: dict[str, np.ndarray] = {}
        for corpus in ("seen", "unseen"):
            for wav in sorted((self.root / corpus).glob("*.wav")):
                self.signals[f"{corpus}/{wav.stem}"] = dsp.read_wav(wav)
        if not self.ids("seen") or not self.ids("unseen"):
            raise DataError(f"{self.root}: need non-empty seen/ and unseen/ noise subdirectories")

    def ids(self, corpus: str) -> list[str]:
        return [k for k in self.signals if k.startswith(corpus + "/")]

    def __getitem__(self, noise_id: str) -> np.ndarray:
        try:
            return self.signals[noise_id]
        except KeyError:
            raise DataError(f"unknown noise id {noise_id!r}") from None


def draw_train_condition(rng: np.random.Generator, noise_ids: Sequence[str]) -> tuple[str, float]:
    """Noise id and SNR for one dynamically mixed training utterance."""
    nid = noise_ids[int(rng.integers(len(noise_ids)))]
    return nid, float(rng.uniform(*TRAIN_SNR_RANGE))


def build_noisy_split(entries: Sequence[ManifestEntry], bank: NoiseBank, protocol: str, seed: int) -> list[ManifestEntry]:
    """Select the split for ``protocol`` and freeze noise conditions where the protocol fixes them.

    Train/dev entries stay unfrozen (conditions are redrawn per epoch). Seen
    and unseen eval entries each get one (noise, SNR, offset) triple with SNR
    from the five-level grid.
    """
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {protocol!r}")
    split = {"train": "train", "dev": "dev"}.get(protocol, "eval")
    chosen = [e for e in entries if e.split == split]
    if protocol in ("train", "dev", "eval_clean"):
        return [replace(e, noise_id=None, snr_db=None, offset=None) for e in chosen]
    corpus = "seen" if protocol == "eval_seen" else "unseen"
    ids = bank.ids(corpus)
    if not ids:
        raise DataError(f"no {corpus} noise available")
    rng = Streams(seed).rng("freeze", protocol)
    out = []
    for e in chosen:
        nid = ids[int(rng.integers(len(ids)))]
        snr = EVAL_SNRS[int(rng.integers(len(EVAL_SNRS)))]
        offset = int(rng.integers(len(bank[nid])))
        out.append(replace(e, noise_id=nid, snr_db=snr, offset=offset))
    return out


# ---------------------------------------------------------------------------
# toy corpus
# ---------------------------------------------------------------------------

@dataclass
class ToySpec:
    """Harmonic-source toy corpus; spoofs carry a deterministic spectral artifact.

    ``band-limit`` drops every harmonic above ``cutoff_hz``; ``even-harmonic``
    attenuates the even harmonics above ``cutoff_hz``.
    """

    f0_range: tuple[float, float] = (100.0, 250.0)
    n_harmonics: int = 80
    max_harmonic_hz: float = 7800.0
    tilt: float = 0.5
    spoof_kind: str = "band-limit"
    cutoff_hz: float = 3500.0
    seconds: float = 1.0
    seed: int = 17


def _envelope(rng, n: int) -> np.ndarray:
    t = np.arange(n) / dsp.SAMPLE_RATE
    rate = rng.uniform(2.5, 4.5)
    phase = rng.uniform(0, 2 * np.pi)
    return 0.35 + 0.65 * np.sin(np.pi * rate * t + phase) ** 2


def toy_utterance(spec: ToySpec, spoof: bool, rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.seconds * dsp.SAMPLE_RATE))
    t = np.arange(n) / dsp.SAMPLE_RATE
    f0_base = rng.uniform(*spec.f0_range)
    f0 = f0_base * (1.0 + 0.04 * np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 2 * np.pi)))
    f0 *= 1.0 + rng.uniform(-0.08, 0.08) * t / spec.seconds
    phase = 2 * np.pi * np.cumsum(f0) / dsp.SAMPLE_RATE
    top = f0.max()
    x = np.zeros(n)
    for k in range(1, spec.n_harmonics + 1):
        if k * top > spec.max_harmonic_hz:
            break
        amp = k ** -spec.tilt * rng.uniform(0.7, 1.3)
        if spoof and spec.spoof_kind == "band-limit" and k * top > spec.cutoff_hz:
            continue
        if spoof and spec.spoof_kind == "even-harmonic" and k % 2 == 0 and k * top > spec.cutoff_hz:
            amp *= 0.05
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    x *= _envelope(rng, n)
    return 0.1 * x / dsp.rms(x)


def band_energy_fraction(x: np.ndarray, lo_hz: float, hi_hz: float = dsp.SAMPLE_RATE / 2) -> float:
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / dsp.SAMPLE_RATE)
    band = (freqs >= lo_hz) & (freqs <= hi_hz)
    return float(spec[band].sum() / spec.sum())


def best_threshold_accuracy(stat: np.ndarray, is_spoof: np.ndarray) -> float:
    """Best accuracy of ``stat < threshold -> spoof`` over all thresholds."""
    order = np.sort(np.unique(stat))
    cands = np.concatenate([[order[0] - 1.0], (order[:-1] + order[1:]) / 2, [order[-1] + 1.0]])
    return max(float(np.mean((stat < c) == is_spoof)) for c in cands)


def separability_statistic(x: np.ndarray) -> float:
    """log10 of the fraction of energy in the 3.5-4 kHz band."""
    return float(np.log10(band_energy_fraction(x, 3500.0, 4000.0) + 1e-12))


def generate_toy_corpus(out_dir, spec: ToySpec = ToySpec(), counts: dict | None = None) -> tuple[list[ManifestEntry], dict]:
    """Write balanced bonafide/spoof WAVs per split plus ``manifest.tsv``.

    Raises :class:`DataError` when the clean classes are not separable by a
    threshold on 3.5-4 kHz band energy with at least 95% accuracy.
    """
    counts = counts or {"train": 400, "dev": 100, "eval": 200}
    out_dir = Path(out_dir)
    streams = Streams(spec.seed)
    entries: list[ManifestEntry] = []
    stats, truth = [], []
    for split in SPLITS:
        n = counts.get(split, 0)
        if n < 4:
            raise DataError(f"need at least 2 utterances per class in split {split!r}, got {n}")
        for i in range(n):
            spoof = i % 2 == 1
            label = LABELS[int(spoof)]
            x = toy_utterance(spec, spoof, streams.rng("toy", split, i))
            rel = Path("wav") / split / f"{split}_{i:05d}.wav"
            dsp.write_wav(out_dir / rel, x)
            entries.append(ManifestEntry(f"{split}_{i:05d}", str(rel), label, split))
            stats.append(separability_statistic(x))
            truth.append(spoof)
    acc = best_threshold_accuracy(np.array(stats), np.array(truth))
    report = {"separability_accuracy": acc, "n_utterances": len(entries)}
    if acc < 0.95:
        raise DataError(f"toy classes not separable: threshold accuracy {acc:.3f} < 0.95")
    write_manifest(out_dir / "manifest.tsv", entries)
    return entries, report


def _pink(rng, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / dsp.SAMPLE_RATE)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


def _chatter(rng, n: int) -> np.ndarray:
    spec = ToySpec(seconds=n / dsp.SAMPLE_RATE)
    x = np.zeros(n)
    for _ in range(6):
        v = toy_utterance(spec, False, rng) * np.sin(np.pi * rng.uniform(1, 3) * np.arange(n) / dsp.SAMPLE_RATE + rng.uniform(0, 6)) ** 2
        x += v
    return x


def _siren(rng, n: int) -> np.ndarray:
    t = np.arange(n) / dsp.SAMPLE_RATE
    f = 1050.0 + 450.0 * np.sin(2 * np.pi * rng.uniform(0.3, 0.6) * t)
    ph = 2 * np.pi * np.cumsum(f) / dsp.SAMPLE_RATE
    return np.sin(ph) + 0.3 * np.sin(2 * ph) + 0.1 * np.sin(3 * ph)


def _hum(rng, n: int) -> np.ndarray:
    t = np.arange(n) / dsp.SAMPLE_RATE
    x = sum(np.sin(2 * np.pi * 50.0 * k * t + rng.uniform(0, 6)) / k for k in range(1, 12))
    rumble = np.convolve(rng.standard_normal(n), np.ones(32) / 32, mode="same")
    return x + 2.0 * rumble


def _clicks(rng, n: int) -> np.ndarray:
    x = np.zeros(n)
    pos = rng.integers(0, n - 64, size=max(1, n // 1600))
    burst = np.exp(-np.arange(64) / 8.0)
    for p in pos:
        x[p : p + 64] += rng.choice([-1.0, 1.0]) * burst * rng.standard_normal(64)
    return x + 0.01 * rng.standard_normal(n)


NOISE_PACK = {
    "seen/chatter": _chatter,
    "seen/hum": _hum,
    "seen/siren": _siren,
    "seen/clicks": _clicks,
    "unseen/white": lambda rng, n: rng.standard_normal(n),
    "unseen/pink": _pink,
}


def generate_noise_pack(out_dir, seed: int = 17, seconds: float = 10.0) -> list[str]:
    """Six synthetic noise files: four seen categories and two unseen."""
    out_dir = Path(out_dir)
    n = int(seconds * dsp.SAMPLE_RATE)
    streams = Streams(seed)
    for nid, make in NOISE_PACK.items():
        x = make(streams.rng("noise", nid), n)
        dsp.write_wav(out_dir / f"{nid}.wav", 0.3 * x / np.max(np.abs(x)))
    return list(NOISE_PACK)


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    utt_ids: list[str]
    clean: np.ndarray  # [B, L]
    noisy: np.ndarray  # [B, L]
    labels: np.ndarray  # [B] class indices
    noise_ids: list[str | None]
    snrs: list[float | None]

    def __len__(self) -> int:
        return len(self.utt_ids)

    def check_paired(self) -> None:
        if self.clean.shape != self.noisy.shape or len(self.labels) != self.clean.shape[0]:
            raise DataError(
                f"unpaired batch: clean {self.clean.shape}, noisy {self.noisy.shape}, {len(self.labels)} labels"
            )


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Truncate, or repeat-concatenate then truncate, to ``n`` samples."""
    return x[np.arange(n) % len(x)]


@lru_cache(maxsize=4096)
def _read_cached(path: str) -> np.ndarray:
    x = dsp.read_wav(path)
    x.setflags(write=False)
    return x


class BatchLoader:
    """Produces paired clean/noisy batches for one split.

    Noise conditions come from the entry's frozen triple when present, else
    from a draw keyed by (seed, epoch, entry position), so results do not
    depend on worker scheduling.
    """

    def __init__(self, entries: Sequence[ManifestEntry], root, bank: NoiseBank | None, seed: int,
                 segment_samples: int, input_mode: str = "noisy", noise_corpus: str = "seen",
                 workers: int = 2, prefetch: int = 4, max_skip_fraction: float = 0.01):
        self.entries = list(entries)
        if not self.entries:
            raise DataError("empty split")
        self.root = Path(root)
        self.bank = bank
        self.streams = Streams(seed)
        self.segment = segment_samples
        self.input_mode = input_mode
        self.noise_ids = bank.ids(noise_corpus) if bank is not None else []
        self.workers = workers
        self.prefetch = prefetch
        self.max_skip_fraction = max_skip_fraction
        self.skipped: list[str] = []

    def _noisy(self, idx: int, clean: np.ndarray, epoch, clean_set: frozenset) -> tuple[np.ndarray, str | None, float | None]:
        e = self.entries[idx]
        if self.input_mode == "clean" or idx in clean_set:
            return clean, None, None
        if e.frozen:
            mix = dsp.mix_at_snr(clean, self.bank[e.noise_id], e.snr_db, offset=e.offset)
            return mix.noisy, e.noise_id, e.snr_db
        if self.bank is None:
            return clean, None, None
        rng = self.streams.rng("mixing", epoch, idx)
        nid, snr = draw_train_condition(rng, self.noise_ids)
        mix = dsp.mix_at_snr(clean, self.bank[nid], snr, rng=rng)
        return mix.noisy, nid, snr

    def clean_positions(self, epoch) -> frozenset:
        """Utterances kept clean this epoch (half of them under ``mct1``)."""
        if self.input_mode != "mct1":
            return frozenset()
        perm = self.streams.rng("mct1", epoch).permutation(len(self.entries))
        return frozenset(int(i) for i in perm[: len(self.entries) // 2])

    def _load(self, positions: Sequence[int], epoch, clean_set: frozenset) -> Batch | None:
        ids, cleans, noisys, labels, nids, snrs = [], [], [], [], [], []
        for i in positions:
            e = self.entries[i]
            try:
                clean = fit_length(_read_cached(str(resolve(e, self.root))), self.segment)
            except (OSError, EOFError, wave.Error, dsp.SignalError) as exc:
                log.warning("skipping %s: %s", e.utt_id, exc)
                self.skipped.append(e.utt_id)
                continue
            noisy, nid, snr = self._noisy(i, clean, epoch, clean_set)
            ids.append(e.utt_id)
            cleans.append(clean)
            noisys.append(noisy)
            labels.append(label_index(e.label))
            nids.append(nid)
            snrs.append(snr)
        if not ids:
            return None
        return Batch(ids, np.stack(cleans), np.stack(noisys), np.array(labels), nids, snrs)

    def order(self, epoch, shuffle: bool) -> np.ndarray:
        if not shuffle:
            return np.arange(len(self.entries))
        return self.streams.rng("shuffle", epoch).permutation(len(self.entries))

    def batches(self, batch_size: int, epoch=0, shuffle: bool = False) -> Iterator[Batch]:
        order = self.order(epoch, shuffle)
        chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
        clean_set = self.clean_positions(epoch)
        self.skipped = []
        if self.workers <= 1:
            results = (self._load(c, epoch, clean_set) for c in chunks)
            yield from self._checked(results)
            return
        with ThreadPoolExecutor(self.workers) as pool:
            pending: deque = deque()
            it = iter(chunks)

            def results():
                for c in it:
                    pending.append(pool.submit(self._load, c, epoch, clean_set))
                    if len(pending) >= self.prefetch:
                        yield pending.popleft().result()
                while pending:
                    yield pending.popleft().result()

            yield from self._checked(results())

    def _checked(self, results) -> Iterator[Batch]:
        for b in results:
            if len(self.skipped) > self.max_skip_fraction * len(self.entries):
                raise DataError(f"{len(self.skipped)} unreadable files exceed 1% of the split: {self.skipped[:5]}")
            if b is not None:
                yield b


def load_batch(entries: Sequence[ManifestEntry], root, bank: NoiseBank | None, seed: int, epoch=0,
               segment_samples: int = 16000, input_mode: str = "noisy") -> Batch:
    """Load ``entries`` as one paired batch (see :class:`BatchLoader`)."""
    loader = BatchLoader(entries, root, bank, seed, segment_samples, input_mode, workers=1)
    b = loader._load(range(len(entries)), epoch, loader.clean_positions(epoch))
    if b is None:
        raise DataError("no readable entries")
    return b
