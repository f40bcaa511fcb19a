"""Equal error rate and per-condition reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classifier import LABELS, label_index

SNR_COLUMNS = (0.0, 5.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class TrialScore:
    utt_id: str
    score: float  # higher = more bonafide
    label: str
    snr_db: float | None = None
    noise_id: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"{self.utt_id}: non-finite score {self.score}")
        label_index(self.label)


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray([label_index(l) for l in labels])
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores for {labels.size} labels")
    bona, spoof = scores[labels == 0], scores[labels == 1]
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("EER needs at least one bonafide and one spoof trial")
    return bona, spoof


def compute_eer(scores, labels) -> tuple[float, float]:
    """EER and its threshold.

    Thresholds are the distinct scores plus +inf. At threshold ``t`` a trial
    is accepted as bonafide when ``score >= t``, so FRR(t) is the fraction of
    bonafide scores below ``t`` and FAR(t) the fraction of spoof scores at or
    above it. The EER is read off where the two curves cross, interpolating
    linearly between neighbouring operating points.
    """
    bona, spoof = _split(scores, labels)
    thr = np.append(np.unique(np.concatenate([bona, spoof])), np.inf)
    frr = np.searchsorted(np.sort(bona), thr, side="left") / bona.size
    far = (spoof.size - np.searchsorted(np.sort(spoof), thr, side="left")) / spoof.size
    i = int(np.argmax(frr >= far))
    if frr[i] == far[i] or i == 0:
        return float(frr[i]), float(thr[i])
    d0 = far[i - 1] - frr[i - 1]
    lam = d0 / ((frr[i] - frr[i - 1]) - (far[i] - far[i - 1]))
    eer = frr[i - 1] + lam * (frr[i] - frr[i - 1])
    t = thr[i - 1] if not np.isfinite(thr[i]) else thr[i - 1] + lam * (thr[i] - thr[i - 1])
    return float(eer), float(t)


def eer_of(trials: Sequence[TrialScore]) -> float:
    return compute_eer([t.score for t in trials], [t.label for t in trials])[0]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    pooled: float
    per_snr: dict = field(default_factory=dict)  # snr -> eer or None
    per_cell: dict = field(default_factory=dict)  # (noise_id, snr) -> eer or None
    per_noise: dict = field(default_factory=dict)  # noise_id -> eer or None
    counts: dict = field(default_factory=dict)  # key -> trial count
    n_trials: int = 0


def _maybe_eer(trials) -> float | None:
    labels = {t.label for t in trials}
    if len(labels) < 2:
        return None
    return eer_of(trials)


def breakdown_report(trials: Sequence[TrialScore]) -> EvalReport:
    """Pooled EER plus per-SNR, per-noise and per-(noise, SNR) EERs.

    The pooled value is the EER of the union of all trials. Cells holding a
    single class are ``None`` (undefined), not zero.
    """
    trials = list(trials)
    report = EvalReport(pooled=eer_of(trials), n_trials=len(trials))
    groups: dict = {}
    for t in trials:
        if t.snr_db is not None:
            groups.setdefault(("snr", t.snr_db), []).append(t)
        if t.noise_id is not None:
            groups.setdefault(("noise", t.noise_id), []).append(t)
            if t.snr_db is not None:
                groups.setdefault(("cell", t.noise_id, t.snr_db), []).append(t)
    for key, members in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        value = _maybe_eer(members)
        report.counts[key] = len(members)
        if key[0] == "snr":
            report.per_snr[key[1]] = value
        elif key[0] == "noise":
            report.per_noise[key[1]] = value
        else:
            report.per_cell[key[1:]] = value
    return report


def _pct(v) -> str:
    return "NA" if v is None else f"{100.0 * v:.4f}"


def report_tsv(report: EvalReport, snrs: Sequence[float] = SNR_COLUMNS) -> str:
    """EER table in percent: one row per noise type, one column per SNR, then AVG.

    The ``ALL`` row holds per-SNR EERs over every noise type; its AVG cell is
    the pooled EER.
    """
    head = ["condition"] + [f"{s:g}dB" for s in snrs] + ["AVG", "n"]
    lines = ["\t".join(head)]
    for nid in sorted(report.per_noise):
        row = [nid] + [_pct(report.per_cell.get((nid, s))) for s in snrs]
        row += [_pct(report.per_noise[nid]), str(report.counts[("noise", nid)])]
        lines.append("\t".join(row))
    row = ["ALL"] + [_pct(report.per_snr.get(s)) for s in snrs] + [_pct(report.pooled), str(report.n_trials)]
    lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def write_report(path, report: EvalReport) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(report_tsv(report))


# ---------------------------------------------------------------------------
# score files
# ---------------------------------------------------------------------------

def write_scores(path, trials: Iterable[TrialScore]) -> None:
    """One ``utt_id<TAB>score<TAB>label`` line per trial."""
    with open(path, "w") as f:
        for t in trials:
            f.write(f"{t.utt_id}\t{t.score!r}\t{t.label}\n")


def read_scores(path, conditions: dict | None = None) -> list[TrialScore]:
    """Parse a score file; ``conditions`` maps utt_id to (noise_id, snr_db)."""
    conditions = conditions or {}
    trials = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in LABELS:
                raise ValueError(f"{path}:{lineno}: expected 'utt_id<TAB>score<TAB>label'")
            nid, snr = conditions.get(parts[0], (None, None))
            trials.append(TrialScore(parts[0], float(parts[1]), parts[2], snr, nid))
    return trials
