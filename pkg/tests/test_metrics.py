from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkdssd.metrics import (TrialScore, breakdown_report, compute_eer, read_scores, report_tsv, write_scores)


def brute_force_eer(scores, labels):
    """O(n^2) threshold enumeration with the same crossing and interpolation rule."""
    bona = [s for s, l in zip(scores, labels) if l == "bonafide"]
    spoof = [s for s, l in zip(scores, labels) if l == "spoof"]
    thresholds = sorted(set(scores)) + [float("inf")]
    points = []
    for t in thresholds:
        frr = sum(1 for s in bona if s < t) / len(bona)
        far = sum(1 for s in spoof if s >= t) / len(spoof)
        points.append((t, frr, far))
    for i, (t, frr, far) in enumerate(points):
        if frr >= far:
            break
    if frr == far or i == 0:
        return frr
    _, frr0, far0 = points[i - 1]
    lam = (far0 - frr0) / ((frr - frr0) - (far - far0))
    return frr0 + lam * (frr - frr0)


def exact_eer(scores, labels):
    """Same rule in exact rational arithmetic."""
    bona = [s for s, l in zip(scores, labels) if l == "bonafide"]
    spoof = [s for s, l in zip(scores, labels) if l == "spoof"]
    pts = []
    for t in sorted(set(scores)) + [float("inf")]:
        pts.append((Fraction(sum(s < t for s in bona), len(bona)), Fraction(sum(s >= t for s in spoof), len(spoof))))
    i = next(k for k, (r, a) in enumerate(pts) if r >= a)
    (r0, a0), (r1, a1) = pts[i - 1], pts[i]
    if r1 == a1:
        return r1
    lam = (a0 - r0) / ((r1 - r0) - (a1 - a0))
    return r0 + lam * (r1 - r0)


def test_eer_exhaustive_oracle_200_seeds():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 51))
        labels = ["bonafide", "spoof"] * (n // 2) + (["spoof"] if n % 2 else [])
        labels = list(rng.permutation(labels))
        scores = list(np.round(rng.normal(size=n) + (np.array(labels) == "bonafide"), int(rng.integers(0, 3))))
        eer, _ = compute_eer(scores, labels)
        assert eer == brute_force_eer(scores, labels), seed
        assert abs(eer - float(exact_eer(scores, labels))) < 1e-12


def test_eer_examples():
    assert compute_eer([3, 4, 1, 2], ["bonafide", "bonafide", "spoof", "spoof"])[0] == 0.0
    eer, thr = compute_eer([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], ["bonafide"] * 3 + ["spoof"] * 3)
    assert eer == pytest.approx(1 / 3, abs=1e-15)
    assert 0.3 <= thr <= 0.7


def test_eer_rejects_single_class():
    with pytest.raises(ValueError):
        compute_eer([0.1, 0.2], ["spoof", "spoof"])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 60))
def test_eer_invariances(seed, n):
    rng = np.random.default_rng(seed)
    labels = np.array(["bonafide", "spoof"] * n)[: max(n, 2)]
    scores = rng.normal(size=labels.size) + (labels == "bonafide")
    eer, _ = compute_eer(scores, labels)
    assert 0.0 <= eer <= 1.0
    flipped = np.where(labels == "bonafide", "spoof", "bonafide")
    assert compute_eer(-scores, flipped)[0] == pytest.approx(eer, abs=1e-12)
    assert compute_eer(np.exp(scores / 3) * 5 + 1, labels)[0] == pytest.approx(eer, abs=1e-12)
    assert compute_eer(np.concatenate([scores, scores]), np.concatenate([labels, labels]))[0] == pytest.approx(eer, abs=1e-12)


def _trials(rng, n, noise="a", snr=0.0, shift=1.0):
    labels = ["bonafide", "spoof"] * (n // 2)
    return [TrialScore(f"{noise}{snr}_{i}", float(rng.normal() + shift * (l == "bonafide")), l, snr, noise)
            for i, l in enumerate(labels)]


def test_breakdown_single_condition_equals_pooled(rng):
    trials = _trials(rng, 40)
    rep = breakdown_report(trials)
    assert rep.per_snr[0.0] == rep.pooled == rep.per_cell[("a", 0.0)]


def test_breakdown_perfect_conditions_all_zero(rng):
    trials = _trials(rng, 20, "a", 0.0, 100.0) + _trials(rng, 20, "b", 5.0, 100.0)
    rep = breakdown_report(trials)
    assert rep.pooled == 0 and set(rep.per_snr.values()) == {0.0} and set(rep.per_cell.values()) == {0.0}


def test_breakdown_pooled_is_union_not_average(rng):
    trials = []
    for k, snr in enumerate((0.0, 5.0, 10.0, 15.0, 20.0)):
        trials += _trials(rng, 40, "a" if k % 2 else "b", snr, shift=0.5 * k)
    rep = breakdown_report(trials)
    assert rep.pooled == compute_eer([t.score for t in trials], [t.label for t in trials])[0]
    assert len(trials) == 200


def test_single_class_cell_is_undefined(rng):
    trials = _trials(rng, 20) + [TrialScore("x", 0.3, "spoof", 20.0, "a")]
    rep = breakdown_report(trials)
    assert rep.per_snr[20.0] is None and rep.per_cell[("a", 20.0)] is None
    assert "NA" in report_tsv(rep)


def test_report_layout(rng):
    trials = []
    for snr in (0.0, 5.0, 10.0, 15.0, 20.0):
        trials += _trials(rng, 10, "seen/hum", snr)
    lines = report_tsv(breakdown_report(trials)).splitlines()
    assert lines[0].split("\t") == ["condition", "0dB", "5dB", "10dB", "15dB", "20dB", "AVG", "n"]
    assert lines[1].startswith("seen/hum\t") and lines[-1].startswith("ALL\t")


def test_score_file_roundtrip(tmp_path, rng):
    trials = _trials(rng, 10)
    write_scores(tmp_path / "s.txt", trials)
    back = read_scores(tmp_path / "s.txt", {t.utt_id: (t.noise_id, t.snr_db) for t in trials})
    assert back == trials
    (tmp_path / "bad.txt").write_text("u1 0.3 spoof\n")
    with pytest.raises(ValueError):
        read_scores(tmp_path / "bad.txt")


def test_trial_rejects_nan():
    with pytest.raises(ValueError):
        TrialScore("u", float("nan"), "spoof")
