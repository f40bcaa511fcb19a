import numpy as np
import pytest

from dkdssd import data, dsp
from dkdssd.data import DataError, ManifestEntry, ToySpec


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    entries, report = data.generate_toy_corpus(root, ToySpec(seconds=0.5), {"train": 12, "dev": 4, "eval": 10})
    data.generate_noise_pack(root / "noise", seconds=2.0)
    return root, entries, report, data.NoiseBank(root / "noise")


def test_manifest_roundtrip(tmp_path, corpus):
    root, entries, _, bank = corpus
    frozen = data.build_noisy_split(entries, bank, "eval_seen", seed=3)
    data.write_manifest(tmp_path / "m.tsv", frozen)
    assert data.read_manifest(tmp_path / "m.tsv") == frozen
    assert (tmp_path / "m.tsv").read_text().splitlines()[0] == "utt_id\tpath\tlabel\tsplit\tnoise_id\tsnr_db\toffset"


@pytest.mark.parametrize("body,msg", [
    ("bad\theader\n", "header"),
    ("utt_id\tpath\tlabel\tsplit\tnoise_id\tsnr_db\toffset\na\tx.wav\thuman\ttrain\t-\t-\t-\n", "label"),
    ("utt_id\tpath\tlabel\tsplit\tnoise_id\tsnr_db\toffset\na\tx.wav\tspoof\ttrain\t-\t-\t-\na\ty.wav\tspoof\ttrain\t-\t-\t-\n", "duplicate"),
])
def test_manifest_errors(tmp_path, body, msg):
    (tmp_path / "m.tsv").write_text(body)
    with pytest.raises(DataError, match=msg):
        data.read_manifest(tmp_path / "m.tsv")


def test_eval_protocols_freeze_conditions(corpus):
    _, entries, _, bank = corpus
    seen = data.build_noisy_split(entries, bank, "eval_seen", seed=3)
    unseen = data.build_noisy_split(entries, bank, "eval_unseen", seed=3)
    assert len(seen) == len(unseen) == sum(e.split == "eval" for e in entries)
    assert {e.snr_db for e in seen + unseen} <= set(data.EVAL_SNRS)
    assert all(e.noise_id.startswith("seen/") for e in seen)
    assert all(e.noise_id.startswith("unseen/") for e in unseen)
    assert data.build_noisy_split(entries, bank, "eval_unseen", seed=3) == unseen
    assert data.build_noisy_split(entries, bank, "eval_unseen", seed=4) != unseen
    assert all(not e.frozen for e in data.build_noisy_split(entries, bank, "train", seed=3))


def test_seen_unseen_disjoint(corpus):
    _, _, _, bank = corpus
    seen = {bank.root / f"{k}.wav" for k in bank.ids("seen")}
    unseen = {bank.root / f"{k}.wav" for k in bank.ids("unseen")}
    assert seen and unseen and not seen & unseen
    assert sorted(bank.ids("unseen")) == ["unseen/pink", "unseen/white"]


def test_empty_noise_dir_rejected(tmp_path):
    (tmp_path / "seen").mkdir()
    with pytest.raises(DataError):
        data.NoiseBank(tmp_path)


def test_train_snr_draw_statistics():
    rng = np.random.default_rng(17)
    snrs = [data.draw_train_condition(rng, ["seen/a", "seen/b"])[1] for _ in range(1000)]
    assert min(snrs) >= 0 and max(snrs) <= 20
    assert abs(np.mean(snrs) - 10.0) <= 0.6


def test_toy_band_energy(corpus):
    root, entries, report, _ = corpus
    assert report["separability_accuracy"] >= 0.95
    for e in entries:
        x = dsp.read_wav(root / e.path)
        frac = data.band_energy_fraction(x, 3500.0)
        if e.label == "spoof":
            assert frac < 0.01
        else:
            assert frac >= 0.10


def test_toy_balance_and_determinism(tmp_path, corpus):
    root, entries, _, _ = corpus
    for split in data.SPLITS:
        labels = [e.label for e in entries if e.split == split]
        assert abs(labels.count("bonafide") - labels.count("spoof")) <= 1
    again, _ = data.generate_toy_corpus(tmp_path, ToySpec(seconds=0.5), {"train": 12, "dev": 4, "eval": 10})
    assert again == entries
    for e in entries[:6]:
        assert (tmp_path / e.path).read_bytes() == (root / e.path).read_bytes()


def test_toy_rejects_small_counts_and_inseparable_kind(tmp_path):
    with pytest.raises(DataError):
        data.generate_toy_corpus(tmp_path, ToySpec(seconds=0.25), {"train": 2, "dev": 4, "eval": 4})
    with pytest.raises(DataError, match="separable"):
        data.generate_toy_corpus(tmp_path / "eh", ToySpec(seconds=0.25, spoof_kind="even-harmonic"),
                                 {"train": 40, "dev": 4, "eval": 4})


def test_eval_batch_reload_identical_and_snr_exact(corpus):
    root, entries, _, bank = corpus
    frozen = data.build_noisy_split(entries, bank, "eval_seen", seed=3)
    a = data.load_batch(frozen, root, bank, seed=1, epoch=0, segment_samples=8000)
    b = data.load_batch(frozen, root, bank, seed=2, epoch=5, segment_samples=8000)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    for i, e in enumerate(frozen):
        assert dsp.snr_db(a.clean[i], a.noisy[i] - a.clean[i]) == pytest.approx(e.snr_db, abs=1e-6)


def test_train_batches_redraw_each_epoch(corpus):
    root, entries, _, bank = corpus
    train = data.build_noisy_split(entries, bank, "train", seed=3)
    a = data.load_batch(train, root, bank, seed=1, epoch=0, segment_samples=8000)
    b = data.load_batch(train, root, bank, seed=1, epoch=1, segment_samples=8000)
    np.testing.assert_array_equal(a.clean, b.clean)
    assert a.snrs != b.snrs
    for i in range(len(a)):
        assert dsp.snr_db(a.clean[i], a.noisy[i] - a.clean[i]) == pytest.approx(a.snrs[i], abs=1e-6)


def test_mct1_half_clean_and_mct2_all_noisy(corpus):
    root, entries, _, bank = corpus
    train = [e for e in entries if e.split == "train"]
    for epoch in range(3):
        b = data.load_batch(train, root, bank, seed=1, epoch=epoch, segment_samples=8000, input_mode="mct1")
        n_clean = sum(np.array_equal(c, n) for c, n in zip(b.clean, b.noisy))
        assert abs(n_clean - len(train) / 2) <= 1
    b = data.load_batch(train, root, bank, seed=1, segment_samples=8000, input_mode="noisy")
    assert not any(np.array_equal(c, n) for c, n in zip(b.clean, b.noisy))


def test_loader_independent_of_worker_count(corpus):
    root, entries, _, bank = corpus
    train = [e for e in entries if e.split == "train"]
    runs = []
    for workers in (1, 3):
        loader = data.BatchLoader(train, root, bank, 7, 8000, workers=workers, prefetch=2)
        runs.append([(b.utt_ids, b.noisy) for b in loader.batches(5, epoch=1, shuffle=True)])
    assert [r[0] for r in runs[0]] == [r[0] for r in runs[1]]
    for (_, x), (_, y) in zip(*runs):
        np.testing.assert_array_equal(x, y)


def test_unreadable_files_skip_then_fail(tmp_path, corpus):
    root, entries, _, bank = corpus
    train = [e for e in entries if e.split == "train"] * 10
    train = [ManifestEntry(f"{e.utt_id}_{i}", str(root / e.path), e.label, e.split) for i, e in enumerate(train)]
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav")
    one_bad = train[:-1] + [ManifestEntry("bad0", str(bad), "spoof", "train")]
    loader = data.BatchLoader(one_bad, tmp_path, bank, 1, 4000, workers=1)
    assert sum(len(b) for b in loader.batches(16)) == len(train) - 1
    assert loader.skipped == ["bad0"]
    many_bad = train[:-3] + [ManifestEntry(f"bad{i}", str(bad), "spoof", "train") for i in range(3)]
    with pytest.raises(DataError, match="1%"):
        list(data.BatchLoader(many_bad, tmp_path, bank, 1, 4000, workers=1).batches(16))


def test_fit_length():
    x = np.arange(5.0)
    np.testing.assert_array_equal(data.fit_length(x, 12), [0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1])
    np.testing.assert_array_equal(data.fit_length(x, 3), [0, 1, 2])
