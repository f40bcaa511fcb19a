import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkdssd import dsp
from dkdssd import tensor as T
from dkdssd.dsp import LowbandSpec, SignalError, StftGeometry


def naive_stft(x, n_fft, hop, kind):
    """Direct O(N^2) DFT of each reflect-padded, windowed frame."""
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    w = dsp.window(kind, n_fft)
    n_frames = 1 + len(x) // hop
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    return np.stack([basis @ (xp[t * hop: t * hop + n_fft] * w) for t in range(n_frames)], axis=1)


def interior_error_db(x, y, margin):
    a, b = x[margin:-margin], y[margin:-margin]
    return 10 * np.log10(np.sum((a - b) ** 2) / np.sum(a**2))


@pytest.mark.parametrize("n_fft,hop,kind", [(64, 16, "hann"), (320, 160, "hann"), (256, 100, "blackman")])
def test_stft_matches_naive_dft(rng, n_fft, hop, kind):
    x = rng.standard_normal(1000)
    np.testing.assert_allclose(dsp.stft(x, n_fft, hop, kind), naive_stft(x, n_fft, hop, kind), atol=1e-9, rtol=0)


def test_stft_dc_and_bin_centered_sine():
    spec = dsp.stft(np.ones(2048), 256, 128, "hann")
    mag = np.abs(spec)[:, 2:-2]
    assert np.all(mag[0] > 100 * mag[2:].max())
    k, n = 10, 256
    sine = np.cos(2 * np.pi * k * np.arange(4096) / n)
    mag = np.abs(dsp.stft(sine, n, n, "boxcar"))[:, 1:-1]
    assert np.all(np.argmax(mag, axis=0) == k)
    assert mag[k].min() > 1e6 * np.delete(mag, k, axis=0).max()


def test_stft_rejects_short_signal():
    with pytest.raises(SignalError):
        dsp.stft(np.ones(100), 320, 160)
    with pytest.raises(SignalError):
        dsp.stft(np.array([0.0, np.nan, 1.0] * 100), 64, 16)


def test_parseval_per_frame(rng):
    x = rng.standard_normal(2000)
    n_fft, hop = 256, 128
    spec = dsp.stft(x, n_fft, hop, "hann")
    frames = np.pad(x, n_fft // 2, mode="reflect")[dsp._ola_index(len(x), n_fft, hop)] * dsp.window("hann", n_fft)
    full = np.concatenate([spec, np.conj(spec[-2:0:-1])], axis=0)
    np.testing.assert_allclose(np.sum(frames**2, axis=1), np.sum(np.abs(full) ** 2, axis=0) / n_fft, rtol=1e-6)


@pytest.mark.parametrize("geom", [dsp.CLASSIFIER_GEOMETRY, dsp.ENHANCER_GEOMETRY])
def test_istft_roundtrip_below_minus_50_db(rng, geom):
    x = rng.standard_normal(16000)
    y = dsp.istft(dsp.stft(x, geom.n_fft, geom.hop, geom.window), geom.hop, geom.window, len(x))
    assert interior_error_db(x, y, geom.n_fft) < -50


def test_istft_of_silence_is_silence():
    y = dsp.istft(dsp.stft(np.zeros(3200), 320, 160, "hann"), 160, "hann", 3200)
    assert np.all(y == 0)


def test_istft_rejects_vanishing_normaliser():
    # periodic hann is zero at its first sample; hop == n_fft leaves those samples unweighted
    spec = dsp.stft(np.ones(1024), 64, 64, "hann")
    with pytest.raises(SignalError):
        dsp.istft(spec, 64, "hann", 1024)


def test_mix_trivial_gains():
    t = np.arange(16000)
    clean = np.sin(2 * np.pi * 200 * t / 16000)
    clean *= 0.1 / dsp.rms(clean)
    noise = np.random.default_rng(0).standard_normal(16000)
    noise *= 0.1 / dsp.rms(noise)
    assert dsp.mix_at_snr(clean, noise, 0.0, offset=0).gain == pytest.approx(1.0, abs=1e-12)
    assert dsp.mix_at_snr(clean, noise, 20.0, offset=0).gain == pytest.approx(0.1, abs=1e-12)


def test_mix_hits_target_snr_on_100_cases():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        clean = rng.standard_normal(int(rng.integers(200, 4000))) * rng.uniform(0.01, 1)
        noise = rng.standard_normal(int(rng.integers(100, 6000))) * rng.uniform(0.01, 1)
        target = rng.uniform(-5, 25)
        mix = dsp.mix_at_snr(clean, noise, target, rng=rng)
        np.testing.assert_allclose(mix.noisy - mix.noise, clean, rtol=0, atol=1e-15)
        worst = max(worst, abs(dsp.snr_db(clean, mix.noisy - clean) - target))
    assert worst < 1e-6


def test_mix_snr_7_3_db(rng):
    clean, noise = rng.standard_normal(8000), rng.standard_normal(3000)
    mix = dsp.mix_at_snr(clean, noise, 7.3, rng=rng)
    assert 10 * np.log10(np.mean(clean**2) / np.mean(mix.noise**2)) == pytest.approx(7.3, abs=1e-6)


def test_mix_rejects_silent_noise(rng):
    with pytest.raises(SignalError):
        dsp.mix_at_snr(rng.standard_normal(100), np.zeros(50), 5.0, rng=rng)
    noise = np.zeros(1000)
    noise[10] = 1.0  # a short burst: most offsets still see energy thanks to looping
    assert dsp.mix_at_snr(rng.standard_normal(100), noise, 5.0, offset=0).gain > 0


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-3, 1e3), snr=st.floats(-10, 30), seed=st.integers(0, 10_000))
def test_mix_snr_invariant_to_clean_scale(scale, snr, seed):
    rng = np.random.default_rng(seed)
    clean, noise = rng.standard_normal(500), rng.standard_normal(700)
    a = dsp.mix_at_snr(clean, noise, snr, offset=13)
    b = dsp.mix_at_snr(scale * clean, noise, snr, offset=13)
    np.testing.assert_allclose(b.noisy, scale * a.noisy, rtol=1e-9, atol=1e-12)
    assert dsp.snr_db(scale * clean, b.noise) == pytest.approx(snr, abs=1e-6)


def test_lowband_bin_count():
    assert dsp.lowband_bins(1728) == 433
    assert 432 * 16000 / 1728 == 4000


def test_lowband_logmag_shape_and_silence():
    feat = dsp.lowband_logmag(np.zeros(3 * 16000))
    assert feat.shape == (433, 600)
    assert np.all(feat == np.log(1e-8))


def test_three_second_utterance_is_tiled_to_600():
    n = dsp.n_frames_for(48000, 1728, 130)
    assert n == 1 + 48000 // 130 == 370
    x = np.random.default_rng(0).standard_normal(48000)
    feat = dsp.lowband_logmag(x)
    np.testing.assert_array_equal(feat[:, 370:600], feat[:, : 600 - 370])


@settings(max_examples=10, deadline=None)
@given(length=st.integers(130, 100_000))
def test_lowband_shape_for_any_length(length):
    assert dsp.lowband_logmag(np.ones(length) * 0.01).shape == (433, 600)


def test_normalize_frames_rules():
    g = np.arange(600)[None]
    np.testing.assert_array_equal(dsp.normalize_frames(g), g)
    np.testing.assert_array_equal(dsp.normalize_frames(np.arange(601)[None])[0], np.arange(600))
    out = dsp.normalize_frames(np.arange(250)[None])[0]
    np.testing.assert_array_equal(out, np.concatenate([np.arange(250), np.arange(250), np.arange(100)]))


def test_graph_versions_match_numpy(rng):
    geom = dsp.ENHANCER_GEOMETRY
    x = rng.standard_normal((2, 3200))
    spec = dsp.stft(x, geom.n_fft, geom.hop, geom.window)
    mag, ph = dsp.magphase(spec)
    y = dsp.istft_graph(T.Tensor(mag), ph, geom, 3200)
    np.testing.assert_allclose(y.data, dsp.istft(spec, geom.hop, geom.window, 3200), atol=1e-12)
    lb = LowbandSpec(StftGeometry(256, 100, "blackman"), 4000.0, 40)
    np.testing.assert_allclose(dsp.lowband_logmag_graph(T.Tensor(x), lb).data, dsp.lowband_logmag(x, lb), atol=1e-9)


def test_wav_roundtrip(tmp_path, rng):
    x = np.clip(rng.standard_normal(1600) * 0.2, -1, 1)
    dsp.write_wav(tmp_path / "a.wav", x)
    y = dsp.read_wav(tmp_path / "a.wav")
    assert np.max(np.abs(x - y)) < 1 / 32767


def test_wav_rejects_wrong_rate(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "b.wav", 8000, np.zeros(800, dtype=np.int16))
    with pytest.raises(SignalError):
        dsp.read_wav(tmp_path / "b.wav")
