# coding: utf-8

# # From waveform to classifier features
#
# A toy utterance is a stack of harmonics with a slow pitch wobble. Spoofed
# utterances in the toy corpus drop everything above 3.5 kHz, so the two
# classes differ only in the top of the 0-4 kHz band the classifier sees.

import numpy as np

from dkdssd import data, dsp

rng = np.random.default_rng(0)
spec = data.ToySpec(seconds=1.0)
bonafide = data.toy_utterance(spec, False, rng)
spoof = data.toy_utterance(spec, True, rng)
print("samples:", bonafide.size, "rms:", round(dsp.rms(bonafide), 4))

# Fraction of energy above the cutoff, the statistic the corpus generator
# checks before writing anything to disk.

for name, x in (("bonafide", bonafide), ("spoof", spoof)):
    print(f"{name:9s} energy above 3.5 kHz: {data.band_energy_fraction(x, 3500.0):.4f}")


# ## STFT and its inverse
#
# Frames are reflect-padded by n_fft/2, so a signal of L samples gives
# 1 + L // hop frames. The inverse uses weighted overlap-add.

g = dsp.ENHANCER_GEOMETRY
X = dsp.stft(bonafide, g.n_fft, g.hop, g.window)
print("enhancer STFT shape:", X.shape)
y = dsp.istft(X, g.hop, g.window, len(bonafide))
err = np.sum((y - bonafide) ** 2) / np.sum(bonafide ** 2)
print("round trip error (dB):", round(10 * np.log10(err), 1))


# ## Mixing at a target SNR
#
# The noise is scaled, never the speech, so the clean reference stays intact.

noise = rng.standard_normal(8000)
mix = dsp.mix_at_snr(bonafide, noise, 5.0, rng=rng)
print("requested 5 dB, measured", round(dsp.snr_db(bonafide, mix.noisy - bonafide), 9), "dB")


# ## Low-band log-magnitude
#
# The full-size classifier grid is 433 bins (0-4 kHz of a 1728-point FFT)
# by 600 frames. Short utterances are tiled along time to fill it.

full = dsp.lowband_logmag(bonafide)
print("classifier input:", full.shape)

toy = dsp.LowbandSpec(dsp.StftGeometry(256, 256, "blackman"), 4000.0, 64)
print("toy-preset input:", dsp.lowband_logmag(bonafide, toy).shape)
