"""Griffin-Lim sine-reconstruction SNR for several inits and frequencies.

The reference is the input sine refitted in amplitude and phase to the
reconstruction (a global phase offset is invisible to a magnitude
spectrogram).  Results go to scripts/results/gl_snr.json.
"""
import json
import os

import numpy as np

from ksvs import dsp
from ksvs.io_utils import atomic_write_text

HERE = os.path.dirname(os.path.abspath(__file__))


def matched_snr(y, freq, sr=dsp.SR, trim=dsp.N_FFT):
    t = np.arange(len(y)) / sr
    basis = np.stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)], 1)[trim:-trim]
    y = y[trim:-trim]
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    ref = basis @ coef
    return 10 * np.log10(np.sum(ref ** 2) / np.sum((y - ref) ** 2))


def sine_snr(freq, init="peak", iters=60, seconds=1.0, seed=0):
    t = np.arange(int(seconds * dsp.SR)) / dsp.SR
    x = 0.5 * np.sin(2 * np.pi * freq * t + 0.3)
    mag = np.abs(dsp.stft(dsp.Waveform(x)))
    y = dsp.griffin_lim(mag, iters=iters, length=len(x), init=init, rng_seed=seed).samples.astype(np.float64)
    return matched_snr(y, freq)


if __name__ == "__main__":
    freqs = [110.0, 220.0, 440.0, 523.25, 1000.0, 2500.0]
    res = {init: {str(f): round(sine_snr(f, init), 2) for f in freqs} for init in ("peak", "zero", "random")}
    for init, row in res.items():
        print(init, row)
    atomic_write_text(os.path.join(HERE, "results", "gl_snr.json"), json.dumps(res, indent=1))
