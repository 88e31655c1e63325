"""Score -> waveform inference: AR mel synthesis, SR, post-emphasis, Griffin-Lim."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import dsp
from .model import Generator
from .score import Score, align_frames


@dataclass
class SynthesisResult:
    wave: Optional[dsp.Waveform]  # None when gl_iters == 0
    mel: np.ndarray      # (80, L)
    mask: np.ndarray     # (80, L)
    dm: np.ndarray       # (80, L)
    linear: np.ndarray   # (513, 4L), normalised domain
    T: np.ndarray
    P: np.ndarray


@torch.no_grad()
def synthesize(gen: Generator, score: Score, gl_iters: int = 60,
               n_frames: Optional[int] = None) -> SynthesisResult:
    L = n_frames if n_frames is not None else score.n_frames()
    aligned = align_frames(score, total_frames=L)
    T = torch.from_numpy(aligned.T)[None]
    P = torch.from_numpy(aligned.P)[None]
    gen.eval()
    ms = gen.melsyn.synth_autoregressive(T, P)
    sr = gen.sr(ms.mel, ms.enc.K, ms.enc.V, ms.enc.E_P)
    linear = sr.spec[0].double().numpy()
    mag = dsp.post_emphasize(linear)
    wave = None
    if gl_iters > 0:
        # deterministic phase initialisation keeps repeated runs identical
        audio = dsp.griffin_lim(mag, iters=gl_iters, length=(4 * L - 1) * dsp.HOP).samples.astype(np.float64)
        peak = np.max(np.abs(audio)) if audio.size else 0.0
        if peak > 0:
            audio = audio * (0.9 / peak)  # the normalised domain has no absolute level
        wave = dsp.Waveform(audio, score.sample_rate)
    return SynthesisResult(wave,
                           ms.mel[0].numpy(), ms.mask[0].numpy(), ms.dm[0].numpy(),
                           linear, aligned.T, aligned.P)
