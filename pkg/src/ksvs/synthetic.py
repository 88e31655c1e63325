"""Synthetic sung-vowel corpus used in place of recorded singing.

Each song is a random melody with Hangul syllables; the audio is additive
harmonic synthesis through a two-formant vowel envelope, with noise bursts
for onset consonants and a low-passed closure for codas.  Note boundaries
sit on the coarse-frame grid so the score is exact ground truth.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from . import hangul
from .dsp import COARSE_HOP, SR, Waveform, midi_to_hz, read_wav, write_wav
from .io_utils import atomic_write_text
from .score import PITCH_MAX, PITCH_MIN, Note, Score, parse_midi_smf0, parse_score_json, write_score_json

# nucleus index -> (F1, F2) in Hz
FORMANTS: Dict[int, Tuple[float, float]] = {
    0: (800.0, 1250.0),   # ㅏ
    4: (600.0, 1000.0),   # ㅓ
    5: (480.0, 1900.0),   # ㅔ
    8: (420.0, 800.0),    # ㅗ
    13: (330.0, 850.0),   # ㅜ
    18: (360.0, 1450.0),  # ㅡ
    20: (290.0, 2250.0),  # ㅣ
}

# (onset, nucleus, coda) jamo indices
_INVENTORY = [
    (0, 0, 0), (2, 0, 4), (3, 4, 0), (5, 4, 21), (6, 8, 0), (7, 8, 8), (9, 13, 0),
    (11, 13, 4), (12, 18, 0), (18, 18, 8), (0, 20, 0), (2, 20, 16), (3, 5, 0),
    (6, 5, 4), (11, 0, 0), (18, 0, 4), (9, 4, 0), (5, 8, 0), (7, 20, 0), (12, 13, 21),
]
SYLLABLES = [chr(hangul.recompose_hangul(*t)) for t in _INVENTORY]
SILENT_ONSET = 11  # ㅇ carries no consonant sound


@dataclass
class SynthSongConfig:
    seed: int = 0
    n_notes: int = 16
    tempo_range: Tuple[float, float] = (90.0, 130.0)
    pitch_range: Tuple[int, int] = (55, 74)
    beats: Tuple[float, ...] = (0.5, 1.0, 1.0, 1.5, 2.0)
    rest_prob: float = 0.25
    vibrato_depth: float = 0.25  # semitones
    vibrato_rate: float = 5.5    # Hz
    formants: Dict[int, Tuple[float, float]] = field(default_factory=lambda: dict(FORMANTS))
    formant_bandwidth: float = 100.0
    burst_duration: float = 0.03
    burst_level: float = 0.25
    peak: float = 0.8
    sample_rate: int = SR

    def validate(self):
        lo, hi = self.pitch_range
        if not PITCH_MIN <= lo <= hi <= PITCH_MAX:
            raise ValueError(f"pitch_range {self.pitch_range} outside {PITCH_MIN}-{PITCH_MAX}")
        if self.n_notes < 1:
            raise ValueError("n_notes must be >= 1")
        if self.tempo_range[0] <= 0 or self.tempo_range[1] < self.tempo_range[0]:
            raise ValueError("bad tempo_range")
        missing = {hangul.decompose_hangul(s)[1] for s in SYLLABLES} - set(self.formants)
        if missing:
            raise ValueError(f"formant table lacks nuclei {sorted(missing)}")


def _envelope_gain(freqs, f1, f2, bw):
    res = 1.0 / (1.0 + ((freqs - f1) / bw) ** 2) + 0.7 / (1.0 + ((freqs - f2) / bw) ** 2)
    tilt = 1.0 / (1.0 + freqs / 1500.0)
    return (res + 0.03) * tilt


def _burst(rng, n, onset, sr, level):
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    f = np.fft.rfftfreq(n, 1.0 / sr)
    centre = 1200.0 + 350.0 * onset
    spec *= np.exp(-0.5 * ((f - centre) / 900.0) ** 2)
    band = np.fft.irfft(spec, n)
    band /= np.max(np.abs(band)) + 1e-12
    return level * band * np.exp(-np.arange(n) / (0.3 * n))


def generate_synthetic_song(cfg: SynthSongConfig) -> Tuple[Score, Waveform]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    sr, hop = cfg.sample_rate, COARSE_HOP
    tempo = rng.uniform(*cfg.tempo_range)
    lo, hi = cfg.pitch_range

    spans = []  # (start_frame, end_frame, pitch, syllable)
    cursor = 2
    pitch = int(rng.integers(lo, hi + 1))
    for i in range(cfg.n_notes):
        if i and rng.random() < cfg.rest_prob:
            cursor += int(rng.integers(1, 5))
        beats = float(rng.choice(cfg.beats))
        n = max(3, int(round(beats * 60.0 / tempo * sr / hop)))
        pitch = int(np.clip(pitch + rng.integers(-4, 5), lo, hi))
        syl = SYLLABLES[int(rng.integers(len(SYLLABLES)))]
        spans.append((cursor, cursor + n, pitch, syl))
        cursor += n
    total = (cursor + 2) * hop
    x = np.zeros(total)
    t_all = np.arange(total) / sr
    vib_phase = rng.uniform(0, 2 * np.pi)

    for start, end, p, syl in spans:
        onset, nucleus, coda = hangul.decompose_hangul(syl)
        a, b = start * hop, end * hop
        t = t_all[a:b]
        f0 = midi_to_hz(p) * 2.0 ** (cfg.vibrato_depth / 12.0 * np.sin(2 * np.pi * cfg.vibrato_rate * t + vib_phase))
        phase = 2 * np.pi * np.cumsum(f0) / sr
        n_harm = int(0.95 * (sr / 2) / f0.max())
        h = np.arange(1, n_harm + 1)
        gains = _envelope_gain(h * midi_to_hz(p), *cfg.formants[nucleus], cfg.formant_bandwidth)
        closure = np.zeros(b - a)
        if coda:
            closure[-hop:] = np.linspace(0.0, 1.0, hop)
        lowpass = 1.0 / (1.0 + (h * midi_to_hz(p) / 600.0) ** 2)
        voiced = np.zeros(b - a)
        for k, g, lp in zip(h, gains, lowpass):
            voiced += g * ((1.0 - closure) + closure * lp) * np.sin(k * phase)
        ramp = min(int(0.015 * sr), (b - a) // 4)
        env = np.ones(b - a)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        seg = voiced * env / (np.sum(gains) + 1e-12)
        if onset != SILENT_ONSET:
            nb = min(int(cfg.burst_duration * sr), b - a)
            seg[:nb] += _burst(rng, nb, onset, sr, cfg.burst_level * np.max(np.abs(seg)))
        x[a:b] = seg
    x *= cfg.peak / (np.max(np.abs(x)) + 1e-12)
    notes = [Note(p, s * hop / sr, e * hop / sr, syl) for s, e, p, syl in spans]
    return Score(notes, sr), Waveform(x.astype(np.float32), sr)


# -- datasets -------------------------------------------------------------------

def default_splits(n: int) -> list:
    if n < 3:
        return ["train"] * n
    return ["train"] * (n - 2) + ["val", "test"]


def make_dataset(out_dir, n_songs: int = 10, seed: int = 0,
                 cfg: SynthSongConfig | None = None) -> str:
    """Write songs plus ``manifest.json``; returns the manifest path."""
    cfg = cfg or SynthSongConfig()
    os.makedirs(out_dir, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(n_songs)
    items = []
    for i, (s, split) in enumerate(zip(seeds, default_splits(n_songs))):
        score, wav = generate_synthetic_song(replace(cfg, seed=int(s)))
        name = f"song_{i:03d}"
        write_score_json(os.path.join(out_dir, name + ".json"), score)
        write_wav(os.path.join(out_dir, name + ".wav"), wav)
        items.append({"id": name, "score": name + ".json", "wav": name + ".wav", "split": split})
    path = os.path.join(out_dir, "manifest.json")
    manifest = {"version": 1, "sample_rate": cfg.sample_rate, "items": items}
    atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_manifest(path) -> list:
    """Items with ``score``/``wav`` resolved relative to the manifest."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    root = os.path.dirname(os.path.abspath(path))
    items = []
    for it in doc["items"]:
        if it.get("split") not in ("train", "val", "test"):
            raise ValueError(f"{path}: item {it.get('id')} has bad split {it.get('split')!r}")
        items.append(dict(it, score=os.path.join(root, it["score"]), wav=os.path.join(root, it["wav"])))
    return items


def load_score(path, syllables=None) -> Score:
    if str(path).lower().endswith((".mid", ".midi")):
        return parse_midi_smf0(path, syllables)
    return parse_score_json(path)


def load_item(item) -> Tuple[Score, Waveform]:
    return load_score(item["score"], item.get("syllables")), read_wav(item["wav"])
