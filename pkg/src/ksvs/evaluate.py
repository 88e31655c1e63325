"""Frame-wise pitch precision / recall / F1 of generated singing."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import dsp, hangul
from .io_utils import atomic_write_text

UNVOICED = -1


def extract_pitch_sequence(w: dsp.Waveform, n_frames: Optional[int] = None) -> np.ndarray:
    """Waveform -> per-coarse-frame integer MIDI number, ``UNVOICED`` (-1) where no pitch."""
    f0 = dsp.estimate_f0(w)
    seq = np.full(len(f0), UNVOICED, dtype=np.int64)
    voiced = f0 > 0
    seq[voiced] = dsp.quantize_midi(dsp.hz_to_midi(f0[voiced]))
    if n_frames is not None:
        seq = np.pad(seq, (0, max(0, n_frames - len(seq))), constant_values=UNVOICED)[:n_frames]
    return seq


def reference_sequence(P: np.ndarray) -> np.ndarray:
    """Pitch ids -> pitch sequence; rests and padding count as unvoiced."""
    P = np.asarray(P, dtype=np.int64)
    return np.where(P < hangul.PITCH_REST, P, UNVOICED)


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    matched: int
    pred_voiced: int
    ref_voiced: int
    n_frames: int
    empty_precision: bool = False
    empty_recall: bool = False


def _prf(matched, pv, rv, n) -> PRF:
    p = matched / pv if pv else 0.0
    r = matched / rv if rv else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f1, int(matched), int(pv), int(rv), int(n), pv == 0, rv == 0)


def frame_prf(pred, ref) -> PRF:
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {ref.shape}")
    pv, rv = pred != UNVOICED, ref != UNVOICED
    matched = np.sum(pv & rv & (pred == ref))
    return _prf(matched, pv.sum(), rv.sum(), len(pred))


@dataclass
class ClipResult:
    clip_id: str
    precision: float
    recall: float
    f1: float
    matched: int
    pred_voiced: int
    ref_voiced: int
    n_frames: int
    voiced_ratio: float


@dataclass
class EvalReport:
    clips: List[ClipResult] = field(default_factory=list)
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    n_frames: int = 0
    frames: dict = field(default_factory=dict, repr=False)  # clip id -> (pred, ref)

    def add(self, clip_id: str, pred, ref) -> ClipResult:
        m = frame_prf(pred, ref)
        clip = ClipResult(clip_id, m.precision, m.recall, m.f1, m.matched, m.pred_voiced,
                          m.ref_voiced, m.n_frames, m.pred_voiced / max(1, m.n_frames))
        self.clips.append(clip)
        self.frames[clip_id] = (np.asarray(pred), np.asarray(ref))
        self._aggregate()
        return clip

    def _aggregate(self):
        agg = _prf(sum(c.matched for c in self.clips), sum(c.pred_voiced for c in self.clips),
                   sum(c.ref_voiced for c in self.clips), sum(c.n_frames for c in self.clips))
        self.precision, self.recall, self.f1, self.n_frames = agg.precision, agg.recall, agg.f1, agg.n_frames

    def to_json(self) -> str:
        doc = {"aggregate": {"precision": self.precision, "recall": self.recall,
                             "f1": self.f1, "n_frames": self.n_frames, "averaging": "micro"},
               "clips": [asdict(c) for c in self.clips]}
        return json.dumps(doc, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["clip", "frame", "pred", "ref", "match"])
        for cid, (pred, ref) in self.frames.items():
            for i, (p, r) in enumerate(zip(pred, ref)):
                w.writerow([cid, i, int(p), int(r), int(p == r and p != UNVOICED)])
        return buf.getvalue()

    def save(self, path, csv_path=None):
        atomic_write_text(path, self.to_json())
        if csv_path:
            atomic_write_text(csv_path, self.to_csv())


def evaluate_reference(items) -> EvalReport:
    """Score recorded (or synthetic ground-truth) audio against its own scores.

    This is the ceiling any generated audio can reach on the same data.
    """
    from .score import align_frames
    from .synthetic import load_item

    report = EvalReport()
    for item in items:
        score, wav = load_item(item)
        L = 1 + len(wav) // dsp.COARSE_HOP
        ref = reference_sequence(align_frames(score, total_frames=L).P)
        report.add(item["id"], extract_pitch_sequence(wav, L), ref)
    return report


def evaluate_model(checkpoint_path, manifest_path, split: str = "test", gl_iters: int = 60) -> EvalReport:
    """Synthesise every clip of ``split`` from its score and score the pitch track."""
    from .synthesis import synthesize
    from .synthetic import load_manifest, load_score
    from .trainer import load_generator

    gen, _ = load_generator(checkpoint_path)
    items = [it for it in load_manifest(manifest_path) if it.get("split") == split]
    if not items:
        raise ValueError(f"split {split!r} is empty in {manifest_path}")
    report = EvalReport()
    for item in items:
        res = synthesize(gen, load_score(item["score"]), gl_iters=gl_iters)
        L = len(res.P)
        report.add(item["id"], extract_pitch_sequence(res.wave, L), reference_sequence(res.P))
    return report
