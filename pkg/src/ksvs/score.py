"""Symbolic scores: validation, JSON and SMF-0 ingestion, frame alignment."""
from __future__ import annotations

import json
import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import hangul
from .dsp import COARSE_HOP, SR
from .io_utils import atomic_write_bytes

PITCH_MIN, PITCH_MAX = 36, 84


class ScoreError(ValueError):
    pass


class OverlapError(ScoreError):
    pass


class DurationError(ScoreError):
    pass


class SyllableError(ScoreError):
    pass


class PitchRangeError(ScoreError):
    pass


class MidiError(ScoreError):
    pass


@dataclass(frozen=True)
class Note:
    pitch: int
    onset: float
    offset: float
    syllable: str

    @property
    def duration(self):
        return self.offset - self.onset


@dataclass
class Score:
    notes: List[Note] = field(default_factory=list)
    sample_rate: int = SR

    @property
    def end_time(self) -> float:
        return self.notes[-1].offset if self.notes else 0.0

    def n_frames(self, hop: int = COARSE_HOP) -> int:
        """Coarse frames needed to hold the score (at least one)."""
        return max(1, int(math.ceil(self.end_time * self.sample_rate / hop)) + 1)


def validate_notes(notes: Sequence[Note], sort: bool = True) -> List[Note]:
    """Check per-note contracts, optionally sort by onset, reject overlaps."""
    for i, n in enumerate(notes):
        if not isinstance(n.pitch, (int, np.integer)) or not PITCH_MIN <= n.pitch <= PITCH_MAX:
            raise PitchRangeError(f"note {i}: pitch {n.pitch!r} outside {PITCH_MIN}-{PITCH_MAX}")
        if not (math.isfinite(n.onset) and math.isfinite(n.offset)) or n.onset < 0:
            raise DurationError(f"note {i}: invalid times ({n.onset}, {n.offset})")
        if n.offset <= n.onset:
            raise DurationError(f"note {i}: offset {n.offset} <= onset {n.onset}")
        if not hangul.is_syllable(n.syllable):
            raise SyllableError(f"note {i}: {n.syllable!r} is not a Hangul syllable")
    ordered = list(notes)
    if any(b.onset < a.onset for a, b in zip(ordered, ordered[1:])):
        if not sort:
            raise ScoreError("notes are not time-sorted")
        warnings.warn("score notes were out of order and have been sorted", stacklevel=3)
        ordered = sorted(ordered, key=lambda n: n.onset)
    for i, (a, b) in enumerate(zip(ordered, ordered[1:])):
        if b.onset < a.offset - 1e-9:
            raise OverlapError(f"note {i + 1} (onset {b.onset}) overlaps note {i} (offset {a.offset})")
    return ordered


# -- JSON ---------------------------------------------------------------------

def parse_score_json(path) -> Score:
    """Read ``{sr?, notes: [{pitch, on, off, syl}]}``."""
    path = os.fspath(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or not isinstance(doc.get("notes"), list):
        raise ScoreError(f"{path}: expected an object with a 'notes' list")
    notes = []
    for i, raw in enumerate(doc["notes"]):
        try:
            notes.append(Note(int(raw["pitch"]), float(raw["on"]), float(raw["off"]), str(raw["syl"])))
        except (KeyError, TypeError, ValueError) as e:
            raise ScoreError(f"{path}: note {i}: malformed entry ({e})") from None
    return Score(validate_notes(notes), int(doc.get("sr", SR)))


def score_to_json(score: Score) -> str:
    doc = {"sr": score.sample_rate,
           "notes": [{"pitch": n.pitch, "on": n.onset, "off": n.offset, "syl": n.syllable}
                     for n in score.notes]}
    return json.dumps(doc, ensure_ascii=False, indent=1)


def write_score_json(path, score: Score) -> None:
    atomic_write_bytes(path, score_to_json(score).encode("utf-8"))


# -- frame alignment ------------------------------------------------------------

@dataclass
class FrameAlignedInput:
    T: np.ndarray
    P: np.ndarray
    spans: list  # (start, end) coarse frame span per note

    def __len__(self):
        return len(self.T)


def note_frames(note: Note, sr: int, hop: int) -> tuple:
    """Round a note to coarse frames: ties go down for onsets, up for offsets."""
    a = note.onset * sr / hop
    b = note.offset * sr / hop
    start = int(math.ceil(a - 0.5 - 1e-9))
    end = int(math.floor(b + 0.5 + 1e-9))
    return start, max(end, start + 1)


def syllable_to_frames(syllable: str, n: int) -> list:
    """Onset on the first frame, coda on the last, nucleus in between.

    Short notes drop the coda first, then the onset.
    """
    onset, nucleus, coda = hangul.phoneme_ids(syllable)
    if n >= 3:
        out = [onset] + [nucleus] * (n - 2) + [coda if coda is not None else nucleus]
    elif n == 2:
        out = [onset, nucleus]
    else:
        out = [nucleus]
    return out


def align_frames(score: Score, sr: Optional[int] = None, coarse_hop: int = COARSE_HOP,
                 total_frames: Optional[int] = None) -> FrameAlignedInput:
    sr = score.sample_rate if sr is None else sr
    notes = validate_notes(score.notes, sort=False)
    L = score.n_frames(coarse_hop) if total_frames is None else total_frames
    T = np.full(L, hangul.REST, dtype=np.int64)
    P = np.full(L, hangul.PITCH_REST, dtype=np.int64)
    spans = []
    prev_end = 0
    for i, n in enumerate(notes):
        start, end = note_frames(n, sr, coarse_hop)
        start = max(start, prev_end)
        end = max(end, start + 1)
        if end > L:
            raise ScoreError(f"note {i} ends at frame {end}, beyond total_frames={L}")
        T[start:end] = syllable_to_frames(n.syllable, end - start)
        P[start:end] = n.pitch
        spans.append((start, end))
        prev_end = end
    return FrameAlignedInput(T, P, spans)


# -- Standard MIDI File, format 0 --------------------------------------------------

def _read_varlen(data: bytes, pos: int) -> tuple:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MidiError("truncated variable-length quantity")
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise MidiError("variable-length quantity longer than 4 bytes")


def _write_varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _ticks_to_seconds(tick: int, tempo_map: list, division: int) -> float:
    seconds, last_tick, us = 0.0, 0, 500000
    for t, tempo in tempo_map:
        if t >= tick:
            break
        seconds += (t - last_tick) * us / division / 1e6
        last_tick, us = t, tempo
    return seconds + (tick - last_tick) * us / division / 1e6


def _parse_track(data: bytes, path: str):
    pos, tick, running = 0, 0, None
    tempo_map, notes, lyrics = [], [], []
    active = None  # (pitch, on_tick)
    while pos < len(data):
        delta, pos = _read_varlen(data, pos)
        tick += delta
        if pos >= len(data):
            raise MidiError(f"{path}: truncated event at tick {tick}")
        status = data[pos]
        if status & 0x80:
            pos += 1
            if status < 0xF0:
                running = status
        elif running is None:
            raise MidiError(f"{path}: data byte 0x{status:02x} with no running status at tick {tick}")
        else:
            status = running
        if status == 0xFF:
            if pos >= len(data):
                raise MidiError(f"{path}: truncated meta event")
            mtype = data[pos]
            length, pos = _read_varlen(data, pos + 1)
            payload = data[pos:pos + length]
            if len(payload) < length:
                raise MidiError(f"{path}: truncated meta event")
            pos += length
            if mtype == 0x51 and length == 3:
                tempo_map.append((tick, int.from_bytes(payload, "big")))
            elif mtype == 0x05:
                lyrics.append((tick, payload.decode("utf-8", errors="replace")))
            elif mtype == 0x2F:
                break
            continue
        if status in (0xF0, 0xF7):
            length, pos = _read_varlen(data, pos)
            pos += length
            running = None
            continue
        if status >= 0xF0:
            raise MidiError(f"{path}: unsupported system message 0x{status:02x}")
        kind = status & 0xF0
        n_data = 1 if kind in (0xC0, 0xD0) else 2
        args = data[pos:pos + n_data]
        if len(args) < n_data or any(b & 0x80 for b in args):
            raise MidiError(f"{path}: corrupt channel message at tick {tick}")
        pos += n_data
        if kind == 0x90 and args[1] > 0:
            if active is not None:
                raise MidiError(f"{path}: polyphony at tick {tick} (note {args[0]} while {active[0]} sounds)")
            active = (args[0], tick)
        elif kind == 0x80 or (kind == 0x90 and args[1] == 0):
            if active is None or active[0] != args[0]:
                raise MidiError(f"{path}: unmatched note-off for {args[0]} at tick {tick}")
            notes.append((active[0], active[1], tick))
            active = None
    if active is not None:
        raise MidiError(f"{path}: note {active[0]} never released")
    return tempo_map, notes, lyrics


def parse_midi_smf0(path, lyric_track_syllables: Optional[Sequence[str]] = None,
                    sr: int = SR) -> Score:
    """Monophonic SMF-0 -> Score.

    Syllables are zipped to notes in order; when none are supplied the
    file's lyric meta events are used instead.
    """
    path = os.fspath(path)
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiError(f"{path}: missing MThd header")
    hlen, fmt, ntracks, division = struct.unpack(">IHHH", data[4:14])
    if fmt != 0 or ntracks != 1:
        raise MidiError(f"{path}: only format 0 with one track is supported (got format {fmt}, {ntracks} tracks)")
    if division & 0x8000:
        raise MidiError(f"{path}: SMPTE time division is not supported")
    pos = 8 + hlen
    if data[pos:pos + 4] != b"MTrk":
        raise MidiError(f"{path}: missing MTrk chunk")
    (tlen,) = struct.unpack(">I", data[pos + 4:pos + 8])
    track = data[pos + 8:pos + 8 + tlen]
    if len(track) < tlen:
        raise MidiError(f"{path}: truncated track chunk")
    tempo_map, raw, lyrics = _parse_track(track, path)

    if lyric_track_syllables is None:
        syllables = [text for _, text in lyrics]
    else:
        syllables = list(lyric_track_syllables)
    if len(syllables) != len(raw):
        raise MidiError(f"{path}: {len(raw)} notes but {len(syllables)} syllables")
    notes = [Note(int(p), _ticks_to_seconds(on, tempo_map, division),
                  _ticks_to_seconds(off, tempo_map, division), syl)
             for (p, on, off), syl in zip(raw, syllables)]
    return Score(validate_notes(notes), sr)


def write_midi_smf0(path, score: Score, bpm: float = 120.0, division: int = 480,
                    lyrics: bool = True) -> None:
    """Write a monophonic SMF-0 file with one tempo event and optional lyric events."""
    us = int(round(60e6 / bpm))
    events = [(0, 0, b"\xff\x51\x03" + us.to_bytes(3, "big"))]
    for n in score.notes:
        on = int(round(n.onset * 1e6 / us * division))
        off = int(round(n.offset * 1e6 / us * division))
        if lyrics:
            text = n.syllable.encode("utf-8")
            events.append((on, 1, b"\xff\x05" + _write_varlen(len(text)) + text))
        events.append((on, 2, bytes([0x90, n.pitch, 100])))
        events.append((off, 0, bytes([0x80, n.pitch, 0])))
    events.sort(key=lambda e: (e[0], e[1]))
    body, last = bytearray(), 0
    for tick, _, payload in events:
        body += _write_varlen(tick - last) + payload
        last = tick
    body += b"\x00\xff\x2f\x00"
    blob = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division) + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
    atomic_write_bytes(path, blob)
