import json
import struct
import unicodedata
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ksvs import hangul
from ksvs.hangul import HangulError, decompose_hangul, phoneme_ids, recompose_hangul
from ksvs.score import (DurationError, MidiError, Note, OverlapError, PitchRangeError, Score,
                        ScoreError, SyllableError, align_frames, parse_midi_smf0,
                        parse_score_json, write_midi_smf0, write_score_json)

SR, HOP = 22050, 1024
FR = HOP / SR  # one coarse frame in seconds


def nfd_oracle(ch):
    """Jamo indices from Unicode canonical decomposition (independent of the arithmetic)."""
    parts = unicodedata.normalize("NFD", ch)
    onset = ord(parts[0]) - 0x1100
    nucleus = ord(parts[1]) - 0x1161
    coda = ord(parts[2]) - 0x11A7 if len(parts) == 3 else 0
    return onset, nucleus, coda


def test_vocab_layout():
    assert hangul.TEXT_VOCAB == 70
    assert hangul.REST != hangul.PAD
    assert len(hangul.ONSETS) == 19 and len(hangul.NUCLEI) == 21 and len(hangul.CODAS) == 28


def test_decompose_examples():
    assert decompose_hangul("가") == (0, 0, 0)
    assert decompose_hangul(0xD55C) == decompose_hangul("한") == (18, 0, 4) == nfd_oracle("한")


def test_decompose_rejects_non_syllables():
    for bad in ("a", "ㄱ", 0xABFF, 0xD7A4, "가나"):
        with pytest.raises(HangulError):
            decompose_hangul(bad)
    with pytest.raises(HangulError):
        recompose_hangul(19, 0, 0)


def test_full_block_bijection_against_nfd():
    failures = 0
    for cp in range(0xAC00, 0xD7A4):
        idx = decompose_hangul(cp)
        failures += recompose_hangul(*idx) != cp or idx != nfd_oracle(chr(cp))
    assert failures == 0


def test_phoneme_ids_dense():
    o, n, c = phoneme_ids("한")
    assert (o, n, c) == (18, 19, 44)
    assert phoneme_ids("가")[2] is None


def score(*notes):
    return Score([Note(*n) for n in notes], SR)


def ids(syl):
    return phoneme_ids(syl)


def test_align_six_frame_note_with_coda():
    a = align_frames(score((69, 0.0, 6 * FR, "한")), total_frames=6)
    o, n, c = ids("한")
    assert a.T.tolist() == [o, n, n, n, n, c]
    assert a.P.tolist() == [69] * 6


def test_align_no_coda_keeps_nucleus():
    a = align_frames(score((60, 0.0, 4 * FR, "가")), total_frames=4)
    o, n, _ = ids("가")
    assert a.T.tolist() == [o, n, n, n]


def test_align_short_notes():
    o, n, _ = ids("한")
    assert align_frames(score((60, 0.0, 2 * FR, "한")), total_frames=2).T.tolist() == [o, n]
    assert align_frames(score((60, 0.0, 1 * FR, "한")), total_frames=1).T.tolist() == [n]


def test_align_gap_is_rest():
    a = align_frames(score((60, 0.0, 3 * FR, "가"), (62, 6 * FR, 9 * FR, "나")), total_frames=9)
    assert a.T[3:6].tolist() == [hangul.REST] * 3
    assert a.P[3:6].tolist() == [hangul.PITCH_REST] * 3


def test_align_empty_score():
    a = align_frames(Score([], SR), total_frames=5)
    assert a.T.tolist() == [hangul.REST] * 5 and a.P.tolist() == [hangul.PITCH_REST] * 5


def test_align_rounding_ties():
    # onset exactly half a frame rounds down, offset exactly half rounds up
    a = align_frames(score((60, 0.5 * FR, 2.5 * FR, "가")), total_frames=4)
    assert a.spans == [(0, 3)]


def test_align_too_long_for_total():
    with pytest.raises(ScoreError):
        align_frames(score((60, 0.0, 10 * FR, "가")), total_frames=4)


def test_align_overlap_rejected():
    with pytest.raises(OverlapError):
        align_frames(score((60, 0.0, 3 * FR, "가"), (62, 2 * FR, 5 * FR, "나")))


@st.composite
def scores(draw):
    n = draw(st.integers(0, 8))
    t, notes = 0, []
    for _ in range(n):
        t += draw(st.integers(0, 3))
        d = draw(st.integers(1, 6))
        syl = chr(draw(st.integers(0xAC00, 0xD7A3)))
        notes.append(Note(draw(st.integers(36, 84)), t * FR, (t + d) * FR, syl))
        t += d
    return Score(notes, SR), t


@settings(max_examples=60, deadline=None)
@given(scores(), st.integers(0, 5))
def test_align_invariants(sc, extra):
    s, end = sc
    L = end + extra + 1
    a = align_frames(s, total_frames=L)
    assert len(a.T) == len(a.P) == L
    # one non-REST span per note, carrying its pitch, frames add up exactly
    assert len(a.spans) == len(s.notes)
    for (b, e), note in zip(a.spans, s.notes):
        assert np.all(a.P[b:e] == note.pitch)
    assert np.sum(a.P != hangul.PITCH_REST) == sum(e - b for b, e in a.spans)
    assert np.all((a.T == hangul.REST) == (a.P == hangul.PITCH_REST))


def write_json(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
    return p


def test_parse_minimal(tmp_path):
    s = parse_score_json(write_json(tmp_path, {"notes": [{"pitch": 69, "on": 0, "off": 0.5, "syl": "가"}]}))
    assert s.notes == [Note(69, 0.0, 0.5, "가")] and s.sample_rate == 22050


def test_parse_sorts_with_warning(tmp_path):
    doc = {"notes": [{"pitch": 60, "on": 1, "off": 2, "syl": "나"}, {"pitch": 62, "on": 0, "off": 1, "syl": "가"}]}
    with pytest.warns(UserWarning):
        s = parse_score_json(write_json(tmp_path, doc))
    assert [n.syllable for n in s.notes] == ["가", "나"]


@pytest.mark.parametrize("note,err", [
    ({"pitch": 60, "on": 1.0, "off": 1.0, "syl": "가"}, DurationError),
    ({"pitch": 60, "on": 1.0, "off": 2.0, "syl": "x"}, SyllableError),
    ({"pitch": 90, "on": 1.0, "off": 2.0, "syl": "가"}, PitchRangeError),
    ({"pitch": 60, "on": 1.0}, ScoreError),
])
def test_parse_errors_name_note_index(tmp_path, note, err):
    doc = {"notes": [{"pitch": 60, "on": 0, "off": 0.5, "syl": "가"}, note]}
    with pytest.raises(err, match="note 1"):
        parse_score_json(write_json(tmp_path, doc))


def test_parse_overlap(tmp_path):
    doc = {"notes": [{"pitch": 60, "on": 0, "off": 1, "syl": "가"}, {"pitch": 60, "on": 0.5, "off": 2, "syl": "가"}]}
    with pytest.raises(OverlapError):
        parse_score_json(write_json(tmp_path, doc))


def test_json_round_trip(tmp_path):
    s = score((60, 0.0, 0.5, "한"), (64, 0.75, 1.0, "글"))
    write_score_json(tmp_path / "r.json", s)
    assert parse_score_json(tmp_path / "r.json") == s


def _varlen(v):
    out = [v & 0x7F]
    v >>= 7
    while v:
        out.append((v & 0x7F) | 0x80)
        v >>= 7
    return bytes(reversed(out))


def smf(track_events, division=480, fmt=0, ntracks=1):
    body = b"".join(track_events) + b"\x00\xff\x2f\x00"
    return (b"MThd" + struct.pack(">IHHH", 6, fmt, ntracks, division)
            + b"MTrk" + struct.pack(">I", len(body)) + body)


TEMPO_120 = b"\x00\xff\x51\x03\x07\xa1\x20"  # 500000 us per quarter


def test_midi_one_note_hand_oracle(tmp_path):
    # 480 ticks at 480 ticks/quarter and 0.5 s/quarter -> 0.5 s
    p = tmp_path / "a.mid"
    p.write_bytes(smf([TEMPO_120, b"\x00\x90\x45\x64", _varlen(480) + b"\x80\x45\x00"]))
    s = parse_midi_smf0(p, ["가"])
    assert s.notes == [Note(69, 0.0, 0.5, "가")]


def test_midi_running_status_and_zero_velocity_off(tmp_path):
    p = tmp_path / "r.mid"
    p.write_bytes(smf([TEMPO_120, b"\x00\x90\x40\x64", _varlen(240) + b"\x40\x00",
                       _varlen(240) + b"\x43\x64", _varlen(480) + b"\x43\x00"]))
    s = parse_midi_smf0(p, ["가", "나"])
    assert [(n.pitch, n.onset, n.offset) for n in s.notes] == [(64, 0.0, 0.25), (67, 0.5, 1.0)]


def test_midi_tempo_change(tmp_path):
    # second quarter at 60 bpm: note spans [0.5, 1.5]
    p = tmp_path / "t.mid"
    p.write_bytes(smf([TEMPO_120, _varlen(480) + b"\xff\x51\x03\x0f\x42\x40",
                       b"\x00\x90\x45\x64", _varlen(480) + b"\x80\x45\x00"]))
    assert parse_midi_smf0(p, ["가"]).notes[0].offset == pytest.approx(1.5)


def test_midi_errors(tmp_path):
    cases = {
        "poly.mid": smf([b"\x00\x90\x45\x64", b"\x00\x90\x47\x64", b"\x10\x80\x45\x00", b"\x00\x80\x47\x00"]),
        "unmatched.mid": smf([b"\x00\x80\x45\x00"]),
        "running.mid": smf([b"\x00\x45\x64"]),
        "fmt1.mid": smf([], fmt=1),
        "smpte.mid": smf([], division=0xE728),
    }
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(MidiError):
            parse_midi_smf0(tmp_path / name, [])
    ok = tmp_path / "ok.mid"
    ok.write_bytes(smf([b"\x00\x90\x45\x64", b"\x10\x80\x45\x00"]))
    with pytest.raises(MidiError, match="syllables"):
        parse_midi_smf0(ok, ["가", "나"])
    (tmp_path / "trunc.mid").write_bytes(smf([b"\x00\x90\x45\x64", b"\x10\x80\x45\x00"])[:-6])
    with pytest.raises(MidiError):
        parse_midi_smf0(tmp_path / "trunc.mid", ["가"])


def test_midi_empty(tmp_path):
    (tmp_path / "e.mid").write_bytes(smf([TEMPO_120]))
    assert parse_midi_smf0(tmp_path / "e.mid", []).notes == []


def test_midi_write_read_round_trip_with_lyrics(tmp_path):
    s = score((60, 0.0, 0.5, "한"), (67, 0.75, 1.25, "글"))
    write_midi_smf0(tmp_path / "w.mid", s)
    back = parse_midi_smf0(tmp_path / "w.mid")
    assert [(n.pitch, n.syllable) for n in back.notes] == [(60, "한"), (67, "글")]
    assert [n.onset for n in back.notes] == pytest.approx([0.0, 0.75])
