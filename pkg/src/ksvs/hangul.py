"""Hangul syllable <-> jamo index arithmetic and the phoneme id space."""

HANGUL_BASE = 0xAC00
HANGUL_LAST = 0xD7A3
N_ONSET, N_NUCLEUS, N_CODA = 19, 21, 28

ONSETS = "ㄱㄲㄴㄷㄸㄹㅁㅂㅃㅅㅆㅇㅈㅉㅊㅋㅌㅍㅎ"
NUCLEI = "ㅏㅐㅑㅒㅓㅔㅕㅖㅗㅘㅙㅚㅛㅜㅝㅞㅟㅠㅡㅢㅣ"
CODAS = " ㄱㄲㄳㄴㄵㄶㄷㄹㄺㄻㄼㄽㄾㄿㅀㅁㅂㅄㅅㅆㅇㅈㅊㅋㅌㅍㅎ"  # slot 0: no coda

# dense phoneme ids: onsets, nuclei, coda slots, then the two specials
ONSET_OFFSET = 0
NUCLEUS_OFFSET = N_ONSET
CODA_OFFSET = N_ONSET + N_NUCLEUS
REST = CODA_OFFSET + N_CODA
PAD = REST + 1
TEXT_VOCAB = PAD + 1

# pitch ids are raw MIDI numbers plus two specials
PITCH_REST = 128
PITCH_PAD = 129
PITCH_VOCAB = 130


class HangulError(ValueError):
    pass


def is_syllable(ch: str) -> bool:
    return len(ch) == 1 and HANGUL_BASE <= ord(ch) <= HANGUL_LAST


def decompose_hangul(syllable) -> tuple:
    """Code point (int or 1-char str) -> (onset, nucleus, coda) indices."""
    cp = ord(syllable) if isinstance(syllable, str) and len(syllable) == 1 else syllable
    if not isinstance(cp, int) or not HANGUL_BASE <= cp <= HANGUL_LAST:
        raise HangulError(f"not a precomposed Hangul syllable: {syllable!r}")
    s = cp - HANGUL_BASE
    return s // (N_CODA * N_NUCLEUS), (s // N_CODA) % N_NUCLEUS, s % N_CODA


def recompose_hangul(onset: int, nucleus: int, coda: int = 0) -> int:
    if not (0 <= onset < N_ONSET and 0 <= nucleus < N_NUCLEUS and 0 <= coda < N_CODA):
        raise HangulError(f"jamo indices out of range: {(onset, nucleus, coda)}")
    return HANGUL_BASE + (onset * N_NUCLEUS + nucleus) * N_CODA + coda


def phoneme_ids(syllable: str) -> tuple:
    """Syllable -> (onset_id, nucleus_id, coda_id or None) in the dense id space."""
    o, n, c = decompose_hangul(syllable)
    return ONSET_OFFSET + o, NUCLEUS_OFFSET + n, (CODA_OFFSET + c) if c else None
