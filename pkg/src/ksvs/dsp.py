"""Signal processing: STFT, emphasis normalisation, mel projection,
Griffin-Lim inversion, YIN pitch tracking and 16-bit WAV I/O."""
from __future__ import annotations

import io
import os
import wave
from dataclasses import dataclass

import numpy as np

from .io_utils import atomic_write_bytes

SR = 22050
N_FFT = 1024
HOP = 256
N_MELS = 80
COARSE = 4                # mel keeps every 4th STFT frame
COARSE_HOP = HOP * COARSE  # 1024 samples per coarse frame
PRE_EMPHASIS = 0.6
POST_EMPHASIS = 1.3
UNVOICED = 0.0


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SR

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform has non-finite samples")

    def __len__(self):
        return len(self.samples)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (exact COLA at hop n/4)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    n = 1 + (len(x) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def stft(w, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centred, reflect-padded, Hann-windowed STFT -> ``(n_fft//2+1, 1+len//hop)``."""
    x = np.asarray(getattr(w, "samples", w), dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty waveform")
    pad = n_fft // 2
    mode = "reflect" if len(x) > pad else "constant"
    xp = np.pad(x, pad, mode=mode)
    return np.fft.rfft(_frames(xp, n_fft, hop) * hann(n_fft), axis=1).T


def _ola(spec: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Least-squares overlap-add inverse, returned in the padded domain."""
    win = hann(n_fft)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * win
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    y = np.zeros(total)
    wss = np.zeros(total)
    for i in range(n_frames):
        y[i * hop:i * hop + n_fft] += frames[i]
        wss[i * hop:i * hop + n_fft] += win ** 2
    nz = wss > 1e-10
    y[nz] /= wss[nz]
    y[~nz] = 0.0
    return y


def istft(spec: np.ndarray, hop: int = HOP, length: int | None = None) -> np.ndarray:
    n_fft = 2 * (spec.shape[0] - 1)
    y = _ola(spec, n_fft, hop)[n_fft // 2:]
    if length is None:
        length = hop * (spec.shape[1] - 1)
    if len(y) < length:
        y = np.pad(y, (0, length - len(y)))
    return y[:length]


def magnitude(w) -> np.ndarray:
    return np.abs(stft(w))


def normalize_mag(S: np.ndarray, delta: float = PRE_EMPHASIS) -> np.ndarray:
    """(|S| / max|S|) ** delta, mapping into [0, 1] with the peak at exactly 1."""
    S = np.abs(np.asarray(S, dtype=np.float64))
    peak = S.max() if S.size else 0.0
    if peak <= 0:
        raise ValueError("cannot normalise an all-zero spectrogram")
    return (S / peak) ** delta


def post_emphasize(S_hat: np.ndarray, zeta: float = POST_EMPHASIS,
                   delta: float = PRE_EMPHASIS) -> np.ndarray:
    S_hat = np.asarray(S_hat, dtype=np.float64)
    if np.any(S_hat < 0):
        raise ValueError("post_emphasize expects non-negative magnitudes")
    return S_hat ** (zeta / delta)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sr: int = SR, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """HTK-scale triangular filters with unit peak, shape ``(n_mels, n_fft//2+1)``."""
    fmax = sr / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None, :] - lo) / (mid - lo)
    fall = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


_FB_CACHE: dict = {}


def _fb(n_bins: int) -> np.ndarray:
    if n_bins not in _FB_CACHE:
        _FB_CACHE[n_bins] = mel_filterbank(n_fft=2 * (n_bins - 1))
    return _FB_CACHE[n_bins]


def downsample_frames(X: np.ndarray, factor: int = COARSE) -> np.ndarray:
    """Keep the first frame of every ``factor``-frame group."""
    return X[:, ::factor]


def to_mel(S: np.ndarray, delta: float = PRE_EMPHASIS) -> np.ndarray:
    """Unnormalised linear magnitude (513 x L') -> normalised, 4x-downsampled mel (80 x ceil(L'/4))."""
    S = np.asarray(S, dtype=np.float64)
    if S.shape[0] != N_FFT // 2 + 1:
        raise ValueError(f"expected {N_FFT // 2 + 1} frequency bins, got {S.shape[0]}")
    mel = _fb(S.shape[0]) @ S
    if mel.max() > 0:
        mel = normalize_mag(mel, delta)
    return downsample_frames(mel)


def peak_locked_phase(mag: np.ndarray, hop: int = HOP, floor_db: float = -60.0) -> np.ndarray:
    """Initial phase estimate that integrates each bin's owning-peak frequency.

    Peaks are local maxima over +-2 bins (the Hann main lobe) within
    ``floor_db`` of the frame maximum; fractional peak positions use the
    closed-form Hann ratio ``delta = (2r - 1) / (1 + r)``.  Bins inside a lobe
    get the window's linear-phase offset ``pi * (p - k)``.
    """
    nb, nf = mag.shape
    n_fft = 2 * (nb - 1)
    k = np.arange(nb)
    theta = np.zeros(nb)
    phase = np.empty((nb, nf))
    for m in range(nf):
        col = mag[:, m]
        pstar = k.astype(np.float64)
        if col.max() > 0:
            padded = np.pad(col, 2)
            neigh = np.stack([padded[i:i + nb] for i in range(5)]).max(axis=0)
            pk = np.nonzero((col >= neigh) & (col > col.max() * 10 ** (floor_db / 20)))[0]
            pk = pk[(pk > 0) & (pk < nb - 1)]
            if pk.size:
                left, mid, right = col[pk - 1], col[pk], col[pk + 1]
                up = right >= left
                r = np.where(up, right, left) / mid
                delta = (2 * r - 1) / (1 + r)
                peaks = pk + np.where(up, delta, -delta)
                owner = np.searchsorted((pk[1:] + pk[:-1]) / 2, k)
                pstar = peaks[owner]
        theta = theta + hop * 2 * np.pi * pstar / n_fft
        phase[:, m] = theta + np.pi * (pstar - k)
    return np.exp(1j * phase)


def griffin_lim(mag: np.ndarray, iters: int = 60, rng_seed: int | None = None,
                hop: int = HOP, length: int | None = None, init: str = "peak",
                return_residuals: bool = False):
    """Phase retrieval by alternating projections.

    The iterate lives in the padded signal domain where windowed OLA is an
    exact least-squares inverse, so the magnitude residual never increases.
    ``init`` picks the starting phase: ``"peak"`` (peak-locked integration),
    ``"zero"``, or ``"random"`` (seeded by ``rng_seed``).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    mag = np.asarray(mag, dtype=np.float64)
    n_fft = 2 * (mag.shape[0] - 1)
    win = hann(n_fft)
    if init == "peak":
        phase = peak_locked_phase(mag, hop)
    elif init == "zero":
        phase = np.ones_like(mag, dtype=np.complex128)
    elif init == "random":
        rng = np.random.default_rng(rng_seed)
        phase = np.exp(2j * np.pi * rng.random(mag.shape))
    else:
        raise ValueError(f"unknown init {init!r}")
    y = _ola(mag * phase, n_fft, hop)
    # two-sided spectrum norm: interior bins stand for their mirror images too
    weight = np.full((mag.shape[0], 1), 2.0)
    weight[0] = weight[-1] = 1.0
    residuals = []
    for _ in range(iters):
        X = np.fft.rfft(_frames(y, n_fft, hop) * win, axis=1).T
        residuals.append(float(np.sqrt(np.sum(weight * (np.abs(X) - mag) ** 2))))
        angle = np.exp(1j * np.angle(X))
        angle[np.abs(X) == 0] = 1.0
        y = _ola(mag * angle, n_fft, hop)
    if length is None:
        length = hop * (mag.shape[1] - 1)
    out = y[n_fft // 2:]
    out = np.pad(out, (0, max(0, length - len(out))))[:length]
    wav = Waveform(out.astype(np.float32))
    return (wav, residuals) if return_residuals else wav


# -- pitch -------------------------------------------------------------------

def hz_to_midi(f_hz):
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    m = 69.0 + 12.0 * np.log2(f / 440.0)
    return float(m) if m.ndim == 0 else m


def midi_to_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


def quantize_midi(x):
    q = np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(int)
    return int(q) if q.ndim == 0 else q


def estimate_f0(w: Waveform, hop: int = COARSE_HOP, window: int = 1024,
                fmin: float = 50.0, fmax: float = 1100.0, threshold: float = 0.15,
                silence_db: float = -40.0) -> np.ndarray:
    """YIN pitch track on the coarse-frame grid.

    Frame ``i`` analyses ``window`` samples starting at ``i * hop`` (lags read
    a little past it).  Returns Hz per frame, ``UNVOICED`` (0.0) where no lag
    dips below ``threshold`` or the frame is more than ``silence_db`` below
    the loudest frame.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    sr = w.sample_rate
    if len(x) < 2 * window:
        raise ValueError(f"need at least {2 * window} samples, got {len(x)}")
    tau_min = max(2, int(np.floor(sr / fmax)))
    tau_max = int(np.ceil(sr / fmin))
    n_frames = 1 + len(x) // hop
    xp = np.pad(x, (0, window + tau_max + 2))
    taus = np.arange(tau_max + 2)
    f0 = np.full(n_frames, UNVOICED)
    rms = np.array([np.sqrt(np.mean(xp[i * hop:i * hop + window] ** 2)) for i in range(n_frames)])
    floor = max(1e-5, rms.max() * 10 ** (silence_db / 20))
    for i in range(n_frames):
        if rms[i] < floor:
            continue
        seg = xp[i * hop:i * hop + window + tau_max + 2]
        d = _difference(seg, window, taus)
        cmnd = np.ones_like(d)
        csum = np.cumsum(d[1:])
        with np.errstate(divide="ignore", invalid="ignore"):
            cmnd[1:] = d[1:] * np.arange(1, len(d)) / csum
        cmnd[~np.isfinite(cmnd)] = 1.0
        below = np.nonzero(cmnd[tau_min:tau_max + 1] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 <= tau_max and cmnd[tau + 1] < cmnd[tau]:
            tau += 1
        a, b, c = d[tau - 1], d[tau], d[tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        f = sr / (tau + float(np.clip(shift, -1, 1)))
        if fmin <= f <= fmax:
            f0[i] = f
    return f0


def _difference(seg: np.ndarray, window: int, taus: np.ndarray) -> np.ndarray:
    # d(tau) = sum_j (x_j - x_{j+tau})^2 via one FFT cross-correlation
    n = len(seg)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    head = seg[:window]
    corr = np.fft.irfft(np.fft.rfft(seg, size) * np.conj(np.fft.rfft(head, size)), size)[:len(taus)]
    sq = np.concatenate([[0.0], np.cumsum(seg ** 2)])
    energy_shift = sq[taus + window] - sq[taus]
    d = sq[window] + energy_shift - 2 * corr
    d[0] = 0.0
    return np.maximum(d, 0.0)


# -- WAV I/O -----------------------------------------------------------------

def write_wav(path, w: Waveform) -> None:
    """16-bit PCM mono, samples scaled by 32767 and clipped; written atomically."""
    pcm = np.clip(np.round(w.samples.astype(np.float64) * 32767), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def read_wav(path) -> Waveform:
    with wave.open(os.fspath(path), "rb") as f:
        if f.getsampwidth() != 2 or f.getnchannels() != 1:
            raise ValueError(f"{path}: only 16-bit mono PCM is supported")
        sr = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float32) / 32767.0, sr)
