"""MFCC + delta + delta-delta front end for 16 kHz mono audio.

Feature rows are ``[mfcc[1:], delta(mfcc), delta2(mfcc)]`` which gives
``3 * n_mfcc - 1`` rows (80 for 27 coefficients).
"""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
import scipy.fft

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    """WAV file is not 16 kHz mono 16-bit PCM (or is not a WAV at all)."""


class TooShortError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    n_mfcc: int = 27
    n_mels: int = 40
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    delta_window: int = 2
    f_min: float = 20.0
    f_max: float = 7600.0
    log_floor: float = 1e-10
    cmn: bool = False
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.n_mfcc < 2:
            raise ValueError("n_mfcc must be >= 2")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc cannot exceed n_mels")
        if not self.frame_len_ms > self.hop_ms > 0:
            raise ValueError("need frame_len_ms > hop_ms > 0")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size smaller than the frame length")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError("mel band edges out of range")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"only {SAMPLE_RATE} Hz is supported")

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_len_ms * self.sample_rate / 1000))

    @property
    def hop(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_features(self) -> int:
        return 3 * self.n_mfcc - 1

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return 1 + (n_samples - self.frame_len) // self.hop


# ---------------------------------------------------------------- WAV I/O

def read_wav(path) -> np.ndarray:
    """Read a 16 kHz mono 16-bit PCM WAV into float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as f:
            n_ch, width, rate = f.getnchannels(), f.getsampwidth(), f.getframerate()
            comp = f.getcomptype()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if comp != "NONE":
        raise AudioFormatError(f"{path}: compressed WAV ({comp}) not supported")
    if n_ch != 1:
        raise AudioFormatError(f"{path}: expected mono, got {n_ch} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- framing

def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_and_window(samples, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Slice into overlapping frames and apply a periodic Hann window.

    Returns an array of shape (n_frames, frame_len).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D waveform")
    n = cfg.n_frames(len(x))
    if n == 0:
        raise TooShortError(
            f"waveform has {len(x)} samples, need at least {cfg.frame_len} for one frame"
        )
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(n)[:, None]
    return x[idx] * hann_periodic(cfg.frame_len)


# ---------------------------------------------------------------- mel / mfcc

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    pts = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    return mel_to_hz(pts[1:-1])


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular HTK-style filters, peak 1. Shape (n_mels, fft_size//2 + 1)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    fb = np.zeros((cfg.n_mels, len(freqs)))
    for i in range(cfg.n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel_frame(frame, fb, cfg: FeatureConfig) -> np.ndarray:
    spec = np.fft.rfft(frame, n=cfg.fft_size)
    power = spec.real ** 2 + spec.imag ** 2
    return np.log(np.maximum(fb @ power, cfg.log_floor))


def mfcc(frames, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Windowed frames (n_frames, frame_len) -> coefficients (n_mfcc, n_frames).

    Frames are processed one at a time so a streaming caller feeding single
    frames gets bit-identical output.
    """
    frames = np.atleast_2d(frames)
    fb = mel_filterbank(cfg)
    out = np.empty((cfg.n_mfcc, frames.shape[0]))
    for t, frame in enumerate(frames):
        logmel = log_mel_frame(frame, fb, cfg)
        out[:, t] = scipy.fft.dct(logmel, type=2, norm="ortho")[: cfg.n_mfcc]
    return out


# ---------------------------------------------------------------- deltas

def _edge_pad(m, w):
    return np.pad(m, ((0, 0), (w, w)), mode="edge")


def _regress(padded, w):
    """Regression deltas for the interior columns of an already padded matrix."""
    n = padded.shape[1] - 2 * w
    denom = 2.0 * sum(i * i for i in range(1, w + 1))
    acc = np.zeros((padded.shape[0], n))
    for i in range(1, w + 1):
        acc = acc + i * (padded[:, w + i:w + i + n] - padded[:, w - i:w - i + n])
    return acc / denom


def deltas(m, width: int = 2):
    """First and second order regression deltas with edge replication."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 1:
        raise ValueError("expected a (C, T) matrix with T >= 1")
    d = _regress(_edge_pad(m, width), width)
    d2 = _regress(_edge_pad(d, width), width)
    return d, d2


def assemble_features(m, delta, delta2) -> np.ndarray:
    """Stack [m without C0; delta; delta2] -> (3C-1, T)."""
    m, delta, delta2 = (np.asarray(a) for a in (m, delta, delta2))
    if not (m.ndim == delta.ndim == delta2.ndim == 2):
        raise ValueError("inputs must be 2-D")
    if not (m.shape == delta.shape == delta2.shape):
        raise ValueError(
            f"shape mismatch: mfcc {m.shape}, delta {delta.shape}, delta2 {delta2.shape}"
        )
    if m.shape[0] < 2:
        raise ValueError("need at least 2 coefficients")
    return np.concatenate([m[1:], delta, delta2], axis=0)


def extract_features(samples, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Waveform -> (3C-1, T) feature matrix."""
    m = mfcc(frame_and_window(samples, cfg), cfg)
    if cfg.cmn:
        m = m - m.mean(axis=1, keepdims=True)
    d, d2 = deltas(m, cfg.delta_window)
    feats = assemble_features(m, d, d2)
    if not np.all(np.isfinite(feats)):
        raise FloatingPointError("non-finite feature values")
    return feats


class StreamingFeatureExtractor:
    """Incremental version of :func:`extract_features`.

    ``push`` returns the feature columns that became final, ``finish``
    flushes the tail. The concatenated output equals the offline features
    bit for bit. A column is final once ``2 * delta_window`` later MFCC
    frames exist.
    """

    def __init__(self, cfg: FeatureConfig = FeatureConfig()):
        if cfg.cmn:
            raise ValueError("cepstral mean normalisation needs the whole utterance")
        self.cfg = cfg
        self._fb = mel_filterbank(cfg)
        self._win = hann_periodic(cfg.frame_len)
        self._audio = np.zeros(0)
        self._m = np.zeros((cfg.n_mfcc, 0))
        self._m_off = 0      # global index of self._m[:, 0]
        self._emitted = 0    # number of feature columns returned so far
        self._finished = False

    @property
    def n_mfcc_frames(self):
        return self._m_off + self._m.shape[1]

    def _m_global(self, lo, hi):
        """MFCC columns for global indices [lo, hi] with edge replication."""
        n = self.n_mfcc_frames
        idx = np.clip(np.arange(lo, hi + 1), 0, n - 1) - self._m_off
        return self._m[:, idx]

    def push(self, samples) -> np.ndarray:
        if self._finished:
            raise RuntimeError("stream already finished")
        cfg = self.cfg
        self._audio = np.concatenate([self._audio, np.asarray(samples, dtype=np.float64)])
        n_new = cfg.n_frames(len(self._audio))
        if n_new:
            cols = np.empty((cfg.n_mfcc, n_new))
            for t in range(n_new):
                frame = self._audio[t * cfg.hop:t * cfg.hop + cfg.frame_len] * self._win
                logmel = log_mel_frame(frame, self._fb, cfg)
                cols[:, t] = scipy.fft.dct(logmel, type=2, norm="ortho")[: cfg.n_mfcc]
            self._m = np.concatenate([self._m, cols], axis=1)
            self._audio = self._audio[n_new * cfg.hop:]
        return self._emit(self.n_mfcc_frames - 1 - 2 * cfg.delta_window)

    def finish(self) -> np.ndarray:
        if self._finished:
            return np.zeros((self.cfg.n_features, 0))
        self._finished = True
        if self.n_mfcc_frames == 0:
            raise TooShortError("stream ended before one full frame")
        return self._emit(self.n_mfcc_frames - 1)

    def _emit(self, t_max) -> np.ndarray:
        w = self.cfg.delta_window
        e = self._emitted
        n = self.n_mfcc_frames
        if t_max < e:
            return np.zeros((self.cfg.n_features, 0))
        # deltas needed on [e - w, t_max + w], only valid indices are computed
        d_lo, d_hi = max(0, e - w), min(n - 1, t_max + w)
        d = _regress(self._m_global(d_lo - w, d_hi + w), w)
        # replicate delta at the true stream edges only
        pad_lo = d_lo - (e - w)
        pad_hi = (t_max + w) - d_hi
        d_ext = np.concatenate(
            [np.repeat(d[:, :1], pad_lo, axis=1), d, np.repeat(d[:, -1:], pad_hi, axis=1)], axis=1
        )
        d2 = _regress(d_ext, w)
        delta = d_ext[:, w:w + (t_max - e + 1)]
        static = self._m_global(e, t_max)
        out = assemble_features(static, delta, d2)
        self._emitted = t_max + 1
        keep_from = max(0, self._emitted - 2 * w)
        drop = keep_from - self._m_off
        if drop > 0:
            self._m = self._m[:, drop:]
            self._m_off = keep_from
        return out
