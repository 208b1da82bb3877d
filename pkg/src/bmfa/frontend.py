"""Waveform-to-feature pipeline: 64-dim log-mel FBanks, sliding-window mean
normalization, energy VAD, and chunking into network-sized pieces.

Order of operations in the full pipeline: FBanks are computed first; the VAD
mask is decided on the raw (pre-normalization) energies; mean normalization
runs over the full matrix; then masked rows are deleted and the survivors are
chunked. Chunks and corpus features share one constraint with the backbone:
time lengths must be even, so chunk lengths are drawn from the even values
of [min_chunk, max_chunk].
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import EmptyAfterVadError, FormatError, ValidationError

N_MELS = 64


@dataclass
class FbankConfig:
    sample_rate: int = 16000
    frame_len_ms: float = 25.0
    frame_shift_ms: float = 10.0
    preemphasis: float = 0.97
    low_freq: float = 20.0
    high_freq: float | None = None  # None = Nyquist
    log_floor: float = 1e-10
    cmn_window_s: float = 3.0
    vad_offset: float = 0.0
    min_chunk: int = 200
    max_chunk: int = 400

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.frame_len_ms <= self.frame_shift_ms:
            raise ValidationError("frame_len_ms must exceed frame_shift_ms")
        high = self.high_freq if self.high_freq is not None else self.sample_rate / 2
        if not 0 <= self.low_freq < high <= self.sample_rate / 2:
            raise ValidationError(
                f"mel edges must satisfy 0 <= low < high <= Nyquist, "
                f"got [{self.low_freq}, {high}] at rate {self.sample_rate}"
            )
        if not 2 <= self.min_chunk <= self.max_chunk:
            raise ValidationError("need 2 <= min_chunk <= max_chunk")

    @property
    def frame_len(self) -> int:
        return int(round(self.sample_rate * self.frame_len_ms / 1000.0))

    @property
    def frame_shift(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    @property
    def fft_size(self) -> int:
        n = 1
        while n < self.frame_len:
            n *= 2
        return n

    @property
    def cmn_window(self) -> int:
        return int(round(1000.0 * self.cmn_window_s / self.frame_shift_ms))


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM WAV -> (float samples in [-1, 1], sample rate)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got "
                                  f"{8 * w.getsampwidth()}-bit")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise FormatError(f"{path}: not a WAV file ({e})") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise FormatError(f"{path}: empty waveform")
    return samples, rate


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    data = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(data * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FbankConfig) -> np.ndarray:
    """(N_MELS, fft_size//2 + 1) triangular filters over rfft bin frequencies."""
    high = cfg.high_freq if cfg.high_freq is not None else cfg.sample_rate / 2.0
    edges = _mel_to_hz(np.linspace(_hz_to_mel(cfg.low_freq), _hz_to_mel(high),
                                   N_MELS + 2))
    bin_freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    fb = np.zeros((N_MELS, bin_freqs.size))
    for k in range(N_MELS):
        lo, center, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[k] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_center_frequencies(cfg: FbankConfig) -> np.ndarray:
    """Center frequency in Hz of each mel filter."""
    high = cfg.high_freq if cfg.high_freq is not None else cfg.sample_rate / 2.0
    edges = _mel_to_hz(np.linspace(_hz_to_mel(cfg.low_freq), _hz_to_mel(high),
                                   N_MELS + 2))
    return edges[1:-1]


def compute_fbank(samples: np.ndarray, cfg: FbankConfig) -> np.ndarray:
    """(T, 64) log-mel energies: pre-emphasis, Hamming window, rfft power
    spectrum, triangular mel filterbank, natural log with floor."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"waveform must be 1-D, got shape {x.shape}")
    flen, shift = cfg.frame_len, cfg.frame_shift
    if x.size < flen:
        raise ValidationError(
            f"waveform of {x.size} samples is shorter than one {flen}-sample frame"
        )
    pre = np.empty_like(x)
    pre[0] = x[0] * (1.0 - cfg.preemphasis)
    pre[1:] = x[1:] - cfg.preemphasis * x[:-1]
    n_frames = 1 + (x.size - flen) // shift
    idx = np.arange(flen)[None, :] + shift * np.arange(n_frames)[:, None]
    frames = pre[idx] * np.hamming(flen)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor)).astype(np.float32)


def sliding_cmn(feats: np.ndarray, window: int) -> np.ndarray:
    """Subtract the mean of a centered window (truncated at the edges) from
    every frame, per dimension."""
    if window < 1:
        raise ValidationError(f"cmn window must be >= 1, got {window}")
    f = np.asarray(feats, dtype=np.float64)
    t = f.shape[0]
    csum = np.vstack([np.zeros((1, f.shape[1])), np.cumsum(f, axis=0)])
    starts = np.maximum(0, np.arange(t) - (window - 1) // 2)
    ends = np.minimum(t, np.arange(t) + window // 2 + 1)
    means = (csum[ends] - csum[starts]) / (ends - starts)[:, None]
    return (f - means).astype(np.float32)


def energy_vad(feats: np.ndarray, offset: float = 0.0) -> np.ndarray:
    """Boolean keep-mask: frame energy (mean log-mel over bins, computed on
    the features as given — run this on pre-CMN features) must exceed the
    utterance mean energy plus *offset*."""
    energy = np.asarray(feats, dtype=np.float64).mean(axis=1)
    mask = energy > energy.mean() + offset
    if not mask.any():
        raise EmptyAfterVadError("no frames survive the energy threshold")
    return mask


def chunk(feats: np.ndarray, rng: np.random.Generator, min_chunk: int = 200,
          max_chunk: int = 400) -> list[np.ndarray]:
    """Split into consecutive chunks with even lengths drawn uniformly from
    [min_chunk, max_chunk]; a trailing remainder shorter than min_chunk is
    dropped. Returns [] (the skip signal) when the input is too short."""
    lo, hi = (min_chunk + 1) // 2, max_chunk // 2
    if lo > hi:
        raise ValidationError(
            f"chunk range [{min_chunk}, {max_chunk}] holds no even length"
        )
    t = feats.shape[0]
    out = []
    pos = 0
    while t - pos >= min_chunk:
        size = 2 * int(rng.integers(lo, hi + 1))
        size = min(size, (t - pos) & ~1)
        out.append(feats[pos:pos + size])
        pos += size
    return out


def process_waveform(samples: np.ndarray, cfg: FbankConfig,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """Full pipeline for one utterance; returns the list of (T, 64) chunks
    (possibly empty if too little speech survives)."""
    raw = compute_fbank(samples, cfg)
    mask = energy_vad(raw, cfg.vad_offset)
    normalized = sliding_cmn(raw, cfg.cmn_window)
    return chunk(normalized[mask], rng, cfg.min_chunk, cfg.max_chunk)
