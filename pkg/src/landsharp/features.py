"""Log-mel spectrogram frontend and 16-bit PCM WAV ingestion.

Framing starts at sample 0 with no centre padding, so a signal of length
``n`` yields ``(n - window) // hop + 1`` frames. Each frame is Hann
windowed (periodic), transformed with an FFT of the window length, turned
into a power spectrum and projected on an HTK-scale triangular mel
filterbank; the result is ``ln(max(energy, log_floor))``.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window

TARGET_RATE = 16000


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = TARGET_RATE
    window: int = 512  # 32 ms
    hop: int = 160  # 10 ms
    mel_bins: int = 64
    fmin: float = 50.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.window < self.hop:
            raise ValueError("window must be >= hop")
        if self.mel_bins < 1:
            raise ValueError("mel_bins must be >= 1")
        if self.fmax > self.sample_rate / 2:
            raise ValueError("fmax must not exceed the Nyquist frequency")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError("need 0 <= fmin < fmax")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(cfg: FeatureConfig) -> np.ndarray:
    """Centre frequency in Hz of each mel band."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    return edges[1:-1]


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """[mel_bins, window//2 + 1] triangles with unit peak at each band centre."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    freqs = np.fft.rfftfreq(cfg.window, 1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(n: int, window: int, hop: int) -> int:
    return (n - window) // hop + 1


def logmel(signal, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Log-mel spectrogram [mel_bins, frames] (float32)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono 1-D signal, got shape {x.shape}")
    if len(x) < cfg.window:
        raise ValueError(f"signal has {len(x)} samples, shorter than one window ({cfg.window})")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window)[::cfg.hop]
    spec = np.fft.rfft(frames * get_window("hann", cfg.window, fftbins=True), axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energy = mel_filterbank(cfg) @ power.T
    return np.log(np.maximum(energy, cfg.log_floor)).astype(np.float32)


class WavError(ValueError):
    """Malformed or unsupported WAV input."""


def resample_linear(x: np.ndarray, src_rate: int, dst_rate: int = TARGET_RATE) -> np.ndarray:
    """Linear-interpolation resampling; output length is round(len * dst / src)."""
    if src_rate == dst_rate:
        return x
    n_out = int(round(len(x) * dst_rate / src_rate))
    t = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t, np.arange(len(x)), x)


def load_wav(path, target_rate: int = TARGET_RATE) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV as float samples in [-1, 1), mono, at ``target_rate``."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            width = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavError(f"{path}: not a readable PCM WAV file ({exc})") from None
    except EOFError:
        raise WavError(f"{path}: truncated RIFF header") from None
    if width != 2:
        raise WavError(f"{path}: unsupported sample width {8 * width} bits (need 16-bit PCM)")
    if channels not in (1, 2):
        raise WavError(f"{path}: unsupported channel count {channels}")
    pcm = np.frombuffer(raw, dtype="<i2")
    if len(pcm) % channels:
        raise WavError(f"{path}: data chunk is not a whole number of frames")
    x = pcm.reshape(-1, channels).astype(np.float64) / 32768.0
    x = x.mean(axis=1) if channels == 2 else x[:, 0]
    return resample_linear(x, rate, target_rate), target_rate


def save_wav(path, samples, rate: int = TARGET_RATE):
    """Write mono float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())
