"""Mel-spectrogram front end: framing, windowed DFT power, mel projection,
log compression and bilinear resize to the square image the model consumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 4000
    duration_s: float = 8.0
    win_length: int = 256
    hop_length: int = 64
    fft_size: int = 256
    window: str = "hann"
    n_mels: int = 128
    f_min: float = 50.0
    f_max: float = 2000.0
    out_side: int = 256  # side of the square spectrogram image

    def __post_init__(self):
        if not self.hop_length <= self.win_length <= self.fft_size:
            raise ValueError("need hop <= win <= fft_size")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size {self.fft_size} is not a power of two")
        if self.window not in ("hann", "rectangular"):
            raise ValueError(f"window must be hann|rectangular, got {self.window!r}")
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError("need 0 <= f_min < f_max <= rate/2")
        if self.n_mels < 2:
            raise ValueError("n_mels must be >= 2")
        if self.out_side < 1:
            raise ValueError("out_side must be >= 1")

    def digest(self) -> str:
        """Cache key: any field change invalidates spectrogram caches."""
        text = "|".join(f"{k}={getattr(self, k)}" for k in sorted(self.__dataclass_fields__))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _window(cfg: DspConfig) -> np.ndarray:
    if cfg.window == "hann":
        n = np.arange(cfg.win_length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.win_length)
    return np.ones(cfg.win_length)


def frame_signal(samples: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Overlapping frames, frame i starting at i*hop; the tail that does not
    fill a whole window is dropped, never zero-padded."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected 1-D signal, got shape {x.shape}")
    if len(x) < cfg.win_length:
        raise ValueError(f"signal of {len(x)} samples shorter than window {cfg.win_length}")
    n_frames = (len(x) - cfg.win_length) // cfg.hop_length + 1
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    return x[idx]


def stft_power(frames: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """|DFT|^2 of each windowed, zero-padded frame; one-sided bins 0..fft/2."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"expected non-empty frame matrix, got shape {frames.shape}")
    if frames.shape[1] != cfg.win_length:
        raise ValueError(f"frame length {frames.shape[1]} != win_length {cfg.win_length}")
    spec = np.fft.rfft(frames * _window(cfg), n=cfg.fft_size, axis=1)
    return np.abs(spec) ** 2


def hz_to_mel(f) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray       # [n_mels, fft/2 + 1]
    center_freqs: np.ndarray  # Hz per band


def mel_filterbank(fft_size: int, n_mels: int, f_min: float, f_max: float,
                   sample_rate: int) -> MelFilterbank:
    """Triangular filters with n_mels + 2 equally spaced mel points."""
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError("need 0 <= f_min < f_max <= rate/2")
    if n_mels < 2:
        raise ValueError("n_mels must be >= 2")
    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, fft_size // 2 + 1)
    weights = np.zeros((n_mels, fft_size // 2 + 1))
    for i in range(n_mels):
        lo, mid, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - lo) / (mid - lo)
        down = (hi - fft_freqs) / (hi - mid)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
    return MelFilterbank(weights=weights, center_freqs=hz_points[1:-1])


def resize_bilinear(matrix: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Corner-aligned bilinear resize.

    Interpolation uses the lerp form a + t*(b - a), which is exact for
    constant inputs and reduces to a copy when shapes already match.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected non-empty 2-D matrix, got shape {m.shape}")
    if out_rows < 1 or out_cols < 1:
        raise ValueError("output dimensions must be positive")
    in_rows, in_cols = m.shape
    if (in_rows, in_cols) == (out_rows, out_cols):
        return m.copy()

    def grid(n_out, n_in):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out), np.zeros(n_out, dtype=int)
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(pos.astype(int), n_in - 2)
        return pos - lo, lo

    tr, r0 = grid(out_rows, in_rows)
    tc, c0 = grid(out_cols, in_cols)
    r1 = np.minimum(r0 + 1, in_rows - 1)
    c1 = np.minimum(c0 + 1, in_cols - 1)

    top = m[np.ix_(r0, c0)]
    top = top + tc[None, :] * (m[np.ix_(r0, c1)] - top)
    bot = m[np.ix_(r1, c0)]
    bot = bot + tc[None, :] * (m[np.ix_(r1, c1)] - bot)
    return top + tr[:, None] * (bot - top)


def mel_spectrogram(power_spec: np.ndarray, filterbank: MelFilterbank,
                    out_side: int = 256) -> np.ndarray:
    """Project to mel, compress to dB with an 80 dB floor, resize to the
    square image and min-max normalize to [0, 1].

    Row 0 is the lowest mel band; columns are time. An all-equal map —
    e.g. silence — normalizes to all zeros.
    """
    p = np.asarray(power_spec, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != filterbank.weights.shape[1]:
        raise ValueError(f"power bins {p.shape} vs filterbank {filterbank.weights.shape}")
    mel_power = filterbank.weights @ p.T  # [n_mels, frames]
    db = 10.0 * np.log10(mel_power + 1e-10)
    db = np.maximum(db, db.max() - 80.0)
    img = resize_bilinear(db, out_side, out_side)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0.0:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def cycle_to_mel(samples: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Whole front end for one fixed-duration cycle."""
    frames = frame_signal(samples, cfg)
    power = stft_power(frames, cfg)
    fb = mel_filterbank(cfg.fft_size, cfg.n_mels, cfg.f_min, cfg.f_max, cfg.sample_rate)
    return mel_spectrogram(power, fb, cfg.out_side)


def write_pgm(path, mel: np.ndarray) -> None:
    """8-bit binary PGM; the highest frequency is drawn as the top row."""
    img = np.flipud(np.asarray(mel))
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
