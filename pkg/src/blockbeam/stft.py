"""Short-time Fourier analysis and weighted overlap-add synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import MultichannelSignal
from .errors import ConfigError, DataError, SizeError

# Floor for the summed squared synthesis window; the periodic Hamming window
# never falls below 0.08, so the floor only matters for pathological configs.
WINDOW_SUM_FLOOR = 1e-8


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 512
    hop: int = 128
    window: str = "hamming"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2 != 0:
            raise ConfigError(f"frame_len must be positive and even, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ConfigError(f"hop must be in (0, frame_len], got {self.hop}")
        if self.window != "hamming":
            raise ConfigError(f"unsupported window {self.window!r}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def bin_frequencies(self) -> np.ndarray:
        """Center frequency in Hz of each one-sided FFT bin."""
        return np.arange(self.n_bins) * (self.sample_rate / self.frame_len)


def periodic_hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    """One-sided complex STFT, shape (bins, frames, channels)."""

    bins: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 3:
            raise SizeError(f"expected (bins, frames, channels) tensor, got shape {self.bins.shape}")
        if self.bins.shape[0] != self.config.n_bins:
            raise SizeError(
                f"bin count {self.bins.shape[0]} != frame_len/2+1 = {self.config.n_bins}"
            )
        if not np.all(np.isfinite(self.bins)):
            raise DataError("spectrogram contains non-finite entries")

    @property
    def n_bins(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def n_channels(self) -> int:
        return self.bins.shape[2]

    def channel(self, i: int) -> np.ndarray:
        return self.bins[:, :, i]


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    """Number of full frames covering a signal of the given length."""
    if n_samples < cfg.frame_len:
        raise SizeError(f"signal length {n_samples} shorter than one frame ({cfg.frame_len})")
    return (n_samples - cfg.frame_len) // cfg.hop + 1


def analyze(signal: MultichannelSignal, cfg: StftConfig | None = None) -> Spectrogram:
    """STFT of every channel.

    Frame l covers samples [l*hop, l*hop + frame_len); frames are weighted by
    the periodic Hamming window and transformed with a one-sided FFT. No
    padding or centering is applied, so edge frames are real signal frames.
    """
    if cfg is None:
        cfg = StftConfig(sample_rate=signal.sample_rate)
    n_frames = frame_count(signal.n_samples, cfg)
    window = periodic_hamming(cfg.frame_len)
    frames = sliding_window_view(signal.samples, cfg.frame_len, axis=1)[:, :: cfg.hop, :]
    frames = frames[:, :n_frames, :]
    spec = np.fft.rfft(frames * window, axis=-1)  # (channels, frames, bins)
    return Spectrogram(np.ascontiguousarray(spec.transpose(2, 1, 0)), cfg)


def synthesize(spec: Spectrogram) -> MultichannelSignal:
    """Weighted overlap-add inverse of analyze.

    Each frame is inverse-transformed, weighted by the synthesis window and
    accumulated; the result is normalized by the summed squared window, which
    reconstructs the analyzed samples wherever that sum is above the floor.
    """
    cfg = spec.config
    n_frames = spec.n_frames
    window = periodic_hamming(cfg.frame_len)
    frames = np.fft.irfft(spec.bins.transpose(2, 1, 0), n=cfg.frame_len, axis=-1)
    frames *= window

    out_len = cfg.frame_len + (n_frames - 1) * cfg.hop
    out = np.zeros((spec.n_channels, out_len))
    win_sum = np.zeros(out_len)
    win_sq = window * window
    for l in range(n_frames):
        start = l * cfg.hop
        out[:, start : start + cfg.frame_len] += frames[:, l, :]
        win_sum[start : start + cfg.frame_len] += win_sq
    out /= np.maximum(win_sum, WINDOW_SUM_FLOOR)
    return MultichannelSignal(out, cfg.sample_rate)
