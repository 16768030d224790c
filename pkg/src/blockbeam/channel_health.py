"""Per-block microphone failure detection via cross-channel correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import MultichannelSignal
from .errors import SizeError

# Correlation thresholds calibrated for simulated and real recordings.
T_MU_SIMULATED = 0.05
T_MU_REAL = 0.40


@dataclass
class ChannelReport:
    """Per-channel max |correlation| against the other channels."""

    mu: np.ndarray  # (channels,) in [0, 1]
    active: np.ndarray  # (channels,) bool, mu >= threshold
    threshold: float

    @property
    def active_indices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.active)]

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))


def detect_failures(block: MultichannelSignal, threshold: float) -> ChannelReport:
    """Flag channels whose best zero-lag Pearson correlation falls below threshold.

    A failed microphone (disconnected, saturated to constant, pure local noise)
    decorrelates from every healthy channel. Zero-variance channels get mu = 0.
    """
    x = block.samples
    n_ch, n_samples = x.shape
    if n_ch < 2:
        raise SizeError(f"failure detection needs >= 2 channels, got {n_ch}")
    if n_samples < 2:
        raise SizeError(f"failure detection needs >= 2 samples, got {n_samples}")

    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    gram = centered @ centered.T
    denom = np.outer(norms, norms)
    corr = np.zeros_like(gram)
    ok = denom > 0
    corr[ok] = gram[ok] / denom[ok]
    np.fill_diagonal(corr, 0.0)

    mu = np.minimum(np.max(np.abs(corr), axis=1), 1.0)
    # correlation is mathematically <= 1; values within rounding of 1 come
    # from exact-copy channels and must stay active even at threshold 1
    mu[mu >= 1.0 - 1e-12] = 1.0
    return ChannelReport(mu=mu, active=mu >= threshold, threshold=float(threshold))
