"""Inverse relative transfer function estimation from sub-block PSD statistics.

The estimator models the reference channel as an unknown per-frequency
multiple of channel i plus a noise term whose cross-PSD with channel i is
constant across sub-blocks. Dividing a block into N equally long sub-blocks
gives N linear equations per frequency with two unknowns (the inverse RTF and
that constant); the least-squares solution has a closed form in the first and
second moments of the mask-weighted sub-block PSDs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SizeError
from .vad import Mask, mask_values

# Frames per sub-block (80 ms at the 512/128 framing).
SUB_BLOCK_LEN_DEFAULT = 10

# Variance guard: below this (relative to the squared mean auto-PSD) the
# across-sub-block variance is considered degenerate and the estimator falls
# back to the plain PSD ratio.
VARIANCE_GUARD = 1e-12

# Tikhonov term for the reciprocal of near-zero inverse-RTF estimates.
RECIPROCAL_REG = 1e-6


@dataclass
class SubblockPsd:
    """Mask-weighted (cross-)PSD sums per frequency and sub-block."""

    cross: np.ndarray  # (bins, sub_blocks) complex, ref x conj(i)
    auto: np.ndarray  # (bins, sub_blocks) real >= 0, |i|^2
    sub_block_len: int

    @property
    def sub_block_count(self) -> int:
        return self.cross.shape[1]


def compute_subblock_psd(bins, ref: int, channel: int, mask, sub_block_len: int = SUB_BLOCK_LEN_DEFAULT) -> SubblockPsd:
    """Accumulate mask-weighted PSD estimates over equally long sub-blocks.

    Arguments:
        bins: complex STFT tensor (K, L, M)
        ref, channel: channel indices into the last axis
        mask: (K, L) speech-presence weights applied to both sums
        sub_block_len: frames per sub-block; trailing frames that do not fill
            a sub-block are discarded

    Requires L >= 2 * sub_block_len so the estimator sees variation across
    sub-blocks.
    """
    x = np.asarray(bins)
    if x.ndim != 3:
        raise SizeError(f"expected (bins, frames, channels) tensor, got shape {x.shape}")
    n_bins, n_frames, _ = x.shape
    weights = mask_values(mask)
    if weights.shape != (n_bins, n_frames):
        raise SizeError(f"mask shape {weights.shape} != spectrogram grid {(n_bins, n_frames)}")
    if n_frames < 2 * sub_block_len:
        raise SizeError(
            f"block has {n_frames} frames; needs >= 2 sub-blocks of {sub_block_len}"
        )
    n_sub = n_frames // sub_block_len
    used = n_sub * sub_block_len

    w = weights[:, :used].reshape(n_bins, n_sub, sub_block_len)
    x_ref = x[:, :used, ref].reshape(n_bins, n_sub, sub_block_len)
    x_i = x[:, :used, channel].reshape(n_bins, n_sub, sub_block_len)

    cross = np.sum(w * x_ref * np.conj(x_i), axis=2)
    auto = np.sum(w * (x_i.real**2 + x_i.imag**2), axis=2)
    return SubblockPsd(cross=cross, auto=auto, sub_block_len=sub_block_len)


def _closed_form(cross: np.ndarray, auto: np.ndarray):
    """Least-squares slope of cross vs auto across sub-blocks, per frequency.

    Returns (inverse RTF per bin, fallback flags). Bins whose auto-PSD
    variance is degenerate fall back to mean(cross)/mean(auto), or 1 when
    even the mean auto-PSD vanishes.
    """
    mean_cross = cross.mean(axis=1)
    mean_auto = auto.mean(axis=1)
    covar = (cross * auto).mean(axis=1) - mean_cross * mean_auto
    var = (auto * auto).mean(axis=1) - mean_auto * mean_auto

    guard = VARIANCE_GUARD * mean_auto * mean_auto
    fallback = (var < guard) | (var <= 0.0)

    ratio = np.ones_like(mean_cross)
    np.divide(mean_cross, mean_auto, out=ratio, where=mean_auto > 0)
    g_inv = np.divide(covar, var, out=ratio.astype(np.complex128), where=~fallback)
    return g_inv, fallback


def estimate_rtf_inverse(psd: SubblockPsd) -> np.ndarray:
    """Closed-form inverse RTF per frequency bin from sub-block statistics."""
    if psd.sub_block_count < 2:
        raise SizeError("estimation needs at least 2 sub-blocks")
    g_inv, _ = _closed_form(psd.cross, psd.auto)
    return g_inv


def reciprocal_rtf(inv_rtf: np.ndarray, reg: float = RECIPROCAL_REG) -> np.ndarray:
    """Regularized reciprocal: conj(g)/(|g|^2 + reg), finite even at g = 0."""
    return np.conj(inv_rtf) / (np.abs(inv_rtf) ** 2 + reg)


@dataclass
class RtfSet:
    """Per-frequency inverse RTFs and regularized RTFs for the active channels.

    Column order follows `channels`; the reference column of inv_rtf is
    exactly 1.
    """

    inv_rtf: np.ndarray  # (bins, active_channels) complex
    rtf: np.ndarray  # (bins, active_channels) complex
    ref: int  # column index of the reference channel
    channels: tuple  # original channel index per column
    fallback_bins: dict = field(default_factory=dict)  # channel -> guarded bin count

    @property
    def n_channels(self) -> int:
        return self.inv_rtf.shape[1]

    @property
    def n_bins(self) -> int:
        return self.inv_rtf.shape[0]


def build_rtf_set(
    bins,
    masks,
    ref_channel: int = 0,
    sub_block_len: int = SUB_BLOCK_LEN_DEFAULT,
    active: Sequence[int] | None = None,
) -> RtfSet:
    """Estimate inverse RTFs for every active non-reference channel.

    Arguments:
        bins: complex STFT tensor (K, L, M)
        masks: one Mask/array shared by all channels, or a per-channel
            sequence indexed by original channel (entries for the reference
            channel are ignored and may be None)
        active: original channel indices to keep; defaults to all. Columns
            for excluded channels do not appear in the result.
    """
    x = np.asarray(bins)
    if x.ndim != 3:
        raise SizeError(f"expected (bins, frames, channels) tensor, got shape {x.shape}")
    n_bins, _, n_ch = x.shape
    channels = tuple(range(n_ch)) if active is None else tuple(sorted(int(c) for c in active))
    if len(channels) < 1:
        raise SizeError("no active channels")
    if ref_channel not in channels:
        raise SizeError(f"reference channel {ref_channel} is not active")

    if isinstance(masks, (Mask, np.ndarray)):
        mask_for = lambda i: masks
    else:
        mask_for = lambda i: masks[i]

    inv_rtf = np.ones((n_bins, len(channels)), dtype=np.complex128)
    fallback_bins = {}
    for col, ch in enumerate(channels):
        if ch == ref_channel:
            continue
        psd = compute_subblock_psd(x, ref_channel, ch, mask_for(ch), sub_block_len)
        g_inv, fallback = _closed_form(psd.cross, psd.auto)
        inv_rtf[:, col] = g_inv
        n_fb = int(np.count_nonzero(fallback))
        if n_fb:
            fallback_bins[ch] = n_fb

    return RtfSet(
        inv_rtf=inv_rtf,
        rtf=reciprocal_rtf(inv_rtf),
        ref=channels.index(ref_channel),
        channels=channels,
        fallback_bins=fallback_bins,
    )


def dump_rtf_csv(rtf: RtfSet, path) -> None:
    """Debug dump: per bin, magnitude and phase of each channel's inverse RTF."""
    cols = [np.arange(rtf.n_bins)]
    header = ["bin"]
    for col, ch in enumerate(rtf.channels):
        cols.append(np.abs(rtf.inv_rtf[:, col]))
        cols.append(np.angle(rtf.inv_rtf[:, col]))
        header.append(f"ch{ch}_mag")
        header.append(f"ch{ch}_phase")
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(header), comments="")
