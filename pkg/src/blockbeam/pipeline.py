"""Block-online orchestration: failure detection, STFT, VAD, RTF, beamforming,
post-filtering and resynthesis, applied independently to each block."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .audio_io import MultichannelSignal, NetworkWeights
from .beamform import apply_weights, estimate_noise, gev_weights, irtf_weights, mvdr_weights
from .channel_health import T_MU_SIMULATED, detect_failures
from .errors import ConfigError, SizeError
from .postfilter import PostfilterConfig, apply_postfilter, residual_noise, wiener_mask
from .rtf import SUB_BLOCK_LEN_DEFAULT, RtfSet, build_rtf_set
from .stft import Spectrogram, StftConfig, analyze, frame_count, synthesize
from .vad import Mask, T_SNR_DEFAULT, infer_mask, oracle_ibm, pool_median, unit_mask

BEAMFORMERS = ("irtf", "mvdr", "gev")
POSTFILTERS = ("none", "wiener", "ban")
VAD_MODES = ("none", "oracle", "network")
POOLING_MODES = ("none", "median")

# Post-filters that make sense for each beamformer; "none" is always allowed.
VALID_PAIRINGS = {
    "irtf": {"none", "wiener"},
    "mvdr": {"none", "wiener"},
    "gev": {"none", "ban"},
}


@dataclass
class PipelineConfig:
    """Block-online enhancement settings.

    block_frames is an STFT frame count per block, or "batch" to process the
    whole recording as a single block. No statistics are carried between
    blocks.
    """

    block_frames: int | str = 100
    beamformer: str = "irtf"
    postfilter: str = "wiener"
    vad_mode: str = "oracle"
    pooling: str = "median"
    ref_channel: int = 0
    t_mu: float = T_MU_SIMULATED
    t_snr: float = T_SNR_DEFAULT
    sub_block_len: int = SUB_BLOCK_LEN_DEFAULT
    stft: StftConfig = field(default_factory=StftConfig)
    post: PostfilterConfig = field(default_factory=PostfilterConfig)
    allow_any_pairing: bool = False
    keep_intermediates: bool = False

    def __post_init__(self):
        if self.beamformer not in BEAMFORMERS:
            raise ConfigError(f"unknown beamformer {self.beamformer!r}")
        if self.postfilter not in POSTFILTERS:
            raise ConfigError(f"unknown postfilter {self.postfilter!r}")
        if self.vad_mode not in VAD_MODES:
            raise ConfigError(f"unknown vad mode {self.vad_mode!r}")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"unknown pooling mode {self.pooling!r}")
        if not self.is_batch:
            if not isinstance(self.block_frames, int):
                raise ConfigError(f"block_frames must be an int or 'batch', got {self.block_frames!r}")
            if self.block_frames < 2 * self.sub_block_len:
                raise ConfigError(
                    f"block_frames {self.block_frames} < 2 * sub_block_len "
                    f"({2 * self.sub_block_len}); the RTF estimator needs 2 sub-blocks"
                )
        if self.sub_block_len < 1:
            raise ConfigError(f"sub_block_len must be >= 1, got {self.sub_block_len}")
        if self.ref_channel < 0:
            raise ConfigError(f"ref_channel must be >= 0, got {self.ref_channel}")
        if not 0 <= self.t_mu <= 1:
            raise ConfigError(f"t_mu must be in [0, 1], got {self.t_mu}")
        if not self.allow_any_pairing and self.postfilter not in VALID_PAIRINGS[self.beamformer]:
            raise ConfigError(
                f"postfilter {self.postfilter!r} is not paired with beamformer "
                f"{self.beamformer!r}; pass allow_any_pairing to override"
            )

    @property
    def is_batch(self) -> bool:
        return self.block_frames == "batch"


@dataclass
class OracleStems:
    """Known clean/noise decomposition of the mixture, for oracle masks."""

    clean: MultichannelSignal
    noise: MultichannelSignal


@dataclass
class BlockDiagnostics:
    active_channels: list[int] = field(default_factory=list)
    passthrough: bool = False
    ref_fallback: bool = False
    rtf_fallback_bins: int = 0
    mvdr_fallback_bins: int = 0
    gev_degenerate_bins: int = 0
    noise_loaded_bins: int = 0
    timings: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "active_channels": list(self.active_channels),
            "passthrough": self.passthrough,
            "ref_fallback": self.ref_fallback,
            "fallbacks": {
                "rtf_variance_guard_bins": self.rtf_fallback_bins,
                "mvdr_fallback_bins": self.mvdr_fallback_bins,
                "gev_degenerate_bins": self.gev_degenerate_bins,
                "noise_cov_loaded_bins": self.noise_loaded_bins,
            },
            "timings_s": {k: round(v, 6) for k, v in self.timings.items()},
        }


@dataclass
class BlockResult:
    enhanced: np.ndarray  # (bins, frames) complex
    diagnostics: BlockDiagnostics
    pooled_mask: Mask | None = None
    rtf: RtfSet | None = None


class _StageTimer:
    def __init__(self, timings: dict, name: str):
        self.timings = timings
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.start
        return False


def _channel_masks(bins_active, active, ref, cfg, network, oracle_bins):
    """Masks for the non-reference active channels, keyed by position in the
    active-channel array."""
    n_bins, n_frames, _ = bins_active.shape
    masks = {}
    for pos, ch in enumerate(active):
        if ch == ref:
            continue
        if cfg.vad_mode == "none":
            masks[pos] = unit_mask(n_bins, n_frames)
        elif cfg.vad_mode == "oracle":
            clean_bins, noise_bins = oracle_bins
            masks[pos] = oracle_ibm(clean_bins[:, :, ch], noise_bins[:, :, ch], cfg.t_snr)
        else:
            masks[pos] = infer_mask(network, bins_active[:, :, pos])
    return masks


def process_block(
    block: MultichannelSignal,
    cfg: PipelineConfig,
    network: NetworkWeights | None = None,
    oracle: OracleStems | None = None,
) -> BlockResult:
    """Enhance one block with no state from other blocks.

    Sequence: microphone-failure detection, STFT, per-channel VAD masks for
    the non-reference channels, optional median pooling, inverse-RTF
    estimation, beamforming, post-filtering. Returns the enhanced block in
    the frequency domain plus diagnostics. If fewer than two channels
    survive failure detection, the reference channel passes through
    unprocessed and the block is flagged.
    """
    if cfg.ref_channel >= block.channel_count:
        raise ConfigError(
            f"ref_channel {cfg.ref_channel} out of range for {block.channel_count} channels"
        )
    diag = BlockDiagnostics()
    timings = diag.timings

    with _StageTimer(timings, "failure_detection"):
        if block.channel_count >= 2:
            report = detect_failures(block, cfg.t_mu)
            active = report.active_indices
        else:
            active = [0]
    diag.active_channels = active

    if len(active) < 2:
        diag.passthrough = True
        with _StageTimer(timings, "stft"):
            ref = cfg.ref_channel
            spec = analyze(MultichannelSignal(block.samples[ref : ref + 1], block.sample_rate), cfg.stft)
        return BlockResult(enhanced=spec.bins[:, :, 0], diagnostics=diag)

    if cfg.ref_channel in active:
        ref = cfg.ref_channel
    else:
        ref = active[0]
        diag.ref_fallback = True
    ref_pos = active.index(ref)

    with _StageTimer(timings, "stft"):
        spec = analyze(block, cfg.stft)
        bins_active = spec.bins[:, :, active]
        oracle_bins = None
        if cfg.vad_mode == "oracle":
            if oracle is None:
                raise ConfigError("oracle VAD mode needs clean/noise stems")
            oracle_bins = (
                analyze(oracle.clean, cfg.stft).bins,
                analyze(oracle.noise, cfg.stft).bins,
            )

    with _StageTimer(timings, "vad"):
        if cfg.vad_mode == "network" and network is None:
            raise ConfigError("network VAD mode needs loaded weights")
        masks = _channel_masks(bins_active, active, ref, cfg, network, oracle_bins)
        pooled = pool_median([masks[pos] for pos in sorted(masks)])

    rtf = None
    noise_est = None
    cov = None
    need_rtf = cfg.beamformer in ("irtf", "mvdr") or cfg.postfilter == "wiener"
    if need_rtf:
        with _StageTimer(timings, "rtf"):
            if cfg.pooling == "median":
                rtf_masks = pooled
            else:
                rtf_masks = [masks.get(pos) for pos in range(len(active))]
            rtf = build_rtf_set(
                bins_active, rtf_masks, ref_channel=ref_pos, sub_block_len=cfg.sub_block_len
            )
            diag.rtf_fallback_bins = sum(rtf.fallback_bins.values())

    with _StageTimer(timings, "beamform"):
        if cfg.beamformer == "irtf":
            weights = irtf_weights(rtf)
        elif cfg.beamformer == "mvdr":
            noise_est, cov = estimate_noise(bins_active, rtf)
            diag.noise_loaded_bins = cov.loaded_bins
            weights = mvdr_weights(cov, rtf)
            diag.mvdr_fallback_bins = weights.fallback_bins
        else:
            weights = gev_weights(bins_active, pooled, ref_component=ref_pos)
            diag.gev_degenerate_bins = weights.fallback_bins
        beam_out = apply_weights(weights, bins_active, use_ban=(cfg.postfilter == "ban"))

    with _StageTimer(timings, "postfilter"):
        if cfg.postfilter == "wiener":
            if noise_est is None:
                noise_est, cov = estimate_noise(bins_active, rtf)
                diag.noise_loaded_bins = cov.loaded_bins
            residual = residual_noise(weights, noise_est)
            speech_mask = None if cfg.vad_mode == "none" else pooled
            gain = wiener_mask(beam_out, residual, speech_mask, cfg.stft.bin_frequencies(), cfg.post)
            enhanced = apply_postfilter(beam_out, gain)
        else:
            enhanced = beam_out

    return BlockResult(
        enhanced=enhanced,
        diagnostics=diag,
        pooled_mask=pooled if cfg.keep_intermediates else None,
        rtf=rtf if cfg.keep_intermediates else None,
    )


def partition_frames(n_samples: int, cfg: PipelineConfig) -> list[tuple[int, int]]:
    """(start_frame, frame_count) per block on the stream's STFT frame grid.

    Batch mode yields a single block covering every frame. A trailing partial
    block shorter than two sub-blocks is merged into the previous block;
    longer remainders stand alone.
    """
    total = frame_count(n_samples, cfg.stft)
    if cfg.is_batch:
        return [(0, total)]
    size = cfg.block_frames
    if total < size:
        raise SizeError(f"signal has {total} frames, shorter than one block ({size})")
    n_full, rem = divmod(total, size)
    counts = [size] * n_full
    if rem:
        if rem < 2 * cfg.sub_block_len:
            counts[-1] += rem
        else:
            counts.append(rem)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return [(int(s), int(c)) for s, c in zip(starts, counts)]


def block_sample_range(start_frame: int, n_frames: int, stft_cfg: StftConfig) -> tuple[int, int]:
    """Sample interval covered by a run of STFT frames."""
    start = start_frame * stft_cfg.hop
    return start, start + stft_cfg.frame_len + (n_frames - 1) * stft_cfg.hop


def _slice_signal(signal: MultichannelSignal, lo: int, hi: int) -> MultichannelSignal:
    return MultichannelSignal(signal.samples[:, lo:hi], signal.sample_rate)


def run_with_diagnostics(
    signal: MultichannelSignal,
    cfg: PipelineConfig,
    network: NetworkWeights | None = None,
    oracle: OracleStems | None = None,
) -> tuple[MultichannelSignal, list[BlockResult]]:
    """Enhance a whole recording and return per-block results.

    Blocks partition the stream's frame grid, so consecutive blocks share
    frame_len - hop samples of time support; each synthesized block is
    cross-faded into the next over one hop to avoid seam clicks. The output
    covers exactly the samples spanned by full STFT frames, so up to hop - 1
    trailing input samples are trimmed.
    """
    if signal.sample_rate != cfg.stft.sample_rate:
        raise ConfigError(
            f"input rate {signal.sample_rate} != configured rate {cfg.stft.sample_rate}; "
            "resampling is out of scope"
        )
    if oracle is not None:
        for stem in (oracle.clean, oracle.noise):
            if stem.channel_count != signal.channel_count or stem.n_samples < signal.n_samples:
                raise SizeError("oracle stems must cover every channel and sample of the mixture")

    blocks = partition_frames(signal.n_samples, cfg)
    results = []
    pieces = []
    for start_frame, n_frames in blocks:
        lo, hi = block_sample_range(start_frame, n_frames, cfg.stft)
        block_oracle = None
        if oracle is not None:
            block_oracle = OracleStems(
                clean=_slice_signal(oracle.clean, lo, hi),
                noise=_slice_signal(oracle.noise, lo, hi),
            )
        result = process_block(_slice_signal(signal, lo, hi), cfg, network, block_oracle)
        results.append(result)
        synth = synthesize(Spectrogram(result.enhanced[:, :, None], cfg.stft))
        pieces.append((lo, synth.samples[0]))

    hop = cfg.stft.hop
    total_frames = sum(n for _, n in blocks)
    out_len = cfg.stft.frame_len + (total_frames - 1) * hop
    out = np.zeros(out_len)
    fade_in = (np.arange(hop) + 0.5) / hop
    for idx, (lo, piece) in enumerate(pieces):
        if idx == 0:
            out[lo : lo + piece.shape[0]] = piece
        else:
            out[lo : lo + hop] *= 1.0 - fade_in
            out[lo : lo + hop] += fade_in * piece[:hop]
            out[lo + hop : lo + piece.shape[0]] = piece[hop:]
    return MultichannelSignal(out[np.newaxis, :], signal.sample_rate), results


def run(
    signal: MultichannelSignal,
    cfg: PipelineConfig,
    network: NetworkWeights | None = None,
    oracle: OracleStems | None = None,
) -> MultichannelSignal:
    """Enhance a whole recording; single-channel output."""
    enhanced, _ = run_with_diagnostics(signal, cfg, network, oracle)
    return enhanced


def frames_for_duration_ms(duration_ms: float, stft_cfg: StftConfig) -> int:
    """Block length in frames whose hop grid spans the given duration."""
    return max(1, round(duration_ms * stft_cfg.sample_rate / 1000.0 / stft_cfg.hop))
