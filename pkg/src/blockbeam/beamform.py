"""Inverse-RTF, MVDR and max-SNR (GEV) beamformers with BAN normalization.

All per-frequency-bin computations are independent; functions take stacked
(bins, ...) arrays and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, SizeError
from .rtf import RtfSet
from .vad import mask_values

# Relative condition cutoff below which B Cxx B^H gets diagonal loading.
NOISE_COV_RCOND = 1e-10
NOISE_COV_LOADING = 1e-6

# Singular values below this fraction of the largest are treated as zero in
# the pseudoinverse of the rank-deficient noise covariance.
PINV_RCOND = 1e-8

# Distortionless denominators at or below this relative floor trigger the
# inverse-RTF fallback for the affected bin.
MVDR_DEN_GUARD = 1e-12

# Mask sums at or below this are degenerate (no speech or no noise frames).
MASK_SUM_FLOOR = np.finfo(np.float64).tiny


@dataclass
class BeamWeights:
    """Per-frequency steering vectors; the output is u = w^H x."""

    weights: np.ndarray  # (bins, channels) complex
    method: str  # "irtf" | "mvdr" | "gev"
    ban_gain: np.ndarray | None = None  # (bins,) real, GEV only
    fallback_bins: int = 0


@dataclass
class CovarianceSet:
    """Per-bin covariance matrices, shape (bins, channels, channels).

    `sample` is the unnormalized sum over frames of x x^H; downstream
    formulas are scale-invariant so no normalization is applied. `noise_est`
    is the blocking-matrix noise covariance with rank <= channels - 1.
    """

    sample: np.ndarray | None = None
    speech: np.ndarray | None = None
    noise: np.ndarray | None = None
    noise_est: np.ndarray | None = None
    loaded_bins: int = 0


def sample_covariance(bins) -> np.ndarray:
    """Unnormalized per-bin sum of outer products, (K, M, M)."""
    x = np.asarray(bins)
    return np.einsum("klm,kln->kmn", x, np.conj(x))


def _hermitize(mats: np.ndarray) -> np.ndarray:
    return 0.5 * (mats + np.conj(mats.transpose(0, 2, 1)))


def irtf_weights(rtf: RtfSet) -> BeamWeights:
    """Average of inverse-RTF-aligned channels: u = (1/M) sum_i g_i^{-1} x_i.

    Weights are stored conjugated so the u = w^H x application contract
    realizes that sum. For a single active channel this is the identity.
    """
    m_active = rtf.n_channels
    return BeamWeights(weights=np.conj(rtf.inv_rtf) / m_active, method="irtf")


def blocking_matrix(inv_rtf: np.ndarray, ref: int) -> np.ndarray:
    """Target-blocking matrix per bin, shape (K, M-1, M).

    Row r pairs the reference channel (coefficient -1) with one non-reference
    channel scaled by its inverse RTF, so each row annihilates the target's
    spatial image when the inverse RTF is exact.
    """
    n_bins, n_ch = inv_rtf.shape
    if n_ch < 2:
        raise SizeError("blocking matrix needs >= 2 channels")
    bmat = np.zeros((n_bins, n_ch - 1, n_ch), dtype=np.complex128)
    row = 0
    for ch in range(n_ch):
        if ch == ref:
            continue
        bmat[:, row, ref] = -1.0
        bmat[:, row, ch] = inv_rtf[:, ch]
        row += 1
    return bmat


def estimate_noise(bins, rtf: RtfSet):
    """Blocked least-squares noise estimate and its covariance.

    The blocking matrix output v = B x contains only noise; the noise as
    observed on the microphones is recovered per frame by the least-squares
    projection Cxx B^H (B Cxx B^H)^{-1} v. Ill-conditioned (B Cxx B^H) bins
    receive diagonal loading instead of raising.

    Returns (noise estimate (K, L, M), CovarianceSet with sample + noise_est).
    """
    x = np.asarray(bins)
    n_bins, _, n_ch = x.shape
    if n_ch < 2:
        raise SizeError("noise estimation needs >= 2 channels")
    if rtf.n_channels != n_ch:
        raise SizeError(f"RTF set has {rtf.n_channels} channels, spectrogram has {n_ch}")

    cxx = sample_covariance(x)
    bmat = blocking_matrix(rtf.inv_rtf, rtf.ref)
    bh = np.conj(bmat.transpose(0, 2, 1))  # (K, M, M-1)
    cxx_bh = cxx @ bh  # (K, M, M-1)
    gram = bmat @ cxx_bh  # B Cxx B^H, (K, M-1, M-1)
    gram = _hermitize(gram)

    eigs = np.linalg.eigvalsh(gram)
    bad = (eigs[:, 0] <= NOISE_COV_RCOND * eigs[:, -1]) | (eigs[:, -1] <= 0.0)
    n_loaded = int(np.count_nonzero(bad))
    if n_loaded:
        trace = np.einsum("kii->k", gram).real
        eps = NOISE_COV_LOADING * trace / (n_ch - 1)
        eps = np.where(trace > 0, eps, 1.0)
        gram = gram + (bad * eps)[:, None, None] * np.eye(n_ch - 1)

    proj = cxx_bh @ np.linalg.inv(gram)  # Cxx B^H (B Cxx B^H)^{-1}, (K, M, M-1)
    noise_est = np.einsum("kmp,kpn,kln->klm", proj, bmat, x)
    noise_cov = _hermitize(proj @ bmat @ cxx)
    cov = CovarianceSet(sample=cxx, noise_est=noise_cov, loaded_bins=n_loaded)
    return noise_est, cov


def mvdr_weights(cov: CovarianceSet, rtf: RtfSet) -> BeamWeights:
    """Distortionless minimum-variance weights from the rank-deficient noise covariance.

    w = (C+ g) / (g^H C+ g) with C+ the Moore-Penrose pseudoinverse, so
    w^H g = 1 per bin. Bins whose denominator vanishes (steering vector in
    the null space, or an all-zero covariance) fall back to inverse-RTF
    weights and are counted in fallback_bins.
    """
    if cov.noise_est is None:
        raise SizeError("covariance set lacks the blocking-based noise covariance")
    steer = rtf.rtf
    pinv = _hermitize(np.linalg.pinv(cov.noise_est, rcond=PINV_RCOND, hermitian=True))
    num = np.einsum("kmn,kn->km", pinv, steer)
    den = np.einsum("km,km->k", np.conj(steer), num).real

    eig_max = np.linalg.eigvalsh(pinv)[:, -1]
    floor = MVDR_DEN_GUARD * eig_max * np.einsum("km,km->k", np.conj(steer), steer).real
    degenerate = den <= floor

    weights = np.empty_like(num)
    ok = ~degenerate
    weights[ok] = num[ok] / den[ok, None]
    if np.any(degenerate):
        weights[degenerate] = np.conj(rtf.inv_rtf[degenerate]) / rtf.n_channels
    return BeamWeights(
        weights=weights, method="mvdr", fallback_bins=int(np.count_nonzero(degenerate))
    )


def masked_covariances(bins, mask):
    """Mask-weighted speech and complement-weighted noise covariance averages.

    Bins where the mask (or its complement) sums to zero cannot be averaged;
    they are replaced by the plain per-frame average of x x^H and flagged.

    Returns (speech cov, noise cov, degenerate flags), covs (K, M, M).
    """
    x = np.asarray(bins)
    n_bins, n_frames, _ = x.shape
    w = mask_values(mask)
    if w.shape != (n_bins, n_frames):
        raise SizeError(f"mask shape {w.shape} != spectrogram grid {(n_bins, n_frames)}")

    w_speech = w.sum(axis=1)
    w_noise = (1.0 - w).sum(axis=1)
    degenerate = (w_speech <= MASK_SUM_FLOOR) | (w_noise <= MASK_SUM_FLOOR)

    speech = np.einsum("kl,klm,kln->kmn", w, x, np.conj(x))
    noise = np.einsum("kl,klm,kln->kmn", 1.0 - w, x, np.conj(x))
    speech /= np.maximum(w_speech, MASK_SUM_FLOOR)[:, None, None]
    noise /= np.maximum(w_noise, MASK_SUM_FLOOR)[:, None, None]

    if np.any(degenerate):
        substitute = sample_covariance(x) / n_frames
        speech[degenerate] = substitute[degenerate]
        noise[degenerate] = substitute[degenerate]
    return _hermitize(speech), _hermitize(noise), degenerate


# Loading ladder applied to the noise covariance when the generalized
# eigensolver rejects it as indefinite.
_GEV_LOADINGS = (1e-12, 1e-10, 1e-8, 1e-6, 1e-4)


def solve_max_snr(speech_cov: np.ndarray, noise_cov: np.ndarray):
    """Maximal generalized eigenpair of (speech cov, noise cov) per bin.

    Returns (eigvectors (K, M) with unit norm, eigenvalues (K,)).
    Non-positive-definite noise matrices get escalating diagonal loading.
    """
    n_bins, n_ch, _ = speech_cov.shape
    vecs = np.empty((n_bins, n_ch), dtype=np.complex128)
    vals = np.empty(n_bins)
    eye = np.eye(n_ch)
    for k in range(n_bins):
        a, b = speech_cov[k], noise_cov[k]
        try:
            w, v = scipy.linalg.eigh(a, b)
        except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
            scale = max(np.trace(b).real / n_ch, 1.0)
            for eps in _GEV_LOADINGS:
                try:
                    w, v = scipy.linalg.eigh(a, b + eps * scale * eye)
                    break
                except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
                    continue
            else:
                # Last resort: ordinary eigenproblem on the speech covariance.
                w, v = np.linalg.eigh(a)
        vecs[k] = v[:, -1]
        vals[k] = w[-1]
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs, vals


def _fix_phase(vecs: np.ndarray, component: int) -> np.ndarray:
    """Rotate each vector so the chosen component is real nonnegative."""
    anchor = vecs[:, component].copy()
    tiny = anchor == 0
    if np.any(tiny):
        alt = np.take_along_axis(vecs, np.argmax(np.abs(vecs), axis=1)[:, None], axis=1)[:, 0]
        anchor[tiny] = alt[tiny]
    mag = np.abs(anchor)
    phase = np.where(mag > 0, anchor / np.where(mag > 0, mag, 1.0), 1.0)
    return vecs * np.conj(phase)[:, None]


def gev_weights(bins, mask, ref_component: int = 0) -> BeamWeights:
    """Max-SNR weights with the blind analytic normalization gain.

    Solves speech_cov w = lambda noise_cov w for the maximal eigenvalue per
    bin from mask-weighted covariance estimates, normalizes ||w|| = 1, and
    fixes the arbitrary phase by making the reference component real
    nonnegative. fallback_bins counts bins with a degenerate mask.
    """
    x = np.asarray(bins)
    if x.shape[2] < 2:
        raise SizeError("the max-SNR beamformer needs >= 2 channels")
    speech_cov, noise_cov, degenerate = masked_covariances(x, mask)
    vecs, _ = solve_max_snr(speech_cov, noise_cov)
    vecs = _fix_phase(vecs, ref_component)

    n_ch = x.shape[2]
    noise_w = np.einsum("kmn,kn->km", noise_cov, vecs)
    num = np.einsum("km,km->k", np.conj(noise_w), noise_w).real  # w^H C C^H w
    den = np.einsum("km,km->k", np.conj(vecs), noise_w).real  # w^H C w
    ban = np.ones_like(den)
    ok = den > 0
    ban[ok] = np.sqrt(num[ok] / n_ch) / den[ok]

    return BeamWeights(
        weights=vecs,
        method="gev",
        ban_gain=ban,
        fallback_bins=int(np.count_nonzero(degenerate)),
    )


def apply_weights(weights: BeamWeights, bins, use_ban: bool = False) -> np.ndarray:
    """Beamformer output u(k, l) = w(k)^H x(k, l), optionally BAN-scaled.

    Returns a single-channel complex spectrogram (K, L).
    """
    x = np.asarray(bins)
    if x.ndim != 3 or x.shape[0] != weights.weights.shape[0] or x.shape[2] != weights.weights.shape[1]:
        raise SizeError(
            f"weights {weights.weights.shape} do not match spectrogram {x.shape}"
        )
    out = np.einsum("km,klm->kl", np.conj(weights.weights), x)
    if use_ban:
        if weights.ban_gain is None:
            raise ConfigError(f"{weights.method} weights carry no BAN gain")
        out = out * weights.ban_gain[:, None]
    return out
