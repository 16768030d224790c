import numpy as np
import pytest

from blockbeam.beamform import (
    BeamWeights,
    CovarianceSet,
    apply_weights,
    blocking_matrix,
    estimate_noise,
    gev_weights,
    irtf_weights,
    masked_covariances,
    mvdr_weights,
    sample_covariance,
    solve_max_snr,
)
from blockbeam.errors import ConfigError, SizeError
from blockbeam.rtf import RtfSet
from blockbeam.vad import Mask, unit_mask


def random_bins(n_bins, n_frames, n_ch, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_bins, n_frames, n_ch)) + 1j * rng.standard_normal(
        (n_bins, n_frames, n_ch)
    )


def rtf_from_inverse(inv_rtf, ref=0, exact=False):
    """RtfSet fixture; exact=True uses the exact reciprocal (no regularizer)."""
    rtf = 1.0 / inv_rtf if exact else np.conj(inv_rtf) / (np.abs(inv_rtf) ** 2 + 1e-6)
    return RtfSet(
        inv_rtf=inv_rtf,
        rtf=rtf,
        ref=ref,
        channels=tuple(range(inv_rtf.shape[1])),
    )


def random_inverse_rtf(n_bins, n_ch, seed, ref=0):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n_bins, n_ch)) + 1j * rng.standard_normal((n_bins, n_ch))
    g += np.sign(g.real) * 0.5  # keep magnitudes away from zero
    g[:, ref] = 1.0
    return g


def hermitian_psd(n_bins, n_ch, seed, rank=None):
    rng = np.random.default_rng(seed)
    rank = n_ch if rank is None else rank
    a = rng.standard_normal((n_bins, n_ch, rank)) + 1j * rng.standard_normal((n_bins, n_ch, rank))
    return a @ np.conj(a.transpose(0, 2, 1))


def svd_pseudoinverse(mats, rcond=1e-8):
    """Independent oracle: explicit SVD reconstruction with a relative cutoff."""
    out = np.zeros_like(mats)
    for k in range(mats.shape[0]):
        u, s, vh = np.linalg.svd(mats[k])
        keep = s > rcond * s[0]
        s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        out[k] = vh.conj().T @ np.diag(s_inv) @ u.conj().T
    return out


class TestIrtfWeights:
    def test_identical_channels_pass_through(self):
        bins = random_bins(8, 10, 1, 0)
        x = np.concatenate([bins, bins, bins], axis=2)
        rtf = rtf_from_inverse(np.ones((8, 3), dtype=complex), exact=True)
        out = apply_weights(irtf_weights(rtf), x)
        assert np.allclose(out, bins[:, :, 0], atol=1e-12)

    def test_anechoic_target_recovered_exactly(self):
        # x = g s + noise built in the frequency domain with exact RTFs
        rng = np.random.default_rng(1)
        n_bins, n_frames = 16, 12
        s = rng.standard_normal((n_bins, n_frames)) + 1j * rng.standard_normal((n_bins, n_frames))
        inv_rtf = random_inverse_rtf(n_bins, 2, 2)
        g = 1.0 / inv_rtf
        noise = 0.1 * random_bins(n_bins, n_frames, 2, 3)
        x = g[:, None, :] * s[:, :, None] + noise
        rtf = rtf_from_inverse(inv_rtf, exact=True)
        out = apply_weights(irtf_weights(rtf), x)
        noise_part = np.mean(inv_rtf[:, None, :] * noise, axis=2)
        assert np.allclose(out, s + noise_part, atol=1e-10)

    def test_free_field_equals_delay_and_sum(self):
        # directly coded delay-and-sum comparison in free-field conditions
        n_bins, n_frames, n_ch = 257, 9, 4
        delays = np.array([0, 2, 5, 7])
        k = np.arange(n_bins)[:, None]
        inv_rtf = np.exp(1j * 2 * np.pi * k * delays[None, :] / 512)
        x = random_bins(n_bins, n_frames, n_ch, 4)
        out = apply_weights(irtf_weights(rtf_from_inverse(inv_rtf, exact=True)), x)

        dsb = np.zeros((n_bins, n_frames), dtype=complex)
        for ch in range(n_ch):
            advance = np.exp(1j * 2 * np.pi * np.arange(n_bins) * delays[ch] / 512)
            dsb += advance[:, None] * x[:, :, ch]
        dsb /= n_ch
        assert np.allclose(out, dsb, atol=1e-10)

    def test_single_channel_identity(self):
        x = random_bins(8, 5, 1, 5)
        rtf = rtf_from_inverse(np.ones((8, 1), dtype=complex), exact=True)
        out = apply_weights(irtf_weights(rtf), x)
        assert np.allclose(out, x[:, :, 0])


class TestBlockingMatrix:
    def test_two_channel_structure(self):
        inv_rtf = np.ones((4, 2), dtype=complex)
        bmat = blocking_matrix(inv_rtf, ref=0)
        assert bmat.shape == (4, 1, 2)
        assert np.allclose(bmat[:, 0, 0], -1.0)
        assert np.allclose(bmat[:, 0, 1], 1.0)

    def test_blocks_exact_reciprocal_steering(self):
        inv_rtf = random_inverse_rtf(32, 4, 6)
        g = 1.0 / inv_rtf
        bmat = blocking_matrix(inv_rtf, ref=0)
        residual = np.einsum("krm,km->kr", bmat, g)
        assert np.max(np.abs(residual)) < 1e-12

    def test_nonzero_ref_column(self):
        inv_rtf = random_inverse_rtf(8, 3, 7, ref=1)
        bmat = blocking_matrix(inv_rtf, ref=1)
        assert np.allclose(bmat[:, :, 1], -1.0)
        g = 1.0 / inv_rtf
        assert np.max(np.abs(np.einsum("krm,km->kr", bmat, g))) < 1e-12


class TestEstimateNoise:
    def test_pure_target_gives_zero(self):
        rng = np.random.default_rng(8)
        n_bins, n_frames = 16, 20
        inv_rtf = random_inverse_rtf(n_bins, 3, 9)
        rtf = rtf_from_inverse(inv_rtf, exact=True)
        s = rng.standard_normal((n_bins, n_frames)) + 1j * rng.standard_normal((n_bins, n_frames))
        x = (1.0 / inv_rtf)[:, None, :] * s[:, :, None]
        noise_est, cov = estimate_noise(x, rtf)
        assert np.max(np.abs(noise_est)) < 1e-10 * np.max(np.abs(x))

    def test_matches_least_squares_oracle(self):
        # pure noise, exact inverse RTFs: the per-frame estimate must agree
        # with an explicit lstsq solve of (B Cxx B^H) z = B x
        n_bins, n_frames, n_ch = 8, 50, 3
        x = random_bins(n_bins, n_frames, n_ch, 10)
        inv_rtf = random_inverse_rtf(n_bins, n_ch, 11)
        rtf = rtf_from_inverse(inv_rtf, exact=True)
        noise_est, cov = estimate_noise(x, rtf)
        assert cov.loaded_bins == 0

        bmat = blocking_matrix(inv_rtf, ref=0)
        for k in range(n_bins):
            cxx = x[k].T @ np.conj(x[k])
            gram = bmat[k] @ cxx @ bmat[k].conj().T
            for l in range(0, n_frames, 7):
                v = bmat[k] @ x[k, l]
                z, *_ = np.linalg.lstsq(gram, v, rcond=None)
                expected = cxx @ bmat[k].conj().T @ z
                assert np.allclose(noise_est[k, l], expected, rtol=1e-9, atol=1e-9)

    def test_noise_cov_hermitian_rank_deficient(self):
        x = random_bins(16, 60, 4, 12)
        rtf = rtf_from_inverse(random_inverse_rtf(16, 4, 13), exact=True)
        _, cov = estimate_noise(x, rtf)
        c = cov.noise_est
        assert np.allclose(c, np.conj(c.transpose(0, 2, 1)), atol=1e-10)
        eigs = np.linalg.eigvalsh(c)
        assert np.all(eigs[:, 0] <= 1e-8 * eigs[:, -1])  # rank <= M-1
        assert np.all(eigs[:, 0] > -1e-8 * eigs[:, -1])  # positive semidefinite

    def test_silent_block_does_not_raise(self):
        x = np.zeros((4, 30, 3), dtype=complex)
        rtf = rtf_from_inverse(np.ones((4, 3), dtype=complex), exact=True)
        noise_est, cov = estimate_noise(x, rtf)
        assert np.all(noise_est == 0)

    def test_needs_two_channels(self):
        x = random_bins(4, 10, 1, 14)
        rtf = rtf_from_inverse(np.ones((4, 1), dtype=complex), exact=True)
        with pytest.raises(SizeError):
            estimate_noise(x, rtf)


class TestMvdrWeights:
    def test_distortionless_on_random_rank_deficient(self):
        n_bins, n_ch = 64, 4
        cov = CovarianceSet(noise_est=hermitian_psd(n_bins, n_ch, 15, rank=n_ch - 1))
        rtf = rtf_from_inverse(random_inverse_rtf(n_bins, n_ch, 16))
        w = mvdr_weights(cov, rtf)
        gains = np.einsum("km,km->k", np.conj(w.weights), rtf.rtf)
        assert np.max(np.abs(gains - 1.0)) < 1e-8
        assert w.fallback_bins == 0

    def test_pseudoinverse_matches_svd_oracle(self):
        mats = hermitian_psd(32, 4, 17, rank=3)
        oracle = svd_pseudoinverse(mats)
        from blockbeam.beamform import PINV_RCOND

        mine = np.linalg.pinv(mats, rcond=PINV_RCOND, hermitian=True)
        scale = np.max(np.abs(oracle))
        assert np.max(np.abs(mine - oracle)) < 1e-9 * scale

    def test_matches_loaded_full_inverse_in_the_limit(self):
        # on a full-rank covariance, the pseudoinverse weights are the limit
        # of classic (C + eps I)^{-1}-based weights as the loading vanishes
        n_bins, n_ch = 16, 3
        cov_mat = hermitian_psd(n_bins, n_ch, 18)
        rtf = rtf_from_inverse(random_inverse_rtf(n_bins, n_ch, 19))
        w = mvdr_weights(CovarianceSet(noise_est=cov_mat), rtf).weights

        errs = []
        for eps in (1e-4, 1e-6, 1e-8):
            loaded = cov_mat + eps * np.eye(n_ch)
            num = np.linalg.solve(loaded, rtf.rtf[..., None])[..., 0]
            den = np.einsum("km,km->k", np.conj(rtf.rtf), num)
            w_loaded = num / den[:, None]
            errs.append(np.max(np.abs(w_loaded - w)) / np.max(np.abs(w)))
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-6

    def test_degenerate_bin_falls_back_to_irtf(self):
        n_bins, n_ch = 4, 3
        cov_mat = hermitian_psd(n_bins, n_ch, 20, rank=2)
        cov_mat[2] = 0.0  # zero covariance: denominator vanishes
        rtf = rtf_from_inverse(random_inverse_rtf(n_bins, n_ch, 21))
        w = mvdr_weights(CovarianceSet(noise_est=cov_mat), rtf)
        assert w.fallback_bins == 1
        assert np.allclose(w.weights[2], np.conj(rtf.inv_rtf[2]) / n_ch)

    def test_missing_noise_cov_rejected(self):
        rtf = rtf_from_inverse(np.ones((4, 2), dtype=complex))
        with pytest.raises(SizeError):
            mvdr_weights(CovarianceSet(), rtf)


class TestGevWeights:
    def test_identity_noise_reduces_to_principal_eigenvector(self):
        n_bins, n_ch = 16, 3
        speech = hermitian_psd(n_bins, n_ch, 22)
        noise = np.broadcast_to(np.eye(n_ch), (n_bins, n_ch, n_ch)).copy().astype(complex)
        vecs, vals = solve_max_snr(speech, noise)
        for k in range(n_bins):
            evals, evecs = np.linalg.eigh(speech[k])
            principal = evecs[:, -1]
            alignment = np.abs(np.vdot(principal, vecs[k]))
            assert alignment == pytest.approx(1.0, abs=1e-10)
            assert vals[k] == pytest.approx(evals[-1], rel=1e-10)

    def test_matches_dense_eig_oracle(self):
        # brute force: eigendecomposition of inv(Cyy) Css with tiny loading
        n_bins, n_ch = 24, 4
        speech = hermitian_psd(n_bins, n_ch, 23)
        noise = hermitian_psd(n_bins, n_ch, 24) + 0.1 * np.eye(n_ch)
        vecs, vals = solve_max_snr(speech, noise)
        for k in range(n_bins):
            mat = np.linalg.inv(noise[k] + 1e-12 * np.eye(n_ch)) @ speech[k]
            evals, evecs = np.linalg.eig(mat)
            top = np.argmax(evals.real)
            principal = evecs[:, top]
            alignment = np.abs(np.vdot(principal, vecs[k])) / np.linalg.norm(principal)
            assert alignment == pytest.approx(1.0, abs=1e-8)
            assert vals[k] == pytest.approx(evals[top].real, rel=1e-8)

    def test_generalized_eigen_residual(self):
        speech = hermitian_psd(32, 4, 25)
        noise = hermitian_psd(32, 4, 26) + 0.05 * np.eye(4)
        vecs, vals = solve_max_snr(speech, noise)
        residual = np.einsum("kmn,kn->km", speech, vecs) - vals[:, None] * np.einsum(
            "kmn,kn->km", noise, vecs
        )
        norms = np.linalg.norm(speech, axis=(1, 2))
        assert np.all(np.linalg.norm(residual, axis=1) <= 1e-8 * norms)

    def test_output_snr_beats_canonical_vectors(self):
        speech = hermitian_psd(16, 3, 27)
        noise = hermitian_psd(16, 3, 28) + 0.05 * np.eye(3)
        vecs, _ = solve_max_snr(speech, noise)
        snr_w = np.einsum("km,kmn,kn->k", np.conj(vecs), speech, vecs).real / np.einsum(
            "km,kmn,kn->k", np.conj(vecs), noise, vecs
        ).real
        for i in range(3):
            snr_e = speech[:, i, i].real / noise[:, i, i].real
            assert np.all(snr_w >= snr_e - 1e-9 * np.abs(snr_e))

    def test_noise_scaling_leaves_direction(self):
        speech = hermitian_psd(8, 3, 29)
        noise = hermitian_psd(8, 3, 30) + 0.05 * np.eye(3)
        v1, l1 = solve_max_snr(speech, noise)
        v2, l2 = solve_max_snr(speech, 4.0 * noise)
        align = np.abs(np.einsum("km,km->k", np.conj(v1), v2))
        assert np.allclose(align, 1.0, atol=1e-9)
        assert np.allclose(l2, l1 / 4.0, rtol=1e-9)

    def test_masked_covariances_weighting(self):
        x = random_bins(4, 6, 2, 31)
        mask = Mask(np.random.default_rng(32).uniform(0.1, 0.9, (4, 6)), "network")
        speech, noise, degen = masked_covariances(x, mask)
        assert not degen.any()
        k = 2
        w = mask.values[k]
        manual = np.einsum("l,lm,ln->mn", w, x[k], np.conj(x[k])) / w.sum()
        assert np.allclose(speech[k], manual, atol=1e-12)

    def test_degenerate_mask_substitutes_sample_average(self):
        x = random_bins(4, 6, 2, 33)
        values = np.random.default_rng(34).uniform(0.2, 0.8, (4, 6))
        values[1, :] = 1.0  # no noise frames at bin 1
        speech, noise, degen = masked_covariances(x, Mask(values, "network"))
        assert degen[1] and not degen[0]
        expected = sample_covariance(x)[1] / 6
        assert np.allclose(noise[1], expected)
        w = gev_weights(x, Mask(values, "network"))
        assert w.fallback_bins == 1

    def test_ban_gain_formula(self):
        x = random_bins(8, 24, 3, 35)
        mask = Mask(np.random.default_rng(36).uniform(0.05, 0.95, (8, 24)), "network")
        w = gev_weights(x, mask)
        _, noise, _ = masked_covariances(x, mask)
        for k in range(8):
            vec = w.weights[k]
            num = np.sqrt((np.conj(vec) @ noise[k] @ noise[k].conj().T @ vec).real / 3)
            den = (np.conj(vec) @ noise[k] @ vec).real
            assert w.ban_gain[k] == pytest.approx(num / den, rel=1e-9)

    def test_phase_fixed_reference_component(self):
        x = random_bins(8, 24, 3, 37)
        mask = Mask(np.random.default_rng(38).uniform(0.05, 0.95, (8, 24)), "network")
        w = gev_weights(x, mask, ref_component=1)
        anchor = w.weights[:, 1]
        assert np.all(anchor.real >= -1e-12)
        assert np.allclose(anchor.imag, 0.0, atol=1e-10)

    def test_needs_two_channels(self):
        with pytest.raises(SizeError):
            gev_weights(random_bins(4, 10, 1, 39), unit_mask(4, 10))


class TestApplyWeights:
    def test_one_hot_selects_channel(self):
        x = random_bins(8, 5, 3, 40)
        w = np.zeros((8, 3), dtype=complex)
        w[:, 1] = 1.0
        out = apply_weights(BeamWeights(weights=w, method="irtf"), x)
        assert np.array_equal(out, x[:, :, 1])

    def test_linearity(self):
        x = random_bins(8, 5, 3, 41)
        w = BeamWeights(weights=random_bins(8, 1, 3, 42)[:, 0, :], method="irtf")
        assert np.allclose(apply_weights(w, 2.5j * x), 2.5j * apply_weights(w, x), atol=1e-12)

    def test_mvdr_distortionless_on_synthetic_mixture(self):
        # mixture built from the steering vectors the weights are computed
        # against: the target component of the output equals s exactly
        rng = np.random.default_rng(43)
        n_bins, n_frames, n_ch = 16, 40, 3
        inv_rtf = random_inverse_rtf(n_bins, n_ch, 44)
        rtf = rtf_from_inverse(inv_rtf)
        s = rng.standard_normal((n_bins, n_frames)) + 1j * rng.standard_normal((n_bins, n_frames))
        noise = 0.3 * random_bins(n_bins, n_frames, n_ch, 45)
        x = rtf.rtf[:, None, :] * s[:, :, None] + noise

        noise_est, cov = estimate_noise(x, rtf)
        w = mvdr_weights(cov, rtf)
        out = apply_weights(w, x)
        target_component = np.einsum("km,km->k", np.conj(w.weights), rtf.rtf)[:, None] * s
        assert np.allclose(target_component, s, atol=1e-8 * np.abs(s).max())
        noise_component = apply_weights(w, noise)
        assert np.allclose(out, s + noise_component, atol=1e-8)

    def test_ban_applied_when_requested(self):
        x = random_bins(8, 10, 2, 46)
        mask = Mask(np.random.default_rng(47).uniform(0.2, 0.8, (8, 10)), "network")
        w = gev_weights(x, mask)
        plain = apply_weights(w, x)
        scaled = apply_weights(w, x, use_ban=True)
        assert np.allclose(scaled, w.ban_gain[:, None] * plain)

    def test_ban_without_gain_rejected(self):
        w = BeamWeights(weights=np.ones((4, 2), dtype=complex), method="irtf")
        with pytest.raises(ConfigError):
            apply_weights(w, random_bins(4, 3, 2, 48), use_ban=True)

    def test_shape_mismatch(self):
        w = BeamWeights(weights=np.ones((4, 2), dtype=complex), method="irtf")
        with pytest.raises(SizeError):
            apply_weights(w, random_bins(4, 3, 3, 49))
