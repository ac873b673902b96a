import numpy as np
import pytest
from scipy.linalg import block_diag

from cfmimo import channel as ch
from cfmimo.transceiver import (
    SCHEMES,
    Association,
    CombinerWorkspace,
    downlink_sinr,
    mmse_combiner_edu,
    mrc_combiner,
    normalize_precoders,
    quantize,
    scheme_blocks,
    se_from_sinr,
    uplink_sinr,
)

from conftest import random_channels, random_error_covs


# ---------------------------------------------------------------------------
# direct-form oracles used throughout this module
# ---------------------------------------------------------------------------
def stacked_uplink_sinr(v, h, p, s2):
    """Centralized-form SINR from stacked (T, K, LN) combiners/channels."""
    T, K, _ = h.shape
    num = np.zeros(K, dtype=complex)
    isq = np.zeros((K, K))
    nrm = np.zeros(K)
    for t in range(T):
        s = np.einsum("ka,ia->ki", np.conj(v[t]), h[t])
        num += np.diag(s)
        isq += np.abs(s) ** 2
        nrm += np.einsum("ka,ka->k", np.conj(v[t]), v[t]).real
    num, isq, nrm = num / T, isq / T, nrm / T
    signal = p * np.abs(num) ** 2
    interference = (isq * p[None, :]).sum(1) - p * np.diag(isq)
    return signal / (interference + s2 * nrm)


def stacked_downlink_sinr(w, h, s2_dl):
    """Centralized-form downlink SINR from stacked (T, K, LN) arrays."""
    T, K, _ = h.shape
    num = np.zeros(K, dtype=complex)
    isq = np.zeros((K, K))
    for t in range(T):
        s = np.einsum("ka,ia->ki", np.conj(h[t]), w[t])
        num += np.diag(s)
        isq += np.abs(s) ** 2
    num, isq = num / T, isq / T
    signal = np.abs(num) ** 2
    return signal / (isq.sum(1) - signal + s2_dl)


def _setup(rng, K=3, L=4, N=2, T=8):
    hhat = random_channels(rng, (T, K, L, N))
    h = hhat + 0.2 * random_channels(rng, (T, K, L, N))
    C = random_error_covs(rng, K, L, N)
    p = rng.uniform(0.5, 2.0, K)
    return h, hhat, C, p


# ---------------------------------------------------------------------------
# combiners
# ---------------------------------------------------------------------------
def test_mrc_single_oru_is_estimate():
    rng = np.random.default_rng(0)
    hhat = random_channels(rng, (2, 1, 4))
    v = mrc_combiner(hhat, Association.all_serve(2, 1))
    np.testing.assert_array_equal(v, hhat)


def test_mrc_masking_zeroes_entries():
    rng = np.random.default_rng(1)
    hhat = random_channels(rng, (2, 3, 4))
    delta = np.array([[1, 0, 1], [0, 1, 0]], dtype=bool)
    v = mrc_combiner(hhat, Association(delta))
    assert np.all(v[0, 1] == 0)
    assert np.all(v[1, 0] == 0)
    assert np.all(v[1, 2] == 0)
    np.testing.assert_array_equal(v[0, 0], hhat[0, 0])


def test_mmse_single_unit_matches_direct_joint_solve():
    rng = np.random.default_rng(3)
    h, hhat, C, p = _setup(rng)
    K, L, N = 3, 4, 2
    s2 = 0.3
    v = mmse_combiner_edu(
        hhat[0], C, Association.all_serve(K, L), np.zeros(L, dtype=int), p, s2,
        granularity="joint",
    )
    Hs = hhat[0].reshape(K, L * N).T
    G = np.zeros((L * N, L * N), dtype=complex)
    for i in range(K):
        G += p[i] * np.outer(Hs[:, i], Hs[:, i].conj())
        G += p[i] * block_diag(*[C[i, l] for l in range(L)])
    G += s2 * np.eye(L * N)
    for k in range(K):
        ref = p[k] * np.linalg.solve(G, Hs[:, k])
        np.testing.assert_allclose(v[k].reshape(L * N), ref, rtol=1e-10)


def test_mmse_per_oru_matches_direct_local_solves():
    rng = np.random.default_rng(4)
    h, hhat, C, p = _setup(rng)
    K, L, N = 3, 4, 2
    s2 = 0.3
    v = mmse_combiner_edu(
        hhat[0], C, Association.all_serve(K, L), np.arange(L), p, s2,
        granularity="oru",
    )
    for l in range(L):
        G = s2 * np.eye(N, dtype=complex)
        for i in range(K):
            G += p[i] * (np.outer(hhat[0, i, l], hhat[0, i, l].conj()) + C[i, l])
        for k in range(K):
            ref = p[k] * np.linalg.solve(G, hhat[0, k, l])
            np.testing.assert_allclose(v[k, l], ref, rtol=1e-10)


def test_mmse_single_ue_reduces_to_matched_filter():
    # K=1, C=0: (p hh^H + s2 I)^{-1} h is proportional to h, so the
    # per-realization post-combining SINR equals MRC's exactly.
    rng = np.random.default_rng(5)
    K, L, N = 1, 3, 2
    hhat = random_channels(rng, (4, K, L, N))
    C = np.zeros((K, L, N, N), dtype=complex)
    p = np.array([2.0])
    s2 = 0.7
    assoc = Association.all_serve(K, L)
    genome = np.zeros(L, dtype=int)
    for t in range(4):
        vm = mmse_combiner_edu(hhat[t], C, assoc, genome, p, s2, "joint")[0].ravel()
        vr = hhat[t, 0].ravel()
        cos = abs(vm.conj() @ vr) / (np.linalg.norm(vm) * np.linalg.norm(vr))
        assert cos == pytest.approx(1.0, abs=1e-12)
        sinr_m = p[0] * abs(vm.conj() @ vr) ** 2 / (s2 * np.linalg.norm(vm) ** 2)
        sinr_r = p[0] * np.linalg.norm(vr) ** 2 / s2
        assert sinr_m == pytest.approx(sinr_r, rel=1e-10)


def test_mmse_dcc_masked_entries_zero():
    rng = np.random.default_rng(6)
    h, hhat, C, p = _setup(rng, K=4, L=5)
    delta = np.array(
        [[1, 1, 0, 0, 1], [0, 1, 1, 0, 0], [1, 0, 1, 1, 0], [0, 0, 0, 1, 1]],
        dtype=bool,
    )
    v = mmse_combiner_edu(
        hhat[0], C, Association(delta), np.zeros(5, dtype=int), p, 0.4, "joint"
    )
    for k in range(4):
        assert np.abs(v[k, ~delta[k]]).max() == 0.0
        assert np.abs(v[k, delta[k]]).max() > 0.0


def test_mmse_beats_mrc_in_model_sinr():
    # the regularized solve maximizes the per-realization SINR computed on
    # that realization's estimates and error statistics
    rng = np.random.default_rng(7)
    h, hhat, C, p = _setup(rng, K=4, L=4, T=3)
    K, L, N = 4, 4, 2
    s2 = 0.5
    assoc = Association.all_serve(K, L)
    genome = np.array([0, 0, 1, 1])
    for t in range(3):
        for gran in ("joint", "edu", "oru"):
            vm = mmse_combiner_edu(hhat[t], C, assoc, genome, p, s2, gran)
            vr = mrc_combiner(hhat[t], assoc)
            for k in range(K):
                for block in scheme_blocks(gran, genome, L):
                    svm = vm[k, block].ravel()
                    svr = vr[k, block].ravel()
                    Hb = hhat[t][:, block, :].reshape(K, block.size * N).T
                    B = s2 * np.eye(block.size * N, dtype=complex)
                    for i in range(K):
                        B += p[i] * np.outer(Hb[:, i], Hb[:, i].conj())
                        B += p[i] * block_diag(*[C[i, l] for l in block])
                    B -= p[k] * np.outer(Hb[:, k], Hb[:, k].conj())

                    def model_sinr(v):
                        sig = p[k] * abs(v.conj() @ Hb[:, k]) ** 2
                        return sig / (v.conj() @ B @ v).real

                    assert model_sinr(svm) >= model_sinr(svr) - 1e-9


# ---------------------------------------------------------------------------
# uplink SINR
# ---------------------------------------------------------------------------
def test_uplink_k1_perfect_csi_mrc_closed_form():
    rng = np.random.default_rng(5)
    K, L, N, T = 1, 4, 2, 1000
    angles = [0.3, 1.0, -0.7, 2.0]
    betas = [1.0, 0.5, 2.0, 0.25]
    R = np.stack(
        [[ch.spatial_correlation(a, -0.1, 0.2, 0.2, N, b) for a, b in zip(angles, betas)]]
    )
    h = ch.sample_channel(ch.correlation_factor(R), rng, size=T)
    C0 = np.zeros((K, L, N, N), dtype=complex)
    p = np.array([2.0])
    s2 = 0.7
    rep = uplink_sinr(
        "joint-mrc", h, h, C0, Association.all_serve(K, L), np.zeros(L, dtype=int), p, s2
    )
    closed = p[0] * np.trace(R.sum(axis=1)[0]).real / s2
    assert rep.gamma[0] == pytest.approx(closed, rel=0.02)


def test_uplink_interference_free_power_raises_sinr():
    rng = np.random.default_rng(8)
    h, hhat, C, _ = _setup(rng, K=3, L=4, T=30)
    assoc = Association.all_serve(3, 4)
    genome = np.zeros(4, dtype=int)
    p_eq = np.array([1.0, 1.0, 1.0])
    p_solo = np.array([1.0, 0.0, 0.0])
    g_eq = uplink_sinr("joint-mrc", h, hhat, C, assoc, genome, p_eq, 0.5).gamma[0]
    g_solo = uplink_sinr("joint-mrc", h, hhat, C, assoc, genome, p_solo, 0.5).gamma[0]
    assert g_solo > g_eq


def test_uplink_edu_sum_equals_centralized_form():
    # the per-unit sum with a single unit must equal the stacked evaluation
    rng = np.random.default_rng(9)
    h, hhat, C, p = _setup(rng, K=3, L=4, T=12)
    K, L, N = 3, 4, 2
    s2 = 0.3
    assoc = Association.all_serve(K, L)
    genome = np.zeros(L, dtype=int)
    rep = uplink_sinr("edu-mmse", h, hhat, C, assoc, genome, p, s2)
    ws = CombinerWorkspace(SCHEMES["edu-mmse"], assoc, genome, C, p, s2)
    v = np.stack([ws.combiners(hhat[t]) for t in range(h.shape[0])])
    ref = stacked_uplink_sinr(
        v.reshape(-1, K, L * N), h.reshape(-1, K, L * N), p, s2
    )
    np.testing.assert_allclose(rep.gamma, ref, rtol=1e-12)


def test_uplink_unserved_ue_gets_zero_sinr():
    # a UE left out of the association has a zero combiner; its SINR is 0,
    # not a division error
    rng = np.random.default_rng(21)
    h, hhat, C, p = _setup(rng, K=3, L=4, T=6)
    delta = np.ones((3, 4), dtype=bool)
    delta[1] = False
    rep = uplink_sinr(
        "edu-pmmse", h, hhat, C, Association(delta), np.array([0, 0, 1, 1]), p, 0.5
    )
    assert rep.gamma[1] == 0.0
    assert rep.se[1] == 0.0
    assert rep.gamma[0] > 0 and rep.gamma[2] > 0


def test_uplink_requires_two_realizations():
    rng = np.random.default_rng(10)
    h, hhat, C, p = _setup(rng, T=1)
    with pytest.raises(ValueError):
        uplink_sinr(
            "joint-mrc", h, hhat, C, Association.all_serve(3, 4),
            np.zeros(4, dtype=int), p, 0.5,
        )


def test_uplink_report_invariants(desk_config):
    from cfmimo.harness import run_drop

    res = run_drop(desk_config, 0)
    for scheme, per_link in res.reports.items():
        rep = per_link["ul"]
        assert np.all(rep.signal >= 0)
        assert np.all(rep.interference >= 0)
        assert np.all(rep.noise > 0)
        assert np.all(np.isfinite(rep.gamma))
        np.testing.assert_allclose(rep.se, np.log2(1 + rep.gamma))


# ---------------------------------------------------------------------------
# downlink
# ---------------------------------------------------------------------------
def test_downlink_k1_mrt_matches_brute_force():
    rng = np.random.default_rng(11)
    K, L, N, T = 1, 3, 2, 10_000
    R = np.stack(
        [[ch.spatial_correlation(a, -0.2, 0.25, 0.25, N, b)
          for a, b in zip([0.4, -1.2, 2.2], [1.0, 2.0, 0.5])]]
    )
    h = ch.sample_channel(ch.correlation_factor(R), rng, size=T)
    hhat = h + 0.3 * random_channels(rng, h.shape)
    C0 = np.zeros((K, L, N, N), dtype=complex)
    assoc = Association.all_serve(K, L)
    genome = np.zeros(L, dtype=int)
    beta = np.trace(R, axis1=-2, axis2=-1).real / N
    p_ul = np.array([1.0])
    s2_dl = 0.9
    res = downlink_sinr(
        "joint-mrc", h, hhat, C0, assoc, genome, beta, p_ul, 0.5, s2_dl, 4.0
    )
    # brute force: normalize the conjugate beams over the batch, single UE
    # gets the full cap, and gamma = p|E x|^2 / (Var x + s2)
    wbar = hhat / np.sqrt(np.mean(np.sum(np.abs(hhat) ** 2, axis=(2, 3))))
    x = np.einsum("tkln,tkln->t", np.conj(h), wbar)
    p_dl = res.dl_power_mw[0]
    gamma_ref = p_dl * abs(x.mean()) ** 2 / (p_dl * x.var() + s2_dl)
    assert res.report.gamma[0] == pytest.approx(gamma_ref, rel=1e-10)
    # single UE served by every O-RU: omega is the dominant slice share
    assert res.omega[0] == pytest.approx(
        np.max(np.mean(np.sum(np.abs(wbar) ** 2, axis=3), axis=0)), rel=1e-12
    )


def test_downlink_noise_domination():
    rng = np.random.default_rng(12)
    h, hhat, C, p = _setup(rng, T=10)
    assoc = Association.all_serve(3, 4)
    genome = np.zeros(4, dtype=int)
    beta = np.ones((3, 4))
    res = downlink_sinr(
        "joint-mmse", h, hhat, C, assoc, genome, beta, p, 0.5, 1e12, 4.0
    )
    assert np.all(res.report.gamma < 1e-6)


def test_downlink_edu_sum_equals_centralized_form():
    rng = np.random.default_rng(13)
    h, hhat, C, p = _setup(rng, K=3, L=4, T=10)
    K, L, N = 3, 4, 2
    assoc = Association.all_serve(K, L)
    genome = np.zeros(L, dtype=int)
    res = downlink_sinr(
        "edu-mmse", h, hhat, C, assoc, genome, np.ones((K, L)), p, 0.5, 0.7, 4.0
    )
    ws = CombinerWorkspace(SCHEMES["edu-mmse"], assoc, genome, C, p, 0.5)
    w_prime = np.stack([ws.combiners(hhat[t]) for t in range(h.shape[0])])
    w_bar, omega, _ = normalize_precoders(w_prime, assoc)
    w = w_bar * np.sqrt(res.dl_power_mw)[None, :, None, None]
    ref = stacked_downlink_sinr(
        w.reshape(-1, K, L * N), h.reshape(-1, K, L * N), 0.7
    )
    np.testing.assert_allclose(res.report.gamma, ref, rtol=1e-12)


def test_precoder_normalization_contract():
    rng = np.random.default_rng(14)
    w_prime = random_channels(rng, (50, 3, 4, 2))
    assoc = Association.all_serve(3, 4)
    w_bar, omega, excluded = normalize_precoders(w_prime, assoc)
    energy = np.einsum("tkln->k", np.abs(w_bar) ** 2) / 50
    np.testing.assert_allclose(energy, 1.0, atol=1e-3)
    assert not excluded.any()
    assert np.all(omega > 0)


def test_precoder_single_ue_single_oru():
    rng = np.random.default_rng(15)
    w_prime = random_channels(rng, (40, 1, 1, 4))
    assoc = Association.all_serve(1, 1)
    w_bar, omega, _ = normalize_precoders(w_prime, assoc)
    scale = np.sqrt(np.mean(np.sum(np.abs(w_prime) ** 2, axis=(2, 3))))
    np.testing.assert_allclose(w_bar, w_prime / scale, rtol=1e-12)
    assert omega[0] == pytest.approx(1.0, rel=1e-12)


def test_zero_norm_precoder_excluded():
    rng = np.random.default_rng(16)
    w_prime = random_channels(rng, (10, 2, 3, 2))
    w_prime[:, 1] = 0.0  # UE 1 served by nobody
    assoc = Association(np.array([[1, 1, 1], [0, 0, 0]], dtype=bool))
    with pytest.warns(UserWarning, match="zero-norm"):
        w_bar, omega, excluded = normalize_precoders(w_prime, assoc)
    assert excluded[1] and not excluded[0]
    assert np.all(w_bar[:, 1] == 0)


# ---------------------------------------------------------------------------
# quantizer and SE map
# ---------------------------------------------------------------------------
def test_quantize_infinite_identity():
    x = np.array([1.0 + 2.0j, -0.5])
    assert quantize(x, "infinite") is x


def test_quantize_constant_within_half_step():
    x = np.full(50, 0.37 + 0.21j)
    np.testing.assert_array_equal(quantize(x, 8), x)


def test_quantize_error_bound():
    rng = np.random.default_rng(17)
    y = rng.normal(size=2000)
    step = 8 * y.std() / 2**6
    assert np.abs(quantize(y, 6) - y).max() <= step / 2 + 1e-12


def test_quantize_rejects_zero_bits():
    with pytest.raises(ValueError):
        quantize(np.ones(3), 0)


def test_quantized_uplink_close_to_infinite(desk_config):
    from cfmimo.harness import DropOptions, run_drop

    cfg = desk_config
    a = run_drop(cfg, 0, options=DropOptions(links=("ul",)))
    b = run_drop(cfg, 0, options=DropOptions(links=("ul",), quantizer_bits=16))
    for scheme in cfg.schemes:
        se_a = a.reports[scheme]["ul"].sum_se
        se_b = b.reports[scheme]["ul"].sum_se
        assert abs(se_a - se_b) / se_a < 0.005


def test_se_from_sinr_values():
    assert se_from_sinr(0.0) == 0.0
    assert se_from_sinr(1.0) == 1.0
    assert se_from_sinr(3.0) == 2.0
    with pytest.raises(ValueError):
        se_from_sinr(-0.5)
