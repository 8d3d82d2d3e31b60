import itertools

import numpy as np
import pytest

from fdisac.arrays import (ArrayConfig, assemble_block_diagonal, dft_codebook,
                           steering_vector)
from fdisac.channels import dl_channel, RadarTarget, rician_si_channel
from fdisac.optimizer import (OptimizerConfig, check_constraints,
                              design_cancellation, design_digital_precoder,
                              dl_snr, optimize, radar_snr, select_rx_beams,
                              select_tx_beams, virtual_channels,
                              water_filling)
from fdisac.transceiver import BeamformerSet
from fdisac.units import SPEED_OF_LIGHT

WAVELENGTH = SPEED_OF_LIGHT / 28e9


@pytest.fixture
def two_chain_array():
    return ArrayConfig(n_tx=8, m_rx=8, n_rf_tx=2, m_rf_rx=2,
                       n_per_chain_tx=4, m_per_chain_rx=4, ue_antennas=4,
                       streams=2, element_spacing=WAVELENGTH / 2,
                       wavelength=WAVELENGTH)


def _config(array, n_taps=None, tx_power=1.0, bits=3, threshold=1e-6):
    tx_cb = dft_codebook(bits, array.n_per_chain_tx)
    rx_cb = dft_codebook(bits, array.m_per_chain_rx)
    full = array.n_rf_tx * array.m_rf_rx
    return OptimizerConfig(n_taps=full if n_taps is None else n_taps,
                           si_threshold_w=threshold, tx_power_w=tx_power,
                           tx_codebook=tx_cb, rx_codebook=rx_cb,
                           noise_var_ue=1e-12)


def _random_bf(array, rng, tx_power=1.0):
    cb = dft_codebook(3, array.n_per_chain_tx)
    v_rf = assemble_block_diagonal(
        [cb[rng.integers(0, 8)] for _ in range(array.n_rf_tx)])
    w_rf = assemble_block_diagonal(
        [cb[rng.integers(0, 8)] for _ in range(array.m_rf_rx)])
    v_bb = (rng.standard_normal((array.n_rf_tx, array.streams))
            + 1j * rng.standard_normal((array.n_rf_tx, array.streams)))
    v_bb *= np.sqrt(tx_power) / np.linalg.norm(v_rf @ v_bb)
    w_ue = np.linalg.qr(rng.standard_normal((array.ue_antennas, array.streams))
                        + 0j)[0]
    z = np.zeros((array.m_rf_rx, array.n_rf_tx), dtype=complex)
    return BeamformerSet(v_rf=v_rf, v_bb=v_bb, w_rf=w_rf, w_ue=w_ue,
                         c_analog=z.copy(), d_digital=z.copy(),
                         tx_power_w=tx_power)


def test_radar_snr_zero_precoder(small_array):
    rng = np.random.default_rng(0)
    bf = _random_bf(small_array, rng)
    bf.v_bb = np.zeros_like(bf.v_bb)
    vc = virtual_channels([0.3], [], small_array)
    h_eff = rng.standard_normal((4, 4)) + 0j
    assert radar_snr(bf, vc, h_eff, 1e-12) == 0.0


def test_radar_snr_perfect_cancellation(small_array):
    rng = np.random.default_rng(1)
    bf = _random_bf(small_array, rng)
    vc = virtual_channels([0.5, -0.2], [], small_array)
    h_eff = (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
    bf.c_analog = -h_eff / 2
    bf.d_digital = -h_eff / 2
    sigma2 = 1e-12
    got = radar_snr(bf, vc, h_eff, sigma2)
    num = np.linalg.norm(bf.w_rf.conj().T @ vc.h_radar @ bf.v_rf @ bf.v_bb) ** 2
    expected = num / (np.linalg.norm(bf.w_rf) ** 2 * sigma2)
    assert got == pytest.approx(expected, rel=1e-12)


def test_radar_snr_degenerate_noise(small_array):
    rng = np.random.default_rng(2)
    bf = _random_bf(small_array, rng)
    bf.w_rf = np.zeros_like(bf.w_rf)
    vc = virtual_channels([0.1], [], small_array)
    from fdisac.optimizer import DegenerateNoiseError
    with pytest.raises(DegenerateNoiseError):
        radar_snr(bf, vc, np.zeros((4, 4)), 0.0)


def test_dl_snr_basics(small_array):
    rng = np.random.default_rng(3)
    bf = _random_bf(small_array, rng)
    vc = virtual_channels([0.4], [0.4], small_array)
    bf_zero = _random_bf(small_array, rng)
    bf_zero.v_bb = np.zeros_like(bf_zero.v_bb)
    assert dl_snr(bf_zero, vc, 1e-12) == 0.0
    base = dl_snr(bf, vc, 1e-12)
    bf.w_ue = 3.7 * bf.w_ue
    assert dl_snr(bf, vc, 1e-12) == pytest.approx(base, rel=1e-12)
    bf.w_ue = np.zeros_like(bf.w_ue)
    with pytest.raises(ValueError):
        dl_snr(bf, vc, 1e-12)


def test_dl_snr_aligned_rank_one(small_array):
    # L=1 with everything aligned: closed-form gain over noise
    doa = 0.0
    vc = virtual_channels([doa], [doa], small_array)
    cb = dft_codebook(3, small_array.n_per_chain_tx)
    v_rf = assemble_block_diagonal([cb[0]] * small_array.n_rf_tx)
    a_tx = steering_vector(doa, small_array.n_tx, small_array.element_spacing,
                           small_array.wavelength)
    sv = (a_tx.conj() @ v_rf)
    p_b = 1.0
    v_bb = np.sqrt(p_b) * sv.conj().reshape(-1, 1) / np.linalg.norm(sv)
    a_ue = steering_vector(doa, small_array.ue_antennas,
                           small_array.element_spacing,
                           small_array.wavelength)
    w_ue = a_ue.reshape(-1, 1)
    z = np.zeros((4, 4), dtype=complex)
    bf = BeamformerSet(v_rf=v_rf, v_bb=v_bb, w_rf=np.eye(small_array.m_rx),
                       w_ue=w_ue, c_analog=z, d_digital=z, tx_power_w=p_b)
    sigma2 = 1e-12
    expected = p_b * np.linalg.norm(sv) ** 2 / sigma2
    assert dl_snr(bf, vc, sigma2) == pytest.approx(expected, rel=1e-9)


def test_select_tx_beams_single_target_matches_bruteforce(small_array):
    cb = dft_codebook(5, small_array.n_per_chain_tx)
    vc = virtual_channels([np.deg2rad(22.0)], [], small_array)
    v_rf, idx = select_tx_beams(vc, cb, small_array)
    blocks = vc.h_radar.reshape(small_array.m_rx, small_array.n_rf_tx,
                                small_array.n_per_chain_tx)
    for j in range(small_array.n_rf_tx):
        scores = [np.linalg.norm(blocks[:, j, :] @ cb[b]) ** 2
                  for b in range(cb.shape[0])]
        assert idx[j] == int(np.argmax(scores))


def test_select_tx_beams_zero_channel_tiebreak(small_array):
    cb = dft_codebook(5, small_array.n_per_chain_tx)
    vc = virtual_channels([0.2], [], small_array)
    vc.h_radar = np.zeros_like(vc.h_radar)
    _, idx = select_tx_beams(vc, cb, small_array)
    assert np.all(idx == 0)


def test_select_tx_beams_joint_oracle(two_chain_array):
    # separable objective: per-chain argmax equals exhaustive joint search
    rng = np.random.default_rng(4)
    cb = dft_codebook(3, two_chain_array.n_per_chain_tx)
    for trial in range(10):
        doas = rng.uniform(-1.3, 1.3, size=rng.integers(1, 4))
        vc = virtual_channels(doas, [], two_chain_array)
        v_rf, idx = select_tx_beams(vc, cb, two_chain_array)
        best_val, best_tuple = -1.0, None
        for tup in itertools.product(range(8), repeat=2):
            v = assemble_block_diagonal([cb[tup[0]], cb[tup[1]]])
            val = np.linalg.norm(vc.h_radar @ v) ** 2
            if val > best_val * (1 + 1e-12):
                best_val, best_tuple = val, tup
        assert tuple(idx) == best_tuple
        assert np.linalg.norm(vc.h_radar @ v_rf) ** 2 == pytest.approx(
            best_val, rel=1e-12)


def test_select_tx_beams_dominates_random(small_array):
    rng = np.random.default_rng(5)
    cb = dft_codebook(5, small_array.n_per_chain_tx)
    vc = virtual_channels(rng.uniform(-1.3, 1.3, 3), [], small_array)
    v_rf, _ = select_tx_beams(vc, cb, small_array)
    best = np.linalg.norm(vc.h_radar @ v_rf) ** 2
    for _ in range(100):
        beams = [cb[rng.integers(0, 32)] for _ in range(small_array.n_rf_tx)]
        rand_val = np.linalg.norm(
            vc.h_radar @ assemble_block_diagonal(beams)) ** 2
        assert rand_val <= best * (1 + 1e-12)


def test_select_rx_beams_zero_si_maximizes_numerator(small_array):
    rng = np.random.default_rng(6)
    cb = dft_codebook(5, small_array.m_per_chain_rx)
    vc = virtual_channels(rng.uniform(-1.2, 1.2, 3), [], small_array)
    v_rf, _ = select_tx_beams(vc, cb, small_array)
    zero_si = np.zeros((small_array.m_rx, small_array.n_tx))
    _, idx = select_rx_beams(vc, zero_si, v_rf, cb, small_array)
    a = vc.h_radar @ v_rf
    blocks = a.reshape(small_array.m_rf_rx, small_array.m_per_chain_rx, -1)
    for j in range(small_array.m_rf_rx):
        scores = np.sum(np.abs(cb.conj() @ blocks[j]) ** 2, axis=1)
        assert idx[j] == int(np.argmax(scores))


def test_select_rx_beams_equal_channels_tiebreak(small_array):
    cb = dft_codebook(5, small_array.m_per_chain_rx)
    vc = virtual_channels([0.3, -0.7], [], small_array)
    v_rf, _ = select_tx_beams(vc, cb, small_array)
    # identical radar and SI channels: every beam has ratio one
    _, idx = select_rx_beams(vc, vc.h_radar, v_rf, cb, small_array)
    assert np.all(idx == 0)


def _oracle_rx_joint(vc, si, v_rf, cb, array):
    """Exhaustive product-codebook search of the RX ratio objective."""
    n_beams = cb.shape[0]
    best = None
    for tup in itertools.product(range(n_beams), repeat=array.m_rf_rx):
        w = assemble_block_diagonal([cb[i] for i in tup])
        num = np.linalg.norm(w.conj().T @ vc.h_radar @ v_rf) ** 2
        den = np.linalg.norm(w.conj().T @ si @ v_rf) ** 2
        if den == 0.0:
            key = (np.inf, num) if num > 0 else (0.0, 0.0)
        else:
            key = (num / den, num)
        if best is None or key > best[0]:
            best = (key, tup)
    return best


def test_select_rx_beams_matches_joint_oracle(two_chain_array):
    rng = np.random.default_rng(7)
    cb = dft_codebook(3, two_chain_array.m_per_chain_rx)
    for trial in range(10):
        doas = rng.uniform(-1.2, 1.2, size=rng.integers(1, 3))
        vc = virtual_channels(doas, [], two_chain_array)
        si = rician_si_channel(two_chain_array, 10.0, 40.0, seed=trial)
        v_rf, _ = select_tx_beams(vc, cb, two_chain_array)
        w_rf, idx = select_rx_beams(vc, si, v_rf, cb, two_chain_array)
        (oracle_key, oracle_tuple) = _oracle_rx_joint(vc, si, v_rf, cb,
                                                      two_chain_array)
        num = np.linalg.norm(w_rf.conj().T @ vc.h_radar @ v_rf) ** 2
        den = np.linalg.norm(w_rf.conj().T @ si @ v_rf) ** 2
        got = num / den if den > 0 else np.inf
        if np.isinf(oracle_key[0]):
            assert np.isinf(got)
            assert num == pytest.approx(oracle_key[1], rel=1e-9)
        else:
            assert got == pytest.approx(oracle_key[0], rel=1e-9)


def test_radar_snr_op2_dominates_beam_zero(small_array):
    # with no cancellation the SI term dominates the denominator, so the
    # ratio-optimal combiner cannot do worse than the default beams
    rng = np.random.default_rng(8)
    cb = dft_codebook(5, small_array.m_per_chain_rx)
    for trial in range(20):
        doas = rng.uniform(-1.2, 1.2, size=3)
        vc = virtual_channels(doas, [], small_array)
        si = rician_si_channel(small_array, 35.0, 40.0, seed=100 + trial)
        v_rf, _ = select_tx_beams(vc, cb, small_array)
        v_bb = np.sqrt(1.0 / small_array.n_rf_tx) * np.eye(
            small_array.n_rf_tx, dtype=complex)
        z = np.zeros((small_array.m_rf_rx, small_array.n_rf_tx), dtype=complex)

        def snr_for(w_rf):
            bf = BeamformerSet(v_rf=v_rf, v_bb=v_bb, w_rf=w_rf,
                               w_ue=np.eye(4, 2), c_analog=z, d_digital=z,
                               tx_power_w=1.0)
            h_eff = w_rf.conj().T @ si @ v_rf
            return radar_snr(bf, vc, h_eff, 1e-12)

        w_opt, _ = select_rx_beams(vc, si, v_rf, cb, small_array)
        w_zero = assemble_block_diagonal([cb[0]] * small_array.m_rf_rx)
        assert snr_for(w_opt) >= snr_for(w_zero) * (1 - 1e-9)


def test_design_cancellation_full_and_zero():
    rng = np.random.default_rng(9)
    h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    c, d = design_cancellation(h, 16)
    np.testing.assert_allclose(c, -h)
    np.testing.assert_allclose(d, np.zeros_like(h), atol=1e-15)
    c0, d0 = design_cancellation(h, 0)
    np.testing.assert_allclose(c0, np.zeros_like(h), atol=1e-15)
    np.testing.assert_allclose(d0, -h)


def test_design_cancellation_partial_columns():
    rng = np.random.default_rng(10)
    h = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    c, d = design_cancellation(h, 16)
    np.testing.assert_allclose(c[:, :2], -h[:, :2])
    assert np.all(c[:, 2:] == 0)
    np.testing.assert_allclose(c + d, -h)


def test_design_cancellation_divisibility():
    h = np.zeros((8, 8), dtype=complex)
    with pytest.raises(ValueError):
        design_cancellation(h, 12)
    with pytest.raises(ValueError):
        design_cancellation(h, 72)


def test_water_filling_kkt():
    rng = np.random.default_rng(11)
    for _ in range(20):
        gains = rng.uniform(0.0, 5.0, size=6)
        gains[rng.integers(0, 6)] = 0.0
        p_total = rng.uniform(0.5, 4.0)
        sigma2 = 10 ** rng.uniform(-3, 0)
        p = water_filling(gains, p_total, sigma2)
        assert np.all(p >= 0)
        active = p > 1e-15
        if not np.any(active):
            continue
        assert abs(p.sum() - p_total) < 1e-9
        levels = p[active] + sigma2 / gains[active]
        assert np.max(levels) - np.min(levels) < 1e-9
        mu = levels.mean()
        inactive = (~active) & (gains > 0)
        assert np.all(sigma2 / gains[inactive] >= mu - 1e-9)


def test_water_filling_single_mode():
    p = water_filling(np.array([3.0]), 2.0, 1e-2)
    assert p[0] == pytest.approx(2.0, rel=1e-12)
    assert np.log2(1 + p[0] * 3.0 / 1e-2) == pytest.approx(
        np.log2(1 + 600.0), rel=1e-12)


def test_water_filling_zero_gains():
    p = water_filling(np.zeros(4), 1.0, 1e-3)
    assert np.all(p == 0)


def test_digital_precoder_zero_residual_full_alpha(small_array):
    rng = np.random.default_rng(12)
    residual = np.zeros((4, 4), dtype=complex)
    h_dl_eff = (rng.standard_normal((4, 4))
                + 1j * rng.standard_normal((4, 4))) * 1e-5
    cfg = _config(small_array, tx_power=2.0)
    v_bb, w_ue, feasible, alpha = design_digital_precoder(
        residual, h_dl_eff, cfg, streams=2)
    assert feasible and alpha == 4
    assert np.linalg.norm(v_bb) ** 2 == pytest.approx(2.0, rel=1e-9)


def test_digital_precoder_unsatisfiable_threshold(small_array):
    rng = np.random.default_rng(13)
    residual = (rng.standard_normal((4, 4))
                + 1j * rng.standard_normal((4, 4)))
    h_dl_eff = (rng.standard_normal((4, 4))
                + 1j * rng.standard_normal((4, 4))) * 1e-5
    cfg = _config(small_array, threshold=1e-300)
    v_bb, _, feasible, alpha = design_digital_precoder(
        residual, h_dl_eff, cfg, streams=2)
    assert not feasible
    assert alpha == 2


def test_digital_precoder_subspace_is_weakest(small_array):
    # chosen F spans the trailing right-singular subspace: lowest residual
    # energy among all same-size column selections from the basis
    rng = np.random.default_rng(14)
    residual = (rng.standard_normal((4, 4))
                + 1j * rng.standard_normal((4, 4)))
    _, _, vh = np.linalg.svd(residual)
    basis = vh.conj().T
    for alpha in (2, 3):
        f = basis[:, 4 - alpha:]
        chosen = np.linalg.norm(residual @ f)
        for cols in itertools.combinations(range(4), alpha):
            other = np.linalg.norm(residual @ basis[:, cols])
            assert chosen <= other * (1 + 1e-12)
        gram = f.conj().T @ f
        np.testing.assert_allclose(gram, np.eye(alpha), atol=1e-12)


def test_water_filled_rate_single_mode_formula(small_array):
    # one effective mode: all power on it, rate log2(1 + g P / sigma^2)
    rng = np.random.default_rng(15)
    residual = np.zeros((4, 4), dtype=complex)
    a = (rng.standard_normal(4) + 1j * rng.standard_normal(4)) * 1e-4
    h_dl_eff = np.outer(rng.standard_normal(4) + 0j, a)
    cfg = _config(small_array, tx_power=1.0)
    v_bb, w_ue, feasible, _ = design_digital_precoder(
        residual, h_dl_eff, cfg, streams=2)
    sv = np.linalg.svd(h_dl_eff, compute_uv=False)
    powers = np.sum(np.abs(v_bb) ** 2, axis=0)
    assert powers[0] == pytest.approx(1.0, rel=1e-9)
    assert np.all(powers[1:] < 1e-15)


def test_optimize_aligned_single_path_rate(small_array):
    # K = L = 1, no SI: closed-form rate of the single aligned path
    doa = np.deg2rad(14.0)
    cfg = _config(small_array, tx_power=1.0)
    zero_si = np.zeros((small_array.m_rx, small_array.n_tx))
    result = optimize([doa], [doa], zero_si, small_array, cfg)
    assert result.feasible
    target = RadarTarget(doa=doa, range_m=30.0, velocity_mps=0.0,
                         reflection=1.0 + 0j, is_dl_scatterer=True)
    pathloss_db = 100.0
    h_dl = dl_channel([target], small_array, pathloss_db, seed=5)
    from fdisac.transceiver import dl_rate
    sigma2 = 1e-12
    got = dl_rate(h_dl, result.beamformers, sigma2)
    a_tx = steering_vector(doa, small_array.n_tx, small_array.element_spacing,
                           small_array.wavelength)
    gain = np.linalg.norm(a_tx.conj() @ result.beamformers.v_rf) ** 2
    expected = np.log2(1 + 1e-10 * 1.0 * gain / sigma2)
    assert got == pytest.approx(float(expected), rel=1e-6)


def test_optimize_full_taps_matches_ideal(small_array):
    rng = np.random.default_rng(16)
    doas = rng.uniform(-1.0, 1.0, size=3)
    dl_doas = doas[:1]
    si = rician_si_channel(small_array, 35.0, 40.0, seed=21)
    cfg_full = _config(small_array, n_taps=16)
    res_full = optimize(doas, dl_doas, si, small_array, cfg_full)
    res_ideal = optimize(doas, dl_doas, np.zeros_like(si), small_array,
                         cfg_full)
    assert res_full.feasible
    target = RadarTarget(doa=float(dl_doas[0]), range_m=30.0,
                         velocity_mps=0.0, reflection=1.0 + 0j,
                         is_dl_scatterer=True)
    h_dl = dl_channel([target], small_array, 100.0, seed=6)
    from fdisac.transceiver import dl_rate
    r_full = dl_rate(h_dl, res_full.beamformers, 1e-12)
    r_ideal = dl_rate(h_dl, res_ideal.beamformers, 1e-12)
    assert r_full == pytest.approx(r_ideal, rel=1e-9)


def test_optimize_certifies_constraints(small_array):
    rng = np.random.default_rng(17)
    cfg = _config(small_array, n_taps=8, threshold=1e-6)
    for trial in range(10):
        doas = rng.uniform(-1.2, 1.2, size=3)
        si = rician_si_channel(small_array, 35.0, 40.0, seed=300 + trial)
        result = optimize(doas, doas[:1], si, small_array, cfg)
        if result.feasible:
            report = check_constraints(result.beamformers, si, small_array,
                                       cfg)
            assert report.ok
        # power and codebook structure hold regardless of feasibility
        report = check_constraints(result.beamformers, si, small_array, cfg)
        assert report.power_ok and report.codebook_ok


def test_check_constraints_flags_violations(small_array):
    rng = np.random.default_rng(18)
    cfg = _config(small_array, n_taps=16)
    si = rician_si_channel(small_array, 35.0, 40.0, seed=77)
    result = optimize([0.4, -0.6], [0.4], si, small_array, cfg)
    bf = result.beamformers
    bf.v_bb = bf.v_bb * 10.0
    report = check_constraints(bf, si, small_array, cfg)
    assert not report.power_ok
    bf.v_rf = np.ones_like(bf.v_rf)
    report = check_constraints(bf, si, small_array, cfg)
    assert not report.codebook_ok


def test_optimize_requires_doas(small_array):
    cfg = _config(small_array)
    with pytest.raises(ValueError):
        optimize([], [], np.zeros((16, 16)), small_array, cfg)
