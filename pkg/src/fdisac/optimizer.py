"""Joint design of analog beams, digital precoding, and SI cancellation.

The design runs in stages: virtual channels from the estimated DoAs, a
per-chain codebook search for the TX analog beams, a scalarized fractional
search for the RX combiner (maximize radar gain over residual SI), column-
wise analog cancellation taps, then digital precoding by water-filling
inside the weakest-residual-SI subspace that satisfies the per-chain
residual power ceiling.
"""

from dataclasses import dataclass

import numpy as np

from .arrays import ArrayConfig, assemble_block_diagonal, steering_vector
from .transceiver import (BeamformerSet, effective_si_channel,
                          residual_si_power)
from .units import watts_to_dbm


class DegenerateNoiseError(ValueError):
    """SNR denominator is exactly zero."""


@dataclass
class VirtualChannels:
    """Steering-derived rank-limited channels built from estimated DoAs."""

    h_radar: np.ndarray       # (m_rx, n_tx), sum of target outer products
    h_dl_virtual: np.ndarray  # (ue_antennas, n_tx), sum over DL scatterers


@dataclass
class OptimizerConfig:
    """Knobs of the joint design."""

    n_taps: int
    si_threshold_w: float
    tx_power_w: float
    tx_codebook: np.ndarray
    rx_codebook: np.ndarray
    noise_var_ue: float = 1e-12

    def __post_init__(self):
        if self.si_threshold_w <= 0.0:
            raise ValueError("si_threshold_w must be positive")
        if self.n_taps < 0:
            raise ValueError("n_taps must be non-negative")
        if self.tx_power_w <= 0.0:
            raise ValueError("tx_power_w must be positive")


@dataclass
class OptimizationResult:
    beamformers: BeamformerSet
    feasible: bool
    alpha: int
    tx_beam_indices: np.ndarray
    rx_beam_indices: np.ndarray
    analog_residual_w: np.ndarray
    si_effective: np.ndarray


def virtual_channels(doas, dl_doas, array: ArrayConfig) -> VirtualChannels:
    """Build the radar and DL virtual channels from DoA lists."""
    h_radar = np.zeros((array.m_rx, array.n_tx), dtype=complex)
    for th in doas:
        a_rx = steering_vector(th, array.m_rx, array.element_spacing,
                               array.wavelength)
        a_tx = steering_vector(th, array.n_tx, array.element_spacing,
                               array.wavelength)
        h_radar += np.outer(a_rx, a_tx.conj())
    h_dl = np.zeros((array.ue_antennas, array.n_tx), dtype=complex)
    for th in dl_doas:
        a_ue = steering_vector(th, array.ue_antennas, array.element_spacing,
                               array.wavelength)
        a_tx = steering_vector(th, array.n_tx, array.element_spacing,
                               array.wavelength)
        h_dl += np.outer(a_ue, a_tx.conj())
    return VirtualChannels(h_radar=h_radar, h_dl_virtual=h_dl)


def radar_snr(bf: BeamformerSet, vc: VirtualChannels,
              si_effective: np.ndarray, noise_var: float) -> float:
    """SNR aggregated over the estimated radar directions.

    ``||W^H H_radar V_rf V_bb||^2`` over the residual interference-plus-noise
    scalar ``||(H_eff + C + D) V_bb||^2 + ||W||^2 sigma^2``.
    """
    num = np.linalg.norm(
        bf.w_rf.conj().T @ vc.h_radar @ bf.v_rf @ bf.v_bb) ** 2
    resid = np.linalg.norm(
        (si_effective + bf.c_analog + bf.d_digital) @ bf.v_bb) ** 2
    den = resid + np.linalg.norm(bf.w_rf) ** 2 * noise_var
    if den == 0.0:
        raise DegenerateNoiseError("interference-plus-noise power is zero")
    return float(num / den)


def dl_snr(bf: BeamformerSet, vc: VirtualChannels, noise_var: float) -> float:
    """Estimated downlink SNR through the virtual DL channel."""
    w_norm = np.linalg.norm(bf.w_ue) ** 2
    if w_norm == 0.0:
        raise ValueError("user combiner is zero")
    num = np.linalg.norm(
        bf.w_ue.conj().T @ vc.h_dl_virtual @ bf.v_rf @ bf.v_bb) ** 2
    return float(num / (w_norm * noise_var))


def _chain_blocks(matrix: np.ndarray, n_chains: int) -> np.ndarray:
    """Split rows of ``matrix`` into equal per-chain blocks, shape (chains, per, cols)."""
    per = matrix.shape[0] // n_chains
    return matrix.reshape(n_chains, per, matrix.shape[1])


def select_tx_beams(vc: VirtualChannels, codebook: np.ndarray,
                    array: ArrayConfig):
    """Pick per-chain TX beams maximizing ``||H_radar V_rf||_F^2``.

    The Frobenius objective splits column-wise over the block-diagonal
    structure, so the joint optimum is the per-chain exhaustive argmax; ties
    go to the lowest beam index.  Returns (assembled matrix, beam indices).
    """
    if codebook.size == 0:
        raise ValueError("empty codebook")
    blocks = vc.h_radar.reshape(
        array.m_rx, array.n_rf_tx, array.n_per_chain_tx)
    indices = np.empty(array.n_rf_tx, dtype=int)
    for j in range(array.n_rf_tx):
        scores = np.linalg.norm(blocks[:, j, :] @ codebook.T, axis=0) ** 2
        indices[j] = int(np.argmax(scores))
    v_rf = assemble_block_diagonal([codebook[i] for i in indices])
    return v_rf, indices


def _rx_scores(vc: VirtualChannels, si_estimate: np.ndarray,
               v_rf: np.ndarray, codebook: np.ndarray, array: ArrayConfig):
    """Per-chain radar-gain and SI-gain scores for every candidate beam."""
    a_r = _chain_blocks(vc.h_radar @ v_rf, array.m_rf_rx)
    a_s = _chain_blocks(si_estimate @ v_rf, array.m_rf_rx)
    nums = np.empty((array.m_rf_rx, codebook.shape[0]))
    dens = np.empty_like(nums)
    for j in range(array.m_rf_rx):
        nums[j] = np.sum(np.abs(codebook.conj() @ a_r[j]) ** 2, axis=1)
        dens[j] = np.sum(np.abs(codebook.conj() @ a_s[j]) ** 2, axis=1)
    return nums, dens


def select_rx_beams(vc: VirtualChannels, si_estimate: np.ndarray,
                    v_rf: np.ndarray, codebook: np.ndarray,
                    array: ArrayConfig):
    """Pick per-chain RX beams maximizing radar gain over SI gain.

    Maximizes ``||W^H H_radar V_rf||^2 / ||W^H H_si V_rf||^2`` over the
    product codebook by Dinkelbach scalarization: each iteration solves the
    separable per-chain search ``argmax (num_j - mu * den_j)``, which
    converges to the global optimum of the joint ratio.  Beam tuples that
    null the SI entirely (zero denominator) are preferred outright, ranked
    by radar gain.  Ties go to the lowest beam index.
    """
    if codebook.size == 0:
        raise ValueError("empty codebook")
    nums, dens = _rx_scores(vc, si_estimate, v_rf, codebook, array)
    n_chains = array.m_rf_rx

    zero_d = dens == 0.0
    if zero_d.any(axis=1).all():
        # SI can be nulled exactly: among nulling tuples maximize radar gain
        idx = np.empty(n_chains, dtype=int)
        for j in range(n_chains):
            cands = np.flatnonzero(zero_d[j])
            idx[j] = cands[int(np.argmax(nums[j, cands]))]
        if nums[np.arange(n_chains), idx].sum() > 0.0 or zero_d.all():
            w_rf = assemble_block_diagonal([codebook[i] for i in idx])
            return w_rf, idx

    mu = 0.0
    idx = nums.argmax(axis=1)
    for _ in range(128):
        total_n = nums[np.arange(n_chains), idx].sum()
        total_d = dens[np.arange(n_chains), idx].sum()
        if total_d == 0.0:
            break
        ratio = total_n / total_d
        if ratio <= mu * (1.0 + 1e-14):
            break
        mu = ratio
        idx = (nums - mu * dens).argmax(axis=1)
    w_rf = assemble_block_diagonal([codebook[i] for i in idx])
    return w_rf, idx


def design_cancellation(si_effective: np.ndarray, n_taps: int):
    """Split SI cancellation between analog taps and the digital stage.

    The analog canceller ``C`` copies (negated) the first ``n_taps/m_rf``
    columns of the chain-level SI channel; the digital stage ``D`` removes
    whatever ``C`` leaves, so ``C + D = -H_eff``.  ``n_taps`` must be a
    multiple of the RX chain count (whole columns).
    """
    m_rf, n_rf = si_effective.shape
    if n_taps % m_rf != 0:
        raise ValueError(f"n_taps={n_taps} must be a multiple of m_rf={m_rf}")
    n_cols = n_taps // m_rf
    if n_cols > n_rf:
        raise ValueError(f"n_taps={n_taps} exceeds {m_rf * n_rf} available taps")
    c = np.zeros_like(si_effective)
    c[:, :n_cols] = -si_effective[:, :n_cols]
    d = -(si_effective + c)
    return c, d


def water_filling(gains: np.ndarray, total_power: float,
                  noise_var: float) -> np.ndarray:
    """Water-filling power allocation over parallel channel gains.

    Maximizes ``sum log2(1 + p_i g_i / noise_var)`` subject to
    ``sum p_i = total_power`` and ``p_i >= 0``.  Zero-gain modes get zero
    power; if no mode has positive gain the allocation is all zeros.
    """
    gains = np.asarray(gains, dtype=float)
    powers = np.zeros_like(gains)
    active = np.flatnonzero(gains > 0.0)
    if active.size == 0 or total_power <= 0.0:
        return powers
    floors = noise_var / gains[active]
    order = np.argsort(floors)
    floors_sorted = floors[order]
    k = active.size
    while k > 0:
        level = (total_power + floors_sorted[:k].sum()) / k
        if level > floors_sorted[k - 1]:
            break
        k -= 1
    alloc = np.maximum(level - floors_sorted[:k], 0.0)
    powers[active[order[:k]]] = alloc
    return powers


def design_digital_precoder(si_analog_residual: np.ndarray,
                            h_dl_effective: np.ndarray,
                            cfg: OptimizerConfig, streams: int,
                            w_ue: np.ndarray | None = None):
    """Water-filled digital precoder confined to a low-residual-SI subspace.

    Orders the right-singular vectors of the analog-stage residual
    ``H_eff + C`` by descending singular value and, for the subspace sizes
    ``alpha = n_rf .. 2`` spanned by the weakest directions, water-fills the
    effective DL channel restricted to that subspace under the transmit
    power budget.  The first ``alpha`` whose per-chain residual power stays
    below the threshold wins; if none does, the last attempt is returned
    with ``feasible=False``.

    Returns ``(v_bb, w_ue, feasible, alpha)``.  When ``w_ue`` is not given
    it is taken from the left-singular vectors of ``h_dl_effective``.
    """
    m_rf, n_rf = si_analog_residual.shape
    if h_dl_effective.shape[1] != n_rf:
        raise ValueError("effective DL channel does not match chain count")
    _, _, vh = np.linalg.svd(si_analog_residual, full_matrices=True)
    basis = vh.conj().T            # columns ordered by descending singular value
    if w_ue is None:
        u_dl, _, _ = np.linalg.svd(h_dl_effective)
        w_ue = u_dl[:, :streams]

    v_bb = np.zeros((n_rf, streams), dtype=complex)
    alpha_used = 0
    feasible = False
    for alpha in range(n_rf, 1, -1):
        f = basis[:, n_rf - alpha:]
        h_eff = h_dl_effective @ f
        u_e, s_e, vh_e = np.linalg.svd(h_eff)
        k = min(streams, s_e.size)
        gains = np.zeros(streams)
        gains[:k] = s_e[:k] ** 2
        powers = water_filling(gains, cfg.tx_power_w, cfg.noise_var_ue)
        g = np.zeros((alpha, streams), dtype=complex)
        g[:, :k] = vh_e.conj().T[:, :k] * np.sqrt(powers[:k])
        candidate = f @ g
        rows = residual_si_power(si_analog_residual,
                                 np.zeros_like(si_analog_residual), candidate)
        v_bb, alpha_used = candidate, alpha
        if np.all(rows <= cfg.si_threshold_w * (1.0 + 1e-12)):
            feasible = True
            break
    return v_bb, w_ue, feasible, alpha_used


def optimize(doas, dl_doas, si_estimate: np.ndarray, array: ArrayConfig,
             cfg: OptimizerConfig) -> OptimizationResult:
    """Run the full alternating design from estimated DoAs and SI knowledge.

    Stages: virtual channels, user combiner from the virtual DL channel,
    TX beam search, RX beam search, chain-level effective channels, analog/
    digital SI cancellation split, then the subspace water-filling loop.
    The returned beamformers satisfy the transmit power budget and codebook
    membership by construction; the per-chain residual ceiling holds
    whenever ``feasible`` is set.
    """
    if not len(doas):
        raise ValueError("need at least one estimated DoA")
    vc = virtual_channels(doas, dl_doas, array)
    u_dl, _, _ = np.linalg.svd(vc.h_dl_virtual)
    w_ue = u_dl[:, :array.streams]
    v_rf, tx_idx = select_tx_beams(vc, cfg.tx_codebook, array)
    w_rf, rx_idx = select_rx_beams(vc, si_estimate, v_rf, cfg.rx_codebook,
                                   array)
    h_si_eff = effective_si_channel(si_estimate, w_rf, v_rf)
    h_dl_eff = vc.h_dl_virtual @ v_rf
    c, d = design_cancellation(h_si_eff, cfg.n_taps)
    v_bb, w_ue, feasible, alpha = design_digital_precoder(
        h_si_eff + c, h_dl_eff, cfg, array.streams, w_ue=w_ue)
    bf = BeamformerSet(v_rf=v_rf, v_bb=v_bb, w_rf=w_rf, w_ue=w_ue,
                       c_analog=c, d_digital=d, tx_power_w=cfg.tx_power_w)
    return OptimizationResult(
        beamformers=bf, feasible=feasible, alpha=alpha,
        tx_beam_indices=tx_idx, rx_beam_indices=rx_idx,
        analog_residual_w=residual_si_power(h_si_eff, c, v_bb),
        si_effective=h_si_eff)


@dataclass
class ConstraintReport:
    ok: bool
    residual_ok: bool
    power_ok: bool
    codebook_ok: bool
    row_residuals_w: np.ndarray
    power_w: float


def _beams_in_codebook(block_matrix: np.ndarray, n_chains: int,
                       codebook: np.ndarray, tol: float = 1e-10) -> bool:
    """Check block-diagonal structure and per-chain codebook membership."""
    rows, cols = block_matrix.shape
    if cols != n_chains or rows % n_chains != 0:
        return False
    per = rows // n_chains
    for j in range(n_chains):
        col = block_matrix[:, j]
        outside = np.delete(col, slice(j * per, (j + 1) * per))
        if np.any(np.abs(outside) > tol):
            return False
        beam = col[j * per:(j + 1) * per]
        if not np.any(np.all(np.abs(codebook - beam) <= tol, axis=1)):
            return False
    return True


def check_constraints(bf: BeamformerSet, si_estimate: np.ndarray,
                      array: ArrayConfig,
                      cfg: OptimizerConfig) -> ConstraintReport:
    """Independently certify the three design constraints.

    Recomputes the chain-level SI channel from the full SI estimate and the
    returned beams, then checks the per-chain analog-stage residual against
    the threshold, the total transmit power against the budget, and every
    analog beam against the codebooks (including block-diagonal structure).
    """
    h_eff = effective_si_channel(si_estimate, bf.w_rf, bf.v_rf)
    rows = residual_si_power(h_eff, bf.c_analog, bf.v_bb)
    residual_ok = bool(np.all(rows <= cfg.si_threshold_w * (1.0 + 1e-9)))
    power = float(np.linalg.norm(bf.v_rf @ bf.v_bb) ** 2)
    power_ok = power <= cfg.tx_power_w * (1.0 + 1e-9)
    codebook_ok = (_beams_in_codebook(bf.v_rf, array.n_rf_tx, cfg.tx_codebook)
                   and _beams_in_codebook(bf.w_rf, array.m_rf_rx,
                                          cfg.rx_codebook))
    return ConstraintReport(ok=residual_ok and power_ok and codebook_ok,
                            residual_ok=residual_ok, power_ok=power_ok,
                            codebook_ok=codebook_ok, row_residuals_w=rows,
                            power_w=power)


def dump_design(result: OptimizationResult) -> str:
    """Human-readable summary of a design for debugging."""
    lines = [
        f"feasible: {result.feasible}",
        f"alpha_subspace: {result.alpha}",
        "tx_beam_indices: " + " ".join(str(i) for i in result.tx_beam_indices),
        "rx_beam_indices: " + " ".join(str(i) for i in result.rx_beam_indices),
    ]
    for j, r in enumerate(result.analog_residual_w):
        lines.append(f"analog_residual_chain{j}_dbm: {watts_to_dbm(float(r)):.2f}")
    return "\n".join(lines)
