"""Hybrid-precoded transmission, full-duplex reception, and rate evaluation.

All grid transforms are pure functions on :class:`~fdisac.ofdm.OfdmGrid`
values.  Noise injection is parameterized by an explicit seed so every
receive path is reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .ofdm import OfdmGrid, OfdmParams
from .units import dbm_to_watts

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


class PowerLimitError(ValueError):
    """Transmit power constraint violated."""


@dataclass
class BeamformerSet:
    """Complete transmit/receive beamforming and SI-cancellation state.

    ``v_rf`` (n_tx, n_rf_tx) and ``w_rf`` (m_rx, m_rf_rx) are block-diagonal
    analog stages; ``v_bb`` (n_rf_tx, streams) is the digital precoder,
    ``w_ue`` (ue_antennas, streams) the user combiner.  ``c_analog`` and
    ``d_digital`` (m_rf_rx, n_rf_tx) are the analog-tap and digital
    self-interference cancellers injected at the RX chain outputs.
    """

    v_rf: np.ndarray
    v_bb: np.ndarray
    w_rf: np.ndarray
    w_ue: np.ndarray
    c_analog: np.ndarray
    d_digital: np.ndarray
    tx_power_w: float


def make_symbol_grid(ofdm: OfdmParams, streams: int, seed: int,
                     n_symbols: int | None = None) -> OfdmGrid:
    """Draw a unit-power QPSK symbol grid of shape (P, Q, streams).

    Entries are i.i.d. uniform over {(+-1 +-1j)/sqrt(2)}, so every entry has
    unit modulus and the per-cell symbol covariance is the identity in
    expectation.  ``n_symbols`` overrides ``ofdm.symbols`` (e.g. to span
    several slots for sensing).
    """
    if streams < 1:
        raise ValueError("streams must be >= 1")
    q = ofdm.symbols if n_symbols is None else int(n_symbols)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 4, size=(ofdm.subcarriers, q, streams))
    return OfdmGrid(QPSK[idx])


def transmit(symbols: OfdmGrid, v_rf: np.ndarray, v_bb: np.ndarray,
             tx_power_w: float | None = None) -> OfdmGrid:
    """Apply the hybrid precoder: antenna grid x = V_rf V_bb s per cell.

    If ``tx_power_w`` is given, ``||V_rf V_bb||_F^2`` (the mean transmit
    power for unit-power symbols) must not exceed it.
    """
    f = v_rf @ v_bb
    if f.shape[1] != symbols.space_dim:
        raise ValueError("precoder stream count does not match symbol grid")
    if tx_power_w is not None:
        used = float(np.linalg.norm(f) ** 2)
        if used > tx_power_w * (1.0 + 1e-9):
            raise PowerLimitError(
                f"precoder power {used:.6g} W exceeds limit {tx_power_w:.6g} W"
            )
    return OfdmGrid(symbols.data @ f.T)


def _noise_grid(shape, noise_floor_dbm: float, seed: int) -> np.ndarray:
    var = dbm_to_watts(noise_floor_dbm)
    if var == 0.0:
        return np.zeros(shape, dtype=complex)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def fd_receive(x_grid: OfdmGrid, echo: OfdmGrid, si_channel: np.ndarray,
               bf: BeamformerSet, symbols: OfdmGrid, noise_floor_dbm: float,
               seed: int) -> OfdmGrid:
    """Full-duplex receive chain: analog combining plus SI cancellation.

    Per cell computes ``W_rf^H (echo + H_si x + n) + (C + D) V_bb s`` and
    returns the RF-chain grid (P, Q, m_rf_rx).  The noise is circular complex
    Gaussian with per-antenna sample variance set by ``noise_floor_dbm``.
    """
    m_rx, m_rf = bf.w_rf.shape
    if echo.space_dim != m_rx or x_grid.space_dim != si_channel.shape[1]:
        raise ValueError("grid dimensions do not match beamformers/SI channel")
    if si_channel.shape[0] != m_rx:
        raise ValueError("SI channel row count does not match RX array")
    if symbols.space_dim != bf.v_bb.shape[1]:
        raise ValueError("symbol grid does not match digital precoder")
    w_h = bf.w_rf.conj().T
    # associativity: W^H (H x) computed as x @ (W^H H)^T to stay at chain rank
    si_combined = x_grid.data @ (w_h @ si_channel).T
    noise = _noise_grid(echo.data.shape, noise_floor_dbm, seed)
    combined = (echo.data + noise) @ bf.w_rf.conj() + si_combined
    cancel = symbols.data @ ((bf.c_analog + bf.d_digital) @ bf.v_bb).T
    return OfdmGrid(combined + cancel)


def ue_receive(x_grid: OfdmGrid, h_dl: np.ndarray, w_ue: np.ndarray,
               noise_floor_dbm: float, seed: int) -> OfdmGrid:
    """Downlink receive at the user: r = W_ue^H (H x + z) per cell."""
    if x_grid.space_dim != h_dl.shape[1]:
        raise ValueError("transmit grid does not match DL channel")
    if w_ue.shape[0] != h_dl.shape[0]:
        raise ValueError("user combiner does not match DL channel")
    at_ue = x_grid.data @ h_dl.T
    at_ue += _noise_grid(at_ue.shape, noise_floor_dbm, seed)
    return OfdmGrid(at_ue @ w_ue.conj())


def effective_si_channel(si_channel: np.ndarray, w_rf: np.ndarray,
                         v_rf: np.ndarray) -> np.ndarray:
    """Chain-level SI channel W_rf^H H_si V_rf of shape (m_rf_rx, n_rf_tx)."""
    return w_rf.conj().T @ si_channel @ v_rf


def residual_si_power(si_effective: np.ndarray, c_analog: np.ndarray,
                      v_bb: np.ndarray) -> np.ndarray:
    """Per-RX-chain analog-stage residual SI power in watts.

    Row ``j`` is ``||[(H_eff + C) V_bb]_(j,:)||^2``, the power entering chain
    ``j``'s converter after analog cancellation only, for unit-power symbols.
    """
    rows = (si_effective + c_analog) @ v_bb
    return np.sum(np.abs(rows) ** 2, axis=1).real


def dl_rate(h_dl: np.ndarray, bf: BeamformerSet, noise_var: float) -> float:
    """Achievable downlink rate in bps/Hz for the configured beamformers.

    Evaluates ``log2 det(I + W^H H V V^H H^H W (W^H W sigma^2)^-1)`` with
    ``V = v_rf @ v_bb`` and ``W = w_ue``.  Raises ``LinAlgError`` when the
    user combiner is rank deficient.
    """
    w = bf.w_ue
    gram = w.conj().T @ w
    if np.linalg.matrix_rank(gram, tol=1e-12 * max(1.0, np.linalg.norm(gram))) < gram.shape[0]:
        raise np.linalg.LinAlgError("user combiner is rank deficient")
    v = bf.v_rf @ bf.v_bb
    g = w.conj().T @ h_dl @ v
    core = np.linalg.solve(gram * noise_var, g @ g.conj().T)
    sign, logdet = np.linalg.slogdet(np.eye(gram.shape[0]) + core)
    rate = logdet / np.log(2.0)
    return max(float(rate), 0.0)
