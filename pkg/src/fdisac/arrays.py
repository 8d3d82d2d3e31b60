"""Uniform linear array geometry, steering vectors, and analog beam codebooks.

The base station uses a partially-connected hybrid architecture: each RF
chain drives its own contiguous sub-array through phase shifters, so the
analog beamforming matrix is block diagonal with one constant-modulus beam
per chain.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna and RF-chain layout of the base station and user terminal.

    ``n_tx`` / ``m_rx`` are the total TX / RX element counts at the base
    station, split into ``n_rf_tx`` / ``m_rf_rx`` sub-arrays of
    ``n_per_chain_tx`` / ``m_per_chain_rx`` elements.  The user terminal is
    fully digital with ``ue_antennas`` elements and receives ``streams``
    spatial streams.
    """

    n_tx: int
    m_rx: int
    n_rf_tx: int
    m_rf_rx: int
    n_per_chain_tx: int
    m_per_chain_rx: int
    ue_antennas: int
    streams: int
    element_spacing: float
    wavelength: float

    def __post_init__(self):
        if self.n_tx != self.n_rf_tx * self.n_per_chain_tx:
            raise ValueError(
                f"n_tx={self.n_tx} must equal n_rf_tx*n_per_chain_tx="
                f"{self.n_rf_tx * self.n_per_chain_tx}"
            )
        if self.m_rx != self.m_rf_rx * self.m_per_chain_rx:
            raise ValueError(
                f"m_rx={self.m_rx} must equal m_rf_rx*m_per_chain_rx="
                f"{self.m_rf_rx * self.m_per_chain_rx}"
            )
        if self.streams > min(self.n_rf_tx, self.ue_antennas):
            raise ValueError(
                f"streams={self.streams} exceeds min(n_rf_tx, ue_antennas)="
                f"{min(self.n_rf_tx, self.ue_antennas)}"
            )
        if self.element_spacing <= 0.0 or self.wavelength <= 0.0:
            raise ValueError("element_spacing and wavelength must be positive")
        for name in ("n_tx", "m_rx", "n_rf_tx", "m_rf_rx", "n_per_chain_tx",
                     "m_per_chain_rx", "ue_antennas", "streams"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")


def steering_vector(angle: float, n_elements: int, spacing: float,
                    wavelength: float) -> np.ndarray:
    """Unit-norm ULA steering vector for a plane wave from ``angle``.

    Element ``m`` equals ``exp(1j*2*pi/wavelength * m*spacing*sin(angle))``
    scaled by ``1/sqrt(n_elements)``, for ``m = 0 .. n_elements-1``.
    ``angle`` is in radians measured from broadside.
    """
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    if spacing <= 0.0 or wavelength <= 0.0:
        raise ValueError("spacing and wavelength must be positive")
    m = np.arange(n_elements)
    phase = 2.0 * np.pi / wavelength * spacing * np.sin(angle)
    return np.exp(1j * phase * m) / np.sqrt(n_elements)


def steering_matrix(angles: np.ndarray, n_elements: int, spacing: float,
                    wavelength: float) -> np.ndarray:
    """Stack of steering vectors, one per row of shape (len(angles), n_elements)."""
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    if spacing <= 0.0 or wavelength <= 0.0:
        raise ValueError("spacing and wavelength must be positive")
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    m = np.arange(n_elements)
    phase = 2.0 * np.pi / wavelength * spacing * np.sin(angles)
    return np.exp(1j * np.outer(phase, m)) / np.sqrt(n_elements)


def dft_codebook(bits: int, n_elements: int) -> np.ndarray:
    """Oversampled DFT beam codebook as a (2**bits, n_elements) array.

    Beam ``b`` has element ``m`` equal to
    ``exp(-1j*2*pi*m*b/2**bits) / sqrt(n_elements)``; every entry has squared
    magnitude ``1/n_elements``.  With ``2**bits > n_elements`` the beams are
    oversampled DFT columns covering sin-space on a uniform grid.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    card = 2 ** bits
    b = np.arange(card)
    m = np.arange(n_elements)
    return np.exp(-2j * np.pi * np.outer(b, m) / card) / np.sqrt(n_elements)


def assemble_block_diagonal(per_chain_beams) -> np.ndarray:
    """Assemble per-chain analog beams into the block-diagonal beamformer.

    Given ``k`` beams of common length ``n``, returns the (k*n, k) matrix
    whose column ``j`` holds beam ``j`` on rows ``j*n .. (j+1)*n-1`` and zeros
    elsewhere.  Raises on ragged beam lengths.
    """
    beams = [np.asarray(b).reshape(-1) for b in per_chain_beams]
    if not beams:
        raise ValueError("need at least one per-chain beam")
    n = beams[0].size
    if any(b.size != n for b in beams):
        raise ValueError("per-chain beams must all have the same length")
    cols = [b.reshape(-1, 1) for b in beams]
    return block_diag(*cols).astype(complex)
