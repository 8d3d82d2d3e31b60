import numpy as np
import pytest

from fdisac.arrays import ArrayConfig
from fdisac.ofdm import OfdmParams
from fdisac.units import SPEED_OF_LIGHT

WAVELENGTH = SPEED_OF_LIGHT / 28e9


@pytest.fixture
def small_array() -> ArrayConfig:
    """4 chains of 4 elements; fast enough for exhaustive oracles."""
    return ArrayConfig(n_tx=16, m_rx=16, n_rf_tx=4, m_rf_rx=4,
                       n_per_chain_tx=4, m_per_chain_rx=4, ue_antennas=4,
                       streams=2, element_spacing=WAVELENGTH / 2,
                       wavelength=WAVELENGTH)


@pytest.fixture
def digital_array() -> ArrayConfig:
    """Fully digital 8-element array: one antenna per chain."""
    return ArrayConfig(n_tx=8, m_rx=8, n_rf_tx=8, m_rf_rx=8,
                       n_per_chain_tx=1, m_per_chain_rx=1, ue_antennas=4,
                       streams=2, element_spacing=WAVELENGTH / 2,
                       wavelength=WAVELENGTH)


@pytest.fixture
def toy_ofdm() -> OfdmParams:
    return OfdmParams(subcarriers=32, symbols=16, subcarrier_spacing=120e3,
                      cp_duration=8.92e-6 - 1.0 / 120e3)


@pytest.fixture
def nr_ofdm() -> OfdmParams:
    return OfdmParams(subcarriers=792, symbols=14, subcarrier_spacing=120e3,
                      cp_duration=8.92e-6 - 1.0 / 120e3)
