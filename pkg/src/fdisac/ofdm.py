"""OFDM numerology and the frequency-domain resource grid container."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OfdmParams:
    """OFDM numerology: active subcarriers, symbols per slot, spacing, CP.

    The total symbol duration is ``1/subcarrier_spacing + cp_duration``.
    """

    subcarriers: int
    symbols: int
    subcarrier_spacing: float
    cp_duration: float

    def __post_init__(self):
        if self.subcarriers < 1 or self.symbols < 1:
            raise ValueError("subcarriers and symbols must be positive counts")
        if self.subcarrier_spacing <= 0.0:
            raise ValueError("subcarrier_spacing must be positive")
        if self.cp_duration < 0.0:
            raise ValueError("cp_duration must be non-negative")

    @property
    def symbol_duration(self) -> float:
        """Total OFDM symbol duration including the cyclic prefix, seconds."""
        return 1.0 / self.subcarrier_spacing + self.cp_duration

    @property
    def delay_bin(self) -> float:
        """Delay-grid resolution 1/(P*df) of the likelihood search, seconds."""
        return 1.0 / (self.subcarriers * self.subcarrier_spacing)

    def doppler_bin(self, n_symbols: int) -> float:
        """Doppler-grid resolution 1/(Q*Ts) over ``n_symbols`` symbols, Hz."""
        return 1.0 / (n_symbols * self.symbol_duration)


@dataclass(frozen=True)
class OfdmGrid:
    """Complex frequency-domain resource grid indexed (subcarrier, symbol, space).

    The space axis holds streams, antennas, or RF chains depending on where
    the grid sits in the transmit/receive pipeline.  Grids are treated as
    immutable values; operations return new grids.
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("grid data must have shape (subcarriers, symbols, space)")
        if not np.iscomplexobj(self.data):
            object.__setattr__(self, "data", self.data.astype(complex))

    @property
    def subcarriers(self) -> int:
        return self.data.shape[0]

    @property
    def symbols(self) -> int:
        return self.data.shape[1]

    @property
    def space_dim(self) -> int:
        return self.data.shape[2]

    def average_power(self) -> float:
        """Mean over (subcarrier, symbol) cells of the squared vector norm."""
        return float(np.mean(np.sum(np.abs(self.data) ** 2, axis=2)))
