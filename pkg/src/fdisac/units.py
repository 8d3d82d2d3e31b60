"""Physical constants and unit conversions used across the simulator."""

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
"""Propagation speed in m/s."""


def db_to_linear(value_db: float) -> float:
    """Convert a dB power ratio to linear scale."""
    return float(10.0 ** (np.asarray(value_db, dtype=float) / 10.0))


def linear_to_db(value: float) -> float:
    """Convert a linear power ratio to dB."""
    return float(10.0 * np.log10(value))


def dbm_to_watts(value_dbm: float) -> float:
    """Convert a power level in dBm (1 mW reference) to watts."""
    return db_to_linear(value_dbm - 30.0)


def watts_to_dbm(value_w: float) -> float:
    """Convert watts to dBm. Zero maps to -inf."""
    if value_w <= 0.0:
        return float("-inf")
    return linear_to_db(value_w) + 30.0


def kmh_to_mps(value_kmh: float) -> float:
    return value_kmh / 3.6


def mps_to_kmh(value_mps: float) -> float:
    return value_mps * 3.6
