"""Scenario generation and the radar echo, self-interference, and DL channels.

Every stochastic generator takes an explicit integer seed and is bit-for-bit
reproducible from (seed, parameters).
"""

import json
from dataclasses import dataclass

import numpy as np

from .arrays import ArrayConfig, steering_vector
from .ofdm import OfdmGrid, OfdmParams
from .transceiver import _noise_grid
from .units import SPEED_OF_LIGHT, db_to_linear

DEFAULT_RCS_M2 = 25.0
"""Default monostatic radar cross section of a scatterer, m^2."""


@dataclass
class RadarTarget:
    """Ground truth for one scatterer: geometry, kinematics, reflectivity.

    Delay and Doppler follow the monostatic two-way conventions
    ``tau = 2*range/c`` and ``f_D = 2*velocity/wavelength``.
    """

    doa: float            # radians from broadside
    range_m: float
    velocity_mps: float   # positive towards the array
    reflection: complex
    is_dl_scatterer: bool = False

    @property
    def delay(self) -> float:
        return 2.0 * self.range_m / SPEED_OF_LIGHT

    def doppler(self, wavelength: float) -> float:
        return 2.0 * self.velocity_mps / wavelength


@dataclass
class Scenario:
    """One sensing/communication environment draw plus its channel state."""

    targets: list
    si_channel: np.ndarray
    si_rician_k_db: float
    si_pathloss_db: float
    dl_pathloss_db: float
    noise_floor_dbm: float
    seed: int
    si_seed: int
    dl_seed: int
    rcs_m2: float = DEFAULT_RCS_M2

    @property
    def dl_scatterer_count(self) -> int:
        return sum(t.is_dl_scatterer for t in self.targets)

    def dl_targets(self) -> list:
        return [t for t in self.targets if t.is_dl_scatterer]


def reflection_amplitude(range_m: float, wavelength: float, rcs_m2: float,
                         n_tx: int, m_rx: int) -> float:
    """Two-way radar-equation echo amplitude for unit-norm steering vectors.

    ``|alpha|^2 = n_tx*m_rx * wavelength^2 * rcs / ((4*pi)^3 * R^4)``.  The
    element-count factor restores the TX/RX array gains that the 1/sqrt(N)
    steering normalization removes from the signal model.
    """
    power = (n_tx * m_rx * wavelength**2 * rcs_m2
             / ((4.0 * np.pi) ** 3 * range_m**4))
    return float(np.sqrt(power))


def rician_si_channel(array: ArrayConfig, k_factor_db: float,
                      pathloss_db: float, seed: int,
                      separation_m: float = 0.1) -> np.ndarray:
    """Rician self-interference channel between co-located TX and RX arrays.

    ``H = sqrt(PL) * (sqrt(k/(k+1)) H_los + sqrt(1/(k+1)) H_nlos)`` where
    ``H_los`` is the deterministic near-field phase matrix of two parallel
    ULAs ``separation_m`` apart and ``H_nlos`` is i.i.d. unit-variance
    circular Gaussian.  The average entry power is ``10**(-pathloss_db/10)``.
    """
    d = array.element_spacing
    tx_pos = np.arange(array.n_tx) * d
    rx_pos = np.arange(array.m_rx) * d
    dist = np.sqrt(separation_m**2
                   + (rx_pos[:, None] - tx_pos[None, :]) ** 2)
    h_los = np.exp(2j * np.pi * dist / array.wavelength)

    kappa = db_to_linear(k_factor_db)
    if np.isinf(kappa):
        los_w, nlos_w = 1.0, 0.0
    else:
        los_w = np.sqrt(kappa / (kappa + 1.0))
        nlos_w = np.sqrt(1.0 / (kappa + 1.0))
    rng = np.random.default_rng(seed)
    h_nlos = (rng.standard_normal(h_los.shape)
              + 1j * rng.standard_normal(h_los.shape)) / np.sqrt(2.0)
    scale = np.sqrt(db_to_linear(-pathloss_db))
    return scale * (los_w * h_los + nlos_w * h_nlos)


def dl_channel(targets: list, array: ArrayConfig, pathloss_db: float,
               seed: int) -> np.ndarray:
    """Clustered downlink channel through the given scatterers.

    ``H = sum_l beta_l a_ue(theta_l) a_tx(theta_l)^H`` with unit-magnitude
    random-phase path gains scaled so the aggregate path power
    ``sum_l |beta_l|^2`` equals ``10**(-pathloss_db/10)``.  Delay and Doppler
    are ignored on the DL paths.
    """
    if not targets:
        raise ValueError("need at least one DL scatterer")
    rng = np.random.default_rng(seed)
    n_paths = len(targets)
    beta_mag = np.sqrt(db_to_linear(-pathloss_db) / n_paths)
    h = np.zeros((array.ue_antennas, array.n_tx), dtype=complex)
    for t in targets:
        beta = beta_mag * np.exp(2j * np.pi * rng.uniform())
        a_ue = steering_vector(t.doa, array.ue_antennas,
                               array.element_spacing, array.wavelength)
        a_tx = steering_vector(t.doa, array.n_tx,
                               array.element_spacing, array.wavelength)
        h += beta * np.outer(a_ue, a_tx.conj())
    return h


def radar_echo(x_grid: OfdmGrid, targets: list, ofdm: OfdmParams,
               array: ArrayConfig) -> OfdmGrid:
    """Noise-free multi-target echo of the transmit grid at the RX array.

    Per cell (p, q) returns
    ``sum_k alpha_k exp(j*2*pi*(q*Ts*f_k - p*tau_k*df)) a_rx(th_k) a_tx^H(th_k) x``.
    The Doppler term is a constant phase per OFDM symbol; the delay term is a
    linear phase across subcarriers.
    """
    if x_grid.space_dim != array.n_tx:
        raise ValueError("transmit grid space axis must hold n_tx antennas")
    if x_grid.subcarriers != ofdm.subcarriers:
        raise ValueError("transmit grid subcarrier count does not match numerology")
    p = np.arange(x_grid.subcarriers)
    q = np.arange(x_grid.symbols)
    out = np.zeros((x_grid.subcarriers, x_grid.symbols, array.m_rx),
                   dtype=complex)
    for t in targets:
        a_rx = steering_vector(t.doa, array.m_rx, array.element_spacing,
                               array.wavelength)
        a_tx = steering_vector(t.doa, array.n_tx, array.element_spacing,
                               array.wavelength)
        proj = x_grid.data @ a_tx.conj()                       # (P, Q)
        delay_phase = np.exp(-2j * np.pi * p * t.delay * ofdm.subcarrier_spacing)
        doppler_phase = np.exp(
            2j * np.pi * q * ofdm.symbol_duration * t.doppler(array.wavelength))
        weight = t.reflection * np.outer(delay_phase, doppler_phase) * proj
        out += weight[:, :, None] * a_rx[None, None, :]
    return OfdmGrid(out)


def add_noise(grid: OfdmGrid, noise_floor_dbm: float, seed: int) -> OfdmGrid:
    """Add i.i.d. circular complex Gaussian noise to every grid entry.

    The per-antenna, per-cell noise power equals ``noise_floor_dbm``
    converted to watts; ``-inf`` leaves the grid unchanged.
    """
    return OfdmGrid(grid.data + _noise_grid(grid.data.shape, noise_floor_dbm, seed))


def generate_scenario(array: ArrayConfig, k_targets: int, l_scatterers: int,
                      seed: int, *,
                      range_limits=(0.0, 80.0),
                      velocity_limits_mps=(-100.0 / 3.6, 100.0 / 3.6),
                      doa_limits=(-np.pi / 2, np.pi / 2),
                      rcs_m2: float = DEFAULT_RCS_M2,
                      si_k_factor_db: float = 35.0,
                      si_pathloss_db: float = 40.0,
                      dl_pathloss_db: float = 100.0,
                      noise_floor_dbm: float = -90.0,
                      on_grid: bool = False,
                      ofdm: OfdmParams | None = None,
                      n_sense_symbols: int | None = None) -> Scenario:
    """Draw a random scenario: K targets, L of which scatter the DL path.

    DoAs are uniform over ``doa_limits``, ranges uniform over
    ``range_limits``, velocities uniform over ``velocity_limits_mps``.
    Reflection magnitudes follow :func:`reflection_amplitude` with uniform
    random phase.  With ``on_grid=True`` delays and Dopplers are snapped to
    the estimation bin centers of the given numerology.
    """
    if l_scatterers > k_targets:
        raise ValueError("l_scatterers must not exceed k_targets")
    if range_limits[1] <= range_limits[0] and k_targets > 0:
        if range_limits[1] < range_limits[0]:
            raise ValueError("empty range bounds")
    if on_grid and (ofdm is None or n_sense_symbols is None):
        raise ValueError("on_grid snapping requires ofdm and n_sense_symbols")

    rng = np.random.default_rng(seed)
    si_seed, dl_seed = (int(s) for s in
                        rng.integers(0, 2**63 - 1, size=2))
    doas = rng.uniform(doa_limits[0], doa_limits[1], size=k_targets)
    ranges = rng.uniform(range_limits[0], range_limits[1], size=k_targets)
    speeds = rng.uniform(velocity_limits_mps[0], velocity_limits_mps[1],
                         size=k_targets)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=k_targets)
    dl_flags = np.zeros(k_targets, dtype=bool)
    dl_flags[rng.choice(k_targets, size=l_scatterers, replace=False)] = True

    if on_grid:
        ranges, speeds = snap_to_bins(ranges, speeds, ofdm, n_sense_symbols,
                                      array.wavelength)

    targets = []
    for k in range(k_targets):
        amp = reflection_amplitude(ranges[k], array.wavelength, rcs_m2,
                                   array.n_tx, array.m_rx)
        targets.append(RadarTarget(
            doa=float(doas[k]),
            range_m=float(ranges[k]),
            velocity_mps=float(speeds[k]),
            reflection=amp * np.exp(1j * phases[k]),
            is_dl_scatterer=bool(dl_flags[k]),
        ))
    si = rician_si_channel(array, si_k_factor_db, si_pathloss_db, si_seed)
    return Scenario(targets=targets, si_channel=si,
                    si_rician_k_db=si_k_factor_db,
                    si_pathloss_db=si_pathloss_db,
                    dl_pathloss_db=dl_pathloss_db,
                    noise_floor_dbm=noise_floor_dbm,
                    seed=seed, si_seed=si_seed, dl_seed=dl_seed,
                    rcs_m2=rcs_m2)


def snap_to_bins(ranges, speeds, ofdm: OfdmParams, n_sense_symbols: int,
                 wavelength: float):
    """Snap ranges/velocities to the delay/Doppler bin centers.

    Delays are floored at the first bin so snapped targets keep a positive
    range (a zero range has no defined echo amplitude).
    """
    ranges = np.asarray(ranges, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    delay_bin = ofdm.delay_bin
    dopp_bin = ofdm.doppler_bin(n_sense_symbols)
    bins = np.maximum(np.round((2.0 * ranges / SPEED_OF_LIGHT) / delay_bin), 1.0)
    delays = bins * delay_bin
    dopplers = np.round((2.0 * speeds / wavelength) / dopp_bin) * dopp_bin
    return delays * SPEED_OF_LIGHT / 2.0, dopplers * wavelength / 2.0


def save_scenario(scenario: Scenario, path) -> None:
    """Serialize a scenario to JSON so harness runs are replayable.

    The SI channel matrix itself is not stored; it is regenerated exactly
    from ``si_seed`` and the array config on load.
    """
    payload = {
        "seed": scenario.seed,
        "si_seed": scenario.si_seed,
        "dl_seed": scenario.dl_seed,
        "si_rician_k_db": scenario.si_rician_k_db,
        "si_pathloss_db": scenario.si_pathloss_db,
        "dl_pathloss_db": scenario.dl_pathloss_db,
        "noise_floor_dbm": scenario.noise_floor_dbm,
        "rcs_m2": scenario.rcs_m2,
        "targets": [
            {
                "doa_rad": t.doa,
                "range_m": t.range_m,
                "velocity_mps": t.velocity_mps,
                "reflection_re": t.reflection.real,
                "reflection_im": t.reflection.imag,
                "is_dl_scatterer": t.is_dl_scatterer,
            }
            for t in scenario.targets
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_scenario(path, array: ArrayConfig) -> Scenario:
    """Load a scenario saved by :func:`save_scenario`, rebuilding the SI channel."""
    with open(path) as fh:
        payload = json.load(fh)
    targets = [
        RadarTarget(
            doa=t["doa_rad"],
            range_m=t["range_m"],
            velocity_mps=t["velocity_mps"],
            reflection=complex(t["reflection_re"], t["reflection_im"]),
            is_dl_scatterer=bool(t["is_dl_scatterer"]),
        )
        for t in payload["targets"]
    ]
    si = rician_si_channel(array, payload["si_rician_k_db"],
                           payload["si_pathloss_db"], payload["si_seed"])
    return Scenario(targets=targets, si_channel=si,
                    si_rician_k_db=payload["si_rician_k_db"],
                    si_pathloss_db=payload["si_pathloss_db"],
                    dl_pathloss_db=payload["dl_pathloss_db"],
                    noise_floor_dbm=payload["noise_floor_dbm"],
                    seed=payload["seed"], si_seed=payload["si_seed"],
                    dl_seed=payload["dl_seed"],
                    rcs_m2=payload["rcs_m2"])
