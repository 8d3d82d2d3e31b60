"""Monte Carlo experiment runner and metric aggregation.

Each run executes the two-slot protocol: a sounding slot with spread analog
beams and full digital SI cancellation feeds the DoA / delay / Doppler
estimators, whose outputs drive the joint beamformer and SI-cancellation
design; the downlink rate of the optimized slot is then evaluated
analytically, alongside a no-self-interference baseline.  Every run derives
its RNG streams from (master seed, power index, run index), so results are
reproducible and independent of execution order.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import (ArrayConfig, assemble_block_diagonal, dft_codebook,
                     steering_matrix)
from .channels import (DEFAULT_RCS_M2, RadarTarget, Scenario, dl_channel,
                       generate_scenario, radar_echo, reflection_amplitude,
                       rician_si_channel, snap_to_bins)
from .ofdm import OfdmParams
from .optimizer import (OptimizerConfig, check_constraints, optimize)
from .sensing import (associate_estimates, estimate_delay_doppler,
                      music_spectrum, refine_doa_matched_field,
                      sample_covariance)
from .transceiver import (BeamformerSet, dl_rate, effective_si_channel,
                          fd_receive, make_symbol_grid, transmit)
from .units import SPEED_OF_LIGHT, dbm_to_watts, watts_to_dbm

BENCHMARK_GEOMETRY_DEG_M = (
    (10.0, 36.0),
    (12.0, 40.0),
    (3.0, 80.0),
    (-60.0, 20.0),
    (-25.0, 55.0),
    (45.0, 30.0),
)
"""Fixed (DoA deg, range m) layout of the six-target benchmark scene: a
two-degree pair with under 5 m range separation, a far target at the 80 m
edge of the surveillance region near broadside, and spread nearer targets."""


@dataclass
class ExperimentConfig:
    """Everything a Monte Carlo experiment needs, seed included."""

    array: ArrayConfig
    ofdm: OfdmParams
    q_sense: int
    k_targets: int = 6
    l_scatterers: int = 2
    range_limits: tuple = (0.0, 80.0)
    velocity_limits_mps: tuple = (-100.0 / 3.6, 100.0 / 3.6)
    doa_limits: tuple = (-np.pi / 2, np.pi / 2)
    rcs_m2: float = DEFAULT_RCS_M2
    si_k_factor_db: float = 35.0
    si_pathloss_db: float = 40.0
    dl_pathloss_db: float = 100.0
    noise_floor_dbm: float = -90.0
    codebook_bits: int = 5
    n_taps: int = 16
    si_threshold_dbm: float = -30.0
    tx_power_sweep_dbm: tuple = (0.0, 10.0, 20.0, 30.0)
    runs: int = 100
    seed: int = 1
    on_grid: bool = False
    scenario_preset: str = "random"
    association_max_doa: float = np.deg2rad(3.0)
    quotient_guard: float = 1e-9
    music_grid_step_deg: float = 0.1
    output_path: str | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not np.all(np.isfinite(self.tx_power_sweep_dbm)):
            raise ValueError("sweep power values must be finite")
        if self.scenario_preset not in ("random", "benchmark"):
            raise ValueError("scenario_preset must be 'random' or 'benchmark'")
        if self.k_targets >= self.array.m_rf_rx:
            raise ValueError(
                "k_targets must be below the RX chain count for the DoA "
                "estimator to keep a noise subspace")


def paper_array(streams: int = 2) -> ArrayConfig:
    """128x128 base station, 8 chains of 16 elements, 4-antenna terminal."""
    wavelength = SPEED_OF_LIGHT / 28e9
    return ArrayConfig(n_tx=128, m_rx=128, n_rf_tx=8, m_rf_rx=8,
                       n_per_chain_tx=16, m_per_chain_rx=16,
                       ue_antennas=4, streams=streams,
                       element_spacing=wavelength / 2, wavelength=wavelength)


def paper_ofdm() -> OfdmParams:
    """100 MHz 5G NR numerology: 792 subcarriers at 120 kHz, 14-symbol slots."""
    return OfdmParams(subcarriers=792, symbols=14, subcarrier_spacing=120e3,
                      cp_duration=8.92e-6 - 1.0 / 120e3)


def paper_experiment(**overrides) -> ExperimentConfig:
    """Full-size configuration; sensing spans a 1 ms subframe (112 symbols)."""
    base = dict(array=paper_array(), ofdm=paper_ofdm(), q_sense=112,
                k_targets=6, l_scatterers=2, n_taps=16)
    base.update(overrides)
    return ExperimentConfig(**base)


def desk_array(streams: int = 2) -> ArrayConfig:
    """32x32 base station, 4 chains of 8 elements; fast desk-scale runs."""
    wavelength = SPEED_OF_LIGHT / 28e9
    return ArrayConfig(n_tx=32, m_rx=32, n_rf_tx=4, m_rf_rx=4,
                       n_per_chain_tx=8, m_per_chain_rx=8,
                       ue_antennas=4, streams=streams,
                       element_spacing=wavelength / 2, wavelength=wavelength)


def desk_ofdm() -> OfdmParams:
    return OfdmParams(subcarriers=128, symbols=14, subcarrier_spacing=120e3,
                      cp_duration=8.92e-6 - 1.0 / 120e3)


def desk_experiment(**overrides) -> ExperimentConfig:
    """Reduced configuration sized so a full power sweep takes minutes."""
    base = dict(array=desk_array(), ofdm=desk_ofdm(), q_sense=56,
                k_targets=3, l_scatterers=1, n_taps=8)
    base.update(overrides)
    return ExperimentConfig(**base)


def spread_beam_indices(n_chains: int, cardinality: int, n_per_chain: int,
                        shift_steps: int = 0) -> np.ndarray:
    """Codebook indices fanning the chains across sin-space sectors.

    Sector centers are evenly spaced, with every other chain shifted by half
    a pattern-null spacing: an unshifted comb of sub-array beams shares one
    null lattice, leaving angles no chain illuminates at all.  ``shift_steps``
    rotates the whole comb by codebook grid steps.
    """
    k = np.arange(n_chains)
    sin_centers = (2 * k + 1) / n_chains - 1.0 + (k % 2) / n_per_chain
    idx = np.round(-sin_centers * cardinality / 2).astype(int) + shift_steps
    return idx % cardinality


def _sector_coverage(indices, codebook: np.ndarray, n_elements: int,
                     spacing: float, wavelength: float) -> np.ndarray:
    """Mean sub-array gain of a beam roster over a fixed sin-space grid."""
    u = np.linspace(-0.995, 0.995, 512)
    grid = steering_matrix(np.arcsin(u), n_elements, spacing, wavelength)
    g = np.zeros(len(u))
    for j in indices:
        g += np.abs(grid.conj() @ codebook[j]) ** 2
    return g / len(indices)


def sounding_beam_indices(array: ArrayConfig, tx_codebook: np.ndarray,
                          rx_codebook: np.ndarray):
    """TX and RX sounding rosters with complementary coverage dips.

    Both sides use the staggered sector comb; the RX comb is additionally
    rotated by the codebook shift that maximizes the worst-angle product of
    TX illumination and RX gain, so no direction is dark on the round trip.
    """
    tx = spread_beam_indices(array.n_rf_tx, tx_codebook.shape[0],
                             array.n_per_chain_tx)
    g_tx = _sector_coverage(tx, tx_codebook, array.n_per_chain_tx,
                            array.element_spacing, array.wavelength)
    best_rx, best_score = None, -1.0
    for shift in range(rx_codebook.shape[0]):
        rx = spread_beam_indices(array.m_rf_rx, rx_codebook.shape[0],
                                 array.m_per_chain_rx, shift)
        g_rx = _sector_coverage(rx, rx_codebook, array.m_per_chain_rx,
                                array.element_spacing, array.wavelength)
        score = float(np.min(g_tx * g_rx))
        if score > best_score:
            best_rx, best_score = rx, score
    return tx, best_rx


def bootstrap_beamformers(array: ArrayConfig, tx_codebook: np.ndarray,
                          rx_codebook: np.ndarray, tx_power_w: float,
                          si_channel: np.ndarray) -> BeamformerSet:
    """Sounding-slot beamformers used before any estimates exist.

    Analog beams fan out across the angular sector (one sub-array per
    sector) with one independent stream per chain at equal power, and the
    digital canceller removes the entire effective SI channel.
    """
    tx_idx, rx_idx = sounding_beam_indices(array, tx_codebook, rx_codebook)
    v_rf = assemble_block_diagonal([tx_codebook[i] for i in tx_idx])
    w_rf = assemble_block_diagonal([rx_codebook[i] for i in rx_idx])
    v_bb = np.sqrt(tx_power_w / array.n_rf_tx) * np.eye(array.n_rf_tx,
                                                        dtype=complex)
    h_eff = effective_si_channel(si_channel, w_rf, v_rf)
    c = np.zeros_like(h_eff)
    d = -h_eff
    w_ue = np.eye(array.ue_antennas, array.streams, dtype=complex)
    return BeamformerSet(v_rf=v_rf, v_bb=v_bb, w_rf=w_rf, w_ue=w_ue,
                         c_analog=c, d_digital=d, tx_power_w=tx_power_w)


def benchmark_scenario(config: ExperimentConfig, seed: int) -> Scenario:
    """Six-target benchmark scene with fixed DoAs/ranges, random kinematics.

    The geometry follows :data:`BENCHMARK_GEOMETRY_DEG_M`; velocities,
    reflection phases, DL scatterer choice, and all channel realizations
    are drawn from ``seed``.
    """
    if config.k_targets != len(BENCHMARK_GEOMETRY_DEG_M):
        raise ValueError("benchmark scenario is defined for 6 targets")
    rng = np.random.default_rng(seed)
    si_seed, dl_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
    speeds = rng.uniform(config.velocity_limits_mps[0],
                         config.velocity_limits_mps[1], size=config.k_targets)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=config.k_targets)
    dl_flags = np.zeros(config.k_targets, dtype=bool)
    dl_flags[rng.choice(config.k_targets, size=config.l_scatterers,
                        replace=False)] = True
    ranges = np.array([r for _, r in BENCHMARK_GEOMETRY_DEG_M])
    if config.on_grid:
        ranges, speeds = snap_to_bins(ranges, speeds, config.ofdm,
                                      config.q_sense, config.array.wavelength)
    targets = []
    for t, (doa_deg, _) in enumerate(BENCHMARK_GEOMETRY_DEG_M):
        amp = reflection_amplitude(ranges[t], config.array.wavelength,
                                   config.rcs_m2, config.array.n_tx,
                                   config.array.m_rx)
        targets.append(RadarTarget(
            doa=float(np.deg2rad(doa_deg)), range_m=float(ranges[t]),
            velocity_mps=float(speeds[t]),
            reflection=amp * np.exp(1j * phases[t]),
            is_dl_scatterer=bool(dl_flags[t])))
    si = rician_si_channel(config.array, config.si_k_factor_db,
                           config.si_pathloss_db, si_seed)
    return Scenario(targets=targets, si_channel=si,
                    si_rician_k_db=config.si_k_factor_db,
                    si_pathloss_db=config.si_pathloss_db,
                    dl_pathloss_db=config.dl_pathloss_db,
                    noise_floor_dbm=config.noise_floor_dbm,
                    seed=seed, si_seed=si_seed, dl_seed=dl_seed,
                    rcs_m2=config.rcs_m2)


def make_scenario(config: ExperimentConfig, seed: int) -> Scenario:
    if config.scenario_preset == "benchmark":
        return benchmark_scenario(config, seed)
    return generate_scenario(
        config.array, config.k_targets, config.l_scatterers, seed,
        range_limits=config.range_limits,
        velocity_limits_mps=config.velocity_limits_mps,
        doa_limits=config.doa_limits, rcs_m2=config.rcs_m2,
        si_k_factor_db=config.si_k_factor_db,
        si_pathloss_db=config.si_pathloss_db,
        dl_pathloss_db=config.dl_pathloss_db,
        noise_floor_dbm=config.noise_floor_dbm, on_grid=config.on_grid,
        ofdm=config.ofdm, n_sense_symbols=config.q_sense)


@dataclass
class RunRecord:
    """Scores of one Monte Carlo run at one transmit power."""

    run_index: int
    seed: int
    tx_power_dbm: float
    true_doa_deg: list
    true_range_m: list
    true_velocity_mps: list
    est_doa_deg: list
    est_range_m: list
    est_velocity_mps: list
    doa_error_deg: list
    range_error_m: list
    velocity_error_mps: list
    rel_velocity_error: list
    is_dl: list
    matched: list
    n_matched: int
    dl_rate_bps_hz: float
    ideal_dl_rate_bps_hz: float
    feasible: bool
    alpha_subspace: int
    n_taps: int
    max_residual_si_dbm: float
    constraints_ok: bool


def _optimizer_config(config: ExperimentConfig, tx_power_w: float,
                      tx_codebook, rx_codebook,
                      n_taps: int | None = None) -> OptimizerConfig:
    return OptimizerConfig(
        n_taps=config.n_taps if n_taps is None else n_taps,
        si_threshold_w=dbm_to_watts(config.si_threshold_dbm),
        tx_power_w=tx_power_w, tx_codebook=tx_codebook,
        rx_codebook=rx_codebook,
        noise_var_ue=dbm_to_watts(config.noise_floor_dbm))


def run_single(config: ExperimentConfig, tx_power_dbm: float, seed: int,
               run_index: int = 0) -> RunRecord:
    """Execute the full two-slot pipeline once and score it against truth."""
    array, ofdm = config.array, config.ofdm
    ss = np.random.SeedSequence(seed)
    scen_seed, sym_seed, noise_seed = (
        int(c.generate_state(1)[0]) for c in ss.spawn(3))
    scenario = make_scenario(config, scen_seed)
    p_w = dbm_to_watts(tx_power_dbm)
    tx_cb = dft_codebook(config.codebook_bits, array.n_per_chain_tx)
    rx_cb = dft_codebook(config.codebook_bits, array.m_per_chain_rx)

    # sounding slot: spread beams, full digital SI cancellation
    bf0 = bootstrap_beamformers(array, tx_cb, rx_cb, p_w, scenario.si_channel)
    symbols = make_symbol_grid(ofdm, array.n_rf_tx, sym_seed,
                               n_symbols=config.q_sense)
    x_grid = transmit(symbols, bf0.v_rf, bf0.v_bb, p_w)
    echo = radar_echo(x_grid, scenario.targets, ofdm, array)
    y_grid = fd_receive(x_grid, echo, scenario.si_channel, bf0, symbols,
                        scenario.noise_floor_dbm, noise_seed)

    cov = sample_covariance(y_grid)
    # over-select candidate directions, then keep the k whose delay/Doppler
    # likelihood peaks are strongest: spectrum value alone cannot separate a
    # weak distant target from sidelobe ghosts of strong nearby ones
    spectrum = music_spectrum(cov, bf0.w_rf, config.k_targets, array,
                              grid_step=np.deg2rad(config.music_grid_step_deg),
                              n_peaks=2 * config.k_targets)
    candidates = [a for a, _ in spectrum.peaks]
    estimates = []
    if candidates:
        coarse = estimate_delay_doppler(x_grid, y_grid, bf0.w_rf, candidates,
                                        ofdm, array,
                                        guard_rel=config.quotient_guard)
        # each claimed tone isolates one target in delay/Doppler; polishing
        # its DoA by matched-field search restores the accuracy that the
        # sector-spread sounding combiner takes away from weak targets, and
        # collapses spectral ghosts onto the direction of the tone they
        # actually captured
        polished = [refine_doa_matched_field(x_grid, y_grid, bf0.w_rf, e,
                                             ofdm, array,
                                             grid_step=np.deg2rad(
                                                 config.music_grid_step_deg))
                    for e in coarse]
        # candidates whose polished directions coincide saw the same target;
        # keep the strongest of each cluster, then the k strongest clusters
        order = np.argsort([-e.peak_power for e in coarse], kind="stable")
        doas = []
        for i in order:
            if all(abs(polished[i] - d) > np.deg2rad(1.0) for d in doas):
                doas.append(polished[i])
            if len(doas) == config.k_targets:
                break
        estimates = estimate_delay_doppler(x_grid, y_grid, bf0.w_rf,
                                           sorted(doas), ofdm, array,
                                           guard_rel=config.quotient_guard)
    assoc = associate_estimates(estimates, scenario.targets, array.wavelength,
                                max_doa_error=config.association_max_doa)

    # optimized slot: rates are evaluated analytically
    noise_var = dbm_to_watts(config.noise_floor_dbm)
    h_dl = dl_channel(scenario.dl_targets(), array, scenario.dl_pathloss_db,
                      scenario.dl_seed)
    rate = ideal = float("nan")
    feasible = False
    alpha = 0
    max_residual_dbm = float("-inf")
    constraints_ok = False
    if estimates:
        doas = [e.doa for e in estimates]
        dl_doas = [estimates[m.estimate_index].doa for m in assoc.matches
                   if scenario.targets[m.target_index].is_dl_scatterer]
        ocfg = _optimizer_config(config, p_w, tx_cb, rx_cb)
        design = optimize(doas, dl_doas, scenario.si_channel, array, ocfg)
        full_taps = array.n_rf_tx * array.m_rf_rx
        ideal_design = optimize(doas, dl_doas,
                                np.zeros_like(scenario.si_channel), array,
                                _optimizer_config(config, p_w, tx_cb, rx_cb,
                                                  n_taps=full_taps))
        if noise_var > 0.0:
            rate = dl_rate(h_dl, design.beamformers, noise_var)
            ideal = dl_rate(h_dl, ideal_design.beamformers, noise_var)
        feasible = design.feasible
        alpha = design.alpha
        max_residual_dbm = watts_to_dbm(float(design.analog_residual_w.max()))
        constraints_ok = check_constraints(design.beamformers,
                                           scenario.si_channel, array,
                                           ocfg).ok if feasible else False

    # per-target scoring
    k = config.k_targets
    est_doa = [float("nan")] * k
    est_range = [float("nan")] * k
    est_vel = [float("nan")] * k
    doa_err = [float("nan")] * k
    rng_err = [float("nan")] * k
    vel_err = [float("nan")] * k
    rel_err = [float("nan")] * k
    matched = [False] * k
    for m in assoc.matches:
        t = m.target_index
        e = estimates[m.estimate_index]
        matched[t] = True
        est_doa[t] = float(np.rad2deg(e.doa))
        est_range[t] = e.range_m
        est_vel[t] = e.velocity_mps(array.wavelength)
        doa_err[t] = float(np.rad2deg(m.doa_error))
        rng_err[t] = m.range_error
        vel_err[t] = m.velocity_error
        rel_err[t] = m.rel_velocity_error

    return RunRecord(
        run_index=run_index, seed=seed, tx_power_dbm=float(tx_power_dbm),
        true_doa_deg=[float(np.rad2deg(t.doa)) for t in scenario.targets],
        true_range_m=[t.range_m for t in scenario.targets],
        true_velocity_mps=[t.velocity_mps for t in scenario.targets],
        est_doa_deg=est_doa, est_range_m=est_range, est_velocity_mps=est_vel,
        doa_error_deg=doa_err, range_error_m=rng_err,
        velocity_error_mps=vel_err, rel_velocity_error=rel_err,
        is_dl=[t.is_dl_scatterer for t in scenario.targets], matched=matched,
        n_matched=len(assoc.matches), dl_rate_bps_hz=rate,
        ideal_dl_rate_bps_hz=ideal, feasible=feasible, alpha_subspace=alpha,
        n_taps=config.n_taps, max_residual_si_dbm=max_residual_dbm,
        constraints_ok=constraints_ok)


def ideal_rate_baseline(config: ExperimentConfig, tx_power_dbm: float,
                        seed: int) -> float:
    """No-self-interference upper reference rate for one run."""
    return run_single(config, tx_power_dbm, seed).ideal_dl_rate_bps_hz


def run_seed(master_seed: int, power_index: int, run_index: int) -> int:
    """Derive the per-run seed from (master seed, power index, run index)."""
    ss = np.random.SeedSequence((master_seed, power_index, run_index))
    return int(ss.generate_state(1)[0])


def _run_task(args):
    config, power, seed, run_index = args
    return run_single(config, power, seed, run_index)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list
    aggregates: list = field(default_factory=list)


def aggregate_records(records) -> list:
    """Per-power-point summary statistics computed from run records."""
    powers = sorted({r.tx_power_dbm for r in records})
    out = []
    for power in powers:
        recs = [r for r in records if r.tx_power_dbm == power]
        k = len(recs[0].matched)
        doa_e, rng_e, vel_e, rel_e = [], [], [], []
        n_matched = 0
        all_matched = 0
        for r in recs:
            n_matched += r.n_matched
            all_matched += int(r.n_matched == k)
            for t in range(k):
                if r.matched[t]:
                    doa_e.append(r.doa_error_deg[t])
                    rng_e.append(r.range_error_m[t])
                    vel_e.append(r.velocity_error_mps[t])
                    rel_e.append(r.rel_velocity_error[t])
        def _rmse(v):
            return float(np.sqrt(np.mean(np.square(v)))) if v else float("nan")
        rates = np.array([r.dl_rate_bps_hz for r in recs])
        ideals = np.array([r.ideal_dl_rate_bps_hz for r in recs])
        mean_rate = float(np.mean(rates))
        mean_ideal = float(np.mean(ideals))
        out.append({
            "tx_power_dbm": float(power),
            "runs": len(recs),
            "detection_rate": n_matched / (k * len(recs)),
            "all_matched_rate": all_matched / len(recs),
            "rmse_doa_deg": _rmse(doa_e),
            "rmse_range_m": _rmse(rng_e),
            "rmse_velocity_mps": _rmse(vel_e),
            "median_range_error_m": float(np.median(rng_e)) if rng_e else float("nan"),
            "median_rel_velocity_error": float(np.median(rel_e)) if rel_e else float("nan"),
            "p90_rel_velocity_error": float(np.percentile(rel_e, 90)) if rel_e else float("nan"),
            "mean_dl_rate_bps_hz": mean_rate,
            "mean_ideal_rate_bps_hz": mean_ideal,
            "mean_rate_gap_bps_hz": float(np.mean(ideals - rates)),
            "rate_ratio": mean_rate / mean_ideal if mean_ideal > 0 else float("nan"),
            "feasible_fraction": float(np.mean([r.feasible for r in recs])),
        })
    return out


RUNS_CSV_FIELDS = [
    "tx_power_dbm", "run_index", "seed", "n_matched", "dl_rate_bps_hz",
    "ideal_dl_rate_bps_hz", "feasible", "alpha_subspace", "n_taps",
    "max_residual_si_dbm", "constraints_ok",
]

TARGETS_CSV_FIELDS = [
    "tx_power_dbm", "run_index", "target_index", "is_dl", "matched",
    "true_doa_deg", "est_doa_deg", "doa_error_deg",
    "true_range_m", "est_range_m", "range_error_m",
    "true_velocity_mps", "est_velocity_mps", "velocity_error_mps",
    "rel_velocity_error",
]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv_reports(report: ExperimentReport, out_dir) -> dict:
    """Emit runs.csv, targets.csv, and aggregate.csv with a stable layout.

    Rows are ordered by (power, run index, target index) and floats are
    rendered with shortest round-trip ``repr``, so identical experiments
    produce byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, f"{name}.csv")
             for name in ("runs", "targets", "aggregate")}
    records = sorted(report.records,
                     key=lambda r: (r.tx_power_dbm, r.run_index))
    with open(paths["runs"], "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUNS_CSV_FIELDS)
        for r in records:
            writer.writerow([_fmt(getattr(r, f)) for f in RUNS_CSV_FIELDS])
    with open(paths["targets"], "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TARGETS_CSV_FIELDS)
        for r in records:
            for t in range(len(r.matched)):
                writer.writerow([
                    _fmt(r.tx_power_dbm), _fmt(r.run_index), _fmt(t),
                    _fmt(r.is_dl[t]), _fmt(r.matched[t]),
                    _fmt(r.true_doa_deg[t]), _fmt(r.est_doa_deg[t]),
                    _fmt(r.doa_error_deg[t]),
                    _fmt(r.true_range_m[t]), _fmt(r.est_range_m[t]),
                    _fmt(r.range_error_m[t]),
                    _fmt(r.true_velocity_mps[t]), _fmt(r.est_velocity_mps[t]),
                    _fmt(r.velocity_error_mps[t]),
                    _fmt(r.rel_velocity_error[t]),
                ])
    agg_fields = list(report.aggregates[0].keys()) if report.aggregates else []
    with open(paths["aggregate"], "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(agg_fields)
        for row in report.aggregates:
            writer.writerow([_fmt(row[f]) for f in agg_fields])
    return paths


def read_run_records(out_dir) -> list:
    """Rebuild :class:`RunRecord` objects from emitted CSV files."""
    runs_path = os.path.join(out_dir, "runs.csv")
    targets_path = os.path.join(out_dir, "targets.csv")
    per_target = {}
    with open(targets_path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["tx_power_dbm"], int(row["run_index"]))
            per_target.setdefault(key, []).append(row)
    records = []
    with open(runs_path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["tx_power_dbm"], int(row["run_index"]))
            tgt = sorted(per_target.get(key, []),
                         key=lambda r: int(r["target_index"]))
            records.append(RunRecord(
                run_index=int(row["run_index"]), seed=int(row["seed"]),
                tx_power_dbm=float(row["tx_power_dbm"]),
                true_doa_deg=[float(t["true_doa_deg"]) for t in tgt],
                true_range_m=[float(t["true_range_m"]) for t in tgt],
                true_velocity_mps=[float(t["true_velocity_mps"]) for t in tgt],
                est_doa_deg=[float(t["est_doa_deg"]) for t in tgt],
                est_range_m=[float(t["est_range_m"]) for t in tgt],
                est_velocity_mps=[float(t["est_velocity_mps"]) for t in tgt],
                doa_error_deg=[float(t["doa_error_deg"]) for t in tgt],
                range_error_m=[float(t["range_error_m"]) for t in tgt],
                velocity_error_mps=[float(t["velocity_error_mps"]) for t in tgt],
                rel_velocity_error=[float(t["rel_velocity_error"]) for t in tgt],
                is_dl=[bool(int(t["is_dl"])) for t in tgt],
                matched=[bool(int(t["matched"])) for t in tgt],
                n_matched=int(row["n_matched"]),
                dl_rate_bps_hz=float(row["dl_rate_bps_hz"]),
                ideal_dl_rate_bps_hz=float(row["ideal_dl_rate_bps_hz"]),
                feasible=bool(int(row["feasible"])),
                alpha_subspace=int(row["alpha_subspace"]),
                n_taps=int(row["n_taps"]),
                max_residual_si_dbm=float(row["max_residual_si_dbm"]),
                constraints_ok=bool(int(row["constraints_ok"]))))
    return records


def run_experiment(config: ExperimentConfig, out_dir=None,
                   n_jobs: int = 1) -> ExperimentReport:
    """Run the configured Monte Carlo sweep and optionally emit CSV reports.

    Runs are independent; with ``n_jobs > 1`` they execute in a process
    pool, and because every run seeds itself from (master seed, power index,
    run index) the results and emitted files are identical to a serial run.
    """
    out_dir = out_dir if out_dir is not None else config.output_path
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    tasks = [(config, float(power), run_seed(config.seed, pi, ri), ri)
             for pi, power in enumerate(config.tx_power_sweep_dbm)
             for ri in range(config.runs)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(_run_task, tasks))
    else:
        records = [_run_task(t) for t in tasks]
    report = ExperimentReport(config=config, records=records,
                              aggregates=aggregate_records(records))
    if out_dir is not None:
        write_csv_reports(report, out_dir)
    return report
